#pragma once

#include <cstring>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ituner/archive.hpp"
#include "ituner/tensor.hpp"

namespace ituner {

template <class Real>
struct NamedParam {
  std::string name;
  Tensor<Real> tensor;
};

// Explicit frozen/trainable partition of every model parameter. The optimizer
// only ever sees trainable(); tests compare frozen snapshots bitwise.
template <class Real>
class ParamLedger {
 public:
  void add_frozen(std::vector<NamedParam<Real>> params) {
    for (auto& p : params) {
      claim(p.name);
      p.tensor.set_requires_grad(false);
      frozen_.push_back(std::move(p));
    }
  }

  void add_trainable(std::vector<NamedParam<Real>> params) {
    for (auto& p : params) {
      claim(p.name);
      p.tensor.set_requires_grad(true);
      trainable_.push_back(std::move(p));
    }
  }

  const std::vector<NamedParam<Real>>& frozen() const { return frozen_; }
  const std::vector<NamedParam<Real>>& trainable() const { return trainable_; }

  std::size_t frozen_count() const {
    std::size_t n = 0;
    for (const auto& p : frozen_) n += p.tensor.numel();
    return n;
  }
  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : trainable_) n += p.tensor.numel();
    return n;
  }
  std::size_t total_count() const { return frozen_count() + trainable_count(); }

  void zero_trainable_grads() {
    for (auto& p : trainable_) p.tensor.zero_grad();
  }

  // Bitwise snapshot of the frozen set, keyed by name.
  std::map<std::string, std::vector<Real>> snapshot_frozen() const {
    std::map<std::string, std::vector<Real>> snap;
    for (const auto& p : frozen_) snap.emplace(p.name, p.tensor.data());
    return snap;
  }

  // Names of frozen tensors whose bytes changed since the snapshot.
  std::vector<std::string> frozen_diff(const std::map<std::string, std::vector<Real>>& snap) const {
    std::vector<std::string> changed;
    for (const auto& p : frozen_) {
      auto it = snap.find(p.name);
      const auto& now = p.tensor.data();
      if (it == snap.end() || it->second.size() != now.size() ||
          std::memcmp(it->second.data(), now.data(), now.size() * sizeof(Real)) != 0)
        changed.push_back(p.name);
    }
    return changed;
  }

 private:
  void claim(const std::string& name) {
    if (!names_.insert(name).second)
      throw std::invalid_argument("ledger: duplicate parameter name '" + name + "'");
  }

  std::vector<NamedParam<Real>> frozen_;
  std::vector<NamedParam<Real>> trainable_;
  std::set<std::string> names_;
};

// Load named tensors from an archive into an existing parameter list.
// Complains, by name, about anything missing or unexpected.
template <class Real>
void load_params_from_archive(const std::string& path, std::vector<NamedParam<Real>> params) {
  auto stored = read_archive<Real>(path);
  std::vector<std::string> missing;
  std::set<std::string> used;
  for (auto& p : params) {
    auto it = stored.find(p.name);
    if (it == stored.end()) {
      missing.push_back(p.name);
      continue;
    }
    used.insert(p.name);
    if (it->second.shape() != p.tensor.shape())
      throw std::runtime_error("archive: tensor '" + p.name + "' has shape " +
                               shape_str(it->second.shape()) + ", model wants " +
                               shape_str(p.tensor.shape()));
    p.tensor.data() = it->second.data();
  }
  std::vector<std::string> unknown;
  for (const auto& [name, t] : stored)
    if (!used.count(name)) unknown.push_back(name);
  if (!missing.empty() || !unknown.empty()) {
    std::string msg = "archive: " + path + " does not match model:";
    for (const auto& n : missing) msg += " missing '" + n + "'";
    for (const auto& n : unknown) msg += " unknown '" + n + "'";
    throw std::runtime_error(msg);
  }
}

}  // namespace ituner
