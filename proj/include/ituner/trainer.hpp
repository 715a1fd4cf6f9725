#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ituner/decoder.hpp"
#include "ituner/ituning.hpp"
#include "ituner/ledger.hpp"
#include "ituner/ops.hpp"
#include "ituner/tape.hpp"

namespace ituner {

struct TrainConfig {
  double peak_lr = 3e-3;
  double weight_decay = 0.0;  // decay fights logit saturation on the closed toy task
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t total_steps = 0;  // filled in by the training loop
  double warmup_fraction = 0.1;
  std::size_t batch_size = 32;
  double grad_clip = 0.0;  // 0 = off
  std::uint64_t seed = 0;

  void validate() const {
    if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0)
      throw std::invalid_argument("train: warmup_fraction must be in (0, 1)");
    if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
    if (peak_lr <= 0.0) throw std::invalid_argument("train: peak_lr must be positive");
  }
};

// Linear warmup to the peak over the first warmup_fraction of steps, then
// linear decay to zero at total_steps.
inline double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (cfg.total_steps == 0) throw std::invalid_argument("lr_at: total_steps not set");
  if (step > cfg.total_steps)
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " beyond total_steps " +
                            std::to_string(cfg.total_steps));
  const double warm = cfg.warmup_fraction * static_cast<double>(cfg.total_steps);
  const double s = static_cast<double>(step);
  // The fraction is formed first so the boundary points are exact (s == warm
  // gives exactly 1, s == total gives exactly 0).
  if (s <= warm) return cfg.peak_lr * (s / warm);
  return cfg.peak_lr *
         ((static_cast<double>(cfg.total_steps) - s) /
          (static_cast<double>(cfg.total_steps) - warm));
}

// Worker cap from the environment; determinism holds at any fixed value.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("ITUNER_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<std::size_t>(n);
  }
  return 1;
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay and bias-corrected moments. Decay applies
// to matrices only; bias/gain vectors are exempt.
// ---------------------------------------------------------------------------
template <class Real>
class AdamW {
 public:
  explicit AdamW(const std::vector<NamedParam<Real>>& params) {
    for (const auto& p : params) slots_.push_back({std::vector<Real>(p.tensor.numel(), Real(0)),
                                                   std::vector<Real>(p.tensor.numel(), Real(0))});
  }

  std::size_t step_count() const { return t_; }

  // One update over the trainable set; gradients are read from the tensors
  // (absent grad = zero gradient, which still decays matrices).
  void step(const std::vector<NamedParam<Real>>& params, double lr, const TrainConfig& cfg) {
    if (params.size() != slots_.size())
      throw std::invalid_argument("adamw: parameter set changed size");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<Real> tensor = params[i].tensor;  // handle copy, shared storage
      const bool decay_this = tensor.rank() >= 2;
      auto& m = slots_[i].m;
      auto& v = slots_[i].v;
      const std::vector<Real>* grad = tensor.has_grad() ? &tensor.grad() : nullptr;
      for (std::size_t j = 0; j < tensor.numel(); ++j) {
        const double g = grad ? static_cast<double>((*grad)[j]) : 0.0;
        m[j] = static_cast<Real>(cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g);
        v[j] = static_cast<Real>(cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g);
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        double update = lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        if (decay_this) update += lr * cfg.weight_decay * tensor.data()[j];
        tensor.data()[j] = static_cast<Real>(tensor.data()[j] - update);
      }
    }
  }

 private:
  struct Slot {
    std::vector<Real> m, v;
  };
  std::vector<Slot> slots_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Teacher-forced caption loss: tokens are BOS + caption + EOS; position t
// predicts tokens[t+1]; the final position is padded out of the loss.
// ---------------------------------------------------------------------------
template <class Real>
Tensor<Real> caption_loss(const DecoderState<Real>& decoder, const ITuningStack<Real>* adapters,
                          const VisualMemory<Real>* memory, const std::vector<int>& tokens,
                          int pad_id, Tape<Real>* tape) {
  if (tokens.size() < 2) throw std::invalid_argument("caption_loss: empty caption");
  Tensor<Real> logits = decoder_forward(decoder, tokens, memory, adapters, tape);
  std::vector<int> targets(tokens.begin() + 1, tokens.end());
  targets.push_back(pad_id);
  return cross_entropy(logits, targets, pad_id, tape);
}

// One training sample: pre-tokenized caption and the precomputed (frozen)
// visual memory of its image.
template <class Real>
struct TrainSample {
  std::vector<int> tokens;
  VisualMemory<Real> memory;
};

namespace detail {

template <class Real>
ITuningStack<Real> clone_stack(const ITuningStack<Real>& src) {
  ITuningStack<Real> dst;
  dst.cfg = src.cfg;
  dst.modules.resize(src.modules.size());
  for (std::size_t i = 0; i < src.modules.size(); ++i) {
    if (!src.modules[i]) continue;
    const auto& m = *src.modules[i];
    ITuningModule<Real> c;
    c.w_down_q = m.w_down_q.clone();
    c.b_q = m.b_q.clone();
    c.w_down_k = m.w_down_k.clone();
    c.b_k = m.b_k.clone();
    c.w_down_v = m.w_down_v.clone();
    c.b_v = m.b_v.clone();
    c.w_up_o = m.w_up_o.clone();
    c.b_o = m.b_o.clone();
    c.lambda = m.lambda;
    c.scaled_attention = m.scaled_attention;
    c.n_heads = m.n_heads;
    dst.modules[i] = std::move(c);
  }
  return dst;
}

template <class Real>
void copy_stack_values(const ITuningStack<Real>& src, ITuningStack<Real>& dst) {
  auto s = ituning_params(src);
  auto d = ituning_params(dst);
  for (std::size_t i = 0; i < s.size(); ++i) {
    d[i].tensor.data() = s[i].tensor.data();
    d[i].tensor.zero_grad();
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// One optimizer step over a batch. Expects trainable gradients zeroed at
// entry. Returns the batch loss (token-weighted mean NLL). Batch shards run on
// up to `threads` workers against shard-local copies of the adapter
// parameters; shard gradients reduce into the master stack in shard order, so
// any fixed thread count reproduces bitwise.
// ---------------------------------------------------------------------------
template <class Real>
double train_step(const std::vector<const TrainSample<Real>*>& batch,
                  const DecoderState<Real>& decoder, ITuningStack<Real>& stack,
                  AdamW<Real>& opt, ParamLedger<Real>& ledger, double lr, const TrainConfig& cfg,
                  std::vector<ITuningStack<Real>>& shard_stacks) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  std::size_t total_targets = 0;
  for (const auto* s : batch) {
    if (s->tokens.size() < 2) throw std::invalid_argument("train_step: empty caption in batch");
    total_targets += s->tokens.size() - 1;
  }

  const std::size_t threads = std::min<std::size_t>(
      {shard_stacks.size() + 1, batch.size(), std::max<std::size_t>(1, worker_count())});

  std::vector<double> shard_loss(threads, 0.0);
  std::vector<std::string> shard_error(threads);

  auto run_shard = [&](std::size_t shard, ITuningStack<Real>& local) {
    try {
      const std::size_t lo = shard * batch.size() / threads;
      const std::size_t hi = (shard + 1) * batch.size() / threads;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto* s = batch[i];
        Tape<Real> tape;
        Tensor<Real> loss = caption_loss<Real>(decoder, &local, &s->memory, s->tokens, 0, &tape);
        const double value = static_cast<double>(loss.data()[0]);
        if (!std::isfinite(value))
          throw std::runtime_error("train_step: non-finite loss on sample " + std::to_string(i));
        // A fully dropped stack has nothing trainable; the loss is then a
        // constant of the frozen model and there is no backward to run.
        if (loss.requires_grad()) {
          const Real weight =
              static_cast<Real>(s->tokens.size() - 1) / static_cast<Real>(total_targets);
          tape.backward(loss, weight);
        }
        shard_loss[shard] += value * static_cast<double>(s->tokens.size() - 1);
      }
    } catch (const std::exception& e) {
      shard_error[shard] = e.what();
    }
  };

  if (threads == 1) {
    run_shard(0, stack);
  } else {
    // Shard 0 reuses the master tensors; the rest work on copies.
    for (std::size_t k = 1; k < threads; ++k) detail::copy_stack_values(stack, shard_stacks[k - 1]);
    std::vector<std::thread> pool;
    for (std::size_t k = 1; k < threads; ++k)
      pool.emplace_back([&, k]() { run_shard(k, shard_stacks[k - 1]); });
    run_shard(0, stack);
    for (auto& t : pool) t.join();
    for (std::size_t k = 1; k < threads; ++k) {
      auto master = ituning_params(stack);
      auto local = ituning_params(shard_stacks[k - 1]);
      for (std::size_t i = 0; i < master.size(); ++i) {
        if (!local[i].tensor.has_grad()) continue;
        auto& dst = master[i].tensor.ensure_grad();
        const auto& src = local[i].tensor.grad();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
  }
  for (const auto& err : shard_error)
    if (!err.empty()) throw std::runtime_error(err);

  if (cfg.grad_clip > 0.0) {
    double norm_sq = 0.0;
    for (const auto& p : ledger.trainable())
      if (p.tensor.has_grad())
        for (Real g : p.tensor.grad()) norm_sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(norm_sq);
    if (norm > cfg.grad_clip) {
      const Real factor = static_cast<Real>(cfg.grad_clip / norm);
      for (const auto& p : ledger.trainable()) {
        Tensor<Real> t = p.tensor;
        if (t.has_grad())
          for (Real& g : t.grad()) g *= factor;
      }
    }
  }

  opt.step(ledger.trainable(), lr, cfg);

  double total_loss = 0.0;
  for (double l : shard_loss) total_loss += l;
  return total_loss / static_cast<double>(total_targets);
}

}  // namespace ituner
