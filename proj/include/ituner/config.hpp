#pragma once

#include <json.hpp>

#include <fstream>
#include <set>
#include <stdexcept>
#include <string>

#include "ituner/decoder.hpp"
#include "ituner/ituning.hpp"
#include "ituner/trainer.hpp"
#include "ituner/vision.hpp"

namespace ituner {

struct DataConfig {
  std::size_t n_train = 5000;
  std::size_t n_val = 500;
  std::size_t image_size = 32;  // 64 exercises the resize + pos-interp path
  std::uint64_t seed = 1234;
};

struct EvalConfig {
  std::size_t beam_size = 5;
  std::size_t max_len = 12;
};

// Everything a run needs, JSON round-trippable. Unknown keys are rejected so
// typos cannot silently fall back to defaults.
struct RunConfig {
  DecoderConfig decoder;
  VisionConfig vision;
  ITuningConfig ituning;
  TrainConfig train;
  std::size_t epochs = 30;
  DataConfig data;
  EvalConfig eval;
  std::uint64_t decoder_seed = 7;
  std::uint64_t vision_seed = 11;
  std::uint64_t adapter_seed = 13;
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown(const json& j, const std::string& section,
                           const std::set<std::string>& known) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw std::invalid_argument("config: unknown key '" + section + "." + it.key() + "'");
}

template <class T>
void fetch(const json& j, const std::string& section, const std::string& key, T& out,
           const char* type_name) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config: key '" + section + "." + key + "' must be a " +
                                type_name);
  }
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["decoder"] = {{"n_layers", c.decoder.n_layers},
                  {"d_model", c.decoder.d_model},
                  {"n_heads", c.decoder.n_heads},
                  {"d_ffn", c.decoder.d_ffn},
                  {"vocab_size", c.decoder.vocab_size},
                  {"max_positions", c.decoder.max_positions},
                  {"layer_norm_eps", c.decoder.layer_norm_eps},
                  {"seed", c.decoder_seed}};
  j["vision"] = {{"image_size", c.vision.image_size},
                 {"patch_size", c.vision.patch_size},
                 {"n_layers", c.vision.n_layers},
                 {"d_vision", c.vision.d_vision},
                 {"n_heads", c.vision.n_heads},
                 {"layer_norm_eps", c.vision.layer_norm_eps},
                 {"seed", c.vision_seed}};
  j["ituning"] = {{"placement", placement_name(c.ituning.placement)},
                  {"bottleneck", c.ituning.bottleneck},
                  {"lambda", c.ituning.lambda},
                  {"drop_first_n", c.ituning.drop_first_n},
                  {"scaled_attention", c.ituning.scaled_attention},
                  {"n_heads", c.ituning.n_heads},
                  {"init", c.ituning.init == AdapterInit::kZeroUp ? "zero_up" : "random"},
                  {"init_sigma", c.ituning.init_sigma},
                  {"seed", c.adapter_seed}};
  j["train"] = {{"peak_lr", c.train.peak_lr},
                {"weight_decay", c.train.weight_decay},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"adam_eps", c.train.adam_eps},
                {"epochs", c.epochs},
                {"warmup_fraction", c.train.warmup_fraction},
                {"batch_size", c.train.batch_size},
                {"grad_clip", c.train.grad_clip},
                {"seed", c.train.seed}};
  j["data"] = {{"n_train", c.data.n_train},
               {"n_val", c.data.n_val},
               {"image_size", c.data.image_size},
               {"seed", c.data.seed}};
  j["eval"] = {{"beam_size", c.eval.beam_size}, {"max_len", c.eval.max_len}};
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  using detail::fetch;
  using detail::reject_unknown;
  RunConfig c;
  reject_unknown(j, "", {"decoder", "vision", "ituning", "train", "data", "eval"});

  if (j.contains("decoder")) {
    const auto& d = j.at("decoder");
    reject_unknown(d, "decoder",
                   {"n_layers", "d_model", "n_heads", "d_ffn", "vocab_size", "max_positions",
                    "layer_norm_eps", "seed", "preset"});
    if (d.contains("preset")) {
      std::string preset;
      fetch(d, "decoder", "preset", preset, "string");
      c.decoder = decoder_preset(preset);
    }
    fetch(d, "decoder", "n_layers", c.decoder.n_layers, "positive integer");
    fetch(d, "decoder", "d_model", c.decoder.d_model, "positive integer");
    fetch(d, "decoder", "n_heads", c.decoder.n_heads, "positive integer");
    fetch(d, "decoder", "d_ffn", c.decoder.d_ffn, "integer");
    fetch(d, "decoder", "vocab_size", c.decoder.vocab_size, "positive integer");
    fetch(d, "decoder", "max_positions", c.decoder.max_positions, "positive integer");
    fetch(d, "decoder", "layer_norm_eps", c.decoder.layer_norm_eps, "number");
    fetch(d, "decoder", "seed", c.decoder_seed, "integer");
  }
  if (j.contains("vision")) {
    const auto& v = j.at("vision");
    reject_unknown(v, "vision",
                   {"image_size", "patch_size", "n_layers", "d_vision", "n_heads",
                    "layer_norm_eps", "seed"});
    fetch(v, "vision", "image_size", c.vision.image_size, "positive integer");
    fetch(v, "vision", "patch_size", c.vision.patch_size, "positive integer");
    fetch(v, "vision", "n_layers", c.vision.n_layers, "positive integer");
    fetch(v, "vision", "d_vision", c.vision.d_vision, "positive integer");
    fetch(v, "vision", "n_heads", c.vision.n_heads, "positive integer");
    fetch(v, "vision", "layer_norm_eps", c.vision.layer_norm_eps, "number");
    fetch(v, "vision", "seed", c.vision_seed, "integer");
  }
  if (j.contains("ituning")) {
    const auto& t = j.at("ituning");
    reject_unknown(t, "ituning",
                   {"placement", "bottleneck", "lambda", "drop_first_n", "scaled_attention",
                    "n_heads", "init", "init_sigma", "seed"});
    std::string placement = placement_name(c.ituning.placement);
    fetch(t, "ituning", "placement", placement, "string");
    c.ituning.placement = placement_from_name(placement);
    fetch(t, "ituning", "bottleneck", c.ituning.bottleneck, "positive integer");
    fetch(t, "ituning", "lambda", c.ituning.lambda, "number");
    fetch(t, "ituning", "drop_first_n", c.ituning.drop_first_n, "integer");
    fetch(t, "ituning", "scaled_attention", c.ituning.scaled_attention, "boolean");
    fetch(t, "ituning", "n_heads", c.ituning.n_heads, "positive integer");
    std::string init = c.ituning.init == AdapterInit::kZeroUp ? "zero_up" : "random";
    fetch(t, "ituning", "init", init, "string");
    if (init == "zero_up")
      c.ituning.init = AdapterInit::kZeroUp;
    else if (init == "random")
      c.ituning.init = AdapterInit::kRandom;
    else
      throw std::invalid_argument("config: key 'ituning.init' must be 'random' or 'zero_up'");
    fetch(t, "ituning", "init_sigma", c.ituning.init_sigma, "number");
    fetch(t, "ituning", "seed", c.adapter_seed, "integer");
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    reject_unknown(t, "train",
                   {"peak_lr", "weight_decay", "beta1", "beta2", "adam_eps", "epochs",
                    "warmup_fraction", "batch_size", "grad_clip", "seed"});
    fetch(t, "train", "peak_lr", c.train.peak_lr, "number");
    fetch(t, "train", "weight_decay", c.train.weight_decay, "number");
    fetch(t, "train", "beta1", c.train.beta1, "number");
    fetch(t, "train", "beta2", c.train.beta2, "number");
    fetch(t, "train", "adam_eps", c.train.adam_eps, "number");
    fetch(t, "train", "epochs", c.epochs, "positive integer");
    fetch(t, "train", "warmup_fraction", c.train.warmup_fraction, "number");
    fetch(t, "train", "batch_size", c.train.batch_size, "positive integer");
    fetch(t, "train", "grad_clip", c.train.grad_clip, "number");
    fetch(t, "train", "seed", c.train.seed, "integer");
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d, "data", {"n_train", "n_val", "image_size", "seed"});
    fetch(d, "data", "n_train", c.data.n_train, "positive integer");
    fetch(d, "data", "n_val", c.data.n_val, "positive integer");
    fetch(d, "data", "image_size", c.data.image_size, "positive integer");
    fetch(d, "data", "seed", c.data.seed, "integer");
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    reject_unknown(e, "eval", {"beam_size", "max_len"});
    fetch(e, "eval", "beam_size", c.eval.beam_size, "positive integer");
    fetch(e, "eval", "max_len", c.eval.max_len, "positive integer");
  }
  return c;
}

// Normalized form: sorted keys, two-space indent, trailing newline. Dumping a
// reloaded config reproduces the same bytes.
inline std::string dump_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

inline RunConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace ituner
