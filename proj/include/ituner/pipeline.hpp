#pragma once

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ituner/config.hpp"
#include "ituner/data.hpp"
#include "ituner/decode.hpp"
#include "ituner/decoder.hpp"
#include "ituner/metrics.hpp"
#include "ituner/trainer.hpp"
#include "ituner/vision.hpp"

namespace ituner {

// One (image, caption) pair with its ground-truth scene.
struct DatasetExample {
  SceneSpec spec;
  std::string caption;
  std::string image_path;  // empty for in-memory datasets
};

inline std::vector<DatasetExample> make_dataset(std::size_t n, std::uint64_t seed) {
  std::vector<DatasetExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    DatasetExample ex;
    ex.spec = gen_scene(seed + i);
    ex.caption = caption_of(ex.spec);
    out.push_back(std::move(ex));
  }
  return out;
}

// --------------------------------------------------------------------------
// Manifest: one JSON object per line, {image_path, caption, spec}.
// --------------------------------------------------------------------------

inline nlohmann::json spec_to_json(const SceneSpec& spec) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : spec.objects)
    objs.push_back({{"color", color_word(o.color)},
                    {"shape", shape_word(o.shape)},
                    {"row", o.row},
                    {"col", o.col}});
  const char* rel = spec.relation == Relation::kAlone
                        ? "alone"
                        : (spec.relation == Relation::kLeftOf ? "left_of" : "above");
  return {{"grid", spec.grid}, {"relation", rel}, {"objects", objs}, {"seed", spec.seed}};
}

inline SceneSpec spec_from_json(const nlohmann::json& j) {
  SceneSpec spec;
  spec.grid = j.at("grid").get<int>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  const std::string rel = j.at("relation").get<std::string>();
  if (rel == "alone")
    spec.relation = Relation::kAlone;
  else if (rel == "left_of")
    spec.relation = Relation::kLeftOf;
  else if (rel == "above")
    spec.relation = Relation::kAbove;
  else
    throw std::invalid_argument("manifest: unknown relation '" + rel + "'");
  for (const auto& oj : j.at("objects")) {
    SceneObject o;
    auto color = color_from_word(oj.at("color").get<std::string>());
    auto shape = shape_from_word(oj.at("shape").get<std::string>());
    if (!color || !shape) throw std::invalid_argument("manifest: bad object attributes");
    o.color = *color;
    o.shape = *shape;
    o.row = oj.at("row").get<int>();
    o.col = oj.at("col").get<int>();
    spec.objects.push_back(o);
  }
  if (spec.objects.empty()) throw std::invalid_argument("manifest: scene with no objects");
  return spec;
}

// Renders PPMs and writes manifest.jsonl under `dir`. Returns the manifest path.
inline std::string write_dataset(const std::string& dir, const std::vector<DatasetExample>& data,
                                 std::size_t image_size) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  const std::string manifest_path = (fs::path(dir) / "manifest.jsonl").string();
  std::ofstream manifest(manifest_path);
  if (!manifest) throw std::runtime_error("dataset: cannot write " + manifest_path);
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06zu.ppm", i);
    const std::string image_path = (fs::path(dir) / name).string();
    save_ppm(image_path, render(data[i].spec, image_size));
    nlohmann::json line = {
        {"image_path", name}, {"caption", data[i].caption}, {"spec", spec_to_json(data[i].spec)}};
    manifest << line.dump() << "\n";
  }
  return manifest_path;
}

inline std::vector<DatasetExample> load_dataset(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw std::runtime_error("dataset: cannot open manifest: " + manifest_path);
  const std::filesystem::path root = std::filesystem::path(manifest_path).parent_path();
  std::vector<DatasetExample> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    DatasetExample ex;
    ex.caption = j.at("caption").get<std::string>();
    ex.spec = spec_from_json(j.at("spec"));
    ex.image_path = (root / j.at("image_path").get<std::string>()).string();
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw std::runtime_error("dataset: empty manifest: " + manifest_path);
  return out;
}

// --------------------------------------------------------------------------
// Model bundle.
// --------------------------------------------------------------------------

template <class Real>
struct Model {
  DecoderState<Real> decoder;
  VisionState<Real> vision;
  ITuningStack<Real> stack;
  Vocabulary vocab;
};

using ModelF = Model<float>;

// The frozen encoder is always pseudo-pretrained at the 4x4 patch grid; other
// resolutions reuse those weights with interpolated position embeddings.
template <class Real>
VisionState<Real> build_vision(const VisionConfig& cfg, std::uint64_t seed) {
  VisionConfig base = cfg;
  base.image_size = 4 * cfg.patch_size;
  VisionState<Real> vision = init_vision<Real>(base, seed);
  if (cfg.image_size != base.image_size) vision = vision_at_resolution(vision, cfg.image_size);
  return vision;
}

template <class Real>
Model<Real> build_model(const RunConfig& cfg) {
  Model<Real> m;
  if (cfg.decoder.vocab_size < m.vocab.size())
    throw std::invalid_argument("config: decoder.vocab_size must be at least " +
                                std::to_string(m.vocab.size()));
  m.decoder = init_decoder<Real>(cfg.decoder, cfg.decoder_seed);
  m.vision = build_vision<Real>(cfg.vision, cfg.vision_seed);
  m.stack = make_ituning_stack<Real>(cfg.ituning, cfg.decoder.n_layers, cfg.decoder.d_model,
                                     cfg.vision.d_vision, cfg.adapter_seed);
  return m;
}

// Render (or read) every image and push it through the frozen encoder once.
// Memories are constants for the rest of the run.
template <class Real>
std::vector<TrainSample<Real>> encode_dataset(const Model<Real>& model, const RunConfig& cfg,
                                              const std::vector<DatasetExample>& data) {
  std::vector<TrainSample<Real>> out(data.size());
  const std::size_t threads = std::min<std::size_t>(std::max<std::size_t>(worker_count(), 1),
                                                    std::max<std::size_t>(data.size(), 1));
  auto work = [&](std::size_t shard) {
    for (std::size_t i = shard; i < data.size(); i += threads) {
      RawImage img = data[i].image_path.empty() ? render(data[i].spec, cfg.data.image_size)
                                                : load_ppm(data[i].image_path);
      Tensor<Real> pixels = preprocess<Real>(img, model.vision.cfg.image_size);
      out[i].memory = encode_image(model.vision, pixels, std::to_string(i));
      out[i].tokens = model.vocab.encode_caption(data[i].caption);
    }
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 1; k < threads; ++k) pool.emplace_back(work, k);
    work(0);
    for (auto& t : pool) t.join();
  }
  return out;
}

// --------------------------------------------------------------------------
// Evaluation: beam-decode every image, score captions against ground truth.
// Images decode independently, so results are identical at any thread count.
// --------------------------------------------------------------------------

struct EvalReport {
  double bleu4 = 0.0;
  double cider = 0.0;
  double attribute_accuracy = 0.0;
  std::size_t n_images = 0;
  std::vector<std::string> captions;
};

template <class Real>
EvalReport evaluate(const Model<Real>& model, const std::vector<DatasetExample>& data,
                    const std::vector<TrainSample<Real>>& samples, const EvalConfig& eval_cfg,
                    bool shuffle_memory = false) {
  if (data.size() != samples.size())
    throw std::invalid_argument("evaluate: dataset and encoded samples disagree");
  EvalReport report;
  report.n_images = data.size();
  report.captions.resize(data.size());

  const std::size_t threads =
      std::min<std::size_t>(std::max<std::size_t>(worker_count(), 1), data.size());
  auto work = [&](std::size_t shard) {
    for (std::size_t i = shard; i < data.size(); i += threads) {
      // The shuffled-memory control pairs each caption with a different
      // image's memory; a visually grounded model has to fall apart.
      const auto& memory =
          shuffle_memory ? samples[(i + 1) % samples.size()].memory : samples[i].memory;
      auto scorer = make_decoder_scorer<Real>(model.decoder, &model.stack, &memory);
      BeamResult best = beam_search(scorer, model.vocab.bos_id(), model.vocab.eos_id(),
                                    eval_cfg.beam_size, eval_cfg.max_len);
      report.captions[i] = model.vocab.decode_caption(best.tokens);
    }
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 1; k < threads; ++k) pool.emplace_back(work, k);
    work(0);
    for (auto& t : pool) t.join();
  }

  std::vector<std::vector<std::string>> refs;
  refs.reserve(data.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    refs.push_back({data[i].caption});
    acc += attribute_accuracy(report.captions[i], data[i].spec);
  }
  report.attribute_accuracy = acc / static_cast<double>(data.size());
  report.bleu4 = bleu4(report.captions, refs);
  report.cider = cider(report.captions, refs);
  return report;
}

// --------------------------------------------------------------------------
// Training loop: seeded shuffling, linear warmup/decay, frozen ledger,
// JSONL metrics, adapter-only checkpoint.
// --------------------------------------------------------------------------

struct TrainOutcome {
  double first_epoch_loss = 0.0;
  double final_train_loss = 0.0;
  double final_val_loss = 0.0;
  EvalReport final_eval;
  std::vector<std::string> metric_lines;
};

template <class Real>
double dataset_loss(const Model<Real>& model, const std::vector<TrainSample<Real>>& samples) {
  double total = 0.0;
  std::size_t targets = 0;
  for (const auto& s : samples) {
    Tensor<Real> loss =
        caption_loss<Real>(model.decoder, &model.stack, &s.memory, s.tokens, 0, nullptr);
    total += static_cast<double>(loss.data()[0]) * static_cast<double>(s.tokens.size() - 1);
    targets += s.tokens.size() - 1;
  }
  return total / static_cast<double>(targets);
}

template <class Real>
TrainOutcome run_training(Model<Real>& model, const RunConfig& cfg,
                          const std::vector<DatasetExample>& train_data,
                          const std::vector<DatasetExample>& val_data,
                          const std::string& out_dir = "", std::ostream* progress = nullptr) {
  if (train_data.empty()) throw std::invalid_argument("train: empty dataset");
  cfg.train.validate();

  ParamLedger<Real> ledger;
  freeze_all(model.decoder, ledger);
  freeze_all(model.vision, ledger);
  ledger.add_trainable(ituning_params(model.stack));

  auto train_samples = encode_dataset(model, cfg, train_data);
  auto val_samples = encode_dataset(model, cfg, val_data);

  TrainConfig tc = cfg.train;
  const std::size_t steps_per_epoch = (train_samples.size() + tc.batch_size - 1) / tc.batch_size;
  tc.total_steps = cfg.epochs * steps_per_epoch;

  AdamW<Real> opt(ledger.trainable());
  std::vector<ITuningStack<Real>> shard_stacks;
  for (std::size_t k = 1; k < worker_count(); ++k)
    shard_stacks.push_back(detail::clone_stack(model.stack));

  std::vector<std::size_t> order(train_samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng(tc.seed * 0x9E3779B97F4A7C15ull + 1);

  TrainOutcome outcome;
  auto emit = [&](const nlohmann::json& j) {
    outcome.metric_lines.push_back(j.dump());
    if (progress != nullptr) *progress << outcome.metric_lines.back() << "\n";
  };

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t lo = b * tc.batch_size;
      const std::size_t hi = std::min(lo + tc.batch_size, train_samples.size());
      std::vector<const TrainSample<Real>*> batch;
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(&train_samples[order[i]]);
      ++step;
      const double lr = lr_at(step, tc);
      ledger.zero_trainable_grads();
      const double loss =
          train_step<Real>(batch, model.decoder, model.stack, opt, ledger, lr, tc, shard_stacks);
      epoch_loss += loss;
      emit({{"step", step}, {"epoch", epoch}, {"lr", lr}, {"loss", loss}});
    }
    epoch_loss /= static_cast<double>(steps_per_epoch);
    const double val_loss = val_samples.empty() ? 0.0 : dataset_loss(model, val_samples);
    emit({{"event", "epoch_end"},
          {"epoch", epoch},
          {"train_loss", epoch_loss},
          {"val_loss", val_loss}});
    if (epoch == 0) outcome.first_epoch_loss = epoch_loss;
    outcome.final_train_loss = epoch_loss;
    outcome.final_val_loss = val_loss;
  }

  if (!val_data.empty()) {
    outcome.final_eval = evaluate(model, val_data, val_samples, cfg.eval);
    emit({{"event", "final_eval"},
          {"bleu4", outcome.final_eval.bleu4},
          {"cider", outcome.final_eval.cider},
          {"attribute_accuracy", outcome.final_eval.attribute_accuracy},
          {"n_images", outcome.final_eval.n_images}});
  }

  if (!out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::ofstream cfg_out(fs::path(out_dir) / "config.json");
    cfg_out << dump_config(cfg);
    std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl");
    for (const auto& line : outcome.metric_lines) metrics << line << "\n";
    std::vector<std::pair<std::string, Tensor<Real>>> named;
    for (auto& p : ituning_params(model.stack)) named.emplace_back(p.name, p.tensor);
    write_archive((fs::path(out_dir) / "adapters.tar1").string(), std::move(named));
  }
  return outcome;
}

// Rebuild a trained model from a run directory (config.json + adapters.tar1).
template <class Real>
Model<Real> load_checkpoint(const std::string& run_dir, RunConfig* cfg_out = nullptr) {
  namespace fs = std::filesystem;
  const std::string cfg_path = (fs::path(run_dir) / "config.json").string();
  RunConfig cfg = load_config_file(cfg_path);
  Model<Real> model = build_model<Real>(cfg);
  load_params_from_archive((fs::path(run_dir) / "adapters.tar1").string(),
                           ituning_params(model.stack));
  if (cfg_out != nullptr) *cfg_out = cfg;
  return model;
}

}  // namespace ituner
