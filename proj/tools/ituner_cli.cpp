// Command-line surface: dataset generation, training, captioning, metric
// evaluation, ablation sweeps, attention-map export, and the numerics
// verification suite. Exit codes: 0 success, 1 usage/config/file error,
// 2 verification failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "ituner/ituner.hpp"

namespace {

using namespace ituner;
namespace fs = std::filesystem;

// Images arrive either as binary PPM (preprocessed to the encoder size) or as
// a raw float tensor archive holding "pixels" [3 x S x S] already in [0, 1].
TensorF load_image_tensor(const std::string& path, std::size_t encoder_size) {
  if (path.size() > 5 && path.substr(path.size() - 5) == ".tar1") {
    auto tensors = read_archive<float>(path);
    auto it = tensors.find("pixels");
    if (it == tensors.end())
      throw std::runtime_error("image archive " + path + " has no 'pixels' tensor");
    return it->second;
  }
  return preprocess<float>(load_ppm(path), encoder_size);
}

int cmd_gen_data(const std::string& out_dir, std::size_t n, std::uint64_t seed,
                 std::size_t image_size) {
  auto data = make_dataset(n, seed);
  const std::string manifest = write_dataset(out_dir, data, image_size);
  std::cout << "wrote " << n << " pairs to " << manifest << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::string& manifest) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_config_file(config_path);
  std::vector<DatasetExample> train_data, val_data;
  if (manifest.empty()) {
    train_data = make_dataset(cfg.data.n_train, cfg.data.seed);
    val_data = make_dataset(cfg.data.n_val, cfg.data.seed + 0x800000);
  } else {
    auto all = load_dataset(manifest);
    const std::size_t n_val = std::min(cfg.data.n_val, all.size() / 10);
    train_data.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(n_val));
    val_data.assign(all.end() - static_cast<std::ptrdiff_t>(n_val), all.end());
  }
  Model<float> model = build_model<float>(cfg);
  TrainOutcome outcome = run_training(model, cfg, train_data, val_data, out_dir, &std::cerr);
  nlohmann::json summary = {{"run_dir", out_dir},
                            {"final_train_loss", outcome.final_train_loss},
                            {"final_val_loss", outcome.final_val_loss},
                            {"attribute_accuracy", outcome.final_eval.attribute_accuracy},
                            {"bleu4", outcome.final_eval.bleu4},
                            {"cider", outcome.final_eval.cider}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_caption(const std::string& ckpt, const std::string& image_path, std::size_t beam) {
  RunConfig cfg;
  Model<float> model = load_checkpoint<float>(ckpt, &cfg);
  TensorF pixels = load_image_tensor(image_path, model.vision.cfg.image_size);
  VisualMemoryF memory = encode_image(model.vision, pixels, image_path);
  auto scorer = make_decoder_scorer<float>(model.decoder, &model.stack, &memory);
  BeamResult best =
      beam_search(scorer, model.vocab.bos_id(), model.vocab.eos_id(), beam, cfg.eval.max_len);
  std::cout << model.vocab.decode_caption(best.tokens) << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& manifest, bool shuffle_memory) {
  RunConfig cfg;
  Model<float> model = load_checkpoint<float>(ckpt, &cfg);
  auto data = load_dataset(manifest);
  auto samples = encode_dataset(model, cfg, data);
  EvalReport report = evaluate(model, data, samples, cfg.eval, shuffle_memory);
  nlohmann::json j = {{"metric_notes",
                       {{"cider_variant", "original CIDEr (not CIDEr-D)"},
                        {"meteor", "n/a (external linguistic resources not bundled)"},
                        {"spice", "n/a (external linguistic resources not bundled)"}}},
                      {"bleu4", report.bleu4},
                      {"cider", report.cider},
                      {"attribute_accuracy", report.attribute_accuracy},
                      {"n_images", report.n_images},
                      {"shuffled_memory_control", shuffle_memory}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_attn(const std::string& ckpt, const std::string& image_path, const std::string& text,
             const std::string& out_dir) {
  Model<float> model = load_checkpoint<float>(ckpt);
  TensorF pixels = load_image_tensor(image_path, model.vision.cfg.image_size);
  VisualMemoryF memory = encode_image(model.vision, pixels, image_path);
  const std::vector<int> tokens = model.vocab.encode_caption(text);
  const std::string image_id = fs::path(image_path).stem().string();
  HeatmapFiles files =
      export_heatmaps(model.decoder, model.stack, memory, tokens, model.vocab, out_dir, image_id);
  std::cout << "wrote " << files.csv_paths.size() << " heatmaps under "
            << (fs::path(out_dir) / image_id).string() << "\n";
  return 0;
}

int cmd_grad_check(std::size_t n_seeds, std::uint64_t base_seed) {
  std::vector<GradCheckCase> cases;
  const bool ok = run_gradcheck_suite(n_seeds, cases, &std::cout, 1e-4, base_seed);
  std::cout << (ok ? "grad-check: all cases ok" : "grad-check: FAILURES") << "\n";
  return ok ? 0 : 2;
}

// One ablation cell: train on the (small) configured dataset, report metrics.
nlohmann::json ablate_cell(RunConfig cfg, const std::string& grid, const std::string& cell) {
  auto train_data = make_dataset(cfg.data.n_train, cfg.data.seed);
  auto val_data = make_dataset(cfg.data.n_val, cfg.data.seed + 0x800000);
  Model<float> model = build_model<float>(cfg);
  TrainOutcome outcome = run_training(model, cfg, train_data, val_data);
  return {{"grid", grid},
          {"cell", cell},
          {"placement", placement_name(cfg.ituning.placement)},
          {"lambda", cfg.ituning.lambda},
          {"drop_first_n", cfg.ituning.drop_first_n},
          {"n_layers", cfg.decoder.n_layers},
          {"d_model", cfg.decoder.d_model},
          {"image_size", cfg.vision.image_size},
          {"trainable_params", trainable_param_count(model.stack)},
          {"final_train_loss", outcome.final_train_loss},
          {"val_loss", outcome.final_val_loss},
          {"attribute_accuracy", outcome.final_eval.attribute_accuracy},
          {"bleu4", outcome.final_eval.bleu4},
          {"cider", outcome.final_eval.cider}};
}

int cmd_ablate(const std::string& grid, const std::string& config_path, const std::string& out_csv) {
  RunConfig base = config_path.empty() ? RunConfig{} : load_config_file(config_path);
  std::vector<nlohmann::json> rows;

  if (grid == "placement") {
    for (Placement p : {Placement::kAttention, Placement::kFeedforward, Placement::kWholeLayer}) {
      RunConfig cfg = base;
      cfg.ituning.placement = p;
      rows.push_back(ablate_cell(cfg, grid, placement_name(p)));
    }
  } else if (grid == "lambda") {
    for (double lam : {0.5, 1.0, 2.0, 4.0, 8.0}) {
      RunConfig cfg = base;
      cfg.ituning.lambda = lam;
      rows.push_back(ablate_cell(cfg, grid, "lambda=" + std::to_string(lam)));
    }
  } else if (grid == "drop") {
    for (std::size_t drop = 0; drop <= base.decoder.n_layers; ++drop) {
      RunConfig cfg = base;
      cfg.ituning.drop_first_n = drop;
      rows.push_back(ablate_cell(cfg, grid, "drop=" + std::to_string(drop)));
    }
  } else if (grid == "size") {
    for (const char* preset : {"distill", "base", "medium", "large"}) {
      RunConfig cfg = base;
      const auto old_vocab = cfg.decoder.vocab_size;
      const auto old_maxpos = cfg.decoder.max_positions;
      cfg.decoder = decoder_preset(preset);
      cfg.decoder.vocab_size = old_vocab;
      cfg.decoder.max_positions = old_maxpos;
      rows.push_back(ablate_cell(cfg, grid, preset));
    }
  } else if (grid == "resolution") {
    for (std::size_t size : {32u, 48u, 64u}) {
      RunConfig cfg = base;
      cfg.vision.image_size = size;
      cfg.data.image_size = size;
      rows.push_back(ablate_cell(cfg, grid, "image=" + std::to_string(size)));
    }
  } else {
    std::cerr << "ablate: unknown grid '" << grid
              << "' (placement|lambda|drop|size|resolution)\n";
    return 1;
  }

  const std::vector<std::string> cols = {
      "grid",       "cell",           "placement",        "lambda",
      "drop_first_n", "n_layers",     "d_model",          "image_size",
      "trainable_params", "final_train_loss", "val_loss", "attribute_accuracy",
      "bleu4",      "cider"};
  std::ostringstream csv;
  for (std::size_t i = 0; i < cols.size(); ++i) csv << (i ? "," : "") << cols[i];
  csv << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < cols.size(); ++i) {
      const auto& v = row.at(cols[i]);
      csv << (i ? "," : "") << (v.is_string() ? v.get<std::string>() : v.dump());
    }
    csv << "\n";
  }
  if (out_csv.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream os(out_csv);
    if (!os) throw std::runtime_error("ablate: cannot write " + out_csv);
    os << csv.str();
    std::cout << "wrote " << rows.size() << " cells to " << out_csv << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"I-Tuning: cross-attention adapters over a frozen decoder"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic (image, caption) dataset");
  std::size_t gen_n = 1000, gen_image_size = 32;
  std::uint64_t gen_seed = 1234;
  std::string gen_out = "dataset";
  gen->add_option("--n", gen_n, "number of pairs");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--image-size", gen_image_size, "rendered image size in pixels");

  auto* train = app.add_subcommand("train", "train the adapter stack");
  std::string train_config, train_out = "run", train_manifest;
  train->add_option("--config", train_config, "run config JSON (defaults when omitted)");
  train->add_option("--out", train_out, "run directory for checkpoint + metrics")->required();
  train->add_option("--manifest", train_manifest, "train from a gen-data manifest instead");

  auto* caption = app.add_subcommand("caption", "caption one image");
  std::string cap_ckpt, cap_image;
  std::size_t cap_beam = 5;
  caption->add_option("--ckpt", cap_ckpt, "run directory of a trained model")->required();
  caption->add_option("--image", cap_image, "PPM image path")->required();
  caption->add_option("--beam", cap_beam, "beam size");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  std::string eval_ckpt, eval_manifest;
  bool eval_shuffle = false;
  eval->add_option("--ckpt", eval_ckpt, "run directory of a trained model")->required();
  eval->add_option("--manifest", eval_manifest, "dataset manifest")->required();
  eval->add_flag("--shuffle-memory", eval_shuffle, "mismatch memories (conditioning control)");

  auto* ablate = app.add_subcommand("ablate", "run an experiment grid, emit CSV");
  std::string ab_grid, ab_config, ab_out;
  ablate->add_option("--grid", ab_grid, "placement|lambda|drop|size|resolution")->required();
  ablate->add_option("--config", ab_config, "base run config JSON");
  ablate->add_option("--out", ab_out, "CSV output path (stdout when omitted)");

  auto* attn = app.add_subcommand("attn", "export adapter attention heatmaps");
  std::string attn_ckpt, attn_image, attn_text, attn_out = "heatmaps";
  attn->add_option("--ckpt", attn_ckpt, "run directory of a trained model")->required();
  attn->add_option("--image", attn_image, "PPM image path")->required();
  attn->add_option("--text", attn_text, "caption text to trace")->required();
  attn->add_option("--out", attn_out, "output directory");

  auto* gc = app.add_subcommand("grad-check", "run the numerics verification suite");
  std::size_t gc_seeds = 20;
  std::uint64_t gc_seed = 0;
  gc->add_option("--seeds", gc_seeds, "number of random seeds");
  gc->add_option("--seed", gc_seed, "base seed offset");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, gen_n, gen_seed, gen_image_size);
    if (train->parsed()) return cmd_train(train_config, train_out, train_manifest);
    if (caption->parsed()) return cmd_caption(cap_ckpt, cap_image, cap_beam);
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_manifest, eval_shuffle);
    if (ablate->parsed()) return cmd_ablate(ab_grid, ab_config, ab_out);
    if (attn->parsed()) return cmd_attn(attn_ckpt, attn_image, attn_text, attn_out);
    if (gc->parsed()) return cmd_grad_check(gc_seeds, gc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
