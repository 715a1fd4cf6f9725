#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ituner/data.hpp"
#include "ituner/decoder.hpp"
#include "ituner/image.hpp"

namespace ituner {

struct HeatmapFiles {
  std::vector<std::string> csv_paths;
  std::vector<std::string> pgm_paths;
};

// Memory-attention grids of the final adapter, one per caption token. Each
// token's S row (summing to 1) is reshaped to the patch grid and written both
// as CSV (exact values) and as PGM with value round(255 * s) — lighter pixels
// mean higher attention.
template <class Real>
HeatmapFiles export_heatmaps(const DecoderState<Real>& decoder, const ITuningStack<Real>& stack,
                             const VisualMemory<Real>& memory, const std::vector<int>& tokens,
                             const Vocabulary& vocab, const std::string& out_dir,
                             const std::string& image_id) {
  std::size_t final_adapter = stack.modules.size();
  for (std::size_t i = 0; i < stack.modules.size(); ++i)
    if (stack.modules[i]) final_adapter = i;
  if (final_adapter == stack.modules.size())
    throw std::invalid_argument("heatmap: every adapter layer is dropped");

  std::vector<Tensor<Real>> trace;
  decoder_forward(decoder, tokens, &memory, &stack, static_cast<Tape<Real>*>(nullptr), &trace);
  const Tensor<Real>& scores = trace[final_adapter];  // T x M

  const std::size_t m = scores.cols();
  const auto grid = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(m))));
  if (grid * grid != m)
    throw std::invalid_argument("heatmap: memory length " + std::to_string(m) +
                                " is not a square patch grid");

  const std::filesystem::path dir = std::filesystem::path(out_dir) / image_id;
  std::filesystem::create_directories(dir);

  HeatmapFiles out;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const std::string word = vocab.word_of(tokens[t]);
    std::string safe_word;
    for (char ch : word)
      safe_word += (std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_');
    const std::string base = std::to_string(t) + "_" + safe_word;

    const std::string csv_path = (dir / (base + ".csv")).string();
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("heatmap: cannot write " + csv_path);
    std::vector<std::uint8_t> gray(m);
    for (std::size_t gy = 0; gy < grid; ++gy) {
      for (std::size_t gx = 0; gx < grid; ++gx) {
        const double v = static_cast<double>(scores.at(t, gy * grid + gx));
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        csv << (gx ? "," : "") << buf;
        gray[gy * grid + gx] =
            static_cast<std::uint8_t>(std::llround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
      csv << "\n";
    }
    const std::string pgm_path = (dir / (base + ".pgm")).string();
    save_pgm(pgm_path, grid, grid, gray);
    out.csv_paths.push_back(csv_path);
    out.pgm_paths.push_back(pgm_path);
  }
  return out;
}

}  // namespace ituner
