// Regenerates the golden files under tests/golden/ from the straight-line
// reference implementation. Run from the repository root:
//
//   ./build/tools/make_golden tests/golden
//
// The committed goldens are checked by the decoder/vision test suites; this
// tool exists so they can be audited and rebuilt.

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "../tests/golden_setup.hpp"
#include "../tests/reference_forward.hpp"
#include "ituner/archive.hpp"
#include "ituner/decoder.hpp"
#include "ituner/ituning.hpp"
#include "ituner/vision.hpp"

using namespace ituner;

namespace {

refimpl::Weights to_weights(const std::vector<NamedParam<float>>& params) {
  refimpl::Weights w;
  for (const auto& p : params) w.emplace(p.name, p.tensor);
  return w;
}

TensorF mat_to_tensor(const refimpl::Mat& m) {
  TensorF t = TensorF::zeros({m.rows, m.cols});
  for (std::size_t i = 0; i < m.v.size(); ++i) t.data()[i] = static_cast<float>(m.v[i]);
  return t;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string out_dir = argc > 1 ? argv[1] : "tests/golden";
  std::filesystem::create_directories(out_dir);
  auto path = [&](const std::string& name) { return out_dir + "/" + name; };

  // Frozen toy decoder: weights + reference logits for the fixed sequence.
  DecoderState<float> decoder = init_decoder<float>(golden::decoder_config(), golden::kDecoderSeed);
  save_weights(path("decoder_toy_weights.tar1"), decoder);
  refimpl::Weights dw = to_weights(decoder_params(decoder));
  refimpl::Mat logits = refimpl::decoder_forward(dw, 2, 2, 1e-5, golden::tokens());
  write_archive<float>(path("decoder_toy_logits.tar1"), {{"logits", mat_to_tensor(logits)}});

  // Toy vision encoder: weights + reference memory for the fixed image.
  VisionState<float> vision = init_vision<float>(golden::vision_config(), golden::kVisionSeed);
  {
    std::vector<std::pair<std::string, TensorF>> named;
    for (auto& p : vision_params(vision)) named.emplace_back(p.name, p.tensor);
    write_archive(path("vision_toy_weights.tar1"), std::move(named));
  }
  refimpl::Weights vw = to_weights(vision_params(vision));
  refimpl::Mat memory = refimpl::vision_forward(vw, 8, 4, 2, 2, 1e-5, golden::image_pixels());
  write_archive<float>(path("vision_toy_memory.tar1"), {{"memory", mat_to_tensor(memory)}});

  // Adapted decoder: adapter weights + reference logits with the feedforward
  // placement, conditioned on the reference memory.
  ITuningStack<float> stack = make_ituning_stack<float>(
      golden::adapter_config(), 2, golden::decoder_config().d_model,
      golden::vision_config().d_vision, golden::kAdapterSeed);
  {
    std::vector<std::pair<std::string, TensorF>> named;
    for (auto& p : ituning_params(stack)) named.emplace_back(p.name, p.tensor);
    write_archive(path("adapter_toy_weights.tar1"), std::move(named));
  }
  refimpl::Weights aw = dw;
  for (auto& p : ituning_params(stack)) aw.emplace(p.name, p.tensor);
  refimpl::Mat adapted = refimpl::decoder_forward(aw, 2, 2, 1e-5, golden::tokens(), &memory,
                                                  refimpl::AdapterPlacement::kFeedforward, 4.0);
  write_archive<float>(path("decoder_toy_adapted_logits.tar1"),
                       {{"logits", mat_to_tensor(adapted)}});

  std::cout << "regenerated golden files in " << out_dir << "\n";
  return 0;
}
