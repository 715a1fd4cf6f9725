#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "ituner/decoder.hpp"
#include "ituner/ituning.hpp"
#include "ituner/trainer.hpp"

using namespace ituner;
using Catch::Approx;

namespace {

VisualMemoryF random_memory(std::uint64_t seed, std::size_t m, std::size_t d) {
  Rng rng(seed);
  TensorF t = TensorF::zeros({m, d});
  for (auto& v : t.data()) v = static_cast<float>(rng.normal() * 0.5);
  return {t, "mem"};
}

TensorF random_input(std::uint64_t seed, std::size_t t, std::size_t d) {
  Rng rng(seed);
  TensorF x = TensorF::zeros({t, d});
  for (auto& v : x.data()) v = static_cast<float>(rng.normal());
  return x;
}

ITuningModule<float> make_module(std::uint64_t seed, std::size_t d_model, std::size_t d_vision,
                                 std::size_t r, double lambda) {
  ITuningConfig cfg;
  cfg.bottleneck = r;
  cfg.lambda = lambda;
  Rng rng(seed);
  return init_ituning_module<float>(cfg, d_model, d_vision, rng);
}

}  // namespace

TEST_CASE("single memory row: attention collapses and the input stops mattering") {
  ITuningModule<float> m = make_module(1, 6, 4, 2, 4.0);
  VisualMemoryF memory = random_memory(2, 1, 4);
  TensorF x1 = random_input(3, 3, 6);
  TensorF x2 = random_input(4, 3, 6);
  TensorF d1 = ituning_forward(x1, memory, m);
  TensorF d2 = ituning_forward(x2, memory, m);
  REQUIRE(std::memcmp(d1.data().data(), d2.data().data(), d1.numel() * sizeof(float)) == 0);
  // All rows identical: every token attends to the single row with weight 1.
  for (std::size_t r = 1; r < 3; ++r)
    for (std::size_t c = 0; c < 6; ++c) REQUIRE(d1.at(r, c) == d1.at(0, c));

  TensorF s = attention_map(x1, memory, m);
  for (float v : s.data()) REQUIRE(v == 1.0f);
}

TEST_CASE("lambda zero with zero output bias gives exactly zero correction") {
  ITuningModule<float> m = make_module(5, 6, 4, 2, 0.0);
  for (auto& v : m.b_o.data()) v = 0.0f;
  TensorF delta = ituning_forward(random_input(6, 4, 6), random_memory(7, 3, 4), m);
  for (float v : delta.data()) REQUIRE(v == 0.0f);
}

TEST_CASE("empty memory is a contract error") {
  ITuningModule<float> m = make_module(8, 6, 4, 2, 4.0);
  VisualMemoryF empty{TensorF::zeros({0, 4}), "none"};
  REQUIRE_THROWS_WITH(ituning_forward(random_input(9, 2, 6), empty, m),
                      Catch::Matchers::ContainsSubstring("memory"));
}

TEST_CASE("hand-computed scalar oracle for the full adapter forward") {
  // T=2, M=2, r=2, d_model=2, d_vision=2, integer weights. The expected
  // values below are computed inline, step by step, exactly as written:
  // Q = X Wq + bq, K/V from memory, S = softmax(Q K^T),
  // delta = lambda (S V) Wup + bo.
  ITuningModule<float> m;
  m.w_down_q = TensorF::from_data({2, 2}, {1, 0, 0, 1});
  m.b_q = TensorF::from_data({2}, {0, 1});
  m.w_down_k = TensorF::from_data({2, 2}, {1, 1, 0, 1});
  m.b_k = TensorF::from_data({2}, {1, 0});
  m.w_down_v = TensorF::from_data({2, 2}, {2, 0, 0, 3});
  m.b_v = TensorF::from_data({2}, {0, 0});
  m.w_up_o = TensorF::from_data({2, 2}, {1, 2, 3, 4});
  m.b_o = TensorF::from_data({2}, {1, -1});
  m.lambda = 4.0f;

  TensorF x = TensorF::from_data({2, 2}, {1, 0, 0, 2});
  VisualMemoryF memory{TensorF::from_data({2, 2}, {1, 0, 0, 1}), "m"};

  // Q = [[1,1],[0,3]]; K = [[2,1],[1,1]]; V = [[2,0],[0,3]]
  // scores = Q K^T = [[3,2],[3,3]]
  // S row0 = softmax([3,2]) = [e/(e+1), 1/(e+1)]; row1 = [1/2, 1/2]
  const double e = std::exp(1.0);
  const double s00 = e / (e + 1), s01 = 1 / (e + 1);
  // attended = S V: row0 = [2 s00, 3 s01]; row1 = [1, 1.5]
  // up = attended Wup: [a, b] Wup = [a + 3b, 2a + 4b]
  const double a0 = 2 * s00, b0 = 3 * s01;
  const double d00 = 4.0 * (a0 + 3 * b0) + 1.0;
  const double d01 = 4.0 * (2 * a0 + 4 * b0) - 1.0;
  const double d10 = 4.0 * (1.0 + 3 * 1.5) + 1.0;
  const double d11 = 4.0 * (2.0 + 4 * 1.5) - 1.0;

  TensorF delta = ituning_forward(x, memory, m);
  REQUIRE(delta.at(0, 0) == Approx(d00).epsilon(1e-6));
  REQUIRE(delta.at(0, 1) == Approx(d01).epsilon(1e-6));
  REQUIRE(delta.at(1, 0) == Approx(d10).epsilon(1e-6));
  REQUIRE(delta.at(1, 1) == Approx(d11).epsilon(1e-6));
}

TEST_CASE("feedforward placement equals a manual inline composition") {
  DecoderConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.vocab_size = 14;
  cfg.max_positions = 8;
  DecoderState<float> state = init_decoder<float>(cfg, 31);
  VisualMemoryF memory = random_memory(32, 4, 8);
  ITuningConfig ic;
  ic.bottleneck = 4;
  ITuningStack<float> stack = make_ituning_stack<float>(ic, 2, 16, 8, 33);
  const std::vector<int> tokens{1, 3, 7, 2};

  TensorF composed = decoder_forward<float>(state, tokens, &memory, &stack);

  // Manual composition with the same primitive calls in the same order.
  const float eps = 1e-5f;
  Tape<float>* tape = nullptr;
  TensorF x = add(embedding_rows(state.tok_emb, tokens, tape),
                  slice_rows(state.pos_emb, 0, tokens.size(), tape), tape);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& l = state.layers[i];
    TensorF a_in = layer_norm(x, l.ln1_gain, l.ln1_bias, eps, tape);
    TensorF qkv = add_bias_row(matmul(a_in, l.w_qkv, tape), l.b_qkv, tape);
    TensorF q = slice_cols(qkv, 0, 16, tape);
    TensorF k = slice_cols(qkv, 16, 32, tape);
    TensorF v = slice_cols(qkv, 32, 48, tape);
    std::vector<TensorF> heads;
    for (std::size_t h = 0; h < 2; ++h) {
      TensorF qh = slice_cols(q, h * 8, (h + 1) * 8, tape);
      TensorF kh = slice_cols(k, h * 8, (h + 1) * 8, tape);
      TensorF vh = slice_cols(v, h * 8, (h + 1) * 8, tape);
      TensorF scores =
          scale(matmul(qh, transpose(kh, tape), tape), 1.0f / std::sqrt(8.0f), tape);
      heads.push_back(matmul(causal_softmax_rows(scores, tape), vh, tape));
    }
    TensorF attn = add_bias_row(matmul(concat_cols(heads, tape), l.w_o, tape), l.b_o, tape);
    x = add(x, attn, tape);
    TensorF f_in = layer_norm(x, l.ln2_gain, l.ln2_bias, eps, tape);
    TensorF h1 = add_bias_row(matmul(f_in, l.w_fc, tape), l.b_fc, tape);
    TensorF ffn = add_bias_row(matmul(gelu(h1, tape), l.w_proj, tape), l.b_proj, tape);
    ffn = add(ffn, ituning_forward(f_in, memory, *stack.modules[i], tape), tape);
    x = add(x, ffn, tape);
  }
  x = layer_norm(x, state.ln_f_gain, state.ln_f_bias, eps, tape);
  TensorF manual = matmul(x, transpose(state.tok_emb, tape), tape);

  REQUIRE(std::memcmp(composed.data().data(), manual.data().data(),
                      composed.numel() * sizeof(float)) == 0);
}

TEST_CASE("trainable parameter count: closed form, ledger census, dropping law") {
  const std::size_t d = 128, dv = 64, r = 16, layers = 4;
  ITuningConfig ic;
  ic.bottleneck = r;
  ITuningStack<float> stack = make_ituning_stack<float>(ic, layers, d, dv, 41);

  const std::size_t per_module = r * (d + 2 * dv + d) + 3 * r + d;
  REQUIRE(trainable_param_count(stack) == layers * per_module);

  ParamLedger<float> ledger;
  ledger.add_trainable(ituning_params(stack));
  REQUIRE(ledger.trainable_count() == layers * per_module);

  // Dropping: strictly decreasing, exact halving at L/2, zero at L.
  std::size_t prev = trainable_param_count(stack) + 1;
  for (std::size_t drop = 0; drop <= layers; ++drop) {
    ITuningConfig dc = ic;
    dc.drop_first_n = drop;
    ITuningStack<float> dropped = make_ituning_stack<float>(dc, layers, d, dv, 42);
    const std::size_t count = trainable_param_count(dropped);
    REQUIRE(count == (layers - drop) * per_module);
    REQUIRE(count < prev);
    prev = count;
    for (std::size_t i = 0; i < drop; ++i) REQUIRE(!dropped.modules[i].has_value());
  }

  ITuningConfig half = ic;
  half.drop_first_n = layers / 2;
  ITuningStack<float> half_stack = make_ituning_stack<float>(half, layers, d, dv, 43);
  REQUIRE(trainable_param_count(half_stack) * 2 == trainable_param_count(stack));
}

TEST_CASE("lambda scaling is linear when the output bias is zero") {
  ITuningModule<float> m1 = make_module(51, 8, 4, 4, 1.5);
  for (auto& v : m1.b_o.data()) v = 0.0f;
  ITuningModule<float> m2 = m1;
  m2.lambda = 3.0f;
  TensorF x = random_input(52, 3, 8);
  VisualMemoryF memory = random_memory(53, 4, 4);
  TensorF d1 = ituning_forward(x, memory, m1);
  TensorF d2 = ituning_forward(x, memory, m2);
  for (std::size_t i = 0; i < d1.numel(); ++i)
    REQUIRE(d2.data()[i] == Approx(2.0f * d1.data()[i]).epsilon(1e-6).margin(1e-7));
}

TEST_CASE("per-token locality: perturbing one row moves only that row") {
  ITuningModule<float> m = make_module(61, 8, 4, 4, 4.0);
  VisualMemoryF memory = random_memory(62, 4, 4);
  TensorF x = random_input(63, 5, 8);
  TensorF base = ituning_forward(x, memory, m);
  TensorF x2 = x.clone();
  x2.at(2, 3) += 1.5f;
  TensorF moved = ituning_forward(x2, memory, m);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 8; ++c) {
      if (r == 2) continue;
      REQUIRE(moved.at(r, c) == base.at(r, c));
    }
}

TEST_CASE("attention map rows sum to one and match the instrumented forward") {
  ITuningModule<float> m = make_module(71, 8, 4, 4, 4.0);
  VisualMemoryF memory = random_memory(72, 5, 4);
  TensorF x = random_input(73, 3, 8);
  TensorF s = attention_map(x, memory, m);
  REQUIRE(s.rows() == 3);
  REQUIRE(s.cols() == 5);
  for (std::size_t r = 0; r < 3; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 5; ++c) total += s.at(r, c);
    REQUIRE(total == Approx(1.0).margin(1e-6));
  }
  TensorF captured;
  ituning_forward(x, memory, m, static_cast<Tape<float>*>(nullptr), &captured);
  REQUIRE(std::memcmp(s.data().data(), captured.data().data(), s.numel() * sizeof(float)) == 0);
}

TEST_CASE("gradients land exactly on non-dropped adapter tensors") {
  DecoderConfig cfg;
  cfg.n_layers = 3;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.vocab_size = 14;
  cfg.max_positions = 8;
  DecoderState<float> state = init_decoder<float>(cfg, 81);
  VisionConfig vc;
  vc.image_size = 8;
  vc.patch_size = 4;
  vc.d_vision = 8;
  vc.n_heads = 2;
  vc.n_layers = 1;
  VisionState<float> vision = init_vision<float>(vc, 82);

  ITuningConfig ic;
  ic.bottleneck = 4;
  ic.drop_first_n = 1;
  ITuningStack<float> stack = make_ituning_stack<float>(ic, 3, 16, 8, 83);

  ParamLedger<float> ledger;
  freeze_all(state, ledger);
  freeze_all(vision, ledger);
  ledger.add_trainable(ituning_params(stack));

  TensorF image = TensorF::zeros({3, 8, 8});
  for (std::size_t i = 0; i < image.numel(); ++i)
    image.data()[i] = static_cast<float>(i % 7) / 7.0f;
  VisualMemoryF memory = encode_image(vision, image);

  Tape<float> tape;
  TensorF loss =
      caption_loss<float>(state, &stack, &memory, std::vector<int>{1, 3, 7, 5, 2}, 0, &tape);
  tape.backward(loss);

  // Frozen tensors never even allocate a gradient.
  for (const auto& p : ledger.frozen()) REQUIRE(!p.tensor.has_grad());

  // Adapter tensors in live layers all receive gradients; the key bias is
  // shift-invariant through the softmax so its gradient may be zero, every
  // other tensor must have moved.
  for (const auto& p : ledger.trainable()) {
    REQUIRE(p.tensor.has_grad());
    double mx = 0;
    for (float g : p.tensor.grad()) mx = std::max(mx, std::abs(static_cast<double>(g)));
    if (p.name.find(".b_k") == std::string::npos) {
      INFO(p.name);
      REQUIRE(mx > 0.0);
    }
  }
  REQUIRE(ledger.trainable().size() == 2 * 8);  // two live layers, eight tensors each
}
