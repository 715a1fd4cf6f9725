#pragma once

#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "ituner/decoder.hpp"
#include "ituner/gradcheck.hpp"
#include "ituner/ituning.hpp"
#include "ituner/trainer.hpp"

namespace ituner {

struct GradCheckCase {
  std::string name;
  double max_err = 0.0;
  bool pass = false;
};

namespace detail {

// Random-weighted sum turns any op output into a scalar whose gradient
// exercises every output entry. A plain sum would be blind to ops with
// constant row sums (softmax).
inline TensorD weighted(Rng& rng, const Shape& shape) {
  TensorD w = TensorD::zeros(shape);
  for (double& v : w.data()) v = rng.normal();
  return w;
}

inline TensorD random_tensor(Rng& rng, const Shape& shape, double scale = 1.0) {
  TensorD t = TensorD::zeros(shape);
  for (double& v : t.data()) v = rng.normal() * scale;
  return t;
}

}  // namespace detail

// Finite-difference verification of every primitive plus the composed caption
// loss on a 2-layer toy model, across `n_seeds` seeds, double precision.
inline bool run_gradcheck_suite(std::size_t n_seeds, std::vector<GradCheckCase>& cases,
                                std::ostream* log = nullptr, double tolerance = 1e-4,
                                std::uint64_t base_seed = 0) {
  cases.clear();
  const double h = 1e-4;

  auto record = [&](const std::string& name, double err) {
    for (auto& c : cases) {
      if (c.name == name) {
        c.max_err = std::max(c.max_err, err);
        c.pass = c.max_err < tolerance;
        return;
      }
    }
    cases.push_back({name, err, err < tolerance});
  };

  for (std::size_t s = 0; s < n_seeds; ++s) {
    const std::uint64_t seed = base_seed + s;
    Rng rng(0xC0FFEE + seed * 7919);

    {  // matmul, both operands
      TensorD a = detail::random_tensor(rng, {3, 4});
      TensorD b = detail::random_tensor(rng, {4, 2});
      TensorD w = detail::weighted(rng, {3, 2});
      auto f_a = [&](TapeD* tape) { return sum(mul(matmul(a, b, tape), w, tape), tape); };
      record("matmul/a", grad_check<double>(f_a, a, h));
      auto f_b = [&](TapeD* tape) { return sum(mul(matmul(a, b, tape), w, tape), tape); };
      record("matmul/b", grad_check<double>(f_b, b, h));
    }
    {  // transpose
      TensorD x = detail::random_tensor(rng, {3, 4});
      TensorD w = detail::weighted(rng, {4, 3});
      auto f = [&](TapeD* tape) { return sum(mul(transpose(x, tape), w, tape), tape); };
      record("transpose", grad_check<double>(f, x, h));
    }
    {  // add / mul, both operands
      TensorD a = detail::random_tensor(rng, {3, 4});
      TensorD b = detail::random_tensor(rng, {3, 4});
      TensorD w = detail::weighted(rng, {3, 4});
      auto f_add = [&](TapeD* tape) { return sum(mul(add(a, b, tape), w, tape), tape); };
      record("add/a", grad_check<double>(f_add, a, h));
      record("add/b", grad_check<double>(f_add, b, h));
      auto f_mul = [&](TapeD* tape) { return sum(mul(mul(a, b, tape), w, tape), tape); };
      record("mul/a", grad_check<double>(f_mul, a, h));
      record("mul/b", grad_check<double>(f_mul, b, h));
    }
    {  // scale
      TensorD x = detail::random_tensor(rng, {3, 4});
      TensorD w = detail::weighted(rng, {3, 4});
      auto f = [&](TapeD* tape) { return sum(mul(scale(x, 3.5, tape), w, tape), tape); };
      record("scale", grad_check<double>(f, x, h));
    }
    {  // add_bias_row
      TensorD x = detail::random_tensor(rng, {4, 3});
      TensorD b = detail::random_tensor(rng, {3});
      TensorD w = detail::weighted(rng, {4, 3});
      auto f = [&](TapeD* tape) { return sum(mul(add_bias_row(x, b, tape), w, tape), tape); };
      record("add_bias_row/x", grad_check<double>(f, x, h));
      record("add_bias_row/bias", grad_check<double>(f, b, h));
    }
    {  // gelu
      TensorD x = detail::random_tensor(rng, {3, 4});
      TensorD w = detail::weighted(rng, {3, 4});
      auto f = [&](TapeD* tape) { return sum(mul(gelu(x, tape), w, tape), tape); };
      record("gelu", grad_check<double>(f, x, h));
    }
    {  // softmax_rows
      TensorD x = detail::random_tensor(rng, {2, 3});
      TensorD w = detail::weighted(rng, {2, 3});
      auto f = [&](TapeD* tape) { return sum(mul(softmax_rows(x, tape), w, tape), tape); };
      record("softmax_rows", grad_check<double>(f, x, h));
    }
    {  // causal_softmax_rows
      TensorD x = detail::random_tensor(rng, {4, 4});
      TensorD w = detail::weighted(rng, {4, 4});
      auto f = [&](TapeD* tape) { return sum(mul(causal_softmax_rows(x, tape), w, tape), tape); };
      record("causal_softmax_rows", grad_check<double>(f, x, h));
    }
    {  // layer_norm, all three inputs
      TensorD x = detail::random_tensor(rng, {3, 5});
      TensorD gain = detail::random_tensor(rng, {5}, 0.5);
      TensorD bias = detail::random_tensor(rng, {5}, 0.5);
      TensorD w = detail::weighted(rng, {3, 5});
      auto f = [&](TapeD* tape) {
        return sum(mul(layer_norm(x, gain, bias, 1e-5, tape), w, tape), tape);
      };
      record("layer_norm/x", grad_check<double>(f, x, h));
      record("layer_norm/gain", grad_check<double>(f, gain, h));
      record("layer_norm/bias", grad_check<double>(f, bias, h));
    }
    {  // cross_entropy with an ignored row
      TensorD logits = detail::random_tensor(rng, {3, 5});
      const std::vector<int> targets = {static_cast<int>(rng.below(5)),
                                        static_cast<int>(rng.below(5)), -1};
      auto f = [&](TapeD* tape) { return cross_entropy(logits, targets, -1, tape); };
      record("cross_entropy", grad_check<double>(f, logits, h));
    }
    {  // embedding gather
      TensorD table = detail::random_tensor(rng, {7, 4});
      const std::vector<int> ids = {0, 3, 6, 3};
      TensorD w = detail::weighted(rng, {4, 4});
      auto f = [&](TapeD* tape) { return sum(mul(embedding_rows(table, ids, tape), w, tape), tape); };
      record("embedding_rows", grad_check<double>(f, table, h));
    }
    {  // slice / concat
      TensorD x = detail::random_tensor(rng, {4, 6});
      TensorD w1 = detail::weighted(rng, {4, 3});
      auto f1 = [&](TapeD* tape) { return sum(mul(slice_cols(x, 1, 4, tape), w1, tape), tape); };
      record("slice_cols", grad_check<double>(f1, x, h));
      TensorD w2 = detail::weighted(rng, {2, 6});
      auto f2 = [&](TapeD* tape) { return sum(mul(slice_rows(x, 1, 3, tape), w2, tape), tape); };
      record("slice_rows", grad_check<double>(f2, x, h));
      TensorD y = detail::random_tensor(rng, {4, 2});
      TensorD w3 = detail::weighted(rng, {4, 8});
      auto f3 = [&](TapeD* tape) {
        return sum(mul(concat_cols<double>({x, y}, tape), w3, tape), tape);
      };
      record("concat_cols/a", grad_check<double>(f3, x, h));
      record("concat_cols/b", grad_check<double>(f3, y, h));
    }
    {  // composed: full adapter forward + caption loss on a 2-layer toy model
      DecoderConfig dc;
      dc.n_layers = 2;
      dc.d_model = 16;
      dc.n_heads = 2;
      dc.vocab_size = 14;
      dc.max_positions = 8;
      DecoderState<double> decoder = init_decoder<double>(dc, 100 + seed);

      ITuningConfig ic;
      ic.bottleneck = 4;
      ic.lambda = 4.0;
      ic.placement = static_cast<Placement>(seed % 3);
      ic.init_sigma = 0.1;
      ITuningStack<double> stack = make_ituning_stack<double>(ic, dc.n_layers, dc.d_model, 8,
                                                              200 + seed);
      for (auto& p : ituning_params(stack)) p.tensor.set_requires_grad(true);

      VisualMemory<double> memory{detail::random_tensor(rng, {4, 8}, 0.5), "toy"};
      const std::vector<int> tokens = {1, 3, 7, 5, 9, 2};
      auto f = [&](Tape<double>* tape) {
        return caption_loss<double>(decoder, &stack, &memory, tokens, 0, tape);
      };
      // Deep composition: no single step suits every coordinate, so each is
      // checked across a small step ladder (see grad_check_steps).
      const std::vector<double> ladder = {2e-5, 1e-4, 5e-4, 1e-3, 2e-3};
      double worst = 0.0;
      auto params = ituning_params(stack);
      for (auto& p : params)
        worst = std::max(worst, grad_check_steps<double>(f, p.tensor, ladder));
      record("composed_caption_loss", worst);
    }
  }

  bool all_pass = true;
  for (const auto& c : cases) {
    all_pass = all_pass && c.pass;
    if (log != nullptr) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%-24s max_rel_err %.3e  %s", c.name.c_str(), c.max_err,
                    c.pass ? "ok" : "FAIL");
      *log << buf << "\n";
    }
  }
  return all_pass;
}

}  // namespace ituner
