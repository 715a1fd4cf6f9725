#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "ituner/decode.hpp"
#include "ituner/rng.hpp"

using namespace ituner;
using Catch::Approx;

namespace {

constexpr int kBos = 0;
constexpr int kEos = 1;

// Deterministic fake model: the next-token distribution is a seeded hash of
// the prefix. Stands in for a decoder when testing search behavior.
struct HashScorer {
  std::size_t vocab;
  std::uint64_t seed;
  double eos_bonus = 0.0;

  std::vector<double> operator()(const std::vector<int>& prefix) const {
    std::uint64_t h = seed;
    for (int t : prefix) h = h * 0x100000001B3ull ^ static_cast<std::uint64_t>(t + 1);
    Rng rng(h);
    std::vector<double> logits(vocab);
    for (auto& v : logits) v = rng.normal() * 2.0;
    logits[kEos] += eos_bonus;
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0;
    for (double v : logits) sum += std::exp(v - mx);
    const double lse = mx + std::log(sum);
    for (auto& v : logits) v -= lse;
    return logits;
  }
};

std::vector<int> greedy(const HashScorer& scorer, std::size_t max_len) {
  std::vector<int> prefix{kBos};
  for (std::size_t step = 0; step < max_len; ++step) {
    const auto dist = scorer(prefix);
    std::size_t best = 0;
    for (std::size_t t = 1; t < dist.size(); ++t)
      if (dist[t] > dist[best]) best = t;
    if (static_cast<int>(best) == kEos) return {prefix.begin() + 1, prefix.end()};
    prefix.push_back(static_cast<int>(best));
  }
  return {prefix.begin() + 1, prefix.end()};
}

}  // namespace

TEST_CASE("beam size one reduces to greedy decoding") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    HashScorer scorer{5, seed, 1.0};
    BeamResult beam = beam_search(scorer, kBos, kEos, 1, 6);
    std::vector<int> greedy_tokens = greedy(scorer, 6);
    if (!beam.truncated) REQUIRE(beam.tokens == greedy_tokens);
  }
}

TEST_CASE("beam search matches exhaustive enumeration on small instances") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    HashScorer scorer{5, seed};
    BeamResult beam = beam_search(scorer, kBos, kEos, 5, 4);
    BeamResult oracle = exhaustive_best_caption(scorer, kBos, kEos, 5, 4);
    REQUIRE(beam.truncated == false);
    INFO("seed " << seed);
    REQUIRE(beam.tokens == oracle.tokens);
    REQUIRE(beam.log_prob == Approx(oracle.log_prob).margin(1e-12));
  }
}

TEST_CASE("a beam wide enough for the whole tree is exhaustive by construction") {
  for (std::uint64_t seed = 200; seed < 220; ++seed) {
    HashScorer scorer{4, seed};
    BeamResult beam = beam_search(scorer, kBos, kEos, 64, 3);  // 4^3 = 64 leaves
    BeamResult oracle = exhaustive_best_caption(scorer, kBos, kEos, 4, 3);
    REQUIRE(beam.tokens == oracle.tokens);
  }
}

TEST_CASE("widening the beam never lowers the returned log-probability") {
  for (std::uint64_t seed = 300; seed < 330; ++seed) {
    HashScorer scorer{6, seed};
    double prev = -1e30;
    for (std::size_t width : {1u, 2u, 3u, 5u, 8u}) {
      BeamResult r = beam_search(scorer, kBos, kEos, width, 5);
      if (r.truncated) continue;
      REQUIRE(r.log_prob >= prev - 1e-12);
      prev = r.log_prob;
    }
  }
}

TEST_CASE("identical scorers give identical captions") {
  HashScorer a{5, 42};
  HashScorer b{5, 42};
  BeamResult ra = beam_search(a, kBos, kEos, 5, 6);
  BeamResult rb = beam_search(b, kBos, kEos, 5, 6);
  REQUIRE(ra.tokens == rb.tokens);
  REQUIRE(ra.log_prob == rb.log_prob);
}

TEST_CASE("ties break toward lexicographically smaller token ids") {
  // Uniform distribution: every one-step continuation scores the same, so the
  // best finished sequence is plain EOS; with EOS masked out to -inf the
  // search must run to max_len and truncate.
  auto uniform = [](const std::vector<int>&) {
    return std::vector<double>(4, std::log(0.25));
  };
  BeamResult r = beam_search(uniform, kBos, kEos, 3, 4);
  REQUIRE(!r.truncated);
  REQUIRE(r.tokens.empty());  // "<eos>" alone outranks any longer sequence

  auto no_eos = [](const std::vector<int>&) {
    std::vector<double> d(4, std::log(1.0 / 3));
    d[kEos] = -std::numeric_limits<double>::infinity();
    return d;
  };
  BeamResult t = beam_search(no_eos, kBos, kEos, 2, 3);
  REQUIRE(t.truncated);
  REQUIRE(t.tokens.size() == 3);
  // All live beams tie; lexicographic order picks the smallest token ids.
  REQUIRE(t.tokens == std::vector<int>{0, 0, 0});
}

TEST_CASE("degenerate parameters are rejected") {
  HashScorer scorer{4, 9};
  REQUIRE_THROWS_AS(beam_search(scorer, kBos, kEos, 0, 4), std::invalid_argument);
  REQUIRE_THROWS_AS(beam_search(scorer, kBos, kEos, 2, 0), std::invalid_argument);
}
