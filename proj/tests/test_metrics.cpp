#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ituner/metrics.hpp"

using namespace ituner;
using Catch::Approx;

TEST_CASE("bleu4: identical and disjoint edges") {
  REQUIRE(bleu4({"a b c d e"}, {{"a b c d e"}}) == 1.0);
  REQUIRE(bleu4({"p q r s"}, {{"a b c d"}}) == 0.0);
  REQUIRE_THROWS_AS(bleu4({}, {}), std::invalid_argument);
  REQUIRE_THROWS_AS(bleu4({"a"}, {{}}), std::invalid_argument);
}

TEST_CASE("bleu4 matches the worked two-sentence micro-corpus") {
  // Sentence 1: hyp "a b c d d" vs ref "a b c d e"
  //   1-grams: hyp {a,b,c,d,d}; clipped: a,b,c + min(2,1) for d = 4 of 5
  //   2-grams: {ab,bc,cd,dd};  clipped: ab,bc,cd            = 3 of 4
  //   3-grams: {abc,bcd,cdd};  clipped: abc,bcd             = 2 of 3
  //   4-grams: {abcd,bcdd};    clipped: abcd                = 1 of 2
  // Sentence 2: hyp "x y z w" == ref, adding 4/4, 3/3, 2/2, 1/1.
  // Corpus precisions: p1 = 8/9, p2 = 6/7, p3 = 4/5, p4 = 2/3.
  // Lengths: c = 5 + 4 = 9, r = 5 + 4 = 9, so BP = 1.
  // BLEU = (8/9 * 6/7 * 4/5 * 2/3)^(1/4).
  const double expected = std::pow((8.0 / 9) * (6.0 / 7) * (4.0 / 5) * (2.0 / 3), 0.25);
  const double got = bleu4({"a b c d d", "x y z w"}, {{"a b c d e"}, {"x y z w"}});
  REQUIRE(got == Approx(expected).margin(1e-9));
}

TEST_CASE("bleu4 brevity penalty uses the closest reference length") {
  // hyp "a b c d": with references of length 4 and 7 the closest is 4, all
  // precisions are 1 and BP = 1, so the score is exactly 1.
  REQUIRE(bleu4({"a b c d"}, {{"a b c d", "a b c d e f g"}}) == 1.0);
  // Against only the length-7 reference: precisions still 1 (every n-gram of
  // the hypothesis appears), but BP = exp(1 - 7/4).
  REQUIRE(bleu4({"a b c d"}, {{"a b c d e f g"}}) ==
          Approx(std::exp(1.0 - 7.0 / 4.0)).margin(1e-12));
}

TEST_CASE("bleu4 and cider are invariant to reference order") {
  const std::vector<std::string> hyps{"a b c d", "x y z w"};
  const std::vector<std::vector<std::string>> refs1{{"a b c d", "a b c e"}, {"x y z w", "x y w z"}};
  std::vector<std::vector<std::string>> refs2 = refs1;
  std::swap(refs2[0][0], refs2[0][1]);
  std::swap(refs2[1][0], refs2[1][1]);
  REQUIRE(bleu4(hyps, refs1) == Approx(bleu4(hyps, refs2)).margin(1e-12));
  REQUIRE(cider(hyps, refs1) == Approx(cider(hyps, refs2)).margin(1e-12));
}

TEST_CASE("cider: exact 10.0 on identical non-degenerate captions") {
  // Three distinct >= 4-token captions, each hypothesis equal to its single
  // reference: every n-gram cosine is exactly 1, so the score is exactly 10.
  const std::vector<std::string> caps{"a red circle above a blue square",
                                      "a green triangle left of a red circle",
                                      "a yellow square above a green triangle"};
  std::vector<std::vector<std::string>> refs;
  for (const auto& c : caps) refs.push_back({c});
  REQUIRE(cider(caps, refs) == 10.0);
}

TEST_CASE("cider: zero overlap scores zero") {
  REQUIRE(cider({"p q r s"}, {{"a b c d"}}) == 0.0);
}

TEST_CASE("cider matches the worked three-image micro-corpus") {
  // Corpus (one reference each): refs = {"a b", "c d", "e f"}, N = 3 images.
  // Every unigram and bigram below appears in exactly one image's reference,
  // so idf = ln 3 throughout.
  //
  // Image 1: hyp "a b" == ref.
  //   n=1: vectors equal -> cos 1. n=2: "a b" == "a b" -> cos 1.
  //   n=3,4: two-token sentences have no such grams -> cos 0.
  //   per-image mean over n: (1 + 1 + 0 + 0)/4 = 0.5
  // Image 2: hyp "a c" vs ref "c d".
  //   n=1: hyp {a: tf 1/2 * ln3, c: ...}, ref {c, d}: only "c" overlaps.
  //   cos = (0.5 ln3)^2 / (sqrt(2)*0.5 ln3)^2 = 1/2.
  //   n=2: hyp {"a c"} vs ref {"c d"}: no overlap -> 0. n=3,4: 0.
  //   per-image: (0.5 + 0 + 0 + 0)/4 = 0.125
  // Image 3: hyp "e f" == ref -> 0.5 like image 1.
  // Score = 10 * (0.5 + 0.125 + 0.5)/3 = 3.75.
  const double got = cider({"a b", "a c", "e f"}, {{"a b"}, {"c d"}, {"e f"}});
  REQUIRE(got == Approx(3.75).margin(1e-9));
}

TEST_CASE("metrics are pure functions of their inputs") {
  const std::vector<std::string> hyps{"a b c d", "a b"};
  const std::vector<std::vector<std::string>> refs{{"a b c d"}, {"a b c"}};
  const double b1 = bleu4(hyps, refs);
  const double c1 = cider(hyps, refs);
  REQUIRE(bleu4(hyps, refs) == b1);
  REQUIRE(cider(hyps, refs) == c1);
}
