#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ituner {

namespace detail {

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

// n-gram -> count, with grams joined by '\x1f' (never appears in tokens).
inline std::map<std::string, int> ngram_counts(const std::vector<std::string>& words,
                                               std::size_t n) {
  std::map<std::string, int> counts;
  if (words.size() < n) return counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    std::string key = words[i];
    for (std::size_t j = 1; j < n; ++j) key += '\x1f' + words[i + j];
    ++counts[key];
  }
  return counts;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Corpus-level BLEU@4: geometric mean of modified n-gram precisions (n=1..4)
// times the brevity penalty. No smoothing; any empty precision zeroes the
// score.
// ---------------------------------------------------------------------------
inline double bleu4(const std::vector<std::string>& hypotheses,
                    const std::vector<std::vector<std::string>>& references) {
  if (hypotheses.empty()) throw std::invalid_argument("bleu4: empty corpus");
  if (references.size() != hypotheses.size())
    throw std::invalid_argument("bleu4: need one reference list per hypothesis");

  double clipped[4] = {0, 0, 0, 0};
  double total[4] = {0, 0, 0, 0};
  double hyp_len = 0.0, ref_len = 0.0;

  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    if (references[i].empty())
      throw std::invalid_argument("bleu4: hypothesis " + std::to_string(i) + " has no references");
    const auto hyp = detail::split_words(hypotheses[i]);
    hyp_len += static_cast<double>(hyp.size());

    // Closest reference length; ties break toward the shorter reference.
    std::size_t best_len = detail::split_words(references[i][0]).size();
    for (const auto& r : references[i]) {
      const std::size_t len = detail::split_words(r).size();
      const auto diff = [&](std::size_t l) {
        return l > hyp.size() ? l - hyp.size() : hyp.size() - l;
      };
      if (diff(len) < diff(best_len) || (diff(len) == diff(best_len) && len < best_len))
        best_len = len;
    }
    ref_len += static_cast<double>(best_len);

    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hyp_grams = detail::ngram_counts(hyp, n);
      std::map<std::string, int> max_ref;
      for (const auto& r : references[i])
        for (const auto& [gram, count] : detail::ngram_counts(detail::split_words(r), n))
          max_ref[gram] = std::max(max_ref[gram], count);
      for (const auto& [gram, count] : hyp_grams) {
        total[n - 1] += count;
        auto it = max_ref.find(gram);
        if (it != max_ref.end()) clipped[n - 1] += std::min(count, it->second);
      }
    }
  }

  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (clipped[n] <= 0.0 || total[n] <= 0.0) return 0.0;
    log_sum += 0.25 * std::log(clipped[n] / total[n]);
  }
  const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return bp * std::exp(log_sum);
}

// ---------------------------------------------------------------------------
// CIDEr in its original form (not CIDEr-D): per n in 1..4, cosine similarity
// of TF-IDF n-gram vectors between the candidate and each reference, averaged
// over references and n, scaled by the x10 reporting convention. Document
// frequencies come from the reference corpus.
// ---------------------------------------------------------------------------
inline double cider(const std::vector<std::string>& hypotheses,
                    const std::vector<std::vector<std::string>>& references) {
  if (hypotheses.empty()) throw std::invalid_argument("cider: empty corpus");
  if (references.size() != hypotheses.size())
    throw std::invalid_argument("cider: need one reference list per hypothesis");
  const std::size_t n_images = hypotheses.size();

  // df[n][gram] = number of images whose references contain the gram.
  std::array<std::map<std::string, double>, 4> df;
  for (std::size_t i = 0; i < n_images; ++i) {
    if (references[i].empty())
      throw std::invalid_argument("cider: hypothesis " + std::to_string(i) + " has no references");
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::string, int> seen;
      for (const auto& r : references[i])
        for (const auto& [gram, count] : detail::ngram_counts(detail::split_words(r), n))
          seen[gram] += count;
      for (const auto& [gram, count] : seen) df[n - 1][gram] += 1.0;
    }
  }

  auto tfidf_vector = [&](const std::vector<std::string>& words, std::size_t n) {
    std::map<std::string, double> vec;
    const auto counts = detail::ngram_counts(words, n);
    double total = 0.0;
    for (const auto& [gram, count] : counts) total += count;
    if (total == 0.0) return vec;
    for (const auto& [gram, count] : counts) {
      auto it = df[n - 1].find(gram);
      const double d = it == df[n - 1].end() ? 0.0 : it->second;
      const double idf = std::log(static_cast<double>(n_images) / std::max(1.0, d));
      vec[gram] = (count / total) * idf;
    }
    return vec;
  };

  auto cosine = [](const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
    if (a.empty() || b.empty()) return 0.0;
    if (a == b) return 1.0;  // exact by definition; avoids sqrt round-off
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [gram, v] : a) {
      na += v * v;
      auto it = b.find(gram);
      if (it != b.end()) dot += v * it->second;
    }
    for (const auto& [gram, v] : b) nb += v * v;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  double score = 0.0;
  for (std::size_t i = 0; i < n_images; ++i) {
    const auto hyp = detail::split_words(hypotheses[i]);
    double per_image = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hv = tfidf_vector(hyp, n);
      double per_n = 0.0;
      for (const auto& r : references[i])
        per_n += cosine(hv, tfidf_vector(detail::split_words(r), n));
      per_image += per_n / static_cast<double>(references[i].size());
    }
    score += per_image / 4.0;
  }
  return 10.0 * score / static_cast<double>(n_images);
}

}  // namespace ituner
