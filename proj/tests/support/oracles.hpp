#pragma once

// Independent brute-force references used to freeze expected values. Nothing
// here calls into the library's scoring, diff or ranking code.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dvb/corpus.hpp"

namespace oracle {

struct Prf {
  double p = 0, r = 0, f1 = 0;
};

// Materializes both sets as membership arrays over 0..n-1 and counts.
inline Prf set_prf(const std::vector<std::size_t>& gold, const std::vector<std::size_t>& pred,
                   std::size_t n) {
  std::vector<int> in_gold(n, 0), in_pred(n, 0);
  for (auto g : gold) in_gold.at(g) = 1;
  for (auto p : pred) in_pred.at(p) = 1;
  long both = 0, ng = 0, np = 0;
  for (std::size_t i = 0; i < n; ++i) {
    both += in_gold[i] & in_pred[i];
    ng += in_gold[i];
    np += in_pred[i];
  }
  if (ng == 0 && np == 0) return {1, 1, 1};
  Prf out;
  out.p = np == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(np);
  out.r = ng == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(ng);
  out.f1 = (out.p + out.r) == 0 ? 0.0 : 2 * out.p * out.r / (out.p + out.r);
  return out;
}

// Label 1 iff any member of `set` lies in [begin, end).
inline bool hits(const std::vector<std::size_t>& set, std::size_t begin, std::size_t end) {
  for (auto v : set) {
    if (v >= begin && v < end) return true;
  }
  return false;
}

// LCS length by plain exhaustive recursion (memo-free on small inputs).
inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b,
                              std::size_t i = 0, std::size_t j = 0) {
  if (i == a.size() || j == b.size()) return 0;
  if (a[i] == b[j]) return 1 + lcs_length(a, b, i + 1, j + 1);
  return std::max(lcs_length(a, b, i + 1, j), lcs_length(a, b, i, j + 1));
}

// Average rank by direct counting: 1 + #smaller + (#equal - 1) / 2.
inline std::vector<double> count_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (x[j] < x[i]) ++less;
      if (x[j] == x[i]) ++equal;
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

inline std::optional<double> rank_correlation(const std::vector<double>& a,
                                              const std::vector<double>& b) {
  const auto ra = count_ranks(a), rb = count_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0 || sbb == 0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

// --- random captions -------------------------------------------------------

inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> v = {
      "a",      "the",   "red",    "blue",   "car",    "tree",  "two",   "three", "window",
      "button", "menu",  "left",   "right",  "large",  "small", "wooden", "glass", "sky",
      "bar",    "chart", "shows",  "with",   "near",   "on",    "of",    "is",    "and",
      "poster", "title", "reads",  "camera", "shot",   "close-up", "it's", "v2.0", "x-axis"};
  return v;
}

// Words with optional trailing punctuation and capitalized sentence starts,
// so sentence splitting is exercised.
inline std::string random_caption(std::mt19937_64& rng, std::size_t words) {
  const auto& v = vocabulary();
  std::uniform_int_distribution<std::size_t> pick(0, v.size() - 1);
  std::uniform_int_distribution<int> roll(0, 99);
  std::string out;
  bool capitalize = true;
  for (std::size_t w = 0; w < words; ++w) {
    std::string word = v[pick(rng)];
    if (capitalize && std::islower(static_cast<unsigned char>(word[0]))) {
      word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
    }
    capitalize = false;
    const int r = roll(rng);
    if (r < 10) {
      word += ".";
      capitalize = true;
    } else if (r < 13) {
      word += "!";
      capitalize = true;
    } else if (r < 18) {
      word += ",";
    } else if (r < 20) {
      word = "(" + word + ")";
    }
    if (!out.empty()) out += (roll(rng) < 10 ? "  " : " ");
    out += word;
  }
  return out;
}

inline std::vector<std::size_t> random_subset(std::mt19937_64& rng, std::size_t n, int percent) {
  std::uniform_int_distribution<int> roll(0, 99);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (roll(rng) < percent) out.push_back(i);
  }
  return out;
}

// Disjoint sorted spans covering a random subset of [0, n).
inline std::vector<dvb::corpus::HallucinationSpan> random_spans(std::mt19937_64& rng, std::size_t n) {
  std::vector<dvb::corpus::HallucinationSpan> out;
  std::uniform_int_distribution<int> roll(0, 99);
  std::uniform_int_distribution<std::size_t> dim(0, dvb::corpus::kAllDimensions.size() - 1);
  std::size_t i = 0;
  while (i < n) {
    if (roll(rng) < 20) {
      std::uniform_int_distribution<std::size_t> len(1, std::min<std::size_t>(4, n - i));
      const auto l = len(rng);
      out.push_back({i, i + l, dvb::corpus::kAllDimensions[dim(rng)]});
      i += l + 1;  // keep a gap so spans never touch
    } else {
      ++i;
    }
  }
  return out;
}

// --- per-domain fixture ----------------------------------------------------

struct DomainRow {
  dvb::corpus::Domain domain;
  std::size_t samples;
  std::size_t mean_len;       // exact mean token count
  std::size_t locations;      // total gold spans
  std::size_t hallucinated;   // samples with >= 1 span
};

// Reference per-domain layout: 200 samples each, mean length in tokens,
// hallucination locations, and hallucinated samples (gui: 68% of 200 = 136).
inline std::vector<DomainRow> reference_layout() {
  using dvb::corpus::Domain;
  return {{Domain::gui, 200, 196, 274, 136},
          {Domain::nature, 200, 148, 69, 52},
          {Domain::chart, 200, 197, 192, 82},
          {Domain::movie, 200, 214, 613, 176},
          {Domain::poster, 200, 257, 576, 180}};
}

// Builds samples whose token counts average exactly `mean_len`, with
// `hallucinated` samples carrying `locations` single-token spans in total.
inline std::vector<dvb::corpus::BenchmarkSample> make_fixture(std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  std::vector<dvb::corpus::BenchmarkSample> out;
  for (const auto& row : reference_layout()) {
    // Lengths alternate mean-d / mean+d so the mean is exact.
    std::vector<std::size_t> lengths(row.samples, row.mean_len);
    for (std::size_t i = 0; i + 1 < row.samples; i += 2) {
      const std::size_t d = (i / 2) % 40;
      lengths[i] -= d;
      lengths[i + 1] += d;
    }
    std::vector<std::size_t> spans(row.samples, 0);
    for (std::size_t i = 0; i < row.hallucinated; ++i) spans[i] = 1;
    for (std::size_t extra = row.locations - row.hallucinated, i = 0; extra > 0; --extra, ++i) {
      spans[i % row.hallucinated] += 1;
    }
    std::shuffle(spans.begin(), spans.end(), rng);
    for (std::size_t i = 0; i < row.samples; ++i) {
      dvb::corpus::BenchmarkSample s;
      s.id = std::string(dvb::corpus::to_string(row.domain)) + "-" + std::to_string(i);
      s.image = "images/" + s.id + ".png";
      s.domain = row.domain;
      std::string caption;
      // The id leads so that captions are unique.
      for (std::size_t w = 0; w < lengths[i]; ++w) {
        if (w) caption += ' ';
        caption += w == 0 ? s.id : "w" + std::to_string(w % 97);
      }
      s.caption = caption;
      // k single-token spans at even positions 0, 2, 4, ...
      for (std::size_t k = 0; k < spans[i]; ++k) {
        s.gold_spans.push_back({2 * k, 2 * k + 1, dvb::corpus::Dimension::other});
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace oracle
