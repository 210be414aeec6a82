#pragma once

#include <cstddef>
#include <initializer_list>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dvb/corpus.hpp"
#include "dvb/text.hpp"

// Scoring: token- and sentence-level precision/recall/F1, per-dimension
// token recall, micro/macro aggregation and Spearman rank correlation.
namespace dvb::metrics {

/// Sorted, duplicate-free set of token indices.
class IndexSet {
 public:
  IndexSet() = default;
  IndexSet(std::initializer_list<std::size_t> values);
  explicit IndexSet(std::vector<std::size_t> values);

  static IndexSet from_spans(const std::vector<corpus::HallucinationSpan>& spans);

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }
  bool contains(std::size_t v) const;
  std::size_t intersection_size(const IndexSet& other) const;
  /// True if any member lies in [begin, end).
  bool intersects_range(std::size_t begin, std::size_t end) const;
  std::optional<std::size_t> max() const;
  const std::vector<std::size_t>& values() const noexcept { return values_; }

  bool operator==(const IndexSet&) const = default;

 private:
  std::vector<std::size_t> values_;
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool operator==(const Prf&) const = default;
};

/// Numerator and denominators behind one P/R/F1 triple.
struct Counts {
  std::size_t intersection = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;

  Counts& operator+=(const Counts& o) {
    intersection += o.intersection;
    predicted += o.predicted;
    gold += o.gold;
    return *this;
  }
  bool operator==(const Counts&) const = default;
};

/// P = |I|/|pred|, R = |I|/|gold|, F1 = 2PR/(P+R). Both sets empty scores
/// (1, 1, 1); an empty denominator otherwise gives 0, and F1 is 0 when
/// P + R = 0.
Prf prf(const Counts& c);

Counts token_counts(const IndexSet& gold, const IndexSet& pred);

/// Throws std::out_of_range if an index is >= n.
Prf token_metrics(const IndexSet& gold, const IndexSet& pred, std::size_t n);

struct SentenceLabel {
  bool gold = false;
  bool predicted = false;
  bool operator==(const SentenceLabel&) const = default;
};

struct SentenceResult {
  Prf scores;
  Counts counts;  // intersection = sentences labeled by both
  std::vector<SentenceLabel> labels;
};

/// A sentence is labeled hallucinated when it holds at least one index of
/// the set. Throws std::out_of_range if an index lies beyond the caption the
/// sentence index was built from.
SentenceResult sentence_metrics(const IndexSet& gold, const IndexSet& pred,
                                const text::SentenceIndex& sentences);

struct DimensionCount {
  std::size_t hit = 0;
  std::size_t total = 0;
  bool operator==(const DimensionCount&) const = default;
};

using DimensionCounts = std::map<corpus::Dimension, DimensionCount>;

DimensionCounts dimension_counts(const std::vector<corpus::HallucinationSpan>& gold_spans,
                                 const IndexSet& pred);

/// Recall per dimension with gold support; dimensions without gold tokens
/// are absent.
std::map<corpus::Dimension, double> dimension_recall(
    const std::vector<corpus::HallucinationSpan>& gold_spans, const IndexSet& pred);

/// Per-sample inputs to aggregation.
struct SampleCounts {
  corpus::Domain domain = corpus::Domain::gui;
  Counts token;
  Counts sentence;
  DimensionCounts dimensions;
  bool faithful = true;
};

struct CardCore {
  Prf token;
  Prf sentence;
  Counts token_counts;
  Counts sentence_counts;
  std::map<corpus::Dimension, double> dimension_recall;
  DimensionCounts dimension_counts;
  double faithfulness_violation_rate = 0.0;
  std::size_t samples = 0;
  Prf token_macro;
  Prf sentence_macro;

  bool operator==(const CardCore&) const = default;
};

struct ScoreCard {
  CardCore overall;
  std::map<corpus::Domain, CardCore> domains;  // only domains with samples

  bool operator==(const ScoreCard&) const = default;
};

/// Micro aggregation (sum counts, then divide) overall and per domain;
/// macro means are kept alongside. Throws dvb::Error on empty input.
ScoreCard aggregate(const std::vector<SampleCounts>& samples);

/// Average ranks (1-based), ties sharing the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

/// Pearson correlation of average ranks. Throws dvb::Error on a length
/// mismatch or fewer than two points; returns nullopt when either vector is
/// constant.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

}  // namespace dvb::metrics
