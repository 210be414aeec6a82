#include "dvb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dvb/error.hpp"

namespace dvb::metrics {

IndexSet::IndexSet(std::initializer_list<std::size_t> values)
    : IndexSet(std::vector<std::size_t>(values)) {}

IndexSet::IndexSet(std::vector<std::size_t> values) : values_(std::move(values)) {
  std::sort(values_.begin(), values_.end());
  values_.erase(std::unique(values_.begin(), values_.end()), values_.end());
}

IndexSet IndexSet::from_spans(const std::vector<corpus::HallucinationSpan>& spans) {
  std::vector<std::size_t> v;
  for (const auto& s : spans) {
    for (auto i = s.start; i < s.end; ++i) v.push_back(i);
  }
  return IndexSet(std::move(v));
}

bool IndexSet::contains(std::size_t v) const {
  return std::binary_search(values_.begin(), values_.end(), v);
}

std::size_t IndexSet::intersection_size(const IndexSet& other) const {
  std::size_t n = 0;
  auto a = values_.begin();
  auto b = other.values_.begin();
  while (a != values_.end() && b != other.values_.end()) {
    if (*a < *b) {
      ++a;
    } else if (*b < *a) {
      ++b;
    } else {
      ++n;
      ++a;
      ++b;
    }
  }
  return n;
}

bool IndexSet::intersects_range(std::size_t begin, std::size_t end) const {
  auto it = std::lower_bound(values_.begin(), values_.end(), begin);
  return it != values_.end() && *it < end;
}

std::optional<std::size_t> IndexSet::max() const {
  if (values_.empty()) return std::nullopt;
  return values_.back();
}

Prf prf(const Counts& c) {
  if (c.predicted == 0 && c.gold == 0) return {1.0, 1.0, 1.0};
  Prf r;
  r.precision = c.predicted == 0 ? 0.0 : static_cast<double>(c.intersection) / static_cast<double>(c.predicted);
  r.recall = c.gold == 0 ? 0.0 : static_cast<double>(c.intersection) / static_cast<double>(c.gold);
  const double sum = r.precision + r.recall;
  r.f1 = sum > 0.0 ? 2.0 * r.precision * r.recall / sum : 0.0;
  return r;
}

Counts token_counts(const IndexSet& gold, const IndexSet& pred) {
  return {gold.intersection_size(pred), pred.size(), gold.size()};
}

Prf token_metrics(const IndexSet& gold, const IndexSet& pred, std::size_t n) {
  for (const auto* s : {&gold, &pred}) {
    if (auto m = s->max(); m && *m >= n) {
      throw std::out_of_range("token index " + std::to_string(*m) + " outside caption of " +
                              std::to_string(n) + " tokens");
    }
  }
  return prf(token_counts(gold, pred));
}

SentenceResult sentence_metrics(const IndexSet& gold, const IndexSet& pred,
                                const text::SentenceIndex& sentences) {
  for (const auto* s : {&gold, &pred}) {
    if (auto m = s->max(); m && *m >= sentences.token_count) {
      throw std::out_of_range("token index " + std::to_string(*m) +
                              " does not belong to the segmented caption");
    }
  }
  SentenceResult r;
  r.labels.reserve(sentences.size());
  for (const auto& s : sentences.sentences) {
    SentenceLabel label{gold.intersects_range(s.first_token, s.end_token),
                        pred.intersects_range(s.first_token, s.end_token)};
    r.counts.gold += label.gold ? 1 : 0;
    r.counts.predicted += label.predicted ? 1 : 0;
    r.counts.intersection += (label.gold && label.predicted) ? 1 : 0;
    r.labels.push_back(label);
  }
  r.scores = prf(r.counts);
  return r;
}

DimensionCounts dimension_counts(const std::vector<corpus::HallucinationSpan>& gold_spans,
                                 const IndexSet& pred) {
  DimensionCounts out;
  for (const auto& s : gold_spans) {
    auto& c = out[s.dimension];
    for (auto i = s.start; i < s.end; ++i) {
      ++c.total;
      if (pred.contains(i)) ++c.hit;
    }
  }
  std::erase_if(out, [](const auto& kv) { return kv.second.total == 0; });
  return out;
}

namespace {

std::map<corpus::Dimension, double> recall_map(const DimensionCounts& counts) {
  std::map<corpus::Dimension, double> out;
  for (const auto& [d, c] : counts) {
    if (c.total > 0) out[d] = static_cast<double>(c.hit) / static_cast<double>(c.total);
  }
  return out;
}

CardCore build_core(const std::vector<const SampleCounts*>& samples) {
  CardCore core;
  core.samples = samples.size();
  std::size_t violations = 0;
  Prf token_sum;
  Prf sentence_sum;
  for (const auto* s : samples) {
    core.token_counts += s->token;
    core.sentence_counts += s->sentence;
    for (const auto& [d, c] : s->dimensions) {
      core.dimension_counts[d].hit += c.hit;
      core.dimension_counts[d].total += c.total;
    }
    if (!s->faithful) ++violations;
    const auto t = prf(s->token);
    const auto se = prf(s->sentence);
    token_sum.precision += t.precision;
    token_sum.recall += t.recall;
    token_sum.f1 += t.f1;
    sentence_sum.precision += se.precision;
    sentence_sum.recall += se.recall;
    sentence_sum.f1 += se.f1;
  }
  core.token = prf(core.token_counts);
  core.sentence = prf(core.sentence_counts);
  core.dimension_recall = recall_map(core.dimension_counts);
  if (core.samples > 0) {
    const auto n = static_cast<double>(core.samples);
    core.faithfulness_violation_rate = static_cast<double>(violations) / n;
    core.token_macro = {token_sum.precision / n, token_sum.recall / n, token_sum.f1 / n};
    core.sentence_macro = {sentence_sum.precision / n, sentence_sum.recall / n,
                           sentence_sum.f1 / n};
  }
  return core;
}

}  // namespace

std::map<corpus::Dimension, double> dimension_recall(
    const std::vector<corpus::HallucinationSpan>& gold_spans, const IndexSet& pred) {
  return recall_map(dimension_counts(gold_spans, pred));
}

ScoreCard aggregate(const std::vector<SampleCounts>& samples) {
  if (samples.empty()) throw Error("aggregate: no samples to aggregate");
  std::vector<const SampleCounts*> all;
  std::map<corpus::Domain, std::vector<const SampleCounts*>> by_domain;
  for (const auto& s : samples) {
    all.push_back(&s);
    by_domain[s.domain].push_back(&s);
  }
  ScoreCard card;
  card.overall = build_core(all);
  for (const auto& [d, subset] : by_domain) card.domains[d] = build_core(subset);
  return card;
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    // positions i..j (0-based) share rank mean((i+1)..(j+1))
    const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (auto k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error("spearman: length mismatch (" + std::to_string(a.size()) + " vs " +
                std::to_string(b.size()) + ")");
  }
  if (a.size() < 2) throw Error("spearman: need at least two points");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const auto n = static_cast<double>(ra.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double num = 0.0;
  double da = 0.0;
  double db = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double x = ra[i] - ma;
    const double y = rb[i] - mb;
    num += x * y;
    da += x * x;
    db += y * y;
  }
  if (da == 0.0 || db == 0.0) return std::nullopt;
  return std::clamp(num / std::sqrt(da * db), -1.0, 1.0);
}

}  // namespace dvb::metrics
