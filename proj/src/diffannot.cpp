#include "dvb/diffannot.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <unordered_map>

#include "dvb/error.hpp"

namespace dvb::diffannot {
namespace {

using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;

// Suffix table of a lexicographic score: matched tokens first, then the
// fewest unpaired insertions/deletions (a gap of g_len vs c_len costs
// |g_len - c_len|). The secondary term keeps equal-length substitutions on
// the diagonal when repeated tokens admit several longest alignments. The
// forward walk prefers keep, then substitution, then skipping b, then a.
template <typename Cell>
void lcs_walk(const std::vector<uint32_t>& a, const std::vector<uint32_t>& b, std::size_t offset,
              Pairs& out) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  const auto w = static_cast<Cell>(n + m + 1);
  const std::size_t stride = m + 1;
  std::vector<Cell> table((n + 1) * stride, 0);
  auto at = [&](std::size_t i, std::size_t j) -> Cell& { return table[i * stride + j]; };
  for (std::size_t j = 0; j <= m; ++j) at(n, j) = -static_cast<Cell>(m - j);
  for (std::size_t i = n; i-- > 0;) {
    at(i, m) = -static_cast<Cell>(n - i);
    for (std::size_t j = m; j-- > 0;) {
      Cell best = at(i + 1, j + 1) + (a[i] == b[j] ? w : 0);
      best = std::max<Cell>(best, at(i, j + 1) - 1);
      best = std::max<Cell>(best, at(i + 1, j) - 1);
      at(i, j) = best;
    }
  }
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < n && j < m) {
    const Cell here = at(i, j);
    if (a[i] == b[j] && at(i + 1, j + 1) + w == here) {
      out.emplace_back(offset + i, offset + j);
      ++i;
      ++j;
    } else if (a[i] != b[j] && at(i + 1, j + 1) == here) {
      ++i;
      ++j;
    } else if (at(i, j + 1) - 1 == here) {
      ++j;
    } else {
      ++i;
    }
  }
}

}  // namespace

Pairs lcs_alignment(const std::vector<std::string_view>& a, const std::vector<std::string_view>& b) {
  std::unordered_map<std::string_view, uint32_t> ids;
  auto intern = [&](const std::vector<std::string_view>& seq) {
    std::vector<uint32_t> out;
    out.reserve(seq.size());
    for (auto s : seq) out.push_back(ids.try_emplace(s, static_cast<uint32_t>(ids.size())).first->second);
    return out;
  };
  auto ia = intern(a);
  auto ib = intern(b);

  Pairs pairs;
  std::size_t prefix = 0;
  while (prefix < ia.size() && prefix < ib.size() && ia[prefix] == ib[prefix]) {
    pairs.emplace_back(prefix, prefix);
    ++prefix;
  }
  ia.erase(ia.begin(), ia.begin() + static_cast<std::ptrdiff_t>(prefix));
  ib.erase(ib.begin(), ib.begin() + static_cast<std::ptrdiff_t>(prefix));

  // Common suffix: same argument as the prefix, matched after the middle.
  std::size_t suffix = 0;
  while (suffix < ia.size() && suffix < ib.size() &&
         ia[ia.size() - 1 - suffix] == ib[ib.size() - 1 - suffix]) {
    ++suffix;
  }
  const std::size_t a_mid = ia.size() - suffix;
  const std::size_t b_mid = ib.size() - suffix;
  ia.resize(a_mid);
  ib.resize(b_mid);
  if (!ia.empty() && !ib.empty()) {
    const auto span = static_cast<double>(ia.size()) * static_cast<double>(ia.size() + ib.size() + 1);
    if (span < static_cast<double>(std::numeric_limits<int32_t>::max() / 2)) {
      lcs_walk<int32_t>(ia, ib, prefix, pairs);
    } else {
      lcs_walk<int64_t>(ia, ib, prefix, pairs);
    }
  }
  for (std::size_t k = 0; k < suffix; ++k) pairs.emplace_back(prefix + a_mid + k, prefix + b_mid + k);
  return pairs;
}

EditScript script_from_alignment(const Pairs& pairs, std::size_t g_size, std::size_t c_size) {
  EditScript script;
  std::size_t gi = 0;
  std::size_t ci = 0;
  auto gap = [&](std::size_t g_to, std::size_t c_to) {
    if (gi < g_to && ci < c_to) {
      script.push_back({OpKind::replace, gi, g_to, ci, c_to});
    } else if (gi < g_to) {
      script.push_back({OpKind::remove, gi, g_to, ci, ci});
    } else if (ci < c_to) {
      script.push_back({OpKind::insert, gi, gi, ci, c_to});
    }
    gi = g_to;
    ci = c_to;
  };
  for (const auto& [g, c] : pairs) {
    gap(g, c);
    if (!script.empty() && script.back().kind == OpKind::keep && script.back().g_end == g &&
        script.back().c_end == c) {
      ++script.back().g_end;
      ++script.back().c_end;
    } else {
      script.push_back({OpKind::keep, g, g + 1, c, c + 1});
    }
    gi = g + 1;
    ci = c + 1;
  }
  gap(g_size, c_size);
  return script;
}

EditScript diff_tokens(const text::TokenizedCaption& generated,
                       const text::TokenizedCaption& corrected) {
  return script_from_alignment(lcs_alignment(generated.texts(), corrected.texts()),
                               generated.size(), corrected.size());
}

std::vector<std::string_view> apply_script(const EditScript& script,
                                           const text::TokenizedCaption& generated,
                                           const text::TokenizedCaption& corrected) {
  std::vector<std::string_view> out;
  for (const auto& op : script) {
    switch (op.kind) {
      case OpKind::keep:
        for (auto i = op.g_begin; i < op.g_end; ++i) out.emplace_back(generated[i].text);
        break;
      case OpKind::replace:
      case OpKind::insert:
        for (auto j = op.c_begin; j < op.c_end; ++j) out.emplace_back(corrected[j].text);
        break;
      case OpKind::remove:
        break;
    }
  }
  return out;
}

std::vector<corpus::HallucinationSpan> extract_gold_spans(const EditScript& script,
                                                          std::size_t g_size) {
  std::vector<bool> marked(g_size, false);
  for (const auto& op : script) {
    if (op.kind == OpKind::replace || op.kind == OpKind::remove) {
      for (auto i = op.g_begin; i < op.g_end && i < g_size; ++i) marked[i] = true;
    } else if (op.kind == OpKind::insert && g_size > 0) {
      const auto anchor = op.g_begin == 0 ? 0 : std::min(op.g_begin - 1, g_size - 1);
      marked[anchor] = true;
    }
  }
  std::vector<corpus::HallucinationSpan> spans;
  for (std::size_t i = 0; i < g_size;) {
    if (!marked[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < g_size && marked[j]) ++j;
    spans.push_back({i, j, corpus::Dimension::other});
    i = j;
  }
  return spans;
}

std::vector<corpus::HallucinationSpan> label_spans(std::vector<corpus::HallucinationSpan> spans,
                                                   const std::vector<corpus::Dimension>& labels) {
  if (spans.size() != labels.size()) {
    throw Error("label_spans: " + std::to_string(spans.size()) + " spans but " +
                std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < spans.size(); ++i) spans[i].dimension = labels[i];
  return spans;
}

corpus::BenchmarkSample annotate_pair(const CaptionPair& pair) {
  const auto g = text::tokenize(pair.generated);
  const auto c = text::tokenize(pair.corrected);
  auto spans = extract_gold_spans(diff_tokens(g, c), g.size());
  if (!pair.labels.empty()) spans = label_spans(std::move(spans), pair.labels);

  corpus::BenchmarkSample s;
  s.id = pair.id;
  s.image = pair.image;
  s.domain = pair.domain;
  s.variant = corpus::Variant::real;
  s.caption = pair.generated;
  s.clean_caption = pair.corrected;
  s.gold_spans = std::move(spans);
  return s;
}

}  // namespace dvb::diffannot
