#pragma once

#include <cstddef>
#include <string_view>
#include <utility>
#include <vector>

#include "dvb/corpus.hpp"
#include "dvb/text.hpp"

// Token-level diff between a generated caption and its human-corrected
// version, and extraction of gold hallucination spans from the diff.
namespace dvb::diffannot {

enum class OpKind { keep, replace, remove, insert };

/// One edit over half-open token ranges of the generated caption (g) and
/// the corrected caption (c). `remove` has an empty c-range and `insert` an
/// empty g-range; both ranges still record the position.
struct EditOp {
  OpKind kind;
  std::size_t g_begin = 0;
  std::size_t g_end = 0;
  std::size_t c_begin = 0;
  std::size_t c_end = 0;

  bool operator==(const EditOp&) const = default;
};

using EditScript = std::vector<EditOp>;

/// Matched index pairs (i, j) of a longest common subsequence of `a` and
/// `b`, strictly increasing in both coordinates. Among longest ones, the
/// alignment with the fewest unpaired insertions/deletions wins (equal-length
/// substitutions stay aligned); remaining ties keep as early as possible.
std::vector<std::pair<std::size_t, std::size_t>> lcs_alignment(
    const std::vector<std::string_view>& a, const std::vector<std::string_view>& b);

/// Minimal edit script under the LCS objective. Non-keep runs between two
/// keeps collapse into a single replace, remove or insert.
EditScript diff_tokens(const text::TokenizedCaption& generated,
                       const text::TokenizedCaption& corrected);
EditScript script_from_alignment(const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                                 std::size_t g_size, std::size_t c_size);

/// Replays `script` on g's tokens; used to check that a script reproduces c.
std::vector<std::string_view> apply_script(const EditScript& script,
                                           const text::TokenizedCaption& generated,
                                           const text::TokenizedCaption& corrected);

/// Marks g-tokens under replace/remove ops. A pure insertion marks the
/// g-token just before the insertion point (token 0 at the start). Adjacent
/// marks merge; every span gets dimension `other`.
std::vector<corpus::HallucinationSpan> extract_gold_spans(const EditScript& script,
                                                          std::size_t g_size);

std::vector<corpus::HallucinationSpan> label_spans(std::vector<corpus::HallucinationSpan> spans,
                                                   const std::vector<corpus::Dimension>& labels);

/// One generated/corrected pair to annotate.
struct CaptionPair {
  std::string id;
  std::string image;
  corpus::Domain domain = corpus::Domain::gui;
  std::string generated;
  std::string corrected;
  std::vector<corpus::Dimension> labels;  // empty: all spans default to `other`
};

/// Builds a real-variant sample: caption = generated, clean_caption =
/// corrected, gold spans from the diff.
corpus::BenchmarkSample annotate_pair(const CaptionPair& pair);

}  // namespace dvb::diffannot
