#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "dvb/corpus.hpp"
#include "dvb/text.hpp"

// The <HALLUCINATION> tag grammar: rendering spans as tagged text, parsing
// model output back into marked byte ranges, and mapping those onto the
// reference caption's token indices.
namespace dvb::tagproto {

inline constexpr std::string_view kOpenTag = "<HALLUCINATION>";
inline constexpr std::string_view kCloseTag = "</HALLUCINATION>";

enum class ParseStatus { ok, malformed_tags, empty };
std::string_view to_string(ParseStatus s);

struct ByteRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const ByteRange&) const = default;
};

struct ParsedTags {
  std::string plain;
  std::vector<ByteRange> marked;  // in `plain` coordinates, sorted, non-empty
  ParseStatus status = ParseStatus::ok;
  std::vector<std::string> issues;
};

/// Predicted hallucinated-token set against a reference caption.
struct Prediction {
  std::vector<std::size_t> indices;  // sorted, unique, each < reference size
  bool faithful = false;
  double alignment_coverage = 0.0;
};

/// A model's raw reply for one sample; `raw` is kept verbatim.
struct ModelOutput {
  std::string id;
  std::string raw;
  ParseStatus status = ParseStatus::ok;
};

/// Wraps each span's tokens in tags. Bytes outside the tags are the caption
/// source unchanged. Throws dvb::Error for spans that are empty, out of
/// range, unsorted or overlapping.
std::string serialize_tags(const text::TokenizedCaption& caption,
                           const std::vector<corpus::HallucinationSpan>& spans);

/// Strips every tag. Unbalanced or nested tags set malformed_tags: an
/// unmatched open tag extends to the end of the text, a nested open tag is
/// ignored, and stray close tags are dropped. Whitespace-only input yields
/// status `empty`.
ParsedTags parse_tags(std::string_view tagged);

/// Maps marked ranges onto reference token indices. A token touched by any
/// marked byte counts as marked. Outputs that are not token-identical to the
/// reference fall back to an LCS alignment; marks on unaligned tokens drop.
Prediction align_to_reference(std::string_view stripped, const std::vector<ByteRange>& marked,
                              const text::TokenizedCaption& reference);

inline Prediction predict(std::string_view tagged, const text::TokenizedCaption& reference) {
  const auto parsed = parse_tags(tagged);
  return align_to_reference(parsed.plain, parsed.marked, reference);
}

}  // namespace dvb::tagproto
