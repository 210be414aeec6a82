#include "dvb/tagproto.hpp"

#include <algorithm>

#include "dvb/diffannot.hpp"
#include "dvb/error.hpp"

namespace dvb::tagproto {

std::string_view to_string(ParseStatus s) {
  switch (s) {
    case ParseStatus::ok:
      return "ok";
    case ParseStatus::malformed_tags:
      return "malformed_tags";
    case ParseStatus::empty:
      return "empty";
  }
  return "ok";
}

std::string serialize_tags(const text::TokenizedCaption& caption,
                           const std::vector<corpus::HallucinationSpan>& spans) {
  const std::string_view src = caption.source;
  std::string out;
  out.reserve(src.size() + spans.size() * (kOpenTag.size() + kCloseTag.size()));
  std::size_t cursor = 0;
  std::size_t prev_end = 0;
  for (const auto& span : spans) {
    if (span.start >= span.end || span.end > caption.size() || span.start < prev_end) {
      throw Error("serialize_tags: invalid span [" + std::to_string(span.start) + ", " +
                  std::to_string(span.end) + ") for caption of " +
                  std::to_string(caption.size()) + " tokens");
    }
    const auto begin = caption[span.start].byte_start;
    const auto end = caption[span.end - 1].byte_end;
    out.append(src.substr(cursor, begin - cursor));
    out.append(kOpenTag);
    out.append(src.substr(begin, end - begin));
    out.append(kCloseTag);
    cursor = end;
    prev_end = span.end;
  }
  out.append(src.substr(cursor));
  return out;
}

ParsedTags parse_tags(std::string_view tagged) {
  ParsedTags out;
  out.plain.reserve(tagged.size());
  bool inside = false;
  std::size_t open_at = 0;
  auto close_region = [&] {
    if (out.plain.size() > open_at) out.marked.push_back({open_at, out.plain.size()});
    inside = false;
  };

  std::size_t i = 0;
  while (i < tagged.size()) {
    const auto rest = tagged.substr(i);
    if (rest.starts_with(kOpenTag)) {
      if (inside) {
        out.issues.push_back("nested open tag at byte " + std::to_string(i) + " ignored");
      } else {
        inside = true;
        open_at = out.plain.size();
      }
      i += kOpenTag.size();
    } else if (rest.starts_with(kCloseTag)) {
      if (inside) {
        close_region();
      } else {
        out.issues.push_back("stray close tag at byte " + std::to_string(i) + " dropped");
      }
      i += kCloseTag.size();
    } else {
      out.plain.push_back(tagged[i]);
      ++i;
    }
  }
  if (inside) {
    out.issues.push_back("unclosed open tag extended to end of text");
    close_region();
  }

  if (!out.issues.empty()) out.status = ParseStatus::malformed_tags;
  const bool blank = std::all_of(out.plain.begin(), out.plain.end(), [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r';
  });
  if (blank) out.status = ParseStatus::empty;
  return out;
}

namespace {

bool touches(const text::Token& t, const std::vector<ByteRange>& marked) {
  // marked is sorted by begin and non-overlapping.
  auto it = std::upper_bound(marked.begin(), marked.end(), t.byte_start,
                             [](std::size_t pos, const ByteRange& r) { return pos < r.end; });
  return it != marked.end() && it->begin < t.byte_end;
}

}  // namespace

Prediction align_to_reference(std::string_view stripped, const std::vector<ByteRange>& marked,
                              const text::TokenizedCaption& reference) {
  const auto output = text::tokenize(stripped);
  Prediction p;
  if (text::token_equal_sequence(output, reference)) {
    p.faithful = true;
    p.alignment_coverage = 1.0;
    for (std::size_t k = 0; k < output.size(); ++k) {
      if (touches(output[k], marked)) p.indices.push_back(k);
    }
    return p;
  }

  const auto pairs = diffannot::lcs_alignment(output.texts(), reference.texts());
  p.faithful = false;
  p.alignment_coverage =
      output.empty() ? 0.0 : static_cast<double>(pairs.size()) / static_cast<double>(output.size());
  for (const auto& [out_idx, ref_idx] : pairs) {
    if (touches(output[out_idx], marked)) p.indices.push_back(ref_idx);
  }
  return p;
}

}  // namespace dvb::tagproto
