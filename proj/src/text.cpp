#include "dvb/text.hpp"

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <stdexcept>

namespace dvb::text {
namespace {

struct CodePoint {
  UChar32 value;
  std::size_t start;
  std::size_t end;
};

std::vector<CodePoint> decode(std::string_view s) {
  std::vector<CodePoint> out;
  out.reserve(s.size());
  const auto* bytes = reinterpret_cast<const uint8_t*>(s.data());
  const auto length = static_cast<int32_t>(s.size());
  int32_t i = 0;
  while (i < length) {
    const int32_t start = i;
    UChar32 c = 0;
    U8_NEXT(bytes, i, length, c);
    // Invalid sequences decode as a negative value; keep them as opaque
    // word characters so offsets still cover every byte.
    out.push_back({c, static_cast<std::size_t>(start), static_cast<std::size_t>(i)});
  }
  return out;
}

bool is_space(UChar32 c) { return c >= 0 && u_isUWhiteSpace(c); }
bool is_punct(UChar32 c) { return c >= 0 && u_ispunct(c); }

bool is_terminator(std::string_view token) {
  if (token.empty()) return false;
  const char last = token.back();
  return last == '.' || last == '!' || last == '?';
}

bool starts_uppercase(std::string_view token) {
  if (token.empty()) return false;
  const auto* bytes = reinterpret_cast<const uint8_t*>(token.data());
  int32_t i = 0;
  UChar32 c = 0;
  U8_NEXT(bytes, i, static_cast<int32_t>(token.size()), c);
  return c >= 0 && (u_isupper(c) || u_istitle(c));
}

}  // namespace

std::string_view TokenizedCaption::gap_before(std::size_t i) const {
  const std::string_view src = source;
  const std::size_t from = i == 0 ? 0 : tokens.at(i - 1).byte_end;
  const std::size_t to = i < tokens.size() ? tokens[i].byte_start : src.size();
  return src.substr(from, to - from);
}

std::vector<std::string_view> TokenizedCaption::texts() const {
  std::vector<std::string_view> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.emplace_back(t.text);
  return out;
}

std::size_t SentenceIndex::sentence_of(std::size_t token) const {
  if (token >= token_count) throw std::out_of_range("token index outside sentence index");
  auto it = std::upper_bound(sentences.begin(), sentences.end(), token,
                             [](std::size_t t, const Sentence& s) { return t < s.end_token; });
  return static_cast<std::size_t>(it - sentences.begin());
}

TokenizedCaption tokenize(std::string_view text) {
  TokenizedCaption out;
  out.source = std::string(text);
  const auto cps = decode(text);

  auto emit = [&](std::size_t begin, std::size_t end) {
    out.tokens.push_back(Token{std::string(text.substr(begin, end - begin)), begin, end,
                               out.tokens.size()});
  };

  std::size_t i = 0;
  while (i < cps.size()) {
    if (is_space(cps[i].value)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < cps.size() && !is_space(cps[j].value)) ++j;

    // [i, j) is one whitespace-delimited chunk.
    std::size_t lead = i;
    while (lead < j && is_punct(cps[lead].value)) ++lead;
    if (lead == j) {
      for (std::size_t k = i; k < j; ++k) emit(cps[k].start, cps[k].end);
    } else {
      std::size_t trail = j;
      while (trail > lead && is_punct(cps[trail - 1].value)) --trail;
      for (std::size_t k = i; k < lead; ++k) emit(cps[k].start, cps[k].end);
      emit(cps[lead].start, cps[trail - 1].end);
      for (std::size_t k = trail; k < j; ++k) emit(cps[k].start, cps[k].end);
    }
    i = j;
  }
  return out;
}

SentenceIndex split_sentences(const TokenizedCaption& caption) {
  SentenceIndex index;
  index.token_count = caption.size();
  const auto n = caption.size();
  std::size_t first = 0;
  for (std::size_t t = 0; t < n; ++t) {
    bool boundary = t + 1 == n;
    if (!boundary && is_terminator(caption[t].text)) {
      const bool spaced = caption[t + 1].byte_start > caption[t].byte_end;
      boundary = spaced && starts_uppercase(caption[t + 1].text);
    }
    if (boundary) {
      index.sentences.push_back(
          Sentence{caption[first].byte_start, caption[t].byte_end, first, t + 1});
      first = t + 1;
    }
  }
  return index;
}

bool token_equal_sequence(const TokenizedCaption& a, const TokenizedCaption& b) {
  return std::equal(a.tokens.begin(), a.tokens.end(), b.tokens.begin(), b.tokens.end(),
                    [](const Token& x, const Token& y) { return x.text == y.text; });
}

std::string join_tokens(const TokenizedCaption& caption, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end && i < caption.size(); ++i) {
    if (i > begin) out.push_back(' ');
    out += caption[i].text;
  }
  return out;
}

std::string_view source_slice(const TokenizedCaption& caption, std::size_t begin,
                              std::size_t end) {
  if (begin >= end || end > caption.size()) return {};
  const std::string_view src = caption.source;
  const auto from = caption[begin].byte_start;
  return src.substr(from, caption[end - 1].byte_end - from);
}

}  // namespace dvb::text
