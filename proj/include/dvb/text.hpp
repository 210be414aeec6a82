#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

// Offset-preserving word tokenizer and sentence splitter. Gold spans are
// stored as token indices, so any change to these rules must bump
// kTokenizerVersion.
namespace dvb::text {

inline constexpr std::string_view kTokenizerVersion = "dvb-tok/1";

struct Token {
  std::string text;
  std::size_t byte_start = 0;
  std::size_t byte_end = 0;
  std::size_t index = 0;

  bool operator==(const Token&) const = default;
};

struct TokenizedCaption {
  std::string source;
  std::vector<Token> tokens;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }
  const Token& operator[](std::size_t i) const { return tokens[i]; }

  /// Bytes of `source` between token i-1 and token i (i == size() gives the
  /// trailing gap).
  std::string_view gap_before(std::size_t i) const;
  std::vector<std::string_view> texts() const;
};

/// One sentence: a byte range of the source and the contiguous token range
/// [first_token, end_token) it owns.
struct Sentence {
  std::size_t byte_start = 0;
  std::size_t byte_end = 0;
  std::size_t first_token = 0;
  std::size_t end_token = 0;

  std::size_t token_count() const noexcept { return end_token - first_token; }
  bool contains(std::size_t token) const noexcept {
    return token >= first_token && token < end_token;
  }
  bool operator==(const Sentence&) const = default;
};

struct SentenceIndex {
  std::vector<Sentence> sentences;
  std::size_t token_count = 0;

  std::size_t size() const noexcept { return sentences.size(); }
  /// Index of the sentence containing `token`; token must be < token_count.
  std::size_t sentence_of(std::size_t token) const;
};

/// Splits on Unicode whitespace, then detaches each leading and trailing
/// punctuation code point (general category P*) as its own token.
/// Punctuation inside a word ("state-of-the-art", "v2.0") stays attached.
TokenizedCaption tokenize(std::string_view text);

/// A sentence ends after a token made of, or ending with, '.', '!' or '?'
/// when the next token follows whitespace and starts with an uppercase
/// letter, or when it is the last token.
SentenceIndex split_sentences(const TokenizedCaption& caption);

/// Case-sensitive token text equality; whitespace between tokens is ignored.
bool token_equal_sequence(const TokenizedCaption& a, const TokenizedCaption& b);

/// Joins token texts with single spaces.
std::string join_tokens(const TokenizedCaption& caption, std::size_t begin, std::size_t end);

/// Source bytes spanning tokens [begin, end), including interior gaps.
std::string_view source_slice(const TokenizedCaption& caption, std::size_t begin, std::size_t end);

}  // namespace dvb::text
