#pragma once

// Deterministic injector/detector pair for adversarial-loop checks.
//
// Injector: keeps existing tags and substitutes every untagged word token
// whose hash picks it, writing "QQc<word>" (color) or "QQn<word>" (number).
// Detector: quotes every "QQc..." token it sees, never a "QQn..." one. So
// color edits are always caught and number edits always survive.

#include <functional>
#include <memory>
#include <string>

#include "dvb/modelgate.hpp"
#include "dvb/tagproto.hpp"
#include "dvb/text.hpp"

namespace suite {

inline std::size_t mix(std::string_view s, std::size_t salt) {
  std::size_t h = 1469598103934665603ull ^ salt;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h >> 17;  // low FNV bits are weak
}

inline bool wordlike(std::string_view t) {
  return !t.empty() && std::isalnum(static_cast<unsigned char>(t.front()));
}

inline std::string injector_reply(std::string_view tagged_caption, std::size_t salt) {
  const auto parsed = dvb::tagproto::parse_tags(tagged_caption);
  const auto toks = dvb::text::tokenize(parsed.plain);
  std::string out, labels;
  std::size_t cursor = 0;
  auto label = [&](std::string_view name) { labels += (labels.empty() ? "" : ", ") + std::string(name); };
  std::size_t m = 0;
  for (const auto& t : toks.tokens) {
    // Existing marks are copied verbatim, tags included.
    while (m < parsed.marked.size() && parsed.marked[m].end <= t.byte_start) ++m;
    if (m < parsed.marked.size() && parsed.marked[m].begin < t.byte_end) {
      if (t.byte_start == parsed.marked[m].begin) {
        const auto& r = parsed.marked[m];
        out.append(parsed.plain, cursor, r.begin - cursor);
        out += dvb::tagproto::kOpenTag;
        out.append(parsed.plain, r.begin, r.end - r.begin);
        out += dvb::tagproto::kCloseTag;
        cursor = r.end;
        label(parsed.plain.compare(r.begin, 3, "QQc") == 0 ? "color" : "number");
      }
      continue;
    }
    if (!wordlike(t.text) || t.text.starts_with("QQ") || mix(t.text, salt) % 4 != 0) continue;
    const bool color = mix(t.text, salt + 1) % 2 == 0;
    out.append(parsed.plain, cursor, t.byte_start - cursor);
    out += dvb::tagproto::kOpenTag;
    out += (color ? "QQc" : "QQn") + t.text;
    out += dvb::tagproto::kCloseTag;
    cursor = t.byte_end;
    label(color ? "color" : "number");
  }
  out.append(parsed.plain, cursor);
  return "CAPTION: " + out + "\nLABELS: " + labels;
}

inline std::string detector_reply(std::string_view plain_caption) {
  std::string out;
  for (const auto& t : dvb::text::tokenize(plain_caption).tokens) {
    if (t.text.starts_with("QQc")) out += "\"" + t.text + "\" - implausible color\n";
  }
  return out.empty() ? "No issues found." : out;
}

inline std::shared_ptr<dvb::gate::ScriptedBackend> backend(std::size_t salt = 0) {
  using dvb::gate::ModelRequest;
  using dvb::gate::Purpose;
  auto b = std::make_shared<dvb::gate::ScriptedBackend>("suite");
  b->on(Purpose::inject, [salt](const ModelRequest& r) -> std::optional<std::string> {
    return injector_reply(dvb::gate::extract_prompt_caption(r.user).value_or(""), salt);
  });
  b->on(Purpose::detect, [](const ModelRequest& r) -> std::optional<std::string> {
    return detector_reply(dvb::gate::extract_prompt_caption(r.user).value_or(""));
  });
  return b;
}

}  // namespace suite
