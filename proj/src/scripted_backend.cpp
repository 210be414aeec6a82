#include <deque>

#include <json.hpp>

#include "dvb/corpus.hpp"
#include "dvb/modelgate.hpp"
#include "dvb/tagproto.hpp"
#include "dvb/text.hpp"

namespace dvb::gate {

ScriptedBackend::ScriptedBackend(std::string id, Exhaustion policy)
    : id_(std::move(id)), policy_(policy) {}

std::string ScriptedBackend::send(const ModelRequest& request) {
  std::lock_guard lock(mutex_);
  ++calls_;
  for (auto& rule : rules_) {
    if (rule.purpose != request.purpose) continue;
    if (auto reply = rule.handler(request)) {
      last_reply_[request.purpose] = *reply;
      return *reply;
    }
  }
  if (policy_ == Exhaustion::repeat_last) {
    if (auto it = last_reply_.find(request.purpose); it != last_reply_.end()) return it->second;
  }
  throw ScriptExhausted(request.purpose, "scripted backend '" + id_ + "' has no reply for " +
                                             std::string(to_string(request.purpose)) +
                                             " request to model '" + request.model + "'");
}

ScriptedBackend& ScriptedBackend::queue(Purpose purpose, std::vector<std::string> replies,
                                        std::string contains) {
  auto pending = std::make_shared<std::deque<std::string>>(replies.begin(), replies.end());
  return on(
      purpose,
      [pending, contains = std::move(contains)](const ModelRequest& r) -> std::optional<std::string> {
        if (pending->empty()) return std::nullopt;
        if (!contains.empty() && r.user.find(contains) == std::string::npos) return std::nullopt;
        auto reply = std::move(pending->front());
        pending->pop_front();
        return reply;
      },
      "queue");
}

ScriptedBackend& ScriptedBackend::on(
    Purpose purpose, std::function<std::optional<std::string>(const ModelRequest&)> handler,
    std::string label) {
  std::lock_guard lock(mutex_);
  rules_.push_back(ScriptRule{purpose, std::move(handler), std::move(label)});
  return *this;
}

std::size_t ScriptedBackend::calls() const {
  std::lock_guard lock(mutex_);
  return calls_;
}

std::optional<std::string> extract_prompt_caption(std::string_view prompt) {
  constexpr std::string_view open = "<caption>\n";
  constexpr std::string_view close = "\n</caption>";
  const auto begin = prompt.rfind(open);
  if (begin == std::string_view::npos) return std::nullopt;
  const auto start = begin + open.size();
  const auto end = prompt.find(close, start);
  if (end == std::string_view::npos) return std::nullopt;
  return std::string(prompt.substr(start, end - start));
}

namespace {

using nlohmann::json;
using Handler = std::function<std::optional<std::string>(const ModelRequest&)>;

std::string caption_of(const ModelRequest& r) {
  if (auto c = extract_prompt_caption(r.user)) return *c;
  return r.user;
}

Handler make_handler(const json& rule) {
  const auto name = rule.at("handler").get<std::string>();
  if (name == "echo_caption") {
    return [](const ModelRequest& r) { return std::optional<std::string>(caption_of(r)); };
  }
  if (name == "no_issues") {
    return [](const ModelRequest&) { return std::optional<std::string>("No issues found."); };
  }
  if (name == "tag_all") {
    return [](const ModelRequest& r) -> std::optional<std::string> {
      const auto caption = text::tokenize(caption_of(r));
      std::vector<corpus::HallucinationSpan> spans;
      for (std::size_t i = 0; i < caption.size(); ++i) spans.push_back({i, i + 1});
      return tagproto::serialize_tags(caption, spans);
    };
  }
  if (name == "substitute") {
    struct Sub {
      std::string from, to, label;
    };
    std::vector<Sub> subs;
    auto read = [&](const json& j) {
      subs.push_back({j.at("from").get<std::string>(), j.at("to").get<std::string>(),
                      j.value("label", "other")});
    };
    if (rule.contains("substitutions")) {
      for (const auto& j : rule["substitutions"]) read(j);
    } else {
      read(rule);
    }
    return [subs](const ModelRequest& r) -> std::optional<std::string> {
      const auto caption = text::tokenize(caption_of(r));
      std::string out;
      std::vector<std::string> labels;
      std::size_t cursor = 0;
      std::vector<bool> used(subs.size(), false);
      for (const auto& tok : caption.tokens) {
        for (std::size_t k = 0; k < subs.size(); ++k) {
          if (used[k] || tok.text != subs[k].from) continue;
          used[k] = true;
          out.append(caption.source, cursor, tok.byte_start - cursor);
          out.append(tagproto::kOpenTag);
          out.append(subs[k].to);
          out.append(tagproto::kCloseTag);
          cursor = tok.byte_end;
          labels.push_back(subs[k].label);
          break;
        }
      }
      out.append(caption.source, cursor);
      if (!labels.empty()) {
        out += "\nLABELS:";
        for (std::size_t i = 0; i < labels.size(); ++i) out += (i ? ", " : " ") + labels[i];
      }
      return out;
    };
  }
  if (name == "quote_phrases") {
    std::vector<std::string> phrases = rule.at("phrases").get<std::vector<std::string>>();
    const std::string rationale = rule.value("rationale", "implausible without visual evidence");
    return [phrases, rationale](const ModelRequest& r) -> std::optional<std::string> {
      const auto caption = caption_of(r);
      std::string out;
      for (const auto& p : phrases) {
        if (caption.find(p) != std::string::npos) out += "\"" + p + "\" - " + rationale + "\n";
      }
      return out.empty() ? std::string("No issues found.") : out;
    };
  }
  throw Error("scripted backend: unknown handler '" + name + "'");
}

Purpose parse_purpose(const std::string& s) {
  for (auto p : {Purpose::inject, Purpose::detect, Purpose::evaluate, Purpose::caption}) {
    if (to_string(p) == s) return p;
  }
  throw Error("scripted backend: unknown purpose '" + s + "'");
}

}  // namespace

std::shared_ptr<ScriptedBackend> scripted_from_json(std::string_view script) {
  json j;
  try {
    j = json::parse(script);
  } catch (const json::parse_error& e) {
    throw Error(std::string("scripted backend: invalid JSON: ") + e.what());
  }
  const auto policy = j.value("exhaustion", "error") == "repeat_last" ? Exhaustion::repeat_last
                                                                       : Exhaustion::error;
  auto backend = std::make_shared<ScriptedBackend>(j.value("id", "scripted"), policy);
  for (const auto& rule : j.value("rules", json::array())) {
    const auto purpose = parse_purpose(rule.at("purpose").get<std::string>());
    Handler handler;
    if (rule.contains("replies")) {
      auto pending = std::make_shared<std::deque<std::string>>();
      for (const auto& r : rule["replies"]) pending->push_back(r.get<std::string>());
      const auto contains = rule.value("contains", "");
      handler = [pending, contains](const ModelRequest& r) -> std::optional<std::string> {
        if (pending->empty()) return std::nullopt;
        if (!contains.empty() && r.user.find(contains) == std::string::npos) return std::nullopt;
        auto reply = pending->front();
        pending->pop_front();
        return reply;
      };
    } else {
      handler = make_handler(rule);
    }
    if (rule.contains("model")) {
      handler = [model = rule["model"].get<std::string>(), inner = std::move(handler)](
                    const ModelRequest& r) -> std::optional<std::string> {
        if (r.model != model) return std::nullopt;
        return inner(r);
      };
    }
    backend->on(purpose, std::move(handler), rule.value("handler", "replies"));
  }
  return backend;
}

}  // namespace dvb::gate
