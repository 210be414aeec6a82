#include "dvb/inject.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "dvb/diffannot.hpp"
#include "dvb/prompt_assets.hpp"

namespace dvb::inject {

using corpus::Dimension;
using text::TokenizedCaption;

std::string_view to_string(Strategy s) { return s == Strategy::naive ? "naive" : "structured"; }

std::optional<Strategy> parse_strategy(std::string_view s) {
  if (s == "naive") return Strategy::naive;
  if (s == "structured") return Strategy::structured;
  return std::nullopt;
}

void InjectionConfig::validate() const {
  if (rounds < 0) throw Error("injection config: rounds must be >= 0");
  if (max_spans < 1) throw Error("injection config: max_spans must be >= 1");
  if (overlap_tokens < 1) throw Error("injection config: overlap_tokens must be >= 1");
}

// ---------------------------------------------------------------------------
// State

std::vector<corpus::HallucinationSpan> Rendered::gold_spans() const {
  std::vector<corpus::HallucinationSpan> out;
  out.reserve(spans.size());
  for (const auto& s : spans) out.push_back({s.start, s.end, s.dimension});
  return out;
}

InjectionState::InjectionState(std::string_view clean_caption)
    : clean_(text::tokenize(clean_caption)) {}

namespace {

struct RenderResult {
  Rendered rendered;
  std::vector<std::string> expected;
};

RenderResult render_with(const TokenizedCaption& clean, const std::vector<Injection>& injections) {
  RenderResult out;
  auto& r = out.rendered;
  const std::string_view src = clean.source;
  std::size_t cursor = 0;
  std::size_t clean_tok = 0;
  std::size_t out_tok = 0;
  for (const auto& inj : injections) {
    for (auto i = clean_tok; i < inj.clean_begin; ++i) out.expected.push_back(clean[i].text);
    out_tok += inj.clean_begin - clean_tok;
    const auto begin = clean[inj.clean_begin].byte_start;
    const auto end = clean[inj.clean_end - 1].byte_end;
    r.plain.append(src.substr(cursor, begin - cursor));
    r.tagged.append(src.substr(cursor, begin - cursor));
    r.plain.append(inj.replacement);
    r.tagged.append(tagproto::kOpenTag);
    r.tagged.append(inj.replacement);
    r.tagged.append(tagproto::kCloseTag);
    const auto rep = text::tokenize(inj.replacement);
    for (const auto& t : rep.tokens) out.expected.push_back(t.text);
    r.spans.push_back({inj.id, out_tok, out_tok + rep.size(), inj.dimension});
    out_tok += rep.size();
    clean_tok = inj.clean_end;
    cursor = end;
  }
  for (auto i = clean_tok; i < clean.size(); ++i) out.expected.push_back(clean[i].text);
  r.plain.append(src.substr(cursor));
  r.tagged.append(src.substr(cursor));
  r.tokens = text::tokenize(r.plain);
  return out;
}

bool renders_cleanly(const RenderResult& rr) {
  const auto& toks = rr.rendered.tokens.tokens;
  return std::equal(toks.begin(), toks.end(), rr.expected.begin(), rr.expected.end(),
                    [](const text::Token& t, const std::string& e) { return t.text == e; });
}

}  // namespace

Rendered InjectionState::render() const { return render_with(clean_, injections_).rendered; }

std::optional<std::size_t> InjectionState::add(std::size_t clean_begin, std::size_t clean_end,
                                               std::string replacement, Dimension dimension,
                                               std::string* why_not) {
  auto reject = [&](std::string reason) -> std::optional<std::size_t> {
    if (why_not) *why_not = std::move(reason);
    return std::nullopt;
  };
  if (clean_begin >= clean_end || clean_end > clean_.size()) return reject("empty or out-of-range clean range");
  if (text::tokenize(replacement).empty()) return reject("replacement has no tokens");
  for (const auto& inj : injections_) {
    if (clean_begin < inj.clean_end && inj.clean_begin < clean_end) {
      return reject("overlaps existing span #" + std::to_string(inj.id));
    }
  }
  Injection inj{next_id_, clean_begin, clean_end, std::move(replacement), dimension, round_};
  auto candidate = injections_;
  auto pos = std::upper_bound(candidate.begin(), candidate.end(), clean_begin,
                              [](std::size_t b, const Injection& x) { return b < x.clean_begin; });
  candidate.insert(pos, inj);
  if (!renders_cleanly(render_with(clean_, candidate))) {
    return reject("edit merges with neighbouring tokens when rendered");
  }
  injections_ = std::move(candidate);
  return next_id_++;
}

bool InjectionState::revert(std::size_t injection_id) {
  return std::erase_if(injections_, [&](const Injection& i) { return i.id == injection_id; }) > 0;
}

void InjectionState::begin_round_log() {
  RoundLog log;
  log.round = round_;
  log_.push_back(std::move(log));
}

RoundLog& InjectionState::current_log() {
  if (log_.empty() || log_.back().round != round_) begin_round_log();
  return log_.back();
}

// ---------------------------------------------------------------------------
// Prompts and reply parsing

namespace {

std::string replace_all(std::string s, std::string_view key, std::string_view value) {
  std::size_t pos = 0;
  while ((pos = s.find(key, pos)) != std::string::npos) {
    s.replace(pos, key.size(), value);
    pos += value.size();
  }
  return s;
}

std::string trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

Dimension label_from_text(std::string s) {
  s = lower(trim(s));
  if (auto d = corpus::parse_dimension(s)) return *d;
  if (s == "spatial relation" || s == "spatial_relation") return Dimension::spatial;
  if (s == "optical character recognition" || s == "text") return Dimension::ocr;
  if (s == "object category") return Dimension::category;
  if (s == "object color" || s == "colour") return Dimension::color;
  if (s == "count" || s == "numbers") return Dimension::number;
  return Dimension::other;
}

std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto nl = s.find('\n', pos);
    if (nl == std::string_view::npos) nl = s.size();
    lines.push_back(s.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

std::string dimension_list(const std::vector<Dimension>& dims) {
  std::string out;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out += ", ";
    out += corpus::to_string(dims[i]);
  }
  return out;
}

}  // namespace

InjectorReply parse_injector_reply(std::string_view reply) {
  InjectorReply out;
  const auto lines = split_lines(reply);
  std::optional<std::size_t> caption_line;
  std::vector<std::size_t> label_lines;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto l = trim(lines[i]);
    if (l.starts_with("CAPTION:")) caption_line = i;
    if (l.starts_with("LABELS:")) label_lines.push_back(i);
  }
  if (!label_lines.empty()) {
    const auto l = trim(lines[label_lines.back()]);
    std::string_view rest = std::string_view(l).substr(7);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
      auto comma = rest.find(',', pos);
      if (comma == std::string_view::npos) comma = rest.size();
      const auto item = trim(rest.substr(pos, comma - pos));
      if (!item.empty()) out.labels.push_back(label_from_text(item));
      pos = comma + 1;
    }
  }
  auto is_label_line = [&](std::size_t i) {
    return std::find(label_lines.begin(), label_lines.end(), i) != label_lines.end();
  };
  std::string caption;
  if (caption_line) {
    const auto first = trim(lines[*caption_line]).substr(8);
    caption = first;
    for (std::size_t i = *caption_line + 1; i < lines.size() && !is_label_line(i); ++i) {
      caption += "\n";
      caption += lines[i];
    }
  } else {
    bool first = true;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (is_label_line(i)) continue;
      if (!first) caption += "\n";
      caption += lines[i];
      first = false;
    }
  }
  out.tagged_caption = trim(caption);
  return out;
}

std::vector<QuotedPhrase> parse_detector_reply(std::string_view reply) {
  static constexpr std::string_view kLeftCurly = "\xE2\x80\x9C";
  static constexpr std::string_view kRightCurly = "\xE2\x80\x9D";
  std::vector<QuotedPhrase> out;
  for (auto line : split_lines(reply)) {
    std::vector<std::string> phrases;
    std::size_t i = 0;
    std::size_t after_last = std::string_view::npos;
    while (i < line.size()) {
      std::size_t open_len = 0;
      if (line[i] == '"') {
        open_len = 1;
      } else if (line.substr(i).starts_with(kLeftCurly)) {
        open_len = kLeftCurly.size();
      }
      if (open_len == 0) {
        ++i;
        continue;
      }
      const auto start = i + open_len;
      std::size_t close = std::string_view::npos;
      std::size_t close_len = 0;
      for (std::size_t k = start; k < line.size(); ++k) {
        if (line[k] == '"') {
          close = k;
          close_len = 1;
          break;
        }
        if (line.substr(k).starts_with(kRightCurly)) {
          close = k;
          close_len = kRightCurly.size();
          break;
        }
      }
      if (close == std::string_view::npos) break;
      phrases.emplace_back(line.substr(start, close - start));
      after_last = close + close_len;
      i = after_last;
    }
    if (phrases.empty()) continue;
    std::string rationale = trim(line.substr(after_last));
    for (;;) {
      if (!rationale.empty() && (rationale[0] == '-' || rationale[0] == ':')) {
        rationale = trim(std::string_view(rationale).substr(1));
      } else if (rationale.starts_with("\xE2\x80\x93") || rationale.starts_with("\xE2\x80\x94")) {
        rationale = trim(std::string_view(rationale).substr(3));
      } else {
        break;
      }
    }
    for (auto& p : phrases) out.push_back({trim(p), rationale});
  }
  return out;
}

std::optional<std::pair<std::size_t, std::size_t>> locate_phrase(const TokenizedCaption& caption,
                                                                 std::string_view phrase,
                                                                 std::size_t skip) {
  const auto needle = text::tokenize(phrase);
  if (needle.empty() || needle.size() > caption.size()) return std::nullopt;
  for (std::size_t i = 0; i + needle.size() <= caption.size(); ++i) {
    bool match = true;
    for (std::size_t k = 0; k < needle.size() && match; ++k) {
      match = caption[i + k].text == needle[k].text;
    }
    if (match && skip-- == 0) return std::make_pair(i, i + needle.size());
  }
  return std::nullopt;
}

std::string build_injector_prompt(const InjectionState& state, const InjectionConfig& cfg,
                                  bool retry) {
  std::string tmpl(cfg.strategy == Strategy::structured ? assets::k_inject_structured
                                                        : assets::k_inject_naive);
  std::string feedback;
  for (const auto& f : state.feedback()) feedback += "- " + f + "\n";
  if (feedback.empty()) feedback = "(none)\n";
  tmpl = replace_all(std::move(tmpl), "{dimensions}", dimension_list(cfg.target_dimensions));
  tmpl = replace_all(std::move(tmpl), "{max_spans}", std::to_string(cfg.max_spans));
  tmpl = replace_all(std::move(tmpl), "{feedback}", trim(feedback));
  // caption last so that braces inside it are never treated as placeholders
  tmpl = replace_all(std::move(tmpl), "{caption}", state.render().tagged);
  if (retry) tmpl += assets::k_inject_retry;
  return tmpl;
}

std::string build_detector_prompt(const InjectionState& state) {
  return replace_all(std::string(assets::k_detect), "{caption}", state.render().plain);
}

std::optional<gate::ImageAttachment> load_image(const std::string& image,
                                                const std::filesystem::path& root) {
  if (image.empty()) return std::nullopt;
  std::filesystem::path path(image);
  if (path.is_relative() && !root.empty() && !std::filesystem::exists(path)) path = root / path;
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::stringstream buf;
  buf << in.rdbuf();
  const auto s = buf.str();
  gate::ImageAttachment att;
  att.bytes.assign(s.begin(), s.end());
  const auto ext = lower(path.extension().string());
  if (ext == ".png") {
    att.media_type = "image/png";
  } else if (ext == ".jpg" || ext == ".jpeg") {
    att.media_type = "image/jpeg";
  } else if (ext == ".webp") {
    att.media_type = "image/webp";
  } else if (ext == ".gif") {
    att.media_type = "image/gif";
  } else {
    att.media_type = "application/octet-stream";
  }
  return att;
}

// ---------------------------------------------------------------------------
// Rounds

namespace {

struct Region {
  std::size_t out_begin = 0;
  std::size_t out_end = 0;
  std::size_t clean_begin = 0;
  std::size_t clean_end = 0;
  bool tagged = false;
  Dimension dimension = Dimension::other;
  std::string replacement;
};

struct Analysis {
  tagproto::ParsedTags parsed;
  std::vector<Region> regions;
  std::size_t untagged = 0;
};

Analysis analyze(const InjectorReply& reply, const TokenizedCaption& clean) {
  Analysis a;
  a.parsed = tagproto::parse_tags(reply.tagged_caption);
  const auto out = text::tokenize(a.parsed.plain);
  const auto& marked = a.parsed.marked;
  const auto script = diffannot::diff_tokens(out, clean);

  auto first_mark = [&](std::size_t begin, std::size_t end) -> std::optional<std::size_t> {
    for (std::size_t t = begin; t < end; ++t) {
      for (std::size_t m = 0; m < marked.size(); ++m) {
        if (marked[m].begin < out[t].byte_end && out[t].byte_start < marked[m].end) return m;
      }
    }
    return std::nullopt;
  };

  for (const auto& op : script) {
    if (op.kind == diffannot::OpKind::keep) continue;
    Region r;
    r.out_begin = op.g_begin;
    r.out_end = op.g_end;
    r.clean_begin = op.c_begin;
    r.clean_end = op.c_end;
    const auto mark = first_mark(r.out_begin, r.out_end);
    r.tagged = mark.has_value();
    if (mark && *mark < reply.labels.size()) r.dimension = reply.labels[*mark];
    // Additions with no clean counterpart anchor on a neighbouring kept token.
    if (r.clean_begin == r.clean_end && r.out_begin < r.out_end && !clean.empty()) {
      if (r.clean_begin > 0) {
        --r.clean_begin;
        --r.out_begin;
      } else {
        ++r.clean_end;
        ++r.out_end;
      }
    }
    if (r.out_begin < r.out_end) r.replacement = std::string(text::source_slice(out, r.out_begin, r.out_end));
    if (!r.tagged) ++a.untagged;
    a.regions.push_back(std::move(r));
  }
  return a;
}

Exchange ask(gate::ModelGate& gate, gate::ModelRequest req) {
  Exchange ex;
  ex.purpose = req.purpose;
  ex.model = req.model;
  ex.prompt = req.user;
  ex.image_attached = req.image.has_value();
  const auto resp = gate.complete(req);
  ex.response = resp.text;
  ex.cache_hit = resp.cache_hit;
  return ex;
}

}  // namespace

InjectionState inject_round(InjectionState state, const InjectionConfig& cfg, gate::ModelGate& gate,
                            const std::optional<gate::ImageAttachment>& image) {
  cfg.validate();
  if (state.clean().empty()) throw InjectionError("cannot inject into an empty caption");
  auto& log = state.current_log();
  if (state.injections().size() >= cfg.max_spans) {
    log.notes.push_back("no capacity left for new spans");
    return state;
  }

  Analysis analysis;
  for (int attempt = 0; attempt < 2; ++attempt) {
    gate::ModelRequest req;
    req.model = cfg.injector_model;
    req.user = build_injector_prompt(state, cfg, attempt > 0);
    if (cfg.include_image && image) req.image = image;
    req.sampling = cfg.sampling;
    req.purpose = gate::Purpose::inject;
    auto ex = ask(gate, std::move(req));
    const auto reply = parse_injector_reply(ex.response);
    log.exchanges.push_back(std::move(ex));
    analysis = analyze(reply, state.clean());
    for (const auto& issue : analysis.parsed.issues) log.notes.push_back("injector tags: " + issue);

    const bool empty = analysis.parsed.status == tagproto::ParseStatus::empty;
    if (!empty && analysis.untagged == 0) break;
    if (attempt == 0) {
      log.notes.push_back(empty ? "injector reply empty; retrying"
                                : "injector edited untagged text; retrying");
      continue;
    }
    if (empty) throw InjectionError("injector returned an empty caption after retry");
    if (analysis.untagged == analysis.regions.size()) {
      throw InjectionError("injector produced no parseable tags after retry");
    }
    log.notes.push_back("falling back to tagged edits only; " + std::to_string(analysis.untagged) +
                        " untagged edit(s) discarded");
  }

  for (const auto& region : analysis.regions) {
    if (!region.tagged) continue;
    const Injection probe{0, region.clean_begin, region.clean_end, region.replacement};
    const auto& existing = state.injections();
    if (std::any_of(existing.begin(), existing.end(),
                    [&](const Injection& i) { return i.same_edit(probe); })) {
      continue;  // an earlier survivor echoed back
    }
    if (state.injections().size() >= cfg.max_spans) {
      log.notes.push_back("span limit reached; dropped edit \"" + region.replacement + "\"");
      continue;
    }
    std::string why;
    if (auto id = state.add(region.clean_begin, region.clean_end, region.replacement,
                            region.dimension, &why)) {
      log.added.push_back(*id);
    } else {
      log.notes.push_back("rejected edit \"" + region.replacement + "\": " + why);
    }
  }
  return state;
}

std::vector<DetectedSpan> detect_round(InjectionState& state, const InjectionConfig& cfg,
                                       gate::ModelGate& gate) {
  auto& log = state.current_log();
  if (state.injections().empty()) {
    log.notes.push_back("no injected spans; detector not called");
    return {};
  }
  gate::ModelRequest req;
  req.model = cfg.detector_model;
  req.user = build_detector_prompt(state);
  req.sampling = cfg.sampling;
  req.purpose = gate::Purpose::detect;
  auto ex = ask(gate, std::move(req));
  const auto rendered = state.render();
  std::vector<DetectedSpan> detected;
  // A phrase quoted twice names two occurrences, not the first one twice.
  std::map<std::string, std::size_t> seen;
  for (auto& q : parse_detector_reply(ex.response)) {
    std::string joined;
    for (const auto& t : text::tokenize(q.phrase).tokens) joined.append(t.text).push_back('\0');
    if (auto loc = locate_phrase(rendered.tokens, q.phrase, seen[joined]++)) {
      detected.push_back({loc->first, loc->second, std::move(q.phrase), std::move(q.rationale)});
    } else {
      log.dropped_phrases.push_back(q.phrase);
    }
  }
  log.exchanges.push_back(std::move(ex));
  log.detected = detected;
  return detected;
}

InjectionState filter_detected(InjectionState state, const std::vector<DetectedSpan>& detected,
                               const InjectionConfig& cfg) {
  auto& log = state.current_log();
  const auto rendered = state.render();
  std::vector<std::pair<InjectedSpan, const DetectedSpan*>> caught;
  for (const auto& span : rendered.spans) {
    for (const auto& d : detected) {
      const auto lo = std::max(span.start, d.start);
      const auto hi = std::min(span.end, d.end);
      if (hi > lo && hi - lo >= cfg.overlap_tokens) {
        caught.emplace_back(span, &d);
        break;
      }
    }
  }
  for (const auto& [span, d] : caught) {
    const auto& injections = state.injections();
    auto it = std::find_if(injections.begin(), injections.end(),
                           [&](const Injection& i) { return i.id == span.injection_id; });
    const auto clean_text = text::source_slice(state.clean(), it->clean_begin, it->clean_end);
    std::string line = "round " + std::to_string(state.round() + 1) + ": caught \"" +
                       it->replacement + "\" (originally \"" + std::string(clean_text) + "\", " +
                       std::string(corpus::to_string(it->dimension)) + ")";
    if (!d->rationale.empty()) line += ": " + d->rationale;
    state.add_feedback(std::move(line));
    log.reverted.push_back(span.injection_id);
    state.revert(span.injection_id);
  }
  state.advance_round();
  return state;
}

std::string clean_text_of(const corpus::BenchmarkSample& sample) {
  return sample.clean_caption ? *sample.clean_caption : sample.caption;
}

AdversarialResult run_adversarial(const corpus::BenchmarkSample& clean, const InjectionConfig& cfg,
                                  gate::ModelGate& gate) {
  cfg.validate();
  std::optional<gate::ImageAttachment> image;
  InjectionState state(clean_text_of(clean));
  if (cfg.include_image) {
    image = load_image(clean.image, cfg.image_root);
    if (!image && !clean.image.empty()) {
      state.current_log().notes.push_back("image '" + clean.image + "' not found; injecting text-only");
    }
  }

  state = inject_round(std::move(state), cfg, gate, image);
  bool reverted_last = false;
  for (int k = 1; k <= cfg.rounds; ++k) {
    if (k > 1 && reverted_last && state.injections().size() < cfg.max_spans) {
      state = inject_round(std::move(state), cfg, gate, image);
    }
    const auto detected = detect_round(state, cfg, gate);
    const auto before = state.injections().size();
    state = filter_detected(std::move(state), detected, cfg);
    reverted_last = state.injections().size() < before;
  }

  const auto rendered = state.render();
  AdversarialResult result{clean, std::move(state), rendered.spans.empty()};
  auto& s = result.sample;
  s.variant = corpus::Variant::synthetic;
  s.caption = rendered.plain;
  s.clean_caption = result.state.clean().source;
  s.gold_spans = rendered.gold_spans();
  return result;
}

nlohmann::json audit_json(const AdversarialResult& result) {
  using nlohmann::json;
  json rounds = json::array();
  for (const auto& r : result.state.log()) {
    json exchanges = json::array();
    for (const auto& e : r.exchanges) {
      exchanges.push_back({{"purpose", std::string(gate::to_string(e.purpose))},
                           {"model", e.model},
                           {"prompt", e.prompt},
                           {"response", e.response},
                           {"cache_hit", e.cache_hit},
                           {"image_attached", e.image_attached}});
    }
    json detected = json::array();
    for (const auto& d : r.detected) {
      detected.push_back({{"start", d.start}, {"end", d.end}, {"phrase", d.phrase}, {"rationale", d.rationale}});
    }
    rounds.push_back({{"round", r.round},
                      {"exchanges", exchanges},
                      {"added", r.added},
                      {"detected", detected},
                      {"dropped_phrases", r.dropped_phrases},
                      {"reverted", r.reverted},
                      {"notes", r.notes}});
  }
  json survivors = json::array();
  for (const auto& inj : result.state.injections()) {
    survivors.push_back({{"id", inj.id},
                         {"clean_begin", inj.clean_begin},
                         {"clean_end", inj.clean_end},
                         {"replacement", inj.replacement},
                         {"dimension", std::string(corpus::to_string(inj.dimension))},
                         {"round", inj.round}});
  }
  return {{"id", result.sample.id},
          {"prompt_version", std::string(kPromptVersion)},
          {"clean_caption", result.state.clean().source},
          {"final_tagged", result.state.render().tagged},
          {"no_survivors", result.no_survivors},
          {"survivors", survivors},
          {"feedback", result.state.feedback()},
          {"rounds", rounds}};
}

}  // namespace dvb::inject
