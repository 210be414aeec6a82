#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dvb/corpus.hpp"
#include "dvb/error.hpp"
#include "dvb/modelgate.hpp"
#include "dvb/tagproto.hpp"
#include "dvb/text.hpp"

// Adversarial hallucination injection: an injector rewrites a clean caption
// with tagged factual edits, a text-only detector tries to spot them, caught
// edits are reverted and reported back, and the loop runs for K rounds.
namespace dvb::inject {

inline constexpr std::string_view kPromptVersion = "dvb-inject-prompts/1";

enum class Strategy { naive, structured };
std::string_view to_string(Strategy s);
std::optional<Strategy> parse_strategy(std::string_view s);

struct InjectionConfig {
  int rounds = 2;
  std::vector<corpus::Dimension> target_dimensions{corpus::kAllDimensions.begin(),
                                                   corpus::kAllDimensions.end()};
  std::size_t max_spans = 3;
  Strategy strategy = Strategy::structured;
  /// Minimum tokens a detection must share with an injected span to catch it.
  std::size_t overlap_tokens = 1;
  std::string injector_model = "injector";
  std::string detector_model = "detector";
  bool include_image = true;
  gate::Sampling sampling;
  /// Base directory for relative image paths.
  std::filesystem::path image_root;

  /// Throws dvb::Error if rounds < 0, max_spans < 1 or overlap_tokens < 1.
  void validate() const;
};

class InjectionError : public Error {
 public:
  using Error::Error;
};

/// One edit, anchored on the clean caption: clean tokens [clean_begin,
/// clean_end) are replaced by `replacement` (source bytes, non-empty).
struct Injection {
  std::size_t id = 0;
  std::size_t clean_begin = 0;
  std::size_t clean_end = 0;
  std::string replacement;
  corpus::Dimension dimension = corpus::Dimension::other;
  int round = 0;

  /// Identity independent of id and round.
  bool same_edit(const Injection& o) const {
    return clean_begin == o.clean_begin && clean_end == o.clean_end && replacement == o.replacement;
  }
};

/// An injection located in the current hallucinated caption.
struct InjectedSpan {
  std::size_t injection_id = 0;
  std::size_t start = 0;
  std::size_t end = 0;
  corpus::Dimension dimension = corpus::Dimension::other;
};

struct Rendered {
  std::string plain;
  std::string tagged;
  text::TokenizedCaption tokens;
  std::vector<InjectedSpan> spans;

  std::vector<corpus::HallucinationSpan> gold_spans() const;
};

struct DetectedSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string phrase;
  std::string rationale;
};

struct Exchange {
  gate::Purpose purpose = gate::Purpose::inject;
  std::string model;
  std::string prompt;
  std::string response;
  bool cache_hit = false;
  bool image_attached = false;
};

struct RoundLog {
  int round = 0;
  std::vector<Exchange> exchanges;
  std::vector<std::size_t> added;
  std::vector<DetectedSpan> detected;
  std::vector<std::string> dropped_phrases;
  std::vector<std::size_t> reverted;
  std::vector<std::string> notes;
};

class InjectionState {
 public:
  explicit InjectionState(std::string_view clean_caption);

  const text::TokenizedCaption& clean() const noexcept { return clean_; }
  const std::vector<Injection>& injections() const noexcept { return injections_; }
  int round() const noexcept { return round_; }
  const std::vector<RoundLog>& log() const noexcept { return log_; }
  const std::vector<std::string>& feedback() const noexcept { return feedback_; }

  /// Builds c' from the clean caption and the current injections.
  Rendered render() const;

  /// Adds an edit if it is non-empty, does not overlap an existing edit and
  /// renders to the expected token sequence. Returns the new id.
  std::optional<std::size_t> add(std::size_t clean_begin, std::size_t clean_end,
                                 std::string replacement, corpus::Dimension dimension,
                                 std::string* why_not = nullptr);
  /// Restores the clean tokens of an injection.
  bool revert(std::size_t injection_id);

  RoundLog& current_log();
  void begin_round_log();
  void advance_round() { ++round_; }
  void add_feedback(std::string line) { feedback_.push_back(std::move(line)); }

 private:
  text::TokenizedCaption clean_;
  std::vector<Injection> injections_;  // sorted by clean_begin
  std::vector<RoundLog> log_;
  std::vector<std::string> feedback_;
  std::size_t next_id_ = 0;
  int round_ = 0;
};

/// Injector reply split into the tagged caption and its declared labels.
struct InjectorReply {
  std::string tagged_caption;
  std::vector<corpus::Dimension> labels;
};
InjectorReply parse_injector_reply(std::string_view reply);

/// Detector reply: one entry per double-quoted phrase.
struct QuotedPhrase {
  std::string phrase;
  std::string rationale;
};
std::vector<QuotedPhrase> parse_detector_reply(std::string_view reply);

/// Leftmost exact token-subsequence match of `phrase` in `caption`; with
/// `skip` > 0, the match after the first `skip` ones.
std::optional<std::pair<std::size_t, std::size_t>> locate_phrase(
    const text::TokenizedCaption& caption, std::string_view phrase, std::size_t skip = 0);

std::string build_injector_prompt(const InjectionState& state, const InjectionConfig& cfg,
                                  bool retry);
std::string build_detector_prompt(const InjectionState& state);

/// Loads the image for a sample when configured; nullopt if absent.
std::optional<gate::ImageAttachment> load_image(const std::string& image,
                                                const std::filesystem::path& root);

/// Asks the injector for tagged edits and records the accepted ones.
InjectionState inject_round(InjectionState state, const InjectionConfig& cfg, gate::ModelGate& gate,
                            const std::optional<gate::ImageAttachment>& image = std::nullopt);

/// Runs the text-only detector on the untagged c' and grounds its quoted
/// phrases. Returns nothing (without a model call) when no span is injected.
std::vector<DetectedSpan> detect_round(InjectionState& state, const InjectionConfig& cfg,
                                       gate::ModelGate& gate);

/// Reverts every injected span sharing >= overlap_tokens tokens with a
/// detection, logs the catches as feedback and advances the round.
InjectionState filter_detected(InjectionState state, const std::vector<DetectedSpan>& detected,
                               const InjectionConfig& cfg);

struct AdversarialResult {
  corpus::BenchmarkSample sample;
  InjectionState state;
  bool no_survivors = false;
};

/// Single-pass injection followed by K detect/filter rounds; rounds after
/// the first re-inject into reverted capacity before detecting.
AdversarialResult run_adversarial(const corpus::BenchmarkSample& clean, const InjectionConfig& cfg,
                                  gate::ModelGate& gate);

/// The caption the pipeline treats as clean: clean_caption when present,
/// otherwise caption.
std::string clean_text_of(const corpus::BenchmarkSample& sample);

nlohmann::json audit_json(const AdversarialResult& result);

}  // namespace dvb::inject
