#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dvb/corpus.hpp"
#include "dvb/inject.hpp"
#include "dvb/metrics.hpp"
#include "dvb/modelgate.hpp"
#include "dvb/tagproto.hpp"

// Evaluation orchestration: prompting models under test, scoring their
// transcripts, report emission, and the round-sweep / strategy-comparison
// and setting-correlation harnesses.
namespace dvb::eval {

inline constexpr std::string_view kInstructionVersion = "dvb-eval-instruction/1";
inline constexpr std::string_view kToolkitVersion = "0.1.0";

std::string sha256_hex(std::string_view bytes);

struct PromptOptions {
  std::string model;
  gate::Sampling sampling;
  bool attach_image = true;
  /// Missing images fail the sample instead of falling back to text-only.
  bool require_image = false;
  std::filesystem::path image_root;
};

struct BuiltPrompt {
  gate::ModelRequest request;
  bool image_attached = false;
};

/// Fixed instruction + caption (+ image). Throws IoError when the image is
/// required but cannot be read.
BuiltPrompt build_prompt(const corpus::BenchmarkSample& sample, const PromptOptions& options);

struct Transcript {
  std::string id;
  std::string output;
  bool operator==(const Transcript&) const = default;
};

std::vector<Transcript> parse_transcripts(std::string_view contents);
std::vector<Transcript> load_transcripts(const std::filesystem::path& path);
void write_transcripts(const std::filesystem::path& path, const std::vector<Transcript>& transcripts);

enum class RowStatus { ok, malformed_tags, empty, skipped };
std::string_view to_string(RowStatus s);

struct SampleRow {
  std::string id;
  corpus::Domain domain = corpus::Domain::gui;
  RowStatus status = RowStatus::ok;
  bool faithful = true;
  double alignment_coverage = 1.0;
  bool image_attached = false;
  std::size_t tokens = 0;
  metrics::Counts token;
  metrics::Counts sentence;
  metrics::DimensionCounts dimensions;
  std::vector<std::size_t> predicted;
  std::string error;

  bool operator==(const SampleRow&) const = default;
};

struct EvalReport {
  std::string model;
  std::string dataset_sha256;
  bool strict = false;
  std::size_t total_samples = 0;
  std::size_t scored_samples = 0;
  std::optional<metrics::ScoreCard> card;  // absent when nothing was scored
  std::vector<SampleRow> samples;
  std::map<std::string, std::string> versions;
  std::string generated_at;  // not part of equality

  double coverage() const {
    return total_samples == 0 ? 0.0
                              : static_cast<double>(scored_samples) / static_cast<double>(total_samples);
  }
  bool operator==(const EvalReport& o) const;
};

/// Scores one model output against a sample. With `strict`, outputs that
/// are not token-faithful predict nothing.
SampleRow score_sample(const corpus::BenchmarkSample& sample, const std::string& output, bool strict);
SampleRow skipped_row(const corpus::BenchmarkSample& sample, std::string error);

/// Builds a report from rows in dataset order (skipped rows excluded from
/// aggregation).
EvalReport assemble_report(std::string model, std::string dataset_sha256, bool strict,
                           std::vector<SampleRow> rows);

/// Recomputes the score card from per-sample rows.
std::optional<metrics::ScoreCard> reaggregate(const std::vector<SampleRow>& rows);

/// Offline scoring: samples without a transcript become skipped rows.
EvalReport score_transcripts(const std::vector<corpus::BenchmarkSample>& samples,
                             const std::string& dataset_sha256,
                             const std::vector<Transcript>& transcripts, const std::string& model,
                             bool strict);

struct EvalConfig {
  std::filesystem::path dataset;
  std::string model;
  bool strict = false;
  std::optional<std::filesystem::path> output_dir;
  std::size_t concurrency = 1;
  PromptOptions prompt;

  void validate() const;
};

struct EvalRun {
  EvalReport report;
  std::vector<Transcript> transcripts;
};

/// Prompts the model for each sample (up to `concurrency` at once), then
/// scores the collected transcripts. Gate failures become skipped rows.
EvalRun evaluate_samples(const std::vector<corpus::BenchmarkSample>& samples,
                         const std::string& dataset_sha256, gate::ModelGate& gate,
                         const PromptOptions& prompt, bool strict, std::size_t concurrency = 1);

/// Loads the dataset, evaluates it and, with output_dir set, writes
/// report.json, report.txt and transcripts.jsonl there.
EvalRun evaluate_dataset(const EvalConfig& cfg, gate::ModelGate& gate);

nlohmann::json report_to_json(const EvalReport& report, bool include_timestamp = true);
EvalReport report_from_json(const nlohmann::json& j);
EvalReport load_report(const std::filesystem::path& path);

std::string render_report_table(const EvalReport& report);

struct ReportFormats {
  bool json = true;
  bool table = true;
};
/// Writes <stem>.json and/or <stem>.txt into `dir`.
void emit_report(const EvalReport& report, const std::filesystem::path& dir,
                 ReportFormats formats = {}, const std::string& stem = "report");

struct Correlation {
  std::vector<std::string> models;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

/// Spearman rank correlation of token P/R/F1 between two settings, models
/// matched by id. Throws dvb::Error if the model sets differ.
Correlation correlate_settings(const std::vector<EvalReport>& real,
                               const std::vector<EvalReport>& synthetic);

struct SweepRow {
  inject::Strategy strategy = inject::Strategy::structured;
  int rounds = 0;
  std::string model;
  metrics::Prf token;
  metrics::Prf sentence;
  std::map<corpus::Dimension, double> dimension_recall;
  std::size_t samples = 0;
  std::size_t gold_spans = 0;
  double coverage = 0.0;

  bool operator==(const SweepRow&) const = default;
};

/// run_adversarial over a dataset, results in input order.
std::vector<inject::AdversarialResult> adversarial_batch(
    const std::vector<corpus::BenchmarkSample>& clean, const inject::InjectionConfig& cfg,
    gate::ModelGate& gate, std::size_t concurrency = 1);

/// Builds the synthetic set for one configuration.
std::vector<corpus::BenchmarkSample> build_synthetic(const std::vector<corpus::BenchmarkSample>& clean,
                                                     const inject::InjectionConfig& cfg,
                                                     gate::ModelGate& gate,
                                                     std::size_t concurrency = 1);

/// For each K, builds a synthetic set with run_adversarial and evaluates
/// every detector model as a locator on it; one row per (K, model).
std::vector<SweepRow> sweep_rounds(const std::vector<corpus::BenchmarkSample>& clean,
                                   const std::vector<int>& rounds,
                                   const std::vector<std::string>& detector_models,
                                   const inject::InjectionConfig& cfg, gate::ModelGate& gate,
                                   const PromptOptions& prompt, std::size_t concurrency = 1);

/// Same sweep repeated for each injection strategy.
std::vector<SweepRow> compare_strategies(const std::vector<corpus::BenchmarkSample>& clean,
                                         const std::vector<inject::Strategy>& strategies,
                                         const std::vector<int>& rounds,
                                         const std::vector<std::string>& detector_models,
                                         const inject::InjectionConfig& cfg, gate::ModelGate& gate,
                                         const PromptOptions& prompt, std::size_t concurrency = 1);

std::string render_sweep_table(const std::vector<SweepRow>& rows);
nlohmann::json sweep_to_json(const std::vector<SweepRow>& rows);

}  // namespace dvb::eval
