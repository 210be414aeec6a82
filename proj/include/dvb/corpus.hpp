#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace dvb::corpus {

enum class Domain { gui, nature, chart, movie, poster };
inline constexpr std::array kAllDomains = {Domain::gui, Domain::nature, Domain::chart,
                                           Domain::movie, Domain::poster};

/// Hallucination taxonomy, in canonical order.
enum class Dimension { number, color, category, shape, material, spatial, ocr, scene, camera, other };
inline constexpr std::array kAllDimensions = {
    Dimension::number,   Dimension::color,   Dimension::category, Dimension::shape,
    Dimension::material, Dimension::spatial, Dimension::ocr,      Dimension::scene,
    Dimension::camera,   Dimension::other};

enum class Variant { real, synthetic };

std::string_view to_string(Domain d);
std::string_view to_string(Dimension d);
std::string_view to_string(Variant v);
std::optional<Domain> parse_domain(std::string_view s);
std::optional<Dimension> parse_dimension(std::string_view s);
std::optional<Variant> parse_variant(std::string_view s);

/// Token range [start, end) of the owning caption.
struct HallucinationSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  Dimension dimension = Dimension::other;

  std::size_t length() const noexcept { return end - start; }
  bool operator==(const HallucinationSpan&) const = default;
};

struct BenchmarkSample {
  std::string id;
  std::string image;
  Domain domain = Domain::gui;
  Variant variant = Variant::real;
  std::string caption;
  std::optional<std::string> clean_caption;
  std::vector<HallucinationSpan> gold_spans;

  bool operator==(const BenchmarkSample&) const = default;
};

struct DatasetHeader {
  std::string format = "dvb-jsonl";
  int version = 1;
  std::string tokenizer;

  bool operator==(const DatasetHeader&) const = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<BenchmarkSample> samples;
  std::vector<std::string> warnings;
};

enum class ViolationKind {
  schema,
  empty_id,
  duplicate_id,
  unknown_domain,
  unknown_dimension,
  unknown_variant,
  missing_clean_caption,
  span_out_of_range,
  span_empty,
  span_unsorted,
  span_overlap,
};

struct Violation {
  ViolationKind kind;
  std::string sample_id;
  std::string field;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  std::vector<std::string> warnings;

  bool ok() const noexcept { return violations.empty(); }
};

/// Checks typed invariants: span ranges against the tokenized caption,
/// ordering, overlap, and synthetic samples carrying clean_caption.
ValidationReport validate_sample(const BenchmarkSample& sample);

/// Checks a raw JSON record (schema, enum strings) and, when it parses, the
/// typed invariants as well.
ValidationReport validate_sample(const nlohmann::json& record);

/// Decodes a record; throws ValidationError on the first violation.
BenchmarkSample sample_from_json(const nlohmann::json& record);
nlohmann::json sample_to_json(const BenchmarkSample& sample);

/// Reads a dataset file. Throws IoError, SchemaError (with line number) or
/// ValidationError (with sample id and field).
Dataset load_dataset(const std::filesystem::path& path);
Dataset parse_dataset(std::string_view contents);

std::string serialize_dataset(const std::vector<BenchmarkSample>& samples);
void write_dataset(const std::filesystem::path& path, const std::vector<BenchmarkSample>& samples);

struct DomainStats {
  std::size_t samples = 0;
  std::size_t total_tokens = 0;
  std::size_t hallucination_locations = 0;
  std::size_t hallucinated_samples = 0;

  /// Absent when there are no samples.
  std::optional<double> mean_length() const;
  std::optional<double> hallucination_rate() const;
  bool operator==(const DomainStats&) const = default;
};

struct DatasetStats {
  std::map<Domain, DomainStats> domains;  // every domain present, possibly zero
  DomainStats total;
};

/// Caption lengths are counted in tokenizer tokens.
DatasetStats dataset_stats(const std::vector<BenchmarkSample>& samples);
std::string render_stats_table(const DatasetStats& stats);
nlohmann::json stats_to_json(const DatasetStats& stats);

enum class Verdict { correct, incorrect };

struct AcceptanceDecision {
  bool accepted = false;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::string> defects;

  double accuracy() const noexcept {
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  }
};

/// Batch review gate: accept iff correct/total >= threshold.
AcceptanceDecision batch_acceptance(const std::vector<std::pair<std::string, Verdict>>& batch,
                                    double threshold = 0.97);

}  // namespace dvb::corpus
