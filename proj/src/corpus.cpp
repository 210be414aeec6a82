#include "dvb/corpus.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "dvb/error.hpp"
#include "dvb/text.hpp"

namespace dvb::corpus {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 5> kDomainNames = {"gui", "nature", "chart", "movie",
                                                          "poster"};
constexpr std::array<std::string_view, 10> kDimensionNames = {
    "number", "color", "category", "shape", "material",
    "spatial", "ocr", "scene", "camera", "other"};

const std::set<std::string, std::less<>> kKnownFields = {
    "id", "image", "domain", "variant", "caption", "clean_caption", "gold_spans"};

void add(ValidationReport& r, ViolationKind kind, const std::string& id, std::string field,
         std::string message) {
  r.violations.push_back(Violation{kind, id, std::move(field), std::move(message)});
}

std::string span_field(std::size_t i) { return "gold_spans[" + std::to_string(i) + "]"; }

// Schema-level check of a raw record. Returns false if the record cannot be
// decoded into a BenchmarkSample.
bool check_schema(const json& rec, ValidationReport& r) {
  std::string id;
  if (rec.is_object() && rec.contains("id") && rec["id"].is_string()) {
    id = rec["id"].get<std::string>();
  }
  if (!rec.is_object()) {
    add(r, ViolationKind::schema, id, "", "record is not a JSON object");
    return false;
  }
  bool decodable = true;
  for (const char* field : {"id", "image", "domain", "variant", "caption"}) {
    if (!rec.contains(field)) {
      add(r, ViolationKind::schema, id, field, "missing required field");
      decodable = false;
    } else if (!rec[field].is_string()) {
      add(r, ViolationKind::schema, id, field, "expected a string");
      decodable = false;
    }
  }
  if (rec.contains("clean_caption") && !rec["clean_caption"].is_string() &&
      !rec["clean_caption"].is_null()) {
    add(r, ViolationKind::schema, id, "clean_caption", "expected a string or null");
    decodable = false;
  }
  if (!rec.contains("gold_spans")) {
    add(r, ViolationKind::schema, id, "gold_spans", "missing required field");
    decodable = false;
  } else if (!rec["gold_spans"].is_array()) {
    add(r, ViolationKind::schema, id, "gold_spans", "expected an array");
    decodable = false;
  } else {
    const auto& spans = rec["gold_spans"];
    for (std::size_t i = 0; i < spans.size(); ++i) {
      const auto& s = spans[i];
      if (!s.is_object() || !s.contains("start") || !s.contains("end") ||
          !s.contains("dimension") || !s["start"].is_number_unsigned() ||
          !s["end"].is_number_unsigned() || !s["dimension"].is_string()) {
        add(r, ViolationKind::schema, id, span_field(i),
            "expected {\"start\":uint,\"end\":uint,\"dimension\":str}");
        decodable = false;
        continue;
      }
      const auto dim = s["dimension"].get<std::string>();
      if (!parse_dimension(dim)) {
        add(r, ViolationKind::unknown_dimension, id, span_field(i) + ".dimension",
            "unknown dimension '" + dim + "'");
        decodable = false;
      }
    }
  }
  if (!decodable) return false;

  const auto domain = rec["domain"].get<std::string>();
  if (!parse_domain(domain)) {
    add(r, ViolationKind::unknown_domain, id, "domain", "unknown domain '" + domain + "'");
    decodable = false;
  }
  const auto variant = rec["variant"].get<std::string>();
  if (!parse_variant(variant)) {
    add(r, ViolationKind::unknown_variant, id, "variant", "unknown variant '" + variant + "'");
    decodable = false;
  }
  for (const auto& [key, _] : rec.items()) {
    if (!kKnownFields.contains(key)) r.warnings.push_back("sample '" + id + "': ignoring unknown field '" + key + "'");
  }
  return decodable;
}

BenchmarkSample decode(const json& rec) {
  BenchmarkSample s;
  s.id = rec["id"].get<std::string>();
  s.image = rec["image"].get<std::string>();
  s.domain = *parse_domain(rec["domain"].get<std::string>());
  s.variant = *parse_variant(rec["variant"].get<std::string>());
  s.caption = rec["caption"].get<std::string>();
  if (rec.contains("clean_caption") && rec["clean_caption"].is_string()) {
    s.clean_caption = rec["clean_caption"].get<std::string>();
  }
  for (const auto& span : rec["gold_spans"]) {
    s.gold_spans.push_back(HallucinationSpan{span["start"].get<std::size_t>(),
                                             span["end"].get<std::size_t>(),
                                             *parse_dimension(span["dimension"].get<std::string>())});
  }
  return s;
}

[[noreturn]] void raise(const Violation& v, std::size_t line) {
  if (v.kind == ViolationKind::schema) throw SchemaError(line, v.field + ": " + v.message);
  throw ValidationError(v.sample_id, v.field, v.message);
}

std::string trim_line(std::string_view line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) {
    line.remove_suffix(1);
  }
  return std::string(line);
}

}  // namespace

std::string_view to_string(Domain d) { return kDomainNames[static_cast<std::size_t>(d)]; }
std::string_view to_string(Dimension d) { return kDimensionNames[static_cast<std::size_t>(d)]; }
std::string_view to_string(Variant v) { return v == Variant::real ? "real" : "synthetic"; }

std::optional<Domain> parse_domain(std::string_view s) {
  for (std::size_t i = 0; i < kDomainNames.size(); ++i) {
    if (kDomainNames[i] == s) return static_cast<Domain>(i);
  }
  return std::nullopt;
}

std::optional<Dimension> parse_dimension(std::string_view s) {
  for (std::size_t i = 0; i < kDimensionNames.size(); ++i) {
    if (kDimensionNames[i] == s) return static_cast<Dimension>(i);
  }
  return std::nullopt;
}

std::optional<Variant> parse_variant(std::string_view s) {
  if (s == "real") return Variant::real;
  if (s == "synthetic") return Variant::synthetic;
  return std::nullopt;
}

ValidationReport validate_sample(const BenchmarkSample& sample) {
  ValidationReport r;
  const auto& id = sample.id;
  if (id.empty()) add(r, ViolationKind::empty_id, id, "id", "id must be non-empty");
  if (sample.variant == Variant::synthetic && !sample.clean_caption) {
    add(r, ViolationKind::missing_clean_caption, id, "clean_caption",
        "synthetic samples must carry the pre-injection caption");
  }

  const auto n = text::tokenize(sample.caption).size();
  const auto& spans = sample.gold_spans;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto& s = spans[i];
    if (s.start >= s.end) {
      add(r, ViolationKind::span_empty, id, span_field(i),
          "start " + std::to_string(s.start) + " must be < end " + std::to_string(s.end));
    }
    if (s.end > n) {
      add(r, ViolationKind::span_out_of_range, id, span_field(i),
          "end " + std::to_string(s.end) + " exceeds caption length " + std::to_string(n));
    }
    if (i > 0 && s.start < spans[i - 1].start) {
      add(r, ViolationKind::span_unsorted, id, span_field(i),
          "spans must be sorted by start (follows " + span_field(i - 1) + ")");
    }
  }
  for (std::size_t i = 0; i < spans.size(); ++i) {
    for (std::size_t j = i + 1; j < spans.size(); ++j) {
      if (spans[i].start < spans[j].end && spans[j].start < spans[i].end) {
        add(r, ViolationKind::span_overlap, id, span_field(i),
            span_field(i) + " and " + span_field(j) + " overlap");
      }
    }
  }
  return r;
}

ValidationReport validate_sample(const json& record) {
  ValidationReport r;
  if (!check_schema(record, r)) return r;
  auto typed = validate_sample(decode(record));
  r.violations.insert(r.violations.end(), typed.violations.begin(), typed.violations.end());
  return r;
}

BenchmarkSample sample_from_json(const json& record) {
  auto report = validate_sample(record);
  if (!report.ok()) raise(report.violations.front(), 0);
  return decode(record);
}

json sample_to_json(const BenchmarkSample& s) {
  json spans = json::array();
  for (const auto& span : s.gold_spans) {
    spans.push_back({{"start", span.start}, {"end", span.end},
                     {"dimension", std::string(to_string(span.dimension))}});
  }
  json out = {{"id", s.id},
              {"image", s.image},
              {"domain", std::string(to_string(s.domain))},
              {"variant", std::string(to_string(s.variant))},
              {"caption", s.caption},
              {"clean_caption", s.clean_caption ? json(*s.clean_caption) : json(nullptr)},
              {"gold_spans", std::move(spans)}};
  return out;
}

Dataset parse_dataset(std::string_view contents) {
  Dataset ds;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  bool have_header = false;
  std::size_t pos = 0;
  while (pos <= contents.size()) {
    auto nl = contents.find('\n', pos);
    if (nl == std::string_view::npos) nl = contents.size();
    const std::string line = trim_line(contents.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;

    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw SchemaError(line_no, std::string("invalid JSON: ") + e.what());
    }

    if (!have_header) {
      if (!rec.is_object() || rec.value("format", "") != "dvb-jsonl") {
        throw SchemaError(line_no, "expected header {\"format\":\"dvb-jsonl\",...}");
      }
      if (!rec.contains("version") || !rec["version"].is_number_integer() ||
          rec["version"].get<int>() != 1) {
        throw SchemaError(line_no, "unsupported dataset version");
      }
      ds.header.version = 1;
      ds.header.tokenizer = rec.value("tokenizer", "");
      if (ds.header.tokenizer != text::kTokenizerVersion) {
        throw SchemaError(line_no, "dataset tokenizer '" + ds.header.tokenizer +
                                       "' does not match '" + std::string(text::kTokenizerVersion) + "'");
      }
      have_header = true;
      continue;
    }

    auto report = validate_sample(rec);
    if (!report.ok()) raise(report.violations.front(), line_no);
    for (auto& w : report.warnings) ds.warnings.push_back("line " + std::to_string(line_no) + ": " + w);
    auto sample = decode(rec);
    if (!seen.insert(sample.id).second) {
      throw ValidationError(sample.id, "id", "duplicate id (line " + std::to_string(line_no) + ")");
    }
    ds.samples.push_back(std::move(sample));
  }
  if (!have_header) throw SchemaError(1, "missing dataset header line");
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("error reading '" + path.string() + "'");
  return parse_dataset(buf.str());
}

std::string serialize_dataset(const std::vector<BenchmarkSample>& samples) {
  std::string out;
  json header = {{"format", "dvb-jsonl"},
                 {"version", 1},
                 {"tokenizer", std::string(text::kTokenizerVersion)}};
  out += header.dump();
  out += '\n';
  for (const auto& s : samples) {
    out += sample_to_json(s).dump();
    out += '\n';
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, const std::vector<BenchmarkSample>& samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << serialize_dataset(samples);
  if (!out) throw IoError("error writing '" + path.string() + "'");
}

std::optional<double> DomainStats::mean_length() const {
  if (samples == 0) return std::nullopt;
  return static_cast<double>(total_tokens) / static_cast<double>(samples);
}

std::optional<double> DomainStats::hallucination_rate() const {
  if (samples == 0) return std::nullopt;
  return static_cast<double>(hallucinated_samples) / static_cast<double>(samples);
}

DatasetStats dataset_stats(const std::vector<BenchmarkSample>& samples) {
  DatasetStats stats;
  for (auto d : kAllDomains) stats.domains[d] = DomainStats{};
  for (const auto& s : samples) {
    const auto tokens = text::tokenize(s.caption).size();
    for (auto* st : {&stats.domains[s.domain], &stats.total}) {
      st->samples += 1;
      st->total_tokens += tokens;
      st->hallucination_locations += s.gold_spans.size();
      st->hallucinated_samples += s.gold_spans.empty() ? 0 : 1;
    }
  }
  return stats;
}

namespace {

std::string fmt_opt(const std::optional<double>& v, const char* pattern, double scale = 1.0) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, pattern, *v * scale);
  return buf;
}

json domain_json(const DomainStats& s) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  std::optional<double> mean_rounded;
  if (auto m = s.mean_length()) mean_rounded = std::round(*m * 10.0) / 10.0;
  return {{"samples", s.samples},
          {"mean_length", opt(mean_rounded)},
          {"hallucination_locations", s.hallucination_locations},
          {"hallucinated_samples", s.hallucinated_samples},
          {"hallucination_rate", opt(s.hallucination_rate())}};
}

}  // namespace

std::string render_stats_table(const DatasetStats& stats) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %8s %10s %18s %12s\n", "Domain", "#Samples", "Avg. Len",
                "#Hallu locations", "Hallu. Rate");
  os << line;
  auto row = [&](std::string_view name, const DomainStats& s) {
    std::snprintf(line, sizeof line, "%-8.*s %8zu %10s %18zu %12s\n",
                  static_cast<int>(name.size()), name.data(), s.samples,
                  fmt_opt(s.mean_length(), "%.1f").c_str(), s.hallucination_locations,
                  fmt_opt(s.hallucination_rate(), "%.1f%%", 100.0).c_str());
    os << line;
  };
  for (const auto& [d, s] : stats.domains) row(to_string(d), s);
  row("total", stats.total);
  os << "(lengths in " << text::kTokenizerVersion << " tokens)\n";
  return os.str();
}

json stats_to_json(const DatasetStats& stats) {
  json domains = json::object();
  for (const auto& [d, s] : stats.domains) domains[std::string(to_string(d))] = domain_json(s);
  return {{"domains", domains}, {"total", domain_json(stats.total)},
          {"tokenizer", std::string(text::kTokenizerVersion)}};
}

AcceptanceDecision batch_acceptance(const std::vector<std::pair<std::string, Verdict>>& batch,
                                    double threshold) {
  if (batch.empty()) throw Error("batch_acceptance: empty batch");
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw Error("batch_acceptance: threshold must be in (0, 1]");
  }
  AcceptanceDecision d;
  d.total = batch.size();
  for (const auto& [id, verdict] : batch) {
    if (verdict == Verdict::correct) {
      ++d.correct;
    } else {
      d.defects.push_back(id);
    }
  }
  // Compare in counts so that e.g. 97/100 against 0.97 is not lost to rounding.
  const double needed = threshold * static_cast<double>(d.total);
  d.accepted = static_cast<double>(d.correct) >= needed - 1e-9 * static_cast<double>(d.total);
  return d;
}

}  // namespace dvb::corpus
