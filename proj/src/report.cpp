#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "dvb/error.hpp"
#include "dvb/evalrun.hpp"

namespace dvb::eval {

using corpus::Dimension;
using nlohmann::json;

namespace {

constexpr std::array<const char*, 10> kDimensionHeaders = {"Num",  "Clr", "Cat",   "Shp", "Mat",
                                                           "Spat", "OCR", "Scene", "Cam", "Other"};

json prf_json(const metrics::Prf& p) { return {{"p", p.precision}, {"r", p.recall}, {"f1", p.f1}}; }
metrics::Prf prf_from(const json& j) {
  return {j.at("p").get<double>(), j.at("r").get<double>(), j.at("f1").get<double>()};
}

json counts_json(const metrics::Counts& c) {
  return {{"intersection", c.intersection}, {"predicted", c.predicted}, {"gold", c.gold}};
}
metrics::Counts counts_from(const json& j) {
  return {j.at("intersection").get<std::size_t>(), j.at("predicted").get<std::size_t>(),
          j.at("gold").get<std::size_t>()};
}

Dimension dimension_from(const std::string& s) {
  auto d = corpus::parse_dimension(s);
  if (!d) throw Error("report: unknown dimension '" + s + "'");
  return *d;
}

json recall_json(const std::map<Dimension, double>& m) {
  json out = json::object();
  for (const auto& [d, r] : m) out[std::string(corpus::to_string(d))] = r;
  return out;
}
std::map<Dimension, double> recall_from(const json& j) {
  std::map<Dimension, double> out;
  for (const auto& [k, v] : j.items()) out[dimension_from(k)] = v.get<double>();
  return out;
}

json dimcounts_json(const metrics::DimensionCounts& m) {
  json out = json::object();
  for (const auto& [d, c] : m) out[std::string(corpus::to_string(d))] = {{"hit", c.hit}, {"total", c.total}};
  return out;
}
metrics::DimensionCounts dimcounts_from(const json& j) {
  metrics::DimensionCounts out;
  for (const auto& [k, v] : j.items()) {
    out[dimension_from(k)] = {v.at("hit").get<std::size_t>(), v.at("total").get<std::size_t>()};
  }
  return out;
}

json core_json(const metrics::CardCore& c) {
  return {{"token", prf_json(c.token)},
          {"sentence", prf_json(c.sentence)},
          {"token_counts", counts_json(c.token_counts)},
          {"sentence_counts", counts_json(c.sentence_counts)},
          {"dimensions", recall_json(c.dimension_recall)},
          {"dimension_counts", dimcounts_json(c.dimension_counts)},
          {"faithfulness_violation_rate", c.faithfulness_violation_rate},
          {"samples", c.samples},
          {"macro", {{"token", prf_json(c.token_macro)}, {"sentence", prf_json(c.sentence_macro)}}}};
}

metrics::CardCore core_from(const json& j) {
  metrics::CardCore c;
  c.token = prf_from(j.at("token"));
  c.sentence = prf_from(j.at("sentence"));
  c.token_counts = counts_from(j.at("token_counts"));
  c.sentence_counts = counts_from(j.at("sentence_counts"));
  c.dimension_recall = recall_from(j.at("dimensions"));
  c.dimension_counts = dimcounts_from(j.at("dimension_counts"));
  c.faithfulness_violation_rate = j.at("faithfulness_violation_rate").get<double>();
  c.samples = j.at("samples").get<std::size_t>();
  c.token_macro = prf_from(j.at("macro").at("token"));
  c.sentence_macro = prf_from(j.at("macro").at("sentence"));
  return c;
}

json row_json(const SampleRow& r) {
  return {{"id", r.id},
          {"domain", std::string(corpus::to_string(r.domain))},
          {"status", std::string(to_string(r.status))},
          {"faithful", r.faithful},
          {"alignment_coverage", r.alignment_coverage},
          {"image_attached", r.image_attached},
          {"tokens", r.tokens},
          {"token", counts_json(r.token)},
          {"sentence", counts_json(r.sentence)},
          {"dimensions", dimcounts_json(r.dimensions)},
          {"predicted", r.predicted},
          {"error", r.error}};
}

RowStatus status_from(const std::string& s) {
  for (auto st : {RowStatus::ok, RowStatus::malformed_tags, RowStatus::empty, RowStatus::skipped}) {
    if (to_string(st) == s) return st;
  }
  throw Error("report: unknown row status '" + s + "'");
}

corpus::Domain domain_from(const std::string& s) {
  auto d = corpus::parse_domain(s);
  if (!d) throw Error("report: unknown domain '" + s + "'");
  return *d;
}

SampleRow row_from(const json& j) {
  SampleRow r;
  r.id = j.at("id").get<std::string>();
  r.domain = domain_from(j.at("domain").get<std::string>());
  r.status = status_from(j.at("status").get<std::string>());
  r.faithful = j.at("faithful").get<bool>();
  r.alignment_coverage = j.at("alignment_coverage").get<double>();
  r.image_attached = j.value("image_attached", false);
  r.tokens = j.at("tokens").get<std::size_t>();
  r.token = counts_from(j.at("token"));
  r.sentence = counts_from(j.at("sentence"));
  r.dimensions = dimcounts_from(j.at("dimensions"));
  r.predicted = j.at("predicted").get<std::vector<std::size_t>>();
  r.error = j.value("error", "");
  return r;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string num(double v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string cell(const char* fmt, const std::string& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, s.c_str());
  return buf;
}

}  // namespace

json report_to_json(const EvalReport& report, bool include_timestamp) {
  json rows = json::array();
  for (const auto& r : report.samples) rows.push_back(row_json(r));
  json domains = json::object();
  json overall = nullptr;
  json dimensions = json::object();
  double violation_rate = 0.0;
  if (report.card) {
    overall = core_json(report.card->overall);
    dimensions = recall_json(report.card->overall.dimension_recall);
    violation_rate = report.card->overall.faithfulness_violation_rate;
    for (const auto& [d, core] : report.card->domains) {
      domains[std::string(corpus::to_string(d))] = core_json(core);
    }
  }
  json versions = json::object();
  for (const auto& [k, v] : report.versions) versions[k] = v;
  json j = {{"model", report.model},
            {"dataset_sha256", report.dataset_sha256},
            {"strict", report.strict},
            {"coverage", report.coverage()},
            {"total_samples", report.total_samples},
            {"scored_samples", report.scored_samples},
            {"overall", overall},
            {"dimensions", dimensions},
            {"domains", domains},
            {"faithfulness_violation_rate", violation_rate},
            {"samples", rows},
            {"versions", versions}};
  if (include_timestamp) {
    j["generated_at"] = report.generated_at.empty() ? utc_now() : report.generated_at;
  }
  return j;
}

EvalReport report_from_json(const json& j) {
  try {
    EvalReport r;
    r.model = j.at("model").get<std::string>();
    r.dataset_sha256 = j.at("dataset_sha256").get<std::string>();
    r.strict = j.value("strict", false);
    r.total_samples = j.at("total_samples").get<std::size_t>();
    r.scored_samples = j.at("scored_samples").get<std::size_t>();
    if (!j.at("overall").is_null()) {
      metrics::ScoreCard card;
      card.overall = core_from(j.at("overall"));
      for (const auto& [k, v] : j.at("domains").items()) card.domains[domain_from(k)] = core_from(v);
      r.card = std::move(card);
    }
    for (const auto& row : j.at("samples")) r.samples.push_back(row_from(row));
    const auto versions = j.value("versions", json::object());
    for (const auto& [k, v] : versions.items()) {
      r.versions[k] = v.get<std::string>();
    }
    r.generated_at = j.value("generated_at", "");
    return r;
  } catch (const json::exception& e) {
    throw Error(std::string("report: malformed JSON report: ") + e.what());
  }
}

EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open report '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return report_from_json(json::parse(buf.str()));
  } catch (const json::parse_error& e) {
    throw Error("report '" + path.string() + "': " + e.what());
  }
}

std::string render_report_table(const EvalReport& report) {
  std::ostringstream os;
  os << "Model: " << report.model << "\n";
  os << "Dataset: " << report.dataset_sha256.substr(0, 16) << "  Coverage: "
     << num(report.coverage() * 100.0) << "% (" << report.scored_samples << "/"
     << report.total_samples << ")" << (report.strict ? "  [strict faithfulness]" : "") << "\n";
  if (!report.card) {
    os << "No scored samples.\n";
    return os.str();
  }
  const auto& card = *report.card;
  os << "Faithfulness violations: " << num(card.overall.faithfulness_violation_rate * 100.0) << "%\n\n";

  std::vector<Dimension> dims;
  for (auto d : corpus::kAllDimensions) {
    if (card.overall.dimension_recall.contains(d)) dims.push_back(d);
  }

  auto header = [&] {
    os << cell("%-10s", "") << cell("%7s", "P_tok") << cell("%7s", "R_tok") << cell("%7s", "F1_tok")
       << cell("%7s", "P_sen") << cell("%7s", "R_sen") << cell("%7s", "F1_sen");
    if (!dims.empty()) os << "  |";
    for (auto d : dims) os << cell("%7s", kDimensionHeaders[static_cast<std::size_t>(d)]);
    os << "\n";
  };
  auto line = [&](const std::string& label, const metrics::Prf& tok, const metrics::Prf& sen,
                  const std::map<Dimension, double>* recall) {
    os << cell("%-10s", label) << cell("%7s", num(tok.precision)) << cell("%7s", num(tok.recall))
       << cell("%7s", num(tok.f1)) << cell("%7s", num(sen.precision)) << cell("%7s", num(sen.recall))
       << cell("%7s", num(sen.f1));
    if (!dims.empty()) os << "  |";
    for (auto d : dims) {
      if (recall) {
        auto it = recall->find(d);
        os << cell("%7s", it == recall->end() ? "-" : num(it->second));
      } else {
        os << cell("%7s", "");
      }
    }
    os << "\n";
  };
  auto section = [&](const std::string& title, const metrics::CardCore& core) {
    os << "== " << title << " (" << core.samples << " samples) ==\n";
    header();
    line("micro", core.token, core.sentence, &core.dimension_recall);
    line("macro", core.token_macro, core.sentence_macro, nullptr);
    os << "\n";
  };

  section("Overall", card.overall);
  for (const auto& [d, core] : card.domains) section("Domain: " + std::string(corpus::to_string(d)), core);
  if (dims.empty()) {
    os << "* No gold hallucination tokens in the scored samples; dimension columns omitted.\n";
  } else {
    os << "Dimension columns: token recall per hallucination dimension; '-' = no gold support.\n";
  }
  return os.str();
}

void emit_report(const EvalReport& report, const std::filesystem::path& dir, ReportFormats formats,
                 const std::string& stem) {
  std::filesystem::create_directories(dir);
  auto write = [](const std::filesystem::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + p.string() + "'");
    out << content;
    if (!out) throw IoError("error writing '" + p.string() + "'");
  };
  if (formats.json) write(dir / (stem + ".json"), report_to_json(report).dump(2) + "\n");
  if (formats.table) write(dir / (stem + ".txt"), render_report_table(report));
}

std::string render_sweep_table(const std::vector<SweepRow>& rows) {
  std::set<Dimension> present;
  for (const auto& r : rows) {
    for (const auto& [d, _] : r.dimension_recall) present.insert(d);
  }
  std::ostringstream os;
  os << cell("%-11s", "Strategy") << cell("%-24s", "Model") << cell("%4s", "K") << cell("%8s", "#Spans")
     << cell("%7s", "P_tok") << cell("%7s", "R_tok") << cell("%7s", "F1_tok");
  if (!present.empty()) os << "  |";
  for (auto d : present) os << cell("%7s", kDimensionHeaders[static_cast<std::size_t>(d)]);
  os << "\n";
  for (const auto& r : rows) {
    os << cell("%-11s", std::string(inject::to_string(r.strategy))) << cell("%-24s", r.model)
       << cell("%4s", std::to_string(r.rounds)) << cell("%8s", std::to_string(r.gold_spans))
       << cell("%7s", num(r.token.precision)) << cell("%7s", num(r.token.recall))
       << cell("%7s", num(r.token.f1));
    if (!present.empty()) os << "  |";
    for (auto d : present) {
      auto it = r.dimension_recall.find(d);
      os << cell("%7s", it == r.dimension_recall.end() ? "-" : num(it->second));
    }
    os << "\n";
  }
  return os.str();
}

json sweep_to_json(const std::vector<SweepRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"strategy", std::string(inject::to_string(r.strategy))},
                   {"rounds", r.rounds},
                   {"model", r.model},
                   {"token", prf_json(r.token)},
                   {"sentence", prf_json(r.sentence)},
                   {"dimensions", recall_json(r.dimension_recall)},
                   {"samples", r.samples},
                   {"gold_spans", r.gold_spans},
                   {"coverage", r.coverage}});
  }
  return out;
}

}  // namespace dvb::eval
