#include "dvb/evalrun.hpp"

#include <openssl/evp.h>

#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "dvb/error.hpp"
#include "dvb/prompt_assets.hpp"
#include "dvb/text.hpp"

namespace dvb::eval {

using nlohmann::json;

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

namespace {

// Runs f(i) for i in [0, n) on up to `width` threads; rethrows the first
// exception after all workers finish.
template <typename F>
void parallel_for(std::size_t n, std::size_t width, F&& f) {
  width = std::max<std::size_t>(1, std::min(width, n));
  if (width <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < width; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            f(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

std::string replace_placeholder(std::string s, std::string_view key, std::string_view value) {
  const auto pos = s.find(key);
  if (pos != std::string::npos) s.replace(pos, key.size(), value);
  return s;
}

}  // namespace

BuiltPrompt build_prompt(const corpus::BenchmarkSample& sample, const PromptOptions& options) {
  BuiltPrompt out;
  auto& req = out.request;
  req.model = options.model;
  req.user = replace_placeholder(std::string(assets::k_evaluate_instruction), "{caption}", sample.caption);
  req.sampling = options.sampling;
  req.purpose = gate::Purpose::evaluate;
  if (options.attach_image || options.require_image) {
    req.image = inject::load_image(sample.image, options.image_root);
    if (!req.image && options.require_image) {
      throw IoError("sample '" + sample.id + "': image '" + sample.image + "' not readable");
    }
  }
  out.image_attached = req.image.has_value();
  return out;
}

// ---------------------------------------------------------------------------
// Transcripts

std::vector<Transcript> parse_transcripts(std::string_view contents) {
  std::vector<Transcript> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < contents.size()) {
    auto nl = contents.find('\n', pos);
    if (nl == std::string_view::npos) nl = contents.size();
    auto line = contents.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw SchemaError(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("output") ||
        !j["output"].is_string()) {
      throw SchemaError(line_no, "expected {\"id\":str,\"output\":str}");
    }
    out.push_back({j["id"].get<std::string>(), j["output"].get<std::string>()});
  }
  return out;
}

std::vector<Transcript> load_transcripts(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open transcripts '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_transcripts(buf.str());
}

void write_transcripts(const std::filesystem::path& path, const std::vector<Transcript>& transcripts) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (const auto& t : transcripts) out << json{{"id", t.id}, {"output", t.output}}.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Scoring

std::string_view to_string(RowStatus s) {
  switch (s) {
    case RowStatus::ok:
      return "ok";
    case RowStatus::malformed_tags:
      return "malformed_tags";
    case RowStatus::empty:
      return "empty";
    case RowStatus::skipped:
      return "skipped";
  }
  return "ok";
}

bool EvalReport::operator==(const EvalReport& o) const {
  return model == o.model && dataset_sha256 == o.dataset_sha256 && strict == o.strict &&
         total_samples == o.total_samples && scored_samples == o.scored_samples && card == o.card &&
         samples == o.samples && versions == o.versions;
}

SampleRow score_sample(const corpus::BenchmarkSample& sample, const std::string& output, bool strict) {
  const auto reference = text::tokenize(sample.caption);
  const auto parsed = tagproto::parse_tags(output);
  auto prediction = tagproto::align_to_reference(parsed.plain, parsed.marked, reference);
  if (strict && !prediction.faithful) prediction.indices.clear();

  SampleRow row;
  row.id = sample.id;
  row.domain = sample.domain;
  row.status = parsed.status == tagproto::ParseStatus::ok             ? RowStatus::ok
               : parsed.status == tagproto::ParseStatus::malformed_tags ? RowStatus::malformed_tags
                                                                      : RowStatus::empty;
  row.faithful = prediction.faithful;
  row.alignment_coverage = prediction.alignment_coverage;
  row.tokens = reference.size();

  const auto gold = metrics::IndexSet::from_spans(sample.gold_spans);
  const metrics::IndexSet pred(prediction.indices);
  row.token = metrics::token_counts(gold, pred);
  row.sentence = metrics::sentence_metrics(gold, pred, text::split_sentences(reference)).counts;
  row.dimensions = metrics::dimension_counts(sample.gold_spans, pred);
  row.predicted = pred.values();
  return row;
}

SampleRow skipped_row(const corpus::BenchmarkSample& sample, std::string error) {
  SampleRow row;
  row.id = sample.id;
  row.domain = sample.domain;
  row.status = RowStatus::skipped;
  row.faithful = false;
  row.alignment_coverage = 0.0;
  row.tokens = text::tokenize(sample.caption).size();
  row.error = std::move(error);
  return row;
}

std::optional<metrics::ScoreCard> reaggregate(const std::vector<SampleRow>& rows) {
  std::vector<metrics::SampleCounts> counts;
  for (const auto& r : rows) {
    if (r.status == RowStatus::skipped) continue;
    counts.push_back({r.domain, r.token, r.sentence, r.dimensions, r.faithful});
  }
  if (counts.empty()) return std::nullopt;
  return metrics::aggregate(counts);
}

EvalReport assemble_report(std::string model, std::string dataset_sha256, bool strict,
                           std::vector<SampleRow> rows) {
  EvalReport report;
  report.model = std::move(model);
  report.dataset_sha256 = std::move(dataset_sha256);
  report.strict = strict;
  report.total_samples = rows.size();
  report.scored_samples = static_cast<std::size_t>(std::count_if(
      rows.begin(), rows.end(), [](const SampleRow& r) { return r.status != RowStatus::skipped; }));
  report.card = reaggregate(rows);
  report.samples = std::move(rows);
  report.versions = {{"tokenizer", std::string(text::kTokenizerVersion)},
                     {"instruction", std::string(kInstructionVersion)},
                     {"toolkit", std::string(kToolkitVersion)}};
  return report;
}

EvalReport score_transcripts(const std::vector<corpus::BenchmarkSample>& samples,
                             const std::string& dataset_sha256,
                             const std::vector<Transcript>& transcripts, const std::string& model,
                             bool strict) {
  std::map<std::string, const Transcript*, std::less<>> by_id;
  for (const auto& t : transcripts) by_id[t.id] = &t;
  std::vector<SampleRow> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) {
    if (auto it = by_id.find(s.id); it != by_id.end()) {
      rows.push_back(score_sample(s, it->second->output, strict));
    } else {
      rows.push_back(skipped_row(s, "no transcript"));
    }
  }
  return assemble_report(model, dataset_sha256, strict, std::move(rows));
}

void EvalConfig::validate() const {
  if (concurrency < 1) throw Error("evaluation config: concurrency must be >= 1");
  if (model.empty()) throw Error("evaluation config: model id required");
}

EvalRun evaluate_samples(const std::vector<corpus::BenchmarkSample>& samples,
                         const std::string& dataset_sha256, gate::ModelGate& gate,
                         const PromptOptions& prompt, bool strict, std::size_t concurrency) {
  std::vector<std::optional<std::string>> outputs(samples.size());
  std::vector<std::string> errors(samples.size());
  std::vector<char> image_attached(samples.size(), 0);
  parallel_for(samples.size(), concurrency, [&](std::size_t i) {
    try {
      auto built = build_prompt(samples[i], prompt);
      image_attached[i] = built.image_attached;
      outputs[i] = gate.complete(built.request).text;
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });

  EvalRun run;
  std::vector<SampleRow> rows;
  rows.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (outputs[i]) {
      run.transcripts.push_back({samples[i].id, *outputs[i]});
      rows.push_back(score_sample(samples[i], *outputs[i], strict));
      rows.back().image_attached = image_attached[i] != 0;
    } else {
      rows.push_back(skipped_row(samples[i], errors[i]));
    }
  }
  run.report = assemble_report(prompt.model, dataset_sha256, strict, std::move(rows));
  return run;
}

EvalRun evaluate_dataset(const EvalConfig& cfg, gate::ModelGate& gate) {
  cfg.validate();
  std::ifstream in(cfg.dataset, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + cfg.dataset.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const auto contents = buf.str();
  const auto dataset = corpus::parse_dataset(contents);

  auto prompt = cfg.prompt;
  prompt.model = cfg.model;
  auto run = evaluate_samples(dataset.samples, sha256_hex(contents), gate, prompt, cfg.strict,
                              cfg.concurrency);
  if (cfg.output_dir) {
    std::filesystem::create_directories(*cfg.output_dir);
    emit_report(run.report, *cfg.output_dir);
    write_transcripts(*cfg.output_dir / "transcripts.jsonl", run.transcripts);
  }
  return run;
}

// ---------------------------------------------------------------------------
// Correlation and sweeps

Correlation correlate_settings(const std::vector<EvalReport>& real,
                               const std::vector<EvalReport>& synthetic) {
  auto index = [](const std::vector<EvalReport>& reports, const char* which) {
    std::map<std::string, const EvalReport*> out;
    for (const auto& r : reports) {
      if (!out.emplace(r.model, &r).second) {
        throw Error(std::string("correlate: duplicate model '") + r.model + "' in " + which + " reports");
      }
      if (!r.card) throw Error("correlate: report for '" + r.model + "' has no scored samples");
    }
    return out;
  };
  const auto a = index(real, "real");
  const auto b = index(synthetic, "synthetic");
  std::set<std::string> ka, kb;
  for (const auto& [k, _] : a) ka.insert(k);
  for (const auto& [k, _] : b) kb.insert(k);
  if (ka != kb) throw Error("correlate: real and synthetic reports cover different model sets");

  Correlation c;
  std::vector<double> rp, rr, rf, sp, sr, sf;
  for (const auto& [model, report] : a) {
    c.models.push_back(model);
    const auto& x = report->card->overall.token;
    const auto& y = b.at(model)->card->overall.token;
    rp.push_back(x.precision);
    rr.push_back(x.recall);
    rf.push_back(x.f1);
    sp.push_back(y.precision);
    sr.push_back(y.recall);
    sf.push_back(y.f1);
  }
  c.precision = metrics::spearman(rp, sp);
  c.recall = metrics::spearman(rr, sr);
  c.f1 = metrics::spearman(rf, sf);
  return c;
}

std::vector<inject::AdversarialResult> adversarial_batch(
    const std::vector<corpus::BenchmarkSample>& clean, const inject::InjectionConfig& cfg,
    gate::ModelGate& gate, std::size_t concurrency) {
  std::vector<std::optional<inject::AdversarialResult>> slots(clean.size());
  parallel_for(clean.size(), concurrency,
               [&](std::size_t i) { slots[i] = inject::run_adversarial(clean[i], cfg, gate); });
  std::vector<inject::AdversarialResult> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::vector<corpus::BenchmarkSample> build_synthetic(const std::vector<corpus::BenchmarkSample>& clean,
                                                     const inject::InjectionConfig& cfg,
                                                     gate::ModelGate& gate, std::size_t concurrency) {
  std::vector<corpus::BenchmarkSample> out;
  for (auto& r : adversarial_batch(clean, cfg, gate, concurrency)) out.push_back(std::move(r.sample));
  return out;
}

std::vector<SweepRow> compare_strategies(const std::vector<corpus::BenchmarkSample>& clean,
                                         const std::vector<inject::Strategy>& strategies,
                                         const std::vector<int>& rounds,
                                         const std::vector<std::string>& detector_models,
                                         const inject::InjectionConfig& cfg, gate::ModelGate& gate,
                                         const PromptOptions& prompt, std::size_t concurrency) {
  std::vector<SweepRow> rows;
  for (auto strategy : strategies) {
    for (int k : rounds) {
      auto c = cfg;
      c.rounds = k;
      c.strategy = strategy;
      c.validate();
      const auto synthetic = build_synthetic(clean, c, gate, concurrency);
      const auto sha = sha256_hex(corpus::serialize_dataset(synthetic));
      std::size_t spans = 0;
      for (const auto& s : synthetic) spans += s.gold_spans.size();
      for (const auto& model : detector_models) {
        auto p = prompt;
        p.model = model;
        const auto run = evaluate_samples(synthetic, sha, gate, p, false, concurrency);
        SweepRow row;
        row.strategy = strategy;
        row.rounds = k;
        row.model = model;
        row.samples = synthetic.size();
        row.gold_spans = spans;
        row.coverage = run.report.coverage();
        if (run.report.card) {
          row.token = run.report.card->overall.token;
          row.sentence = run.report.card->overall.sentence;
          row.dimension_recall = run.report.card->overall.dimension_recall;
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

std::vector<SweepRow> sweep_rounds(const std::vector<corpus::BenchmarkSample>& clean,
                                   const std::vector<int>& rounds,
                                   const std::vector<std::string>& detector_models,
                                   const inject::InjectionConfig& cfg, gate::ModelGate& gate,
                                   const PromptOptions& prompt, std::size_t concurrency) {
  return compare_strategies(clean, {cfg.strategy}, rounds, detector_models, cfg, gate, prompt,
                            concurrency);
}

}  // namespace dvb::eval
