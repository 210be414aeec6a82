#include "dvb/cli.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dvb/corpus.hpp"
#include "dvb/diffannot.hpp"
#include "dvb/error.hpp"
#include "dvb/evalrun.hpp"
#include "dvb/inject.hpp"
#include "dvb/modelgate.hpp"

namespace dvb::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open '" + p.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << content;
  if (!out) throw IoError("error writing '" + p.string() + "'");
}

struct GateFlags {
  std::string backend = "http";
  std::string script;
  std::string base_url = gate::HttpConfig{}.base_url;
  std::string path = gate::HttpConfig{}.path;
  std::string api_key_env = gate::HttpConfig{}.api_key_env;
  std::string cache_dir;
  int max_attempts = gate::RetryPolicy{}.max_attempts;
  int timeout_s = 120;
  double temperature = 0.0;
  int max_tokens = 4096;

  void attach(CLI::App* app) {
    app->add_option("--backend", backend, "Model backend")
        ->check(CLI::IsMember({"http", "scripted"}))
        ->capture_default_str();
    app->add_option("--script", script, "JSON script for the scripted backend");
    app->add_option("--base-url", base_url, "Chat-completions server")->capture_default_str();
    app->add_option("--endpoint", path, "Request path on the server")->capture_default_str();
    app->add_option("--api-key-env", api_key_env, "Environment variable holding the API token")
        ->capture_default_str();
    app->add_option("--cache-dir", cache_dir, "Response cache directory");
    app->add_option("--max-attempts", max_attempts, "Attempts per request")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--timeout", timeout_s, "HTTP timeout in seconds")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--temperature", temperature)->check(CLI::NonNegativeNumber)->capture_default_str();
    app->add_option("--max-tokens", max_tokens)->check(CLI::PositiveNumber)->capture_default_str();
  }

  gate::Sampling sampling() const { return {temperature, max_tokens}; }

  std::unique_ptr<gate::ModelGate> make() const {
    std::shared_ptr<gate::Backend> b;
    if (backend == "scripted") {
      if (script.empty()) throw UsageError("--backend scripted requires --script");
      b = gate::scripted_from_json(read_file(script));
    } else {
      gate::HttpConfig cfg;
      cfg.base_url = base_url;
      cfg.path = path;
      cfg.api_key_env = api_key_env;
      cfg.timeout = std::chrono::seconds(timeout_s);
      b = std::make_shared<gate::HttpBackend>(cfg);
    }
    gate::GateOptions opts;
    if (!cache_dir.empty()) opts.cache_dir = fs::path(cache_dir);
    opts.retry.max_attempts = max_attempts;
    return std::make_unique<gate::ModelGate>(std::move(b), std::move(opts));
  }
};

struct InjectFlags {
  int rounds = 2;
  std::string strategy = "structured";
  std::size_t max_spans = 3;
  std::size_t overlap_tokens = 1;
  std::vector<std::string> dimensions;
  std::string injector_model = "injector";
  std::string detector_model = "detector";
  bool no_image = false;

  void attach(CLI::App* app, bool with_rounds) {
    if (with_rounds) {
      app->add_option("--rounds", rounds, "Adversarial detect/filter rounds (K)")
          ->check(CLI::NonNegativeNumber)
          ->capture_default_str();
    }
    app->add_option("--strategy", strategy)
        ->check(CLI::IsMember({"naive", "structured"}))
        ->capture_default_str();
    app->add_option("--max-spans", max_spans, "Injected spans per caption")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--overlap-tokens", overlap_tokens, "Tokens a detection must share to catch a span")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--dimensions", dimensions, "Target dimensions (default: all)")->delimiter(',');
    app->add_option("--injector-model", injector_model)->capture_default_str();
    app->add_option("--detector-model", detector_model)->capture_default_str();
    app->add_flag("--no-injector-image", no_image, "Do not show the image to the injector");
  }

  inject::InjectionConfig config(const GateFlags& g, const std::string& image_root) const {
    inject::InjectionConfig cfg;
    cfg.rounds = rounds;
    cfg.strategy = *inject::parse_strategy(strategy);
    cfg.max_spans = max_spans;
    cfg.overlap_tokens = overlap_tokens;
    if (!dimensions.empty()) {
      cfg.target_dimensions.clear();
      for (const auto& d : dimensions) {
        auto dim = corpus::parse_dimension(d);
        if (!dim) throw UsageError("unknown dimension '" + d + "'");
        cfg.target_dimensions.push_back(*dim);
      }
    }
    cfg.injector_model = injector_model;
    cfg.detector_model = detector_model;
    cfg.include_image = !no_image;
    cfg.sampling = g.sampling();
    cfg.image_root = image_root;
    cfg.validate();
    return cfg;
  }
};

// --- subcommands -----------------------------------------------------------

int cmd_validate(const std::string& path, std::ostream& out, std::ostream& err) {
  try {
    const auto ds = corpus::load_dataset(path);
    for (const auto& w : ds.warnings) err << "warning: " << w << "\n";
    out << "OK " << path << ": " << ds.samples.size() << " samples, tokenizer "
        << ds.header.tokenizer << ", " << ds.warnings.size() << " warning(s)\n";
    return kExitOk;
  } catch (const SchemaError& e) {
    err << "invalid: " << path << ": " << e.what() << "\n";
  } catch (const ValidationError& e) {
    err << "invalid: " << path << ": " << e.what() << "\n";
  }
  // List every further record-level violation, not just the first.
  std::istringstream lines(read_file(path));
  std::string line;
  std::size_t n = 0;
  std::size_t violations = 0;
  while (std::getline(lines, line)) {
    if (++n == 1 || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error&) {
      continue;
    }
    for (const auto& v : corpus::validate_sample(record).violations) {
      err << "  line " << n << ": sample '" << v.sample_id << "', field '" << v.field
          << "': " << v.message << "\n";
      ++violations;
    }
  }
  if (violations > 0) err << violations << " record violation(s)\n";
  return kExitFailure;
}

int cmd_stats(const std::string& path, bool as_json, std::ostream& out) {
  const auto stats = corpus::dataset_stats(corpus::load_dataset(path).samples);
  out << (as_json ? stats_to_json(stats).dump(2) + "\n" : corpus::render_stats_table(stats));
  return kExitOk;
}

struct AnnotateFlags {
  std::string input;
  std::string output;
  std::string domain = "gui";
  std::string id_prefix = "pair-";
};

std::vector<diffannot::CaptionPair> read_pairs(const AnnotateFlags& f) {
  const auto default_domain = corpus::parse_domain(f.domain);
  if (!default_domain) throw UsageError("unknown domain '" + f.domain + "'");
  const bool jsonl = fs::path(f.input).extension() == ".jsonl";
  std::istringstream lines(read_file(f.input));
  std::vector<diffannot::CaptionPair> pairs;
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line.starts_with('#')) continue;
    diffannot::CaptionPair p;
    p.domain = *default_domain;
    p.id = f.id_prefix + std::to_string(pairs.size() + 1);
    if (jsonl) {
      try {
        const auto j = json::parse(line);
        p.generated = j.at("generated").get<std::string>();
        p.corrected = j.at("corrected").get<std::string>();
        p.id = j.value("id", p.id);
        p.image = j.value("image", "");
        if (j.contains("domain")) {
          auto d = corpus::parse_domain(j.at("domain").get<std::string>());
          if (!d) throw SchemaError(n, "unknown domain");
          p.domain = *d;
        }
        for (const auto& l : j.value("labels", std::vector<std::string>{})) {
          auto d = corpus::parse_dimension(l);
          if (!d) throw SchemaError(n, "unknown dimension '" + l + "'");
          p.labels.push_back(*d);
        }
      } catch (const json::exception& e) {
        throw SchemaError(n, e.what());
      }
    } else {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw SchemaError(n, "expected <generated>\\t<corrected>");
      p.generated = line.substr(0, tab);
      p.corrected = line.substr(tab + 1);
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

int cmd_annotate(const AnnotateFlags& f, std::ostream& out) {
  std::vector<corpus::BenchmarkSample> samples;
  std::size_t spans = 0;
  for (const auto& p : read_pairs(f)) {
    samples.push_back(diffannot::annotate_pair(p));
    spans += samples.back().gold_spans.size();
  }
  corpus::write_dataset(f.output, samples);
  out << "annotated " << samples.size() << " pair(s), " << spans << " gold span(s) -> " << f.output
      << "\n";
  return kExitOk;
}

int cmd_inject(const std::string& dataset, const std::string& output, const std::string& audit,
               const inject::InjectionConfig& cfg, const GateFlags& g, std::size_t concurrency,
               std::ostream& out) {
  const auto ds = corpus::load_dataset(dataset);
  auto gate = g.make();
  const auto results = eval::adversarial_batch(ds.samples, cfg, *gate, concurrency);
  std::vector<corpus::BenchmarkSample> synthetic;
  std::string audit_lines;
  std::size_t spans = 0;
  std::size_t empty = 0;
  for (const auto& r : results) {
    synthetic.push_back(r.sample);
    spans += r.sample.gold_spans.size();
    empty += r.no_survivors ? 1 : 0;
    audit_lines += inject::audit_json(r).dump() + "\n";
  }
  corpus::write_dataset(output, synthetic);
  if (!audit.empty()) write_file(audit, audit_lines);
  out << "injected " << synthetic.size() << " caption(s), K=" << cfg.rounds << ", strategy "
      << inject::to_string(cfg.strategy) << ": " << spans << " surviving span(s), " << empty
      << " caption(s) without survivors -> " << output << "\n";
  return kExitOk;
}

void print_report(const eval::EvalReport& report, std::ostream& out, std::ostream& err) {
  out << eval::render_report_table(report);
  std::size_t skipped = 0;
  for (const auto& row : report.samples) {
    if (row.status == eval::RowStatus::skipped) {
      if (++skipped <= 5) err << "skipped " << row.id << ": " << row.error << "\n";
    }
  }
  if (skipped > 5) err << "... " << skipped - 5 << " more skipped sample(s)\n";
}

std::vector<int> parse_rounds(const std::vector<std::string>& items) {
  std::vector<int> out;
  for (const auto& s : items) {
    int k = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), k);
    if (ec != std::errc{} || ptr != s.data() + s.size() || k < 0) {
      throw UsageError("--rounds: '" + s + "' is not a non-negative integer");
    }
    out.push_back(k);
  }
  return out;
}

std::string fmt_rho(const std::optional<double>& r) {
  if (!r) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *r);
  return buf;
}

json rho_json(const std::optional<double>& r) { return r ? json(*r) : json(nullptr); }

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dense hallucination localization benchmark toolkit", "dvb"};
  app.set_version_flag("--version", std::string(eval::kToolkitVersion));
  app.set_config("--config", "", "Config file (key = value; [subcommand] sections)");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Echo the effective configuration to stderr");

  GateFlags gate_flags;
  InjectFlags inject_flags;
  std::size_t concurrency = 1;
  std::string image_root;

  // validate
  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Check a dataset file");
  validate->add_option("dataset", validate_path)->required();

  // stats
  std::string stats_path;
  bool stats_json = false;
  auto* stats = app.add_subcommand("stats", "Per-domain dataset statistics");
  stats->add_option("dataset", stats_path)->required();
  stats->add_flag("--json", stats_json);

  // annotate
  AnnotateFlags annotate_flags;
  auto* annotate = app.add_subcommand("annotate", "Diff generated/corrected pairs into a dataset");
  annotate->add_option("pairs", annotate_flags.input, "TSV (generated<TAB>corrected) or .jsonl")
      ->required();
  annotate->add_option("-o,--output", annotate_flags.output)->required();
  annotate->add_option("--domain", annotate_flags.domain)->capture_default_str();
  annotate->add_option("--id-prefix", annotate_flags.id_prefix)->capture_default_str();

  // inject
  std::string inject_dataset, inject_output, inject_audit;
  auto* inj = app.add_subcommand("inject", "Build a synthetic dataset from clean captions");
  inj->add_option("dataset", inject_dataset)->required();
  inj->add_option("-o,--output", inject_output)->required();
  inj->add_option("--audit", inject_audit, "Per-sample audit log (JSONL)");
  inj->add_option("--image-root", image_root, "Base directory for image paths");
  inj->add_option("--concurrency", concurrency)->check(CLI::PositiveNumber)->capture_default_str();
  inject_flags.attach(inj, true);
  gate_flags.attach(inj);

  // evaluate
  eval::EvalConfig eval_cfg;
  std::string eval_dataset, eval_out;
  bool no_image = false;
  auto* evaluate = app.add_subcommand("evaluate", "Run a model over a dataset and score it");
  evaluate->add_option("--dataset", eval_dataset)->required();
  evaluate->add_option("--model", eval_cfg.model)->required();
  evaluate->add_option("--out-dir", eval_out, "Write report.json, report.txt, transcripts.jsonl");
  evaluate->add_flag("--strict", eval_cfg.strict, "Score unfaithful outputs as empty predictions");
  evaluate->add_flag("--no-image", no_image, "Text-only prompts");
  evaluate->add_flag("--require-image", eval_cfg.prompt.require_image,
                     "Fail samples whose image cannot be read");
  evaluate->add_option("--image-root", image_root);
  evaluate->add_option("--concurrency", concurrency)->check(CLI::PositiveNumber)->capture_default_str();
  gate_flags.attach(evaluate);

  // score
  std::string score_transcripts, score_dataset, score_model = "transcripts", score_out;
  bool score_strict = false;
  auto* score = app.add_subcommand("score", "Score saved transcripts offline");
  score->add_option("--transcripts", score_transcripts)->required();
  score->add_option("--dataset", score_dataset)->required();
  score->add_option("--model", score_model)->capture_default_str();
  score->add_flag("--strict", score_strict);
  score->add_option("--out-dir", score_out);

  // sweep
  std::string sweep_dataset, sweep_json;
  std::vector<std::string> sweep_rounds{"0", "1", "2", "3"};
  std::vector<std::string> sweep_detectors;
  std::vector<std::string> sweep_strategies;
  auto* sweep = app.add_subcommand("sweep", "Round (K) ablation over detector models");
  sweep->add_option("--dataset", sweep_dataset, "Clean captions")->required();
  sweep->add_option("--rounds", sweep_rounds)->delimiter(',')->capture_default_str();
  sweep->add_option("--models", sweep_detectors, "Models evaluated as locators")
      ->delimiter(',')
      ->required();
  sweep->add_option("--strategies", sweep_strategies, "Compare strategies (naive,structured)")
      ->delimiter(',')
      ->check(CLI::IsMember({"naive", "structured"}));
  sweep->add_option("--json", sweep_json, "Also write rows as JSON");
  sweep->add_option("--image-root", image_root);
  sweep->add_option("--concurrency", concurrency)->check(CLI::PositiveNumber)->capture_default_str();
  inject_flags.attach(sweep, false);
  gate_flags.attach(sweep);

  // correlate
  std::vector<std::string> real_reports, synthetic_reports;
  bool correlate_json = false;
  auto* correlate = app.add_subcommand("correlate", "Spearman correlation between two settings");
  correlate->add_option("--real", real_reports, "Reports on real captions")->required();
  correlate->add_option("--synthetic", synthetic_reports, "Reports on synthetic captions")->required();
  correlate->add_flag("--json", correlate_json);

  // report
  std::string report_path, report_out;
  bool report_json = false;
  auto* report = app.add_subcommand("report", "Re-render a JSON report");
  report->add_option("report", report_path)->required();
  report->add_flag("--json", report_json, "Print normalized JSON instead of the table");
  report->add_option("--out-dir", report_out, "Write report.json and report.txt");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (verbose) err << app.config_to_str(true, false);

  try {
    if (*validate) return cmd_validate(validate_path, out, err);
    if (*stats) return cmd_stats(stats_path, stats_json, out);
    if (*annotate) return cmd_annotate(annotate_flags, out);
    if (*inj) {
      const auto cfg = inject_flags.config(gate_flags, image_root);
      return cmd_inject(inject_dataset, inject_output, inject_audit, cfg, gate_flags, concurrency, out);
    }
    if (*evaluate) {
      eval_cfg.dataset = eval_dataset;
      if (!eval_out.empty()) eval_cfg.output_dir = fs::path(eval_out);
      eval_cfg.concurrency = concurrency;
      eval_cfg.prompt.model = eval_cfg.model;
      eval_cfg.prompt.sampling = gate_flags.sampling();
      eval_cfg.prompt.attach_image = !no_image;
      eval_cfg.prompt.image_root = image_root;
      auto gate = gate_flags.make();
      const auto run = eval::evaluate_dataset(eval_cfg, *gate);
      print_report(run.report, out, err);
      return kExitOk;
    }
    if (*score) {
      const auto contents = read_file(score_dataset);
      const auto ds = corpus::parse_dataset(contents);
      const auto transcripts = eval::load_transcripts(score_transcripts);
      const auto rep = eval::score_transcripts(ds.samples, eval::sha256_hex(contents), transcripts,
                                               score_model, score_strict);
      if (!score_out.empty()) eval::emit_report(rep, score_out);
      print_report(rep, out, err);
      return kExitOk;
    }
    if (*sweep) {
      const auto rounds = parse_rounds(sweep_rounds);
      if (rounds.empty()) throw UsageError("--rounds: empty list");
      auto cfg = inject_flags.config(gate_flags, image_root);
      eval::PromptOptions prompt;
      prompt.sampling = gate_flags.sampling();
      prompt.image_root = image_root;
      const auto clean = corpus::load_dataset(sweep_dataset).samples;
      auto gate = gate_flags.make();
      std::vector<eval::SweepRow> rows;
      if (sweep_strategies.empty()) {
        rows = eval::sweep_rounds(clean, rounds, sweep_detectors, cfg, *gate, prompt, concurrency);
      } else {
        std::vector<inject::Strategy> strategies;
        for (const auto& s : sweep_strategies) strategies.push_back(*inject::parse_strategy(s));
        rows = eval::compare_strategies(clean, strategies, rounds, sweep_detectors, cfg, *gate, prompt,
                                        concurrency);
      }
      out << eval::render_sweep_table(rows);
      if (!sweep_json.empty()) write_file(sweep_json, eval::sweep_to_json(rows).dump(2) + "\n");
      return kExitOk;
    }
    if (*correlate) {
      std::vector<eval::EvalReport> real, synthetic;
      for (const auto& p : real_reports) real.push_back(eval::load_report(p));
      for (const auto& p : synthetic_reports) synthetic.push_back(eval::load_report(p));
      const auto c = eval::correlate_settings(real, synthetic);
      if (correlate_json) {
        out << json{{"models", c.models},
                    {"precision", rho_json(c.precision)},
                    {"recall", rho_json(c.recall)},
                    {"f1", rho_json(c.f1)}}
                   .dump(2)
            << "\n";
      } else {
        out << "models: " << c.models.size() << "\n"
            << "rho(P_tok)  = " << fmt_rho(c.precision) << "\n"
            << "rho(R_tok)  = " << fmt_rho(c.recall) << "\n"
            << "rho(F1_tok) = " << fmt_rho(c.f1) << "\n";
      }
      return kExitOk;
    }
    if (*report) {
      const auto rep = eval::load_report(report_path);
      if (!report_out.empty()) eval::emit_report(rep, report_out);
      if (report_json) {
        out << eval::report_to_json(rep).dump(2) << "\n";
      } else {
        out << eval::render_report_table(rep);
      }
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace dvb::cli
