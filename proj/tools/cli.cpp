#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <tuple>

#include "vlmtta/config.hpp"
#include "vlmtta/harness.hpp"
#include "vlmtta/synthetic.hpp"

namespace vlmtta {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] != b[j - 1])});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

void check_method(const std::string& tag, RunMode mode) {
  const bool known = mode == RunMode::episodic ? is_episodic_method(tag) : is_online_method(tag);
  if (known) return;
  if (is_episodic_method(tag) || is_online_method(tag)) {
    ExperimentSpec probe = ExperimentSpec::make(tag, mode);
    probe.bundle_path = "-";
    probe.validate();  // throws the mode mismatch explanation
  }
  const auto& tags = mode == RunMode::episodic ? episodic_method_tags() : online_method_tags();
  std::string msg = "unknown method '" + tag + "' for mode " + to_string(mode) + ".";
  std::string best;
  std::size_t best_d = 3;
  for (const std::string& t : tags) {
    const std::size_t d = edit_distance(tag, t);
    if (d < best_d) {
      best_d = d;
      best = t;
    }
  }
  if (!best.empty()) msg += " Did you mean '" + best + "'?";
  msg += " Available:";
  for (const std::string& t : tags) msg += " " + t;
  throw ValidationError(msg);
}

json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ValidationError("--set expects group.key=value, got '" + assignment + "'");
  const std::string group = assignment.substr(0, dot);
  const std::string key = assignment.substr(dot + 1, eq - dot - 1);
  config[group][key] = parse_override_value(assignment.substr(eq + 1));
}

fs::path resolve_path(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::string get_string(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ValidationError(where + " is missing '" + key + "'");
  if (!j.at(key).is_string()) throw ValidationError(where + "." + key + " must be a string");
  return j.at(key).get<std::string>();
}

template <class T>
T get_number(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw ValidationError(where + "." + key + " must be a number");
  return j.at(key).get<T>();
}

struct SpecInputs {
  std::string bundle;
  std::string method;
  std::string mode = "episodic";
  json config = json::object();
  std::uint64_t seed = 0;
  std::string template_mode = "single";
  std::optional<Contamination> contamination;
  std::optional<OodDetection> ood;
};

ExperimentSpec build_spec(const SpecInputs& in, const std::vector<std::string>& overrides,
                          int workers) {
  const RunMode mode = run_mode_from_string(in.mode);
  check_method(in.method, mode);
  json config = in.config;
  for (const std::string& o : overrides) apply_override(config, o);
  ExperimentSpec spec = ExperimentSpec::make(in.method, mode);
  spec.bundle_path = in.bundle;
  if (mode == RunMode::episodic)
    spec.episodic = episodic_config_from_json(in.method, config);
  else
    spec.online = online_config_from_json(in.method, config);
  spec.seed = in.seed;
  spec.template_mode = template_mode_from_string(in.template_mode);
  spec.contamination = in.contamination;
  spec.ood_detection = in.ood;
  spec.workers = workers;
  spec.validate();
  return spec;
}

SpecInputs spec_inputs_from_json(const json& e, const fs::path& base, const std::string& where) {
  if (!e.is_object()) throw ValidationError(where + " must be an object");
  static const std::set<std::string> keys = {"bundle", "method",        "mode",          "config",
                                             "seed",   "template_mode", "contamination", "ood_detection"};
  for (const auto& item : e.items())
    if (!keys.count(item.key())) throw ValidationError("unknown key '" + where + "." + item.key() + "'");
  SpecInputs in;
  in.bundle = resolve_path(base, get_string(e, "bundle", where)).string();
  in.method = get_string(e, "method", where);
  if (e.contains("mode")) in.mode = get_string(e, "mode", where);
  if (e.contains("template_mode")) in.template_mode = get_string(e, "template_mode", where);
  in.seed = get_number<std::uint64_t>(e, "seed", 0, where);
  if (e.contains("config")) {
    const json& c = e.at("config");
    if (c.is_string())
      in.config = read_json_file(resolve_path(base, c.get<std::string>()).string());
    else
      in.config = c;
  }
  if (e.contains("contamination")) {
    const json& c = e.at("contamination");
    const std::string w = where + ".contamination";
    if (!c.is_object()) throw ValidationError(w + " must be an object");
    Contamination cont;
    cont.contaminant_path = resolve_path(base, get_string(c, "contaminant", w)).string();
    cont.ratio = get_number<double>(c, "ratio", cont.ratio, w);
    if (c.contains("kind")) cont.kind = contamination_kind_from_string(get_string(c, "kind", w));
    in.contamination = cont;
  }
  if (e.contains("ood_detection")) {
    const json& o = e.at("ood_detection");
    const std::string w = where + ".ood_detection";
    if (!o.is_object()) throw ValidationError(w + " must be an object");
    OodDetection ood;
    ood.fraction = get_number<double>(o, "fraction", ood.fraction, w);
    ood.seed = get_number<std::uint64_t>(o, "seed", ood.seed, w);
    in.ood = ood;
  }
  return in;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw FormatError("cannot write " + p.string());
  return f;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw FormatError("cannot create directory " + dir.string());
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// ---- subcommands ------------------------------------------------------------

int cmd_generate(const std::string& spec_file, const std::string& out_dir, std::ostream& out) {
  const SynthSpec spec = synth_spec_from_json(read_json_file(spec_file));
  const EmbeddingBundle b = generate_synthetic(spec);
  save_bundle(b, out_dir);
  out << "bundle " << b.dataset_name << ": classes=" << b.num_classes() << " dim=" << b.dim
      << " samples=" << b.num_samples() << " views=" << b.views_per_sample()
      << " templates=" << b.num_templates() << " -> " << out_dir << "\n";
  return kExitOk;
}

struct RunOptions {
  std::string manifest;
  SpecInputs single;
  std::string config_file;
  std::string contaminant;
  double ratio = 0.5;
  std::string kind = "adversarial";
  double ood_fraction = 0.0;
  std::uint64_t ood_seed = 0;
  std::vector<std::string> overrides;
  std::string out;
  std::string format = "csv";
  int workers = 1;
  bool seed_given = false;
};

int cmd_run(const RunOptions& o, std::ostream& out, std::ostream& err) {
  std::vector<ExperimentSpec> specs;
  std::string out_dir = o.out;
  std::string format = o.format;
  if (!o.manifest.empty()) {
    const json m = read_json_file(o.manifest);
    if (!m.is_object() || !m.contains("experiments") || !m.at("experiments").is_array())
      throw ValidationError("manifest needs an 'experiments' array");
    for (const auto& item : m.items())
      if (item.key() != "experiments" && item.key() != "out" && item.key() != "format")
        throw ValidationError("unknown manifest key '" + item.key() + "'");
    const fs::path base = fs::path(o.manifest).parent_path();
    if (out_dir.empty() && m.contains("out"))
      out_dir = resolve_path(base, get_string(m, "out", "manifest")).string();
    if (m.contains("format")) format = get_string(m, "format", "manifest");
    std::size_t i = 0;
    for (const json& e : m.at("experiments")) {
      SpecInputs in = spec_inputs_from_json(e, base, "experiments[" + std::to_string(i++) + "]");
      if (o.seed_given) in.seed = o.single.seed;
      specs.push_back(build_spec(in, o.overrides, o.workers));
    }
  } else {
    if (o.single.bundle.empty() || o.single.method.empty())
      throw ValidationError("run needs --manifest, or --bundle together with --method");
    SpecInputs in = o.single;
    if (!o.config_file.empty()) in.config = read_json_file(o.config_file);
    if (!o.contaminant.empty())
      in.contamination = Contamination{o.contaminant, nullptr, o.ratio,
                                       contamination_kind_from_string(o.kind)};
    if (o.ood_fraction != 0.0) in.ood = OodDetection{o.ood_fraction, o.ood_seed};
    specs.push_back(build_spec(in, o.overrides, o.workers));
  }
  if (out_dir.empty()) throw ValidationError("run needs --out");
  if (format != "csv" && format != "markdown")
    throw ValidationError("format must be 'csv' or 'markdown', got '" + format + "'");
  if (specs.empty()) throw ValidationError("manifest lists no experiments");

  std::set<std::tuple<std::string, std::string, std::string, std::uint64_t>> seen;
  for (const ExperimentSpec& s : specs)
    if (!seen.insert({s.method_tag, s.bundle_path, config_hash(s), s.seed}).second)
      throw ValidationError("manifest repeats (method, bundle, config, seed) = (" + s.method_tag +
                            ", " + s.bundle_path + ", " + config_hash(s) + ", " +
                            std::to_string(s.seed) + ")");

  ensure_dir(out_dir);
  std::vector<MetricReport> reports;
  json resolved = json::array();
  int status = kExitOk;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const ExperimentSpec& s = specs[i];
    char name[64];
    std::snprintf(name, sizeof name, "%03zu_%s", i, s.method_tag.c_str());
    const fs::path run_dir = fs::path(out_dir) / "runs" / name;
    resolved.push_back(resolved_spec_json(s));
    try {
      const RunResult r = run_experiment(s);
      ensure_dir(run_dir);
      {
        auto f = open_out(run_dir / "predictions.csv");
        write_log_csv(f, r.log);
      }
      {
        auto f = open_out(run_dir / "resolved_config.json");
        f << resolved_spec_json(s).dump(2) << "\n";
      }
      reports.push_back(r.report);
      out << s.method_tag << " " << r.report.bundle_name << " seed=" << s.seed
          << " accuracy=" << fixed4(r.report.accuracy) << " n=" << r.report.n_evaluated;
      if (r.report.ece) out << " ece=" << fixed4(*r.report.ece);
      if (r.report.auroc) out << " auroc=" << fixed4(*r.report.auroc);
      out << "\n";
    } catch (const ValidationError& e) {
      err << "error: experiment " << i << " (" << s.method_tag << "): " << e.what() << "\n";
      status = std::max(status, kExitUsage);
    } catch (const std::exception& e) {
      err << "error: experiment " << i << " (" << s.method_tag << "): " << e.what() << "\n";
      status = kExitRuntime;
    }
  }
  {
    auto f = open_out(fs::path(out_dir) / "report.csv");
    write_reports_csv(f, reports);
  }
  {
    auto f = open_out(fs::path(out_dir) / "resolved_config.json");
    f << resolved.dump(2) << "\n";
  }
  if (format == "markdown" && !reports.empty()) {
    auto f = open_out(fs::path(out_dir) / "report.md");
    f << render_markdown_table(reports);
  }
  return status;
}

int cmd_mix(const std::string& clean, const std::string& contaminant, double ratio,
            const std::string& kind, std::uint64_t seed, const std::string& out_dir,
            std::ostream& out) {
  const ContaminationKind k = contamination_kind_from_string(kind);
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ValidationError("--ratio must lie in [0, 1]");
  const EmbeddingBundle mixed =
      build_mixed_stream(load_bundle(clean), load_bundle(contaminant), ratio, k, seed);
  save_bundle(mixed, out_dir);
  std::size_t n_cont = 0;
  for (const SampleRecord& s : mixed.samples) n_cont += s.flag != SampleFlag::clean;
  out << "mixed stream " << mixed.dataset_name << ": samples=" << mixed.num_samples()
      << " contaminants=" << n_cont << " kind=" << kind << " -> " << out_dir << "\n";
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& format, std::ostream& out) {
  if (inputs.empty()) throw ValidationError("report needs at least one input");
  if (format != "csv" && format != "markdown")
    throw ValidationError("--format must be 'csv' or 'markdown', got '" + format + "'");
  std::vector<MetricReport> all;
  for (const std::string& path : inputs) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    const auto rows = read_reports_csv(in);
    all.insert(all.end(), rows.begin(), rows.end());
  }
  if (format == "csv") {
    write_reports_csv(out, all);
  } else {
    if (all.empty()) throw ValidationError("report inputs contain no rows");
    out << render_markdown_table(all);
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Test-time adaptation benchmark over precomputed embeddings"};
  app.require_subcommand(1);

  std::string spec_file, gen_out;
  auto* gen = app.add_subcommand("generate", "Write a seeded synthetic bundle");
  gen->add_option("--spec", spec_file, "Synthetic spec (JSON)")->required();
  gen->add_option("--out", gen_out, "Output bundle directory")->required();

  RunOptions ro;
  auto* run = app.add_subcommand("run", "Run experiments and write reports");
  run->add_option("--manifest", ro.manifest, "Manifest of experiments (JSON)");
  run->add_option("--bundle", ro.single.bundle, "Bundle directory");
  run->add_option("--method", ro.single.method, "Method tag");
  run->add_option("--mode", ro.single.mode, "episodic or online");
  run->add_option("--config", ro.config_file, "Method config (JSON)");
  auto* seed_opt = run->add_option("--seed", ro.single.seed, "Global seed");
  run->add_option("--template-mode", ro.single.template_mode, "single or ensemble");
  run->add_option("--contaminant", ro.contaminant, "Contaminant bundle to mix into the stream");
  run->add_option("--ratio", ro.ratio, "Contaminants per clean sample");
  run->add_option("--kind", ro.kind, "ood or adversarial");
  run->add_option("--ood-fraction", ro.ood_fraction, "Run OOD detection discarding this class fraction");
  run->add_option("--ood-seed", ro.ood_seed, "Seed of the OOD class split");
  run->add_option("--set", ro.overrides, "Config override group.key=value (repeatable)");
  run->add_option("--out", ro.out, "Output directory");
  run->add_option("--format", ro.format, "csv or markdown");
  run->add_option("--workers", ro.workers, "Episodic worker threads");

  std::string mix_clean, mix_cont, mix_kind, mix_out;
  double mix_ratio = 0.0;
  std::uint64_t mix_seed = 0;
  auto* mix = app.add_subcommand("mix", "Interleave contaminants into a clean stream");
  mix->add_option("--clean", mix_clean, "Clean bundle")->required();
  mix->add_option("--contaminant", mix_cont, "Contaminant bundle")->required();
  mix->add_option("--ratio", mix_ratio, "Contaminants per clean sample")->required();
  mix->add_option("--kind", mix_kind, "ood or adversarial")->required();
  mix->add_option("--seed", mix_seed, "Mixing seed");
  mix->add_option("--out", mix_out, "Output bundle directory")->required();

  std::vector<std::string> rep_inputs;
  std::string rep_format = "csv";
  auto* rep = app.add_subcommand("report", "Merge report CSVs or render a table");
  rep->add_option("--inputs", rep_inputs, "Report CSV files")->required();
  rep->add_option("--format", rep_format, "csv or markdown");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_generate(spec_file, gen_out, out);
    if (*run) {
      ro.seed_given = seed_opt->count() > 0;
      return cmd_run(ro, out, err);
    }
    if (*mix) return cmd_mix(mix_clean, mix_cont, mix_ratio, mix_kind, mix_seed, mix_out, out);
    if (*rep) return cmd_report(rep_inputs, rep_format, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace vlmtta
