#include "vlmtta/harness.hpp"

#include <atomic>
#include <cstdio>
#include <exception>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "vlmtta/config.hpp"
#include "vlmtta/rng.hpp"
#include "vlmtta/scoring.hpp"

namespace vlmtta {

using nlohmann::json;

const char* to_string(RunMode m) { return m == RunMode::online ? "online" : "episodic"; }
const char* to_string(TemplateMode m) { return m == TemplateMode::ensemble ? "ensemble" : "single"; }
const char* to_string(ContaminationKind k) {
  return k == ContaminationKind::ood ? "ood" : "adversarial";
}

RunMode run_mode_from_string(const std::string& s) {
  if (s == "episodic") return RunMode::episodic;
  if (s == "online") return RunMode::online;
  throw ValidationError("mode must be 'episodic' or 'online', got '" + s + "'");
}

TemplateMode template_mode_from_string(const std::string& s) {
  if (s == "single") return TemplateMode::single;
  if (s == "ensemble") return TemplateMode::ensemble;
  throw ValidationError("template_mode must be 'single' or 'ensemble', got '" + s + "'");
}

ContaminationKind contamination_kind_from_string(const std::string& s) {
  if (s == "ood") return ContaminationKind::ood;
  if (s == "adversarial") return ContaminationKind::adversarial;
  throw ValidationError("contamination kind must be 'ood' or 'adversarial', got '" + s + "'");
}

ExperimentSpec ExperimentSpec::make(const std::string& tag, RunMode mode) {
  ExperimentSpec s;
  s.method_tag = tag;
  s.mode = mode;
  if (mode == RunMode::episodic && is_episodic_method(tag)) s.episodic = default_episodic_config(tag);
  if (mode == RunMode::online && is_online_method(tag)) s.online = default_online_config(tag);
  return s;
}

void ExperimentSpec::validate() const {
  if (mode == RunMode::episodic) {
    if (!is_episodic_method(method_tag)) {
      if (is_online_method(method_tag))
        throw ValidationError("method '" + method_tag +
                              "' carries state across samples and needs mode=online");
      throw ValidationError("unknown method '" + method_tag + "'");
    }
    episodic.validate();
  } else {
    if (!is_online_method(method_tag)) {
      if (is_episodic_method(method_tag))
        throw ValidationError("method '" + method_tag +
                              "' adapts each sample independently and needs mode=episodic");
      throw ValidationError("unknown method '" + method_tag + "'");
    }
    online.validate();
    if (method_tag == "dmn_w" && online.dmn.use_aug)
      throw ValidationError("dmn_w requires dmn.use_aug = false");
  }
  if (!bundle && bundle_path.empty()) throw ValidationError("experiment has no bundle");
  if (contamination) {
    if (!(contamination->ratio >= 0.0 && contamination->ratio <= 1.0))
      throw ValidationError("contamination ratio must lie in [0, 1]");
    if (!contamination->contaminant && contamination->contaminant_path.empty())
      throw ValidationError("contamination has no contaminant bundle");
  }
  if (ood_detection) {
    if (mode != RunMode::episodic)
      throw ValidationError("OOD detection runs episodic methods only");
    if (!(ood_detection->fraction > 0.0 && ood_detection->fraction < 1.0))
      throw ValidationError("OOD detection needs a fraction in (0, 1); AUROC is undefined otherwise");
    if (contamination) throw ValidationError("OOD detection cannot be combined with contamination");
  }
  if (workers < 1) throw ValidationError("workers must be >= 1");
}

json resolved_spec_json(const ExperimentSpec& spec, bool with_identity) {
  json j;
  j["method"] = spec.method_tag;
  j["mode"] = to_string(spec.mode);
  j["template_mode"] = to_string(spec.template_mode);
  j["config"] = spec.mode == RunMode::episodic
                    ? episodic_config_to_json(spec.method_tag, spec.episodic)
                    : online_config_to_json(spec.method_tag, spec.online);
  if (spec.contamination) {
    j["contamination"] = {{"ratio", spec.contamination->ratio},
                          {"kind", to_string(spec.contamination->kind)}};
    if (with_identity) j["contamination"]["contaminant"] = spec.contamination->contaminant_path;
  }
  if (spec.ood_detection)
    j["ood_detection"] = {{"fraction", spec.ood_detection->fraction},
                          {"seed", spec.ood_detection->seed}};
  if (with_identity) {
    j["bundle"] = spec.bundle_path;
    j["seed"] = spec.seed;
  }
  return j;
}

std::string config_hash(const ExperimentSpec& spec) {
  const std::uint64_t h = fnv1a64(resolved_spec_json(spec, false).dump());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- logs -----------------------------------------------------------------

std::string probs_digest(const Prediction& p) {
  if (!p.probs) return "-";
  const Vec& v = *p.probs;
  const std::string_view bytes(reinterpret_cast<const char*>(v.data()),
                               static_cast<std::size_t>(v.size()) * sizeof(double));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

void write_log_csv(std::ostream& out, const PredictionLog& log) {
  out << "step_index,sample_id,flag,label,hard_label,confidence,probs_digest,evaluated\n";
  char buf[32];
  for (const LogRow& r : log.rows) {
    out << r.step_index << ',' << r.sample_id << ',' << to_string(r.flag) << ',' << r.label << ','
        << r.hard_label << ',';
    if (r.confidence) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.confidence);
      out << buf;
    }
    out << ',' << r.probs_digest << ',' << (r.evaluated ? 1 : 0) << '\n';
  }
}

PredictionLog read_log_csv(std::istream& in) {
  PredictionLog log;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("prediction log is empty");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 8) throw FormatError("prediction log row has " + std::to_string(f.size()) + " fields");
    try {
      LogRow r;
      r.step_index = std::stoull(f[0]);
      r.sample_id = f[1];
      r.flag = sample_flag_from_string(f[2]);
      r.label = static_cast<std::uint32_t>(std::stoul(f[3]));
      r.hard_label = std::stoull(f[4]);
      if (!f[5].empty()) r.confidence = std::stod(f[5]);
      r.probs_digest = f[6];
      r.evaluated = f[7] == "1";
      log.rows.push_back(std::move(r));
    } catch (const std::invalid_argument&) {
      throw FormatError("malformed prediction log row: " + line);
    } catch (const std::out_of_range&) {
      throw FormatError("malformed prediction log row: " + line);
    }
  }
  return log;
}

double replay_accuracy(const PredictionLog& log) {
  std::size_t n = 0, correct = 0;
  for (const LogRow& r : log.rows) {
    if (!r.evaluated) continue;
    ++n;
    correct += r.hard_label == r.label;
  }
  if (n == 0) throw ValidationError("log has no evaluated rows");
  return static_cast<double>(correct) / static_cast<double>(n);
}

// ---- runners ----------------------------------------------------------------

Mat select_text_bank(const EmbeddingBundle& bundle, TemplateMode mode) {
  if (bundle.text_features.empty()) throw ValidationError("bundle has no text features");
  if (mode == TemplateMode::single) return bundle.text_features.front();
  return ensemble_templates(bundle.text_features);
}

namespace {

std::shared_ptr<const EmbeddingBundle> obtain(const std::shared_ptr<const EmbeddingBundle>& mem,
                                              const std::string& path) {
  if (mem) return mem;
  return std::make_shared<const EmbeddingBundle>(load_bundle(path));
}

// The bundle a spec actually runs on: the clean bundle, or the mixed stream.
EmbeddingBundle resolve_bundle(const ExperimentSpec& spec) {
  const auto clean = obtain(spec.bundle, spec.bundle_path);
  if (!spec.contamination) return *clean;
  const auto cont = obtain(spec.contamination->contaminant, spec.contamination->contaminant_path);
  return build_mixed_stream(*clean, *cont, spec.contamination->ratio, spec.contamination->kind,
                            spec.seed);
}

bool counts_for_accuracy(const SampleRecord& s, bool contaminated) {
  return contaminated ? s.flag == SampleFlag::clean : s.flag != SampleFlag::ood;
}

std::vector<Prediction> predict_all(const ExperimentSpec& spec, const EmbeddingBundle& bundle,
                                    const Mat& bank) {
  const std::size_t n = bundle.samples.size();
  std::vector<Prediction> preds(n);
  std::atomic<std::size_t> next{0};
  const int workers = std::max(1, std::min<int>(spec.workers, static_cast<int>(n)));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  auto work = [&](int w) {
    try {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) break;
        const SampleRecord& s = bundle.samples[i];
        preds[i] = run_episodic_method(spec.method_tag, s, bank, bundle.scoring, spec.episodic,
                                       derive_seed(spec.seed, s.id));
      }
    } catch (...) {
      errors[static_cast<std::size_t>(w)] = std::current_exception();
      next.store(n);
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (std::thread& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return preds;
}

LogRow make_row(const SampleRecord& s, const Prediction& p, std::size_t step, bool evaluated) {
  LogRow r;
  r.sample_id = s.id;
  r.flag = s.flag;
  r.label = s.label;
  r.hard_label = p.hard_label;
  r.confidence = p.confidence;
  r.probs_digest = probs_digest(p);
  r.step_index = step;
  r.evaluated = evaluated;
  return r;
}

MetricReport summarize(const ExperimentSpec& spec, const EmbeddingBundle& bundle,
                       const std::vector<const SampleRecord*>& samples,
                       const std::vector<Prediction>& preds, std::size_t num_classes) {
  std::vector<std::uint32_t> labels;
  std::vector<std::string> ids;
  for (const SampleRecord* s : samples) {
    labels.push_back(s->label);
    ids.push_back(s->id);
  }
  MetricReport r = evaluate(preds, labels, ids, num_classes);
  r.method_tag = spec.method_tag;
  r.bundle_name = bundle.dataset_name;
  r.config_hash = config_hash(spec);
  r.seed = spec.seed;
  return r;
}

}  // namespace

RunResult run_episodic(const ExperimentSpec& spec) {
  spec.validate();
  if (spec.mode != RunMode::episodic) throw ValidationError("run_episodic needs mode=episodic");
  const EmbeddingBundle bundle = resolve_bundle(spec);
  const Mat bank = select_text_bank(bundle, spec.template_mode);
  const std::vector<Prediction> preds = predict_all(spec, bundle, bank);

  RunResult out;
  std::vector<const SampleRecord*> eval_samples;
  std::vector<Prediction> eval_preds;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const SampleRecord& s = bundle.samples[i];
    const bool eval = counts_for_accuracy(s, spec.contamination.has_value());
    out.log.rows.push_back(make_row(s, preds[i], i, eval));
    if (eval) {
      eval_samples.push_back(&s);
      eval_preds.push_back(preds[i]);
    }
  }
  out.report = summarize(spec, bundle, eval_samples, eval_preds, static_cast<std::size_t>(bank.rows()));
  return out;
}

RunResult run_online(const ExperimentSpec& spec) {
  spec.validate();
  if (spec.mode != RunMode::online) throw ValidationError("run_online needs mode=online");
  const EmbeddingBundle bundle = resolve_bundle(spec);
  if (!bundle.has_stream_order)
    throw ValidationError("bundle '" + bundle.dataset_name + "' has no stream order; online mode needs one");
  const Mat bank = select_text_bank(bundle, spec.template_mode);
  OnlineState state = init_online_state(spec.method_tag, bank, spec.online);

  RunResult out;
  std::vector<const SampleRecord*> eval_samples;
  std::vector<Prediction> eval_preds;
  std::size_t step = 0;
  for (std::size_t i : bundle.stream_sequence()) {
    const SampleRecord& s = bundle.samples[i];
    Prediction p = online_step(spec.method_tag, state, s, bank, bundle.scoring, spec.online);
    const bool eval = counts_for_accuracy(s, spec.contamination.has_value());
    out.log.rows.push_back(make_row(s, p, step++, eval));
    if (eval) {
      eval_samples.push_back(&s);
      eval_preds.push_back(std::move(p));
    }
  }
  out.report = summarize(spec, bundle, eval_samples, eval_preds, static_cast<std::size_t>(bank.rows()));
  return out;
}

RunResult run_experiment(const ExperimentSpec& spec) {
  if (spec.ood_detection) return run_ood_detection(spec);
  return spec.mode == RunMode::online ? run_online(spec) : run_episodic(spec);
}

EmbeddingBundle build_mixed_stream(const EmbeddingBundle& clean, const EmbeddingBundle& contaminant,
                                   double ratio, ContaminationKind kind, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ValidationError("mixing ratio must lie in [0, 1]");
  if (contaminant.dim != clean.dim)
    throw ValidationError("contaminant dimension " + std::to_string(contaminant.dim) +
                          " differs from clean dimension " + std::to_string(clean.dim));
  if (kind == ContaminationKind::adversarial && contaminant.num_classes() != clean.num_classes())
    throw ValidationError("adversarial contaminants must share the clean class space");
  const std::size_t N = clean.samples.size();
  const auto K = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(N)));
  if (K > contaminant.samples.size())
    throw ValidationError("contaminant bundle has " + std::to_string(contaminant.samples.size()) +
                          " samples, " + std::to_string(K) + " needed");
  if (K > 0 && contaminant.views_per_sample() != clean.views_per_sample())
    throw ValidationError("contaminant and clean bundles differ in views per sample");

  Rng rng(seed);
  std::vector<std::size_t> pick(contaminant.samples.size());
  std::iota(pick.begin(), pick.end(), std::size_t{0});
  rng.shuffle(pick);
  pick.resize(K);

  std::vector<std::size_t> slots(N + K);
  std::iota(slots.begin(), slots.end(), std::size_t{0});
  rng.shuffle(slots);
  std::vector<bool> is_contaminant_slot(N + K, false);
  for (std::size_t j = 0; j < K; ++j) is_contaminant_slot[slots[j]] = true;

  EmbeddingBundle out = clean;
  out.has_stream_order = true;
  for (std::size_t j = 0; j < K; ++j) {
    SampleRecord s = contaminant.samples[pick[j]];
    s.id = sample_id(N + j);
    s.flag = kind == ContaminationKind::ood ? SampleFlag::ood : SampleFlag::adversarial;
    out.samples.push_back(std::move(s));
  }
  const std::vector<std::size_t> clean_order =
      clean.has_stream_order ? clean.stream_sequence() : [&] {
        std::vector<std::size_t> v(N);
        std::iota(v.begin(), v.end(), std::size_t{0});
        return v;
      }();
  std::size_t next_clean = 0, next_cont = 0;
  for (std::size_t pos = 0; pos < N + K; ++pos) {
    const std::size_t idx = is_contaminant_slot[pos] ? N + next_cont++ : clean_order[next_clean++];
    out.samples[idx].stream_position = static_cast<std::uint32_t>(pos);
  }
  out.validate(kLoadNormTolerance);
  return out;
}

RunResult run_ood_detection(const ExperimentSpec& spec) {
  spec.validate();
  if (!spec.ood_detection) throw ValidationError("spec has no OOD detection settings");
  if (spec.method_tag == "zero")
    throw ValidationError("method 'zero' produces no confidence; OOD detection needs max softmax scores");
  const auto source = obtain(spec.bundle, spec.bundle_path);
  const OodSplit split = ood_split(*source, spec.ood_detection->fraction, spec.ood_detection->seed);
  const EmbeddingBundle& bundle = split.bundle;
  const Mat bank = select_text_bank(bundle, spec.template_mode);
  const std::vector<Prediction> preds = predict_all(spec, bundle, bank);

  RunResult out;
  std::vector<const SampleRecord*> id_samples;
  std::vector<Prediction> id_preds;
  std::vector<double> id_scores, ood_scores;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const SampleRecord& s = bundle.samples[i];
    const bool id = s.flag != SampleFlag::ood;
    out.log.rows.push_back(make_row(s, preds[i], i, id));
    if (!preds[i].confidence)
      throw ValidationError("method '" + spec.method_tag + "' produced a prediction without confidence");
    (id ? id_scores : ood_scores).push_back(*preds[i].confidence);
    if (id) {
      id_samples.push_back(&s);
      id_preds.push_back(preds[i]);
    }
  }
  out.report = summarize(spec, bundle, id_samples, id_preds, static_cast<std::size_t>(bank.rows()));
  out.report.auroc = auroc(id_scores, ood_scores);
  return out;
}

}  // namespace vlmtta
