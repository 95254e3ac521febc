#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vlmtta/episodic.hpp"
#include "vlmtta/metrics.hpp"
#include "vlmtta/online.hpp"

namespace vlmtta {

enum class RunMode { episodic, online };
enum class TemplateMode { single, ensemble };
enum class ContaminationKind { ood, adversarial };

const char* to_string(RunMode m);
const char* to_string(TemplateMode m);
const char* to_string(ContaminationKind k);
RunMode run_mode_from_string(const std::string& s);
TemplateMode template_mode_from_string(const std::string& s);
ContaminationKind contamination_kind_from_string(const std::string& s);

struct Contamination {
  std::string contaminant_path;
  std::shared_ptr<const EmbeddingBundle> contaminant;  // used instead of the path when set
  double ratio = 0.5;
  ContaminationKind kind = ContaminationKind::adversarial;
};

struct OodDetection {
  double fraction = 0.5;
  std::uint64_t seed = 0;
};

struct ExperimentSpec {
  std::string bundle_path;
  std::shared_ptr<const EmbeddingBundle> bundle;  // used instead of the path when set
  std::string method_tag = "zero_shot";
  RunMode mode = RunMode::episodic;
  EpisodicConfig episodic;  // read when mode == episodic
  OnlineConfig online;      // read when mode == online
  std::uint64_t seed = 0;
  TemplateMode template_mode = TemplateMode::single;
  std::optional<Contamination> contamination;
  std::optional<OodDetection> ood_detection;
  int workers = 1;  // episodic fan-out only

  /// Spec with the method's default config for `mode`.
  static ExperimentSpec make(const std::string& tag, RunMode mode);

  /// Tag known for the mode, configs valid, ratios in range.
  void validate() const;
};

/// Resolved spec: method, mode, template mode, the method's config groups with
/// every default expanded, contamination and OOD settings. Seed and bundle path
/// are included only when `with_identity` is set.
nlohmann::json resolved_spec_json(const ExperimentSpec& spec, bool with_identity = true);

/// FNV-1a over the canonical dump of resolved_spec_json(spec, false), as hex.
std::string config_hash(const ExperimentSpec& spec);

struct LogRow {
  std::string sample_id;
  SampleFlag flag = SampleFlag::clean;
  std::uint32_t label = 0;
  std::size_t hard_label = 0;
  std::optional<double> confidence;
  std::string probs_digest;  // "-" for vote-only predictions
  std::size_t step_index = 0;
  bool evaluated = false;
};

/// One row per processed sample, in processing order.
struct PredictionLog {
  std::vector<LogRow> rows;
};

std::string probs_digest(const Prediction& p);
void write_log_csv(std::ostream& out, const PredictionLog& log);
PredictionLog read_log_csv(std::istream& in);
/// Accuracy over the rows marked evaluated, recomputed from the log alone.
double replay_accuracy(const PredictionLog& log);

struct RunResult {
  MetricReport report;
  PredictionLog log;
};

/// Text bank used for scoring: template 0, or the renormalized template mean.
Mat select_text_bank(const EmbeddingBundle& bundle, TemplateMode mode);

RunResult run_episodic(const ExperimentSpec& spec);
RunResult run_online(const ExperimentSpec& spec);
/// Dispatches on ood_detection first, then on mode.
RunResult run_experiment(const ExperimentSpec& spec);

/// Appends floor(ratio * N) seeded contaminants after the clean samples and
/// interleaves them at seeded random stream positions; clean samples keep
/// their relative stream order and ids.
EmbeddingBundle build_mixed_stream(const EmbeddingBundle& clean, const EmbeddingBundle& contaminant,
                                   double ratio, ContaminationKind kind, std::uint64_t seed);

/// Episodic method over all samples of an ood_split bundle; AUROC of the max
/// softmax probability (ID vs OOD) and accuracy over kept-class samples.
RunResult run_ood_detection(const ExperimentSpec& spec);

}  // namespace vlmtta
