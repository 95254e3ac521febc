#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "vlmtta/adapt_optim.hpp"
#include "vlmtta/embedding_store.hpp"
#include "vlmtta/prediction.hpp"

// Online methods are state machines threaded through a fixed-order stream with
// batch size one: step(state, sample) -> prediction, with `state` mutated in
// place. Each state is owned by exactly one stream runner.

namespace vlmtta {

struct CacheEntry {
  Vec feature;
  double entropy = 0.0;
  std::size_t pseudo_label = 0;
  Vec probs;
};

/// Per-class store that keeps the `capacity` lowest-entropy entries of each
/// class bucket; a full bucket evicts its highest-entropy entry when a better
/// one arrives.
class EntropyCache {
 public:
  EntropyCache() = default;
  EntropyCache(std::size_t num_classes, std::size_t capacity)
      : buckets_(num_classes), capacity_(capacity) {}

  /// Returns true when the entry was stored.
  bool offer(CacheEntry entry);

  std::size_t size() const;
  bool empty() const { return size() == 0; }
  std::size_t capacity() const { return capacity_; }
  const std::vector<std::vector<CacheEntry>>& buckets() const { return buckets_; }
  std::vector<std::vector<CacheEntry>>& buckets() { return buckets_; }

 private:
  std::vector<std::vector<CacheEntry>> buckets_;
  std::size_t capacity_ = 0;
};

/// sum over entries of exp(gamma * (cos(x, key) - 1)) * value(entry), where
/// value is a C-vector chosen by the caller.
template <class ValueFn>
Vec cache_affinity(const Vec& x, const EntropyCache& cache, double gamma, std::size_t classes,
                   ValueFn value);

// ---- TDA -----------------------------------------------------------------

struct TdaConfig {
  std::size_t pos_capacity = 3;
  std::size_t neg_capacity = 2;
  double pos_alpha = 2.0;
  double pos_gamma = 5.0;
  double neg_beta = 0.117;
  double neg_gamma = 1.0;
  // Negative cache admits entries with entropy in [low, high] * ln C.
  double neg_entropy_low = 0.2;
  double neg_entropy_high = 0.5;
  // Negative pseudo-label mask: classes with prob in (mask_low, mask_high).
  double neg_mask_low = 0.03;
  double neg_mask_high = 1.0;
};

struct TdaState {
  EntropyCache positive;
  EntropyCache negative;
  std::uint64_t step_counter = 0;
};

TdaState tda_init(std::size_t num_classes, const TdaConfig& cfg);
Prediction tda_step(TdaState& state, const SampleRecord& sample, const Mat& text_bank,
                    const ScoringRule& rule, const TdaConfig& cfg);

// ---- DMN -----------------------------------------------------------------

struct DmnConfig {
  double alpha = 1.0;
  bool use_aug = true;  // false is the weak-view variant
  std::size_t memory_capacity = 256;
  double selection_fraction = 0.1;
};

struct MemoryItem {
  Vec feature;
  Vec probs;
};

struct DmnState {
  std::deque<MemoryItem> memory;
  std::uint64_t step_counter = 0;
};

/// Row k = normalize(sum_m probs_m[k] * feature_m); all-zero rows stay zero.
Mat dmn_readout(const std::deque<MemoryItem>& memory, Eigen::Index classes, Eigen::Index dim);
/// The feature DMN stores and queries with: the weak view, or the normalized
/// mean of the confident augmented views when `use_aug` is set.
Vec dmn_query_feature(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                      const DmnConfig& cfg);
Prediction dmn_step(DmnState& state, const SampleRecord& sample, const Mat& text_bank,
                    const ScoringRule& rule, const DmnConfig& cfg);

// ---- OnZeta --------------------------------------------------------------

struct OnzetaConfig {
  double label_lr = 0.05;   // lambda: w <- (1 - lambda) w + lambda p
  double proxy_lr = 0.05;   // step on the vision proxies
  double mix = 0.5;         // mu: weight of proxy probabilities
  double temper = 0.5;      // nu: text probs divided by w^nu
};

struct OnzetaState {
  Vec label_distribution;
  Mat proxies;
  std::uint64_t step_counter = 0;
};

OnzetaState onzeta_init(const Mat& text_bank);
Prediction onzeta_step(OnzetaState& state, const SampleRecord& sample, const Mat& text_bank,
                       const ScoringRule& rule, const OnzetaConfig& cfg);

// ---- BoostAdapter --------------------------------------------------------

struct BoostAdapterConfig {
  std::size_t capacity = 3;  // historical entries per class
  double alpha = 2.0;
  double gamma = 5.0;
  double selection_fraction = 0.1;
  bool boosting = true;
};

struct BoostAdapterState {
  EntropyCache historical;
  std::uint64_t step_counter = 0;
};

BoostAdapterState boostadapter_init(std::size_t num_classes, const BoostAdapterConfig& cfg);
/// Boosting entries: confident augmented views of the current sample. They
/// take part in this prediction only and are never persisted.
std::vector<CacheEntry> boosting_entries(const SampleRecord& sample, const Mat& text_bank,
                                         const ScoringRule& rule, double selection_fraction);
Prediction boostadapter_step(BoostAdapterState& state, const SampleRecord& sample,
                             const Mat& text_bank, const ScoringRule& rule,
                             const BoostAdapterConfig& cfg);

// ---- DPE -----------------------------------------------------------------

struct DpeConfig {
  int residual_steps = 1;
  double residual_lr = 0.05;
  double align_weight = 0.5;      // eta
  double mix = 0.5;               // omega: weight of vision-prototype logits
  double update_threshold = 0.6;  // confidence needed to move a vision prototype
  double momentum = 0.9;
};

struct DpeState {
  Mat text_protos;
  Mat vision_protos;
  std::vector<std::uint64_t> counts;
  std::uint64_t step_counter = 0;
};

struct DpeLossGrad {
  double loss = 0.0;
  Mat grad_text;
  Mat grad_vision;
};

/// H(p_mix) + eta * (1 - cos(t'_c, v'_c)) with t' = normalize(T + r_t),
/// v' = normalize(P + r_v), logits_mix = logits(x, t') + omega * scale * cos(x, v').
/// `anchor` is the class c of the alignment term.
DpeLossGrad dpe_loss_and_grad(const Vec& x, const Mat& text_protos, const Mat& vision_protos,
                              const ShiftParameters& text_residual,
                              const ShiftParameters& vision_residual, const ScoringRule& rule,
                              const DpeConfig& cfg, std::size_t anchor);
Vec dpe_mixed_probs(const Vec& x, const Mat& text_protos, const Mat& vision_protos,
                    const ScoringRule& rule, double mix);
DpeState dpe_init(const Mat& text_bank);
Prediction dpe_step(DpeState& state, const SampleRecord& sample, const Mat& text_bank,
                    const ScoringRule& rule, const DpeConfig& cfg);

// ---- ECALP ---------------------------------------------------------------

struct EcalpConfig {
  std::size_t window = 32;
  bool full_stream = false;  // keep every past sample instead of a window
  double alpha = 0.5;
  int iterations = 10;
  std::size_t knn = 8;       // 0 keeps the graph dense
  double gamma = 3.0;
  bool reweight = true;
};

struct EcalpState {
  std::deque<MemoryItem> window;
  std::uint64_t step_counter = 0;
};

/// Per-dimension variance of the class text features, scaled to mean one
/// (all ones when the variance vanishes).
Vec ecalp_dimension_weights(const Mat& text_bank);
/// Degree-normalized kNN affinity S over the rows of `nodes`.
Mat ecalp_affinity(const Mat& nodes, const Vec& dim_weights, double gamma, std::size_t knn);
/// F <- (1 - alpha) Y + alpha S F, started from F = Y.
Mat ecalp_propagate(const Mat& affinity, const Mat& seeds, double alpha, int iterations);
Prediction ecalp_step(EcalpState& state, const SampleRecord& sample, const Mat& text_bank,
                      const ScoringRule& rule, const EcalpConfig& cfg);

// ---- DynaPrompt ----------------------------------------------------------

struct DynaPromptConfig {
  std::size_t capacity = 10;
  double learning_rate = 0.02;
  double selection_fraction = 0.1;
};

struct DynaPromptState {
  std::vector<ShiftParameters> shifts;
  std::vector<std::uint64_t> last_selected_step;
  std::uint64_t step_counter = 0;
};

DynaPromptState dynaprompt_init(const Mat& text_bank);
/// Shifts whose weak-view entropy is <= the buffer median and whose top-1 minus
/// top-2 margin is >= the buffer median.
std::vector<std::size_t> dynaprompt_select(const std::vector<double>& entropies,
                                           const std::vector<double>& margins);
Prediction dynaprompt_step(DynaPromptState& state, const SampleRecord& sample,
                           const Mat& text_bank, const ScoringRule& rule,
                           const DynaPromptConfig& cfg);

// ---- dispatch ------------------------------------------------------------

struct ZeroShotOnlineState {
  std::uint64_t step_counter = 0;
};

using OnlineState = std::variant<ZeroShotOnlineState, TdaState, DmnState, OnzetaState,
                                 BoostAdapterState, DpeState, EcalpState, DynaPromptState>;

struct OnlineConfig {
  TdaConfig tda;
  DmnConfig dmn;
  OnzetaConfig onzeta;
  BoostAdapterConfig boostadapter;
  DpeConfig dpe;
  EcalpConfig ecalp;
  DynaPromptConfig dynaprompt;

  void validate() const;
};

OnlineConfig default_online_config(const std::string& tag);
/// Online tags including the "zero_shot" baseline; "dmn_w" is DMN on weak views.
const std::vector<std::string>& online_method_tags();
bool is_online_method(const std::string& tag);

OnlineState init_online_state(const std::string& tag, const Mat& text_bank,
                              const OnlineConfig& cfg);
Prediction online_step(const std::string& tag, OnlineState& state, const SampleRecord& sample,
                       const Mat& text_bank, const ScoringRule& rule, const OnlineConfig& cfg);

std::uint64_t step_counter(const OnlineState& state);

/// Throws std::logic_error when a capacity bound, a simplex constraint or a
/// unit-norm constraint of the state is violated.
void check_state_invariants(const OnlineState& state, const OnlineConfig& cfg);

/// Snapshot as state.json plus a little-endian float64 blob state.f64.
void save_online_state(const std::string& tag, const OnlineState& state,
                       const std::filesystem::path& dir);
std::pair<std::string, OnlineState> load_online_state(const std::filesystem::path& dir);

// ---- template definitions -------------------------------------------------

template <class ValueFn>
Vec cache_affinity(const Vec& x, const EntropyCache& cache, double gamma, std::size_t classes,
                   ValueFn value) {
  Vec out = Vec::Zero(static_cast<Eigen::Index>(classes));
  for (const auto& bucket : cache.buckets())
    for (const CacheEntry& e : bucket) out += std::exp(gamma * (dot(x, e.feature) - 1.0)) * value(e);
  return out;
}

}  // namespace vlmtta
