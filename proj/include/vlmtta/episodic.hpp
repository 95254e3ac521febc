#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlmtta/adapt_optim.hpp"
#include "vlmtta/embedding_store.hpp"
#include "vlmtta/prediction.hpp"
#include "vlmtta/rng.hpp"

namespace vlmtta {

enum class BandwidthMode { median_pairwise, fixed };
enum class ZeroSelection { msp, entropy };

struct MtaConfig {
  int iterations = 5;
  BandwidthMode bandwidth_mode = BandwidthMode::median_pairwise;
  double fixed_bandwidth = 0.5;  // used when bandwidth_mode == fixed
};

struct RlcfConfig {
  int samples_per_step = 3;  // K classes drawn per step, without replacement
  // Only the mean baseline exists; the field keeps configs self-describing.
  std::string reward_baseline = "mean";
};

struct RtptConfig {
  bool ensemble = true;
};

struct ZeroConfig {
  ZeroSelection selection = ZeroSelection::msp;
};

struct EpisodicConfig {
  OptimConfig optim;
  LossSpec loss;
  MtaConfig mta;
  RlcfConfig rlcf;
  RtptConfig rtpt;
  ZeroConfig zero;

  void validate() const;
};

/// Defaults for one method tag (the adaptation loss kind is implied by the tag).
EpisodicConfig default_episodic_config(const std::string& tag);

/// Episodic tags including the "zero_shot" baseline.
const std::vector<std::string>& episodic_method_tags();
bool is_episodic_method(const std::string& tag);

Prediction zero_shot_predict(const SampleRecord& sample, const Mat& text_bank,
                             const ScoringRule& rule);

Prediction tpt_adapt(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                     const EpisodicConfig& cfg);
Prediction ctpt_adapt(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                      const EpisodicConfig& cfg);
Prediction ttl_adapt(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                     const EpisodicConfig& cfg);
Prediction rtpt_adapt(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                      const EpisodicConfig& cfg);
Prediction mta_adapt(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                     const EpisodicConfig& cfg);
Prediction zero_adapt(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                      const EpisodicConfig& cfg);
Prediction tps_adapt(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                     const EpisodicConfig& cfg);
Prediction rlcf_adapt(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                      const EpisodicConfig& cfg, std::uint64_t seed);

/// Dispatch by tag. `seed` is only consumed by stochastic methods (RLCF).
Prediction run_episodic_method(const std::string& tag, const SampleRecord& sample,
                               const Mat& text_bank, const ScoringRule& rule,
                               const EpisodicConfig& cfg, std::uint64_t seed);

// ---- pieces exposed for testing -------------------------------------------

struct MeanShiftResult {
  Vec mode;
  Vec inlierness;  // weights at the final mode, sum to 1
  double bandwidth = 0.0;
  bool degenerate = false;
};

/// Median of the V(V-1)/2 pairwise Euclidean distances between rows.
double median_pairwise_distance(const Mat& views);

/// Gaussian-kernel mode seeking started from row 0:
///   alpha_i = k(‖m - v_i‖ / h) / sum_j k(‖m - v_j‖ / h),  m <- normalize(sum_i alpha_i v_i)
MeanShiftResult mean_shift_mode(const Mat& views, const MtaConfig& cfg);

/// Reliability weights w_i ∝ exp(-H(p_i)) * mean_j cos(p_i, p_j) over rows of
/// `probs`, normalized to sum to one.
Vec reliability_weights(const Mat& probs);

/// Plurality over per-row argmaxes, ties to the lowest class index.
std::size_t plurality_vote(const std::vector<std::size_t>& votes, std::size_t num_classes);

/// Indices drawn without replacement with probability proportional to `p`.
std::vector<std::size_t> sample_classes(const Vec& p, int k, Rng& rng);

/// Mean of `values`, written as v0 + mean(v_i - v0) so that equal inputs give
/// exactly that value back.
double stable_mean(const std::vector<double>& values);

/// Gradient w.r.t. the shift of sum_c (r_c - b) log p(c | weak view), with the
/// mean baseline b over the sampled rewards.
Mat reinforce_gradient(const Vec& weak_view, const Mat& text_bank, const ShiftParameters& shift,
                       const ScoringRule& rule, const std::vector<std::size_t>& classes,
                       const std::vector<double>& rewards);

}  // namespace vlmtta
