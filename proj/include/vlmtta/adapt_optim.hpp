#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vlmtta/embedding_store.hpp"
#include "vlmtta/types.hpp"

namespace vlmtta {

/// Learnable per-class text-feature perturbation. The adapted bank row is
/// normalize(t_k + delta_k); this stands in for prompt tuning.
struct ShiftParameters {
  Mat delta;  // [C x D]

  static ShiftParameters zeros(Eigen::Index classes, Eigen::Index dim) {
    return {Mat::Zero(classes, dim)};
  }
  bool is_zero() const;
};

/// Rows with an exactly-zero shift are copied unchanged, so a zero shift
/// reproduces the input bank bit for bit.
Mat apply_shift(const Mat& bank, const ShiftParameters& shift);

enum class LossKind {
  marginal_entropy,
  marginal_entropy_plus_dispersion,
  pointwise_entropy,
  weighted_entropy,
  reinforce_reward,
};

const char* to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

struct LossSpec {
  LossKind kind = LossKind::marginal_entropy;
  double lambda = 1.0;   // dispersion weight
  double epsilon = 0.0;  // weighted-entropy normalization factor
  std::optional<Mat> reward_bank;

  void validate() const;
};

struct OptimConfig {
  int steps = 1;
  double learning_rate = 0.01;
  double selection_fraction = 0.1;
  bool reselect_each_step = true;

  void validate() const;
};

/// Indices of the max(1, floor(rho * V)) lowest-entropy rows of `view_probs`
/// (one distribution per row), in ascending entropy order, ties by lower index.
std::vector<std::size_t> select_confident_views(const Mat& view_probs, double rho);
std::vector<std::size_t> select_by_scores(const std::vector<double>& keys, double rho);

struct LossGrad {
  double loss = 0.0;
  Mat grad;  // d loss / d delta, [C x D]
};

/// Loss over `views` (M x D) under the shifted bank and its exact gradient with
/// respect to the shift, including the row-normalization Jacobian.
///
///   marginal_entropy:      H(mean_m p_m)
///   ..._plus_dispersion:   H(mean_m p_m) + lambda * sum_k ‖mean_j t'_j - t'_k‖
///   pointwise_entropy:     mean_m H(p_m)
///   weighted_entropy:      mean_m beta_m H(p_m), beta_m = exp(H(p_m) + eps),
///                          beta held constant in the gradient
LossGrad loss_and_grad(const Mat& views, const Mat& text_bank, const ShiftParameters& shift,
                       const ScoringRule& rule, const LossSpec& spec);

/// Dispersion sum_k ‖mean_j b_j - b_k‖ of a bank's rows.
double text_dispersion(const Mat& bank);

/// Backpropagates d loss / d logits (rows: views, cols: classes) through the
/// scaled cosine scores and the shift normalization: returns d loss / d delta.
Mat backprop_logit_grads(const Mat& views, const Mat& dlogits, const Mat& text_bank,
                         const ShiftParameters& shift, const ScoringRule& rule);

/// d loss / d logits for one distribution `p` = probs_from_logits(z), given
/// a = d loss / d p. Covers both the softmax and normalized-sigmoid maps.
Vec logit_grad_from_prob_grad(const Vec& logits, const Vec& p, const Vec& a,
                              const ScoringRule& rule);

/// Chain rule through row k -> normalize(bank_k + delta_k): maps a gradient
/// with respect to the adapted rows onto a gradient with respect to delta.
Mat grad_through_shift(const Mat& bank, const ShiftParameters& shift, const Mat& upstream);

/// Candidate rows for adaptation: views 1..V-1, or view 0 when V == 1.
Mat augmented_views(const SampleRecord& sample);

Mat gather_rows(const Mat& m, const std::vector<std::size_t>& rows);

/// Gradient-descent loop on the shift. Confident views are picked among the
/// augmented views under the current shifted bank (every step unless
/// reselection is off). `loss_trace`, when given, receives the loss value of
/// each step before the update.
ShiftParameters optimize_shift(const SampleRecord& sample, const Mat& text_bank,
                               const ScoringRule& rule, const LossSpec& spec,
                               const OptimConfig& cfg,
                               std::vector<double>* loss_trace = nullptr);

}  // namespace vlmtta
