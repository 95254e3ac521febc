#include "vlmtta/adapt_optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vlmtta/scoring.hpp"

namespace vlmtta {

bool ShiftParameters::is_zero() const {
  for (Eigen::Index i = 0; i < delta.size(); ++i)
    if (delta.data()[i] != 0.0) return false;
  return true;
}

namespace {

bool row_is_zero(const Mat& m, Eigen::Index r) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    if (m(r, c) != 0.0) return false;
  return true;
}

double safe_log(double x) { return x > 0.0 ? std::log(x) : 0.0; }

}  // namespace

Mat apply_shift(const Mat& bank, const ShiftParameters& shift) {
  if (shift.delta.rows() != bank.rows() || shift.delta.cols() != bank.cols())
    throw ValidationError("shift shape does not match text bank");
  Mat out = bank;
  for (Eigen::Index k = 0; k < bank.rows(); ++k) {
    if (row_is_zero(shift.delta, k)) continue;
    const Vec u = (bank.row(k) + shift.delta.row(k)).transpose();
    out.row(k) = l2_normalize(u).transpose();
  }
  return out;
}

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::marginal_entropy: return "marginal_entropy";
    case LossKind::marginal_entropy_plus_dispersion: return "marginal_entropy_plus_dispersion";
    case LossKind::pointwise_entropy: return "pointwise_entropy";
    case LossKind::weighted_entropy: return "weighted_entropy";
    case LossKind::reinforce_reward: return "reinforce_reward";
  }
  return "unknown";
}

LossKind loss_kind_from_string(const std::string& name) {
  for (LossKind k : {LossKind::marginal_entropy, LossKind::marginal_entropy_plus_dispersion,
                     LossKind::pointwise_entropy, LossKind::weighted_entropy,
                     LossKind::reinforce_reward})
    if (name == to_string(k)) return k;
  throw ValidationError("unknown loss kind '" + name + "'");
}

void LossSpec::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw ValidationError("loss lambda must be non-negative");
  if (!std::isfinite(epsilon)) throw ValidationError("loss epsilon must be finite");
}

void OptimConfig::validate() const {
  if (steps < 0) throw ValidationError("optim steps must be non-negative");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ValidationError("optim learning_rate must be non-negative");
  if (!(selection_fraction > 0.0 && selection_fraction <= 1.0))
    throw ValidationError("selection_fraction must lie in (0, 1]");
}

std::vector<std::size_t> select_by_scores(const std::vector<double>& keys, double rho) {
  if (keys.empty()) throw ValidationError("cannot select from an empty view list");
  if (!(rho > 0.0 && rho <= 1.0)) throw ValidationError("selection fraction must lie in (0, 1]");
  const auto count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(rho * static_cast<double>(keys.size()))));
  std::vector<std::size_t> idx(keys.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  idx.resize(std::min(count, idx.size()));
  return idx;
}

std::vector<std::size_t> select_confident_views(const Mat& view_probs, double rho) {
  std::vector<double> h(static_cast<std::size_t>(view_probs.rows()));
  for (Eigen::Index m = 0; m < view_probs.rows(); ++m)
    h[static_cast<std::size_t>(m)] = entropy(view_probs.row(m).transpose());
  return select_by_scores(h, rho);
}

Vec logit_grad_from_prob_grad(const Vec& logits, const Vec& p, const Vec& a,
                              const ScoringRule& rule) {
  const Eigen::Index C = p.size();
  Vec w(C);
  bool sigmoid_path = rule.kind == ScoreKind::sigmoid;
  if (sigmoid_path) {
    Vec s(C);
    for (Eigen::Index k = 0; k < C; ++k) s(k) = 1.0 / (1.0 + std::exp(-logits(k)));
    const double total = sum(s);
    if (total > 0.0) {
      for (Eigen::Index k = 0; k < C; ++k) w(k) = s(k) * (1.0 - s(k)) / total;
    } else {
      sigmoid_path = false;  // probs_from_logits fell back to softmax
    }
  }
  if (!sigmoid_path) w = p;
  const double ap = dot(a, p);
  Vec g(C);
  for (Eigen::Index j = 0; j < C; ++j) g(j) = w(j) * (a(j) - ap);
  return g;
}

namespace {

// d/d delta_k of normalize(t_k + delta_k), applied to an upstream gradient.
Mat through_normalization(const Mat& bank, const ShiftParameters& shift, const Mat& upstream) {
  Mat out(bank.rows(), bank.cols());
  for (Eigen::Index k = 0; k < bank.rows(); ++k) {
    const Vec u = (bank.row(k) + shift.delta.row(k)).transpose();
    const double n = norm(u);
    const Vec t = u / n;
    const Vec g = upstream.row(k).transpose();
    out.row(k) = ((g - dot(t, g) * t) / n).transpose();
  }
  return out;
}

// d/d t'_k of sum_k ‖mean - t'_k‖.
Mat dispersion_grad(const Mat& shifted) {
  const Eigen::Index C = shifted.rows();
  Vec mean = Vec::Zero(shifted.cols());
  for (Eigen::Index k = 0; k < C; ++k) mean += shifted.row(k).transpose();
  mean /= static_cast<double>(C);
  Mat e(C, shifted.cols());
  Vec e_sum = Vec::Zero(shifted.cols());
  for (Eigen::Index k = 0; k < C; ++k) {
    const Vec r = mean - shifted.row(k).transpose();
    const double n = norm(r);
    if (n > 0.0)
      e.row(k) = (r / n).transpose();
    else
      e.row(k).setZero();
    e_sum += e.row(k).transpose();
  }
  Mat g(C, shifted.cols());
  for (Eigen::Index k = 0; k < C; ++k)
    g.row(k) = (e_sum / static_cast<double>(C) - e.row(k).transpose()).transpose();
  return g;
}

}  // namespace

Mat grad_through_shift(const Mat& bank, const ShiftParameters& shift, const Mat& upstream) {
  return through_normalization(bank, shift, upstream);
}

double text_dispersion(const Mat& bank) {
  Vec mean = Vec::Zero(bank.cols());
  for (Eigen::Index k = 0; k < bank.rows(); ++k) mean += bank.row(k).transpose();
  mean /= static_cast<double>(bank.rows());
  double d = 0.0;
  for (Eigen::Index k = 0; k < bank.rows(); ++k) d += norm(mean - bank.row(k).transpose());
  return d;
}

namespace {

// d loss / d t'_k = sum_m dlogits(m, k) * scale * x_m
Mat upstream_from_logit_grads(const Mat& views, const Mat& dlogits, double scale) {
  Mat upstream = Mat::Zero(dlogits.cols(), views.cols());
  for (Eigen::Index k = 0; k < dlogits.cols(); ++k)
    for (Eigen::Index m = 0; m < views.rows(); ++m)
      upstream.row(k) += (scale * dlogits(m, k)) * views.row(m);
  return upstream;
}

}  // namespace

Mat backprop_logit_grads(const Mat& views, const Mat& dlogits, const Mat& text_bank,
                         const ShiftParameters& shift, const ScoringRule& rule) {
  return through_normalization(text_bank, shift,
                               upstream_from_logit_grads(views, dlogits, rule.scale));
}

LossGrad loss_and_grad(const Mat& views, const Mat& text_bank, const ShiftParameters& shift,
                       const ScoringRule& rule, const LossSpec& spec) {
  if (spec.kind == LossKind::reinforce_reward)
    throw ValidationError("reinforce_reward has no closed-form loss; use rlcf_adapt");
  if (views.rows() < 1) throw ValidationError("loss needs at least one view");
  if (views.cols() != text_bank.cols())
    throw ValidationError("view dimension does not match text bank");
  const Eigen::Index M = views.rows();
  const Eigen::Index C = text_bank.rows();
  const Mat shifted = apply_shift(text_bank, shift);

  Mat logits(M, C), probs(M, C);
  for (Eigen::Index m = 0; m < M; ++m) {
    const Scored s = score(views.row(m).transpose(), shifted, rule);
    logits.row(m) = s.logits.transpose();
    probs.row(m) = s.probs.transpose();
  }

  LossGrad out;
  Mat dprobs(M, C);
  const double inv_m = 1.0 / static_cast<double>(M);
  switch (spec.kind) {
    case LossKind::marginal_entropy:
    case LossKind::marginal_entropy_plus_dispersion: {
      Vec mean = Vec::Zero(C);
      for (Eigen::Index m = 0; m < M; ++m) mean += probs.row(m).transpose();
      mean *= inv_m;
      out.loss = entropy(mean);
      for (Eigen::Index k = 0; k < C; ++k) {
        const double a = mean(k) > 0.0 ? -(std::log(mean(k)) + 1.0) * inv_m : 0.0;
        dprobs.col(k).setConstant(a);
      }
      break;
    }
    case LossKind::pointwise_entropy:
    case LossKind::weighted_entropy: {
      for (Eigen::Index m = 0; m < M; ++m) {
        const Vec p = probs.row(m).transpose();
        const double h = entropy(p);
        const double beta =
            spec.kind == LossKind::weighted_entropy ? std::exp(h + spec.epsilon) : 1.0;
        out.loss += beta * h * inv_m;
        for (Eigen::Index k = 0; k < C; ++k)
          dprobs(m, k) = p(k) > 0.0 ? -beta * (safe_log(p(k)) + 1.0) * inv_m : 0.0;
      }
      break;
    }
    case LossKind::reinforce_reward: break;
  }

  Mat dlogits(M, C);
  for (Eigen::Index m = 0; m < M; ++m)
    dlogits.row(m) = logit_grad_from_prob_grad(logits.row(m).transpose(),
                                               probs.row(m).transpose(),
                                               dprobs.row(m).transpose(), rule)
                         .transpose();

  Mat upstream = upstream_from_logit_grads(views, dlogits, rule.scale);

  if (spec.kind == LossKind::marginal_entropy_plus_dispersion && spec.lambda != 0.0) {
    out.loss += spec.lambda * text_dispersion(shifted);
    upstream += spec.lambda * dispersion_grad(shifted);
  }
  out.grad = through_normalization(text_bank, shift, upstream);
  return out;
}

Mat augmented_views(const SampleRecord& sample) {
  if (sample.views.rows() <= 1) return sample.views;
  return sample.views.bottomRows(sample.views.rows() - 1);
}

Mat gather_rows(const Mat& m, const std::vector<std::size_t>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

ShiftParameters optimize_shift(const SampleRecord& sample, const Mat& text_bank,
                               const ScoringRule& rule, const LossSpec& spec,
                               const OptimConfig& cfg, std::vector<double>* loss_trace) {
  cfg.validate();
  spec.validate();
  ShiftParameters shift = ShiftParameters::zeros(text_bank.rows(), text_bank.cols());
  if (cfg.steps == 0) return shift;
  const Mat candidates = augmented_views(sample);
  Mat selected;
  for (int step = 0; step < cfg.steps; ++step) {
    if (step == 0 || cfg.reselect_each_step) {
      const Mat probs = score_views(candidates, apply_shift(text_bank, shift), rule);
      selected = gather_rows(candidates, select_confident_views(probs, cfg.selection_fraction));
    }
    const LossGrad lg = loss_and_grad(selected, text_bank, shift, rule, spec);
    if (loss_trace) loss_trace->push_back(lg.loss);
    if (cfg.learning_rate != 0.0) shift.delta -= cfg.learning_rate * lg.grad;
  }
  return shift;
}

}  // namespace vlmtta
