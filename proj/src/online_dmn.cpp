#include <cmath>

#include "vlmtta/online.hpp"
#include "vlmtta/scoring.hpp"

namespace vlmtta {

Mat dmn_readout(const std::deque<MemoryItem>& memory, Eigen::Index classes, Eigen::Index dim) {
  Mat w = Mat::Zero(classes, dim);
  for (const MemoryItem& item : memory)
    for (Eigen::Index k = 0; k < classes; ++k) w.row(k) += item.probs(k) * item.feature.transpose();
  for (Eigen::Index k = 0; k < classes; ++k) {
    const double n = norm(w.row(k));
    if (n > 1e-12)
      w.row(k) /= n;
    else
      w.row(k).setZero();
  }
  return w;
}

Vec dmn_query_feature(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                      const DmnConfig& cfg) {
  if (!cfg.use_aug) return sample.weak_view().transpose();
  const Mat candidates = augmented_views(sample);
  const Mat probs = score_views(candidates, text_bank, rule);
  Vec acc = Vec::Zero(candidates.cols());
  for (std::size_t i : select_confident_views(probs, cfg.selection_fraction))
    acc += candidates.row(static_cast<Eigen::Index>(i)).transpose();
  return l2_normalize(acc);
}

Prediction dmn_step(DmnState& state, const SampleRecord& sample, const Mat& text_bank,
                    const ScoringRule& rule, const DmnConfig& cfg) {
  const char* tag = cfg.use_aug ? "dmn" : "dmn_w";
  const Scored zs = score(sample.weak_view().transpose(), text_bank, rule);
  const Vec query = dmn_query_feature(sample, text_bank, rule, cfg);

  Prediction out;
  if (!state.memory.empty() && cfg.alpha != 0.0) {
    const Mat w = dmn_readout(state.memory, text_bank.rows(), text_bank.cols());
    Vec logits = zs.logits;
    for (Eigen::Index k = 0; k < w.rows(); ++k)
      logits(k) += cfg.alpha * rule.scale * dot(w.row(k), query);
    out = Prediction::from_probs(probs_from_logits(logits, rule), tag);
  } else {
    out = Prediction::from_probs(zs.probs, tag);
  }

  if (cfg.memory_capacity > 0) {
    state.memory.push_back({query, score(query, text_bank, rule).probs});
    while (state.memory.size() > cfg.memory_capacity) state.memory.pop_front();
  }
  ++state.step_counter;
  return out;
}

OnzetaState onzeta_init(const Mat& text_bank) {
  const auto C = text_bank.rows();
  return {Vec::Constant(C, 1.0 / static_cast<double>(C)), text_bank, 0};
}

Prediction onzeta_step(OnzetaState& state, const SampleRecord& sample, const Mat& text_bank,
                       const ScoringRule& rule, const OnzetaConfig& cfg) {
  const Vec x = sample.weak_view().transpose();
  const Vec p_raw = score(x, text_bank, rule).probs;

  if (cfg.label_lr != 0.0)
    state.label_distribution = (1.0 - cfg.label_lr) * state.label_distribution + cfg.label_lr * p_raw;

  Vec p_text = p_raw;
  if (cfg.temper != 0.0) {
    for (Eigen::Index k = 0; k < p_text.size(); ++k)
      p_text(k) /= std::pow(std::max(state.label_distribution(k), 1e-300), cfg.temper);
    p_text /= sum(p_text);
  }

  const Scored proxy = score(x, state.proxies, rule);
  Vec final_probs = p_text;
  if (cfg.mix != 0.0) {
    final_probs = (1.0 - cfg.mix) * p_text + cfg.mix * proxy.probs;
    final_probs /= sum(final_probs);
  }
  Prediction out = Prediction::from_probs(final_probs, "onzeta");

  if (cfg.proxy_lr != 0.0) {
    // One step on -log p_proxy(y_hat), then back onto the unit sphere.
    const auto y = static_cast<Eigen::Index>(out.hard_label);
    Vec a = Vec::Zero(proxy.probs.size());
    a(y) = -1.0 / proxy.probs(y);
    const Vec dlogits = logit_grad_from_prob_grad(proxy.logits, proxy.probs, a, rule);
    for (Eigen::Index k = 0; k < state.proxies.rows(); ++k)
      state.proxies.row(k) -= cfg.proxy_lr * rule.scale * dlogits(k) * x.transpose();
    normalize_rows(state.proxies);
  }
  ++state.step_counter;
  return out;
}

}  // namespace vlmtta
