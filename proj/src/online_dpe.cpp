#include <cmath>

#include "vlmtta/online.hpp"
#include "vlmtta/scoring.hpp"

namespace vlmtta {

namespace {

Vec mixed_logits(const Vec& x, const Mat& text, const Mat& vision, const ScoringRule& rule,
                 double mix) {
  Vec z = logits_from_cosines(cosines(x, text), rule);
  if (mix != 0.0) z += (mix * rule.scale) * cosines(x, vision);
  return z;
}

}  // namespace

Vec dpe_mixed_probs(const Vec& x, const Mat& text_protos, const Mat& vision_protos,
                    const ScoringRule& rule, double mix) {
  return probs_from_logits(mixed_logits(x, text_protos, vision_protos, rule, mix), rule);
}

DpeLossGrad dpe_loss_and_grad(const Vec& x, const Mat& text_protos, const Mat& vision_protos,
                              const ShiftParameters& text_residual,
                              const ShiftParameters& vision_residual, const ScoringRule& rule,
                              const DpeConfig& cfg, std::size_t anchor) {
  const Mat t = apply_shift(text_protos, text_residual);
  const Mat v = apply_shift(vision_protos, vision_residual);
  const Vec z = mixed_logits(x, t, v, rule, cfg.mix);
  const Vec p = probs_from_logits(z, rule);
  const auto c = static_cast<Eigen::Index>(anchor);

  DpeLossGrad out;
  out.loss = entropy(p) + cfg.align_weight * (1.0 - dot(t.row(c), v.row(c)));

  Vec a(p.size());
  for (Eigen::Index k = 0; k < p.size(); ++k) a(k) = p(k) > 0.0 ? -(std::log(p(k)) + 1.0) : 0.0;
  const Vec g = logit_grad_from_prob_grad(z, p, a, rule);

  Mat up_t(t.rows(), t.cols()), up_v(v.rows(), v.cols());
  for (Eigen::Index k = 0; k < t.rows(); ++k) {
    up_t.row(k) = (rule.scale * g(k)) * x.transpose();
    up_v.row(k) = (cfg.mix * rule.scale * g(k)) * x.transpose();
  }
  up_t.row(c) -= cfg.align_weight * v.row(c);
  up_v.row(c) -= cfg.align_weight * t.row(c);
  out.grad_text = grad_through_shift(text_protos, text_residual, up_t);
  out.grad_vision = grad_through_shift(vision_protos, vision_residual, up_v);
  return out;
}

DpeState dpe_init(const Mat& text_bank) {
  // Vision prototypes start as the text rows renormalized in double precision.
  Mat vision = text_bank;
  normalize_rows(vision);
  return {text_bank, vision, std::vector<std::uint64_t>(static_cast<std::size_t>(text_bank.rows()), 0), 0};
}

Prediction dpe_step(DpeState& state, const SampleRecord& sample, const Mat& text_bank,
                    const ScoringRule& rule, const DpeConfig& cfg) {
  (void)text_bank;
  const Vec x = sample.weak_view().transpose();
  auto r_t = ShiftParameters::zeros(state.text_protos.rows(), state.text_protos.cols());
  auto r_v = ShiftParameters::zeros(state.vision_protos.rows(), state.vision_protos.cols());

  for (int step = 0; step < cfg.residual_steps; ++step) {
    const Vec p = dpe_mixed_probs(x, apply_shift(state.text_protos, r_t),
                                  apply_shift(state.vision_protos, r_v), rule, cfg.mix);
    const auto anchor = static_cast<std::size_t>(argmax(p));
    const DpeLossGrad lg = dpe_loss_and_grad(x, state.text_protos, state.vision_protos, r_t, r_v,
                                             rule, cfg, anchor);
    if (cfg.residual_lr != 0.0) {
      r_t.delta -= cfg.residual_lr * lg.grad_text;
      r_v.delta -= cfg.residual_lr * lg.grad_vision;
    }
  }
  const Vec p = dpe_mixed_probs(x, apply_shift(state.text_protos, r_t),
                                apply_shift(state.vision_protos, r_v), rule, cfg.mix);
  Prediction out = Prediction::from_probs(p, "dpe");

  if (*out.confidence >= cfg.update_threshold) {
    const auto k = static_cast<Eigen::Index>(out.hard_label);
    const Vec moved =
        cfg.momentum * state.vision_protos.row(k).transpose() + (1.0 - cfg.momentum) * x;
    state.vision_protos.row(k) = l2_normalize(moved).transpose();
    ++state.counts[out.hard_label];
  }
  ++state.step_counter;
  return out;
}

}  // namespace vlmtta
