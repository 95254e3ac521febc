#include "vlmtta/episodic.hpp"

#include <algorithm>
#include <cmath>

#include "vlmtta/scoring.hpp"

namespace vlmtta {

void EpisodicConfig::validate() const {
  optim.validate();
  loss.validate();
  if (mta.iterations < 0) throw ValidationError("mta.iterations must be non-negative");
  if (mta.bandwidth_mode == BandwidthMode::fixed && !(mta.fixed_bandwidth > 0.0))
    throw ValidationError("mta.fixed_bandwidth must be positive");
  if (rlcf.samples_per_step < 1) throw ValidationError("rlcf.samples_per_step must be >= 1");
  if (rlcf.reward_baseline != "mean")
    throw ValidationError("rlcf.reward_baseline must be 'mean'");
}

EpisodicConfig default_episodic_config(const std::string& tag) {
  EpisodicConfig cfg;
  cfg.optim.steps = 1;
  cfg.optim.learning_rate = 0.07;
  cfg.optim.selection_fraction = 0.1;
  if (tag == "ctpt") {
    cfg.loss.kind = LossKind::marginal_entropy_plus_dispersion;
    cfg.loss.lambda = 1.0;
  } else if (tag == "ttl") {
    cfg.loss.kind = LossKind::weighted_entropy;
  } else if (tag == "rtpt") {
    cfg.loss.kind = LossKind::pointwise_entropy;
  } else if (tag == "rlcf") {
    cfg.loss.kind = LossKind::reinforce_reward;
  }
  return cfg;
}

const std::vector<std::string>& episodic_method_tags() {
  static const std::vector<std::string> tags = {"zero_shot", "tpt",  "ctpt", "rlcf", "mta",
                                                "zero",      "ttl",  "tps",  "rtpt"};
  return tags;
}

bool is_episodic_method(const std::string& tag) {
  const auto& t = episodic_method_tags();
  return std::find(t.begin(), t.end(), tag) != t.end();
}

Prediction zero_shot_predict(const SampleRecord& sample, const Mat& text_bank,
                             const ScoringRule& rule) {
  return Prediction::from_probs(score(sample.weak_view().transpose(), text_bank, rule).probs,
                                "zero_shot");
}

namespace {

Prediction predict_weak(const SampleRecord& sample, const Mat& shifted_bank,
                        const ScoringRule& rule, const char* tag) {
  return Prediction::from_probs(score(sample.weak_view().transpose(), shifted_bank, rule).probs,
                                tag);
}

Prediction prompt_tuning(const SampleRecord& sample, const Mat& text_bank,
                         const ScoringRule& rule, const EpisodicConfig& cfg, LossKind kind,
                         const char* tag) {
  LossSpec spec = cfg.loss;
  spec.kind = kind;
  const ShiftParameters shift = optimize_shift(sample, text_bank, rule, spec, cfg.optim);
  return predict_weak(sample, apply_shift(text_bank, shift), rule, tag);
}

}  // namespace

Prediction tpt_adapt(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                     const EpisodicConfig& cfg) {
  return prompt_tuning(sample, text_bank, rule, cfg, LossKind::marginal_entropy, "tpt");
}

Prediction tps_adapt(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                     const EpisodicConfig& cfg) {
  return prompt_tuning(sample, text_bank, rule, cfg, LossKind::marginal_entropy, "tps");
}

Prediction ctpt_adapt(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                      const EpisodicConfig& cfg) {
  return prompt_tuning(sample, text_bank, rule, cfg, LossKind::marginal_entropy_plus_dispersion,
                       "ctpt");
}

Prediction ttl_adapt(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                     const EpisodicConfig& cfg) {
  return prompt_tuning(sample, text_bank, rule, cfg, LossKind::weighted_entropy, "ttl");
}

Vec reliability_weights(const Mat& probs) {
  const Eigen::Index n = probs.rows();
  Vec w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec pi = probs.row(i).transpose();
    double agreement = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      const Vec pj = probs.row(j).transpose();
      agreement += dot(pi, pj) / (norm(pi) * norm(pj));
    }
    agreement /= static_cast<double>(n);
    w(i) = std::exp(-entropy(pi)) * agreement;
  }
  return w / sum(w);
}

Prediction rtpt_adapt(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                      const EpisodicConfig& cfg) {
  LossSpec spec = cfg.loss;
  spec.kind = LossKind::pointwise_entropy;
  const ShiftParameters shift = optimize_shift(sample, text_bank, rule, spec, cfg.optim);
  const Mat shifted = apply_shift(text_bank, shift);
  if (!cfg.rtpt.ensemble) return predict_weak(sample, shifted, rule, "rtpt");

  const Mat candidates = augmented_views(sample);
  const Mat probs = score_views(candidates, shifted, rule);
  const Mat selected = gather_rows(probs, select_confident_views(probs, cfg.optim.selection_fraction));
  const Vec w = reliability_weights(selected);
  Vec out = Vec::Zero(selected.cols());
  for (Eigen::Index i = 0; i < selected.rows(); ++i) out += w(i) * selected.row(i).transpose();
  return Prediction::from_probs(out / sum(out), "rtpt");
}

double median_pairwise_distance(const Mat& views) {
  std::vector<double> d;
  const Eigen::Index n = views.rows();
  d.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) d.push_back(norm(views.row(i) - views.row(j)));
  if (d.empty()) return 0.0;
  std::sort(d.begin(), d.end());
  const std::size_t mid = d.size() / 2;
  return d.size() % 2 ? d[mid] : 0.5 * (d[mid - 1] + d[mid]);
}

namespace {

Vec kernel_weights(const Vec& m, const Mat& views, double h) {
  Vec w(views.rows());
  for (Eigen::Index i = 0; i < views.rows(); ++i) {
    const double u = norm(m - views.row(i).transpose()) / h;
    w(i) = std::exp(-0.5 * u * u);
  }
  return w / sum(w);
}

}  // namespace

MeanShiftResult mean_shift_mode(const Mat& views, const MtaConfig& cfg) {
  MeanShiftResult r;
  r.mode = views.row(0).transpose();
  r.inlierness = Vec::Constant(views.rows(), 1.0 / static_cast<double>(views.rows()));
  r.bandwidth = cfg.bandwidth_mode == BandwidthMode::fixed ? cfg.fixed_bandwidth
                                                            : median_pairwise_distance(views);
  if (!(r.bandwidth > 1e-12)) {
    r.degenerate = true;
    return r;
  }
  for (int it = 0; it < cfg.iterations; ++it) {
    r.inlierness = kernel_weights(r.mode, views, r.bandwidth);
    Vec next = Vec::Zero(views.cols());
    for (Eigen::Index i = 0; i < views.rows(); ++i) next += r.inlierness(i) * views.row(i).transpose();
    r.mode = l2_normalize(next);
  }
  if (cfg.iterations > 0) r.inlierness = kernel_weights(r.mode, views, r.bandwidth);
  return r;
}

Prediction mta_adapt(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                     const EpisodicConfig& cfg) {
  const MeanShiftResult ms = mean_shift_mode(sample.views, cfg.mta);
  if (ms.degenerate) return predict_weak(sample, text_bank, rule, "mta");
  return Prediction::from_probs(score(ms.mode, text_bank, rule).probs, "mta");
}

std::size_t plurality_vote(const std::vector<std::size_t>& votes, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t v : votes) ++counts.at(v);
  return static_cast<std::size_t>(
      std::max_element(counts.begin(), counts.end()) - counts.begin());
}

Prediction zero_adapt(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                      const EpisodicConfig& cfg) {
  const Mat candidates = augmented_views(sample);
  const Mat probs = score_views(candidates, text_bank, rule);
  std::vector<double> keys(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index m = 0; m < probs.rows(); ++m) {
    const Vec p = probs.row(m).transpose();
    keys[static_cast<std::size_t>(m)] =
        cfg.zero.selection == ZeroSelection::msp ? -p.maxCoeff() : entropy(p);
  }
  std::vector<std::size_t> votes;
  for (std::size_t i : select_by_scores(keys, cfg.optim.selection_fraction))
    votes.push_back(static_cast<std::size_t>(argmax(probs.row(static_cast<Eigen::Index>(i)).transpose())));
  return Prediction::from_vote(plurality_vote(votes, static_cast<std::size_t>(text_bank.rows())),
                               "zero");
}

std::vector<std::size_t> sample_classes(const Vec& p, int k, Rng& rng) {
  if (k < 1 || k > p.size())
    throw ValidationError("cannot draw " + std::to_string(k) + " distinct classes out of " +
                          std::to_string(p.size()));
  std::vector<double> mass(p.data(), p.data() + p.size());
  std::vector<std::size_t> out;
  for (int draw = 0; draw < k; ++draw) {
    double total = 0.0;
    for (double m : mass) total += m;
    std::size_t pick = mass.size();
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (std::size_t c = 0; c < mass.size(); ++c) {
        if (mass[c] <= 0.0) continue;
        pick = c;
        if (u < mass[c]) break;
        u -= mass[c];
      }
    } else {
      // Remaining mass underflowed: take the lowest unused class.
      for (std::size_t c = 0; c < mass.size(); ++c)
        if (std::find(out.begin(), out.end(), c) == out.end()) {
          pick = c;
          break;
        }
    }
    out.push_back(pick);
    mass[pick] = 0.0;
  }
  return out;
}

double stable_mean(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double acc = 0.0;
  for (double v : values) acc += v - values.front();
  return values.front() + acc / static_cast<double>(values.size());
}

Mat reinforce_gradient(const Vec& weak_view, const Mat& text_bank, const ShiftParameters& shift,
                       const ScoringRule& rule, const std::vector<std::size_t>& classes,
                       const std::vector<double>& rewards) {
  if (classes.size() != rewards.size()) throw ValidationError("one reward per sampled class");
  const Scored s = score(weak_view, apply_shift(text_bank, shift), rule);
  const double baseline = stable_mean(rewards);
  Vec dlogits = Vec::Zero(s.probs.size());
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const double advantage = rewards[i] - baseline;
    if (advantage == 0.0) continue;
    const auto c = static_cast<Eigen::Index>(classes[i]);
    Vec a = Vec::Zero(s.probs.size());
    a(c) = 1.0 / s.probs(c);
    dlogits += advantage * logit_grad_from_prob_grad(s.logits, s.probs, a, rule);
  }
  Mat views(1, weak_view.size());
  views.row(0) = weak_view.transpose();
  return backprop_logit_grads(views, dlogits.transpose(), text_bank, shift, rule);
}

Prediction rlcf_adapt(const SampleRecord& sample, const Mat& text_bank, const ScoringRule& rule,
                      const EpisodicConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cfg.rlcf.samples_per_step > text_bank.rows())
    throw ValidationError("rlcf.samples_per_step exceeds the number of classes");
  const Mat& reward_bank = cfg.loss.reward_bank ? *cfg.loss.reward_bank : text_bank;
  if (reward_bank.rows() != text_bank.rows() || reward_bank.cols() != text_bank.cols())
    throw ValidationError("reward bank shape does not match text bank");
  const Vec weak = sample.weak_view().transpose();
  const Vec rewards_all = cosines(weak, reward_bank);
  Rng rng(seed);
  ShiftParameters shift = ShiftParameters::zeros(text_bank.rows(), text_bank.cols());
  for (int step = 0; step < cfg.optim.steps; ++step) {
    const Vec p = score(weak, apply_shift(text_bank, shift), rule).probs;
    const auto classes = sample_classes(p, cfg.rlcf.samples_per_step, rng);
    std::vector<double> rewards;
    for (std::size_t c : classes) rewards.push_back(rewards_all(static_cast<Eigen::Index>(c)));
    const Mat g = reinforce_gradient(weak, text_bank, shift, rule, classes, rewards);
    if (cfg.optim.learning_rate != 0.0) shift.delta += cfg.optim.learning_rate * g;
  }
  return predict_weak(sample, apply_shift(text_bank, shift), rule, "rlcf");
}

Prediction run_episodic_method(const std::string& tag, const SampleRecord& sample,
                               const Mat& text_bank, const ScoringRule& rule,
                               const EpisodicConfig& cfg, std::uint64_t seed) {
  if (tag == "zero_shot") return zero_shot_predict(sample, text_bank, rule);
  if (tag == "tpt") return tpt_adapt(sample, text_bank, rule, cfg);
  if (tag == "ctpt") return ctpt_adapt(sample, text_bank, rule, cfg);
  if (tag == "ttl") return ttl_adapt(sample, text_bank, rule, cfg);
  if (tag == "rtpt") return rtpt_adapt(sample, text_bank, rule, cfg);
  if (tag == "mta") return mta_adapt(sample, text_bank, rule, cfg);
  if (tag == "zero") return zero_adapt(sample, text_bank, rule, cfg);
  if (tag == "tps") return tps_adapt(sample, text_bank, rule, cfg);
  if (tag == "rlcf") return rlcf_adapt(sample, text_bank, rule, cfg, seed);
  throw ValidationError("unknown episodic method '" + tag + "'");
}

}  // namespace vlmtta
