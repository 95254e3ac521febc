#include <algorithm>
#include <cmath>

#include "vlmtta/online.hpp"
#include "vlmtta/scoring.hpp"

namespace vlmtta {

bool EntropyCache::offer(CacheEntry entry) {
  if (capacity_ == 0) return false;
  auto& bucket = buckets_.at(entry.pseudo_label);
  if (bucket.size() < capacity_) {
    bucket.push_back(std::move(entry));
    return true;
  }
  auto worst = std::max_element(bucket.begin(), bucket.end(),
                                [](const CacheEntry& a, const CacheEntry& b) {
                                  return a.entropy < b.entropy;
                                });
  if (entry.entropy >= worst->entropy) return false;
  *worst = std::move(entry);
  return true;
}

std::size_t EntropyCache::size() const {
  std::size_t n = 0;
  for (const auto& b : buckets_) n += b.size();
  return n;
}

namespace {

CacheEntry make_entry(const Vec& feature, const Vec& probs) {
  return {feature, entropy(probs), static_cast<std::size_t>(argmax(probs)), probs};
}

Vec one_hot(std::size_t k, std::size_t classes) {
  Vec v = Vec::Zero(static_cast<Eigen::Index>(classes));
  v(static_cast<Eigen::Index>(k)) = 1.0;
  return v;
}

}  // namespace

TdaState tda_init(std::size_t num_classes, const TdaConfig& cfg) {
  return {EntropyCache(num_classes, cfg.pos_capacity), EntropyCache(num_classes, cfg.neg_capacity),
          0};
}

Prediction tda_step(TdaState& state, const SampleRecord& sample, const Mat& text_bank,
                    const ScoringRule& rule, const TdaConfig& cfg) {
  const auto C = static_cast<std::size_t>(text_bank.rows());
  const Vec x = sample.weak_view().transpose();
  const Scored zs = score(x, text_bank, rule);

  Vec logits = zs.logits;
  bool adjusted = false;
  if (!state.positive.empty() && cfg.pos_alpha != 0.0) {
    logits += cfg.pos_alpha * cache_affinity(x, state.positive, cfg.pos_gamma, C,
                                             [&](const CacheEntry& e) {
                                               return one_hot(e.pseudo_label, C);
                                             });
    adjusted = true;
  }
  if (!state.negative.empty() && cfg.neg_beta != 0.0) {
    logits -= cfg.neg_beta * cache_affinity(x, state.negative, cfg.neg_gamma, C,
                                            [&](const CacheEntry& e) {
                                              Vec mask(e.probs.size());
                                              for (Eigen::Index k = 0; k < mask.size(); ++k)
                                                mask(k) = e.probs(k) > cfg.neg_mask_low &&
                                                                  e.probs(k) < cfg.neg_mask_high
                                                              ? 1.0
                                                              : 0.0;
                                              return mask;
                                            });
    adjusted = true;
  }
  Prediction out =
      Prediction::from_probs(adjusted ? probs_from_logits(logits, rule) : zs.probs, "tda");

  CacheEntry entry = make_entry(x, zs.probs);
  const double ln_c = std::log(static_cast<double>(C));
  const bool in_band = entry.entropy >= cfg.neg_entropy_low * ln_c &&
                       entry.entropy <= cfg.neg_entropy_high * ln_c;
  if (in_band) state.negative.offer(entry);
  state.positive.offer(std::move(entry));
  ++state.step_counter;
  return out;
}

BoostAdapterState boostadapter_init(std::size_t num_classes, const BoostAdapterConfig& cfg) {
  return {EntropyCache(num_classes, cfg.capacity), 0};
}

std::vector<CacheEntry> boosting_entries(const SampleRecord& sample, const Mat& text_bank,
                                         const ScoringRule& rule, double selection_fraction) {
  const Mat candidates = augmented_views(sample);
  const Mat probs = score_views(candidates, text_bank, rule);
  std::vector<CacheEntry> out;
  for (std::size_t i : select_confident_views(probs, selection_fraction)) {
    const auto r = static_cast<Eigen::Index>(i);
    out.push_back(make_entry(candidates.row(r).transpose(), probs.row(r).transpose()));
  }
  return out;
}

Prediction boostadapter_step(BoostAdapterState& state, const SampleRecord& sample,
                             const Mat& text_bank, const ScoringRule& rule,
                             const BoostAdapterConfig& cfg) {
  const auto C = static_cast<std::size_t>(text_bank.rows());
  const Vec x = sample.weak_view().transpose();
  const Scored zs = score(x, text_bank, rule);

  // Boosting entries live in a scratch cache with room for all of them.
  EntropyCache scratch(C, static_cast<std::size_t>(sample.num_views()));
  if (cfg.boosting)
    for (CacheEntry& e : boosting_entries(sample, text_bank, rule, cfg.selection_fraction))
      scratch.offer(std::move(e));

  Prediction out;
  if (cfg.alpha != 0.0 && (!state.historical.empty() || !scratch.empty())) {
    auto label = [&](const CacheEntry& e) { return one_hot(e.pseudo_label, C); };
    Vec logits = zs.logits;
    if (!state.historical.empty())
      logits += cfg.alpha * cache_affinity(x, state.historical, cfg.gamma, C, label);
    if (!scratch.empty()) logits += cfg.alpha * cache_affinity(x, scratch, cfg.gamma, C, label);
    out = Prediction::from_probs(probs_from_logits(logits, rule), "boostadapter");
  } else {
    out = Prediction::from_probs(zs.probs, "boostadapter");
  }
  state.historical.offer(make_entry(x, zs.probs));
  ++state.step_counter;
  return out;
}

}  // namespace vlmtta
