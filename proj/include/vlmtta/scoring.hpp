#pragma once

#include <vector>

#include "vlmtta/embedding_store.hpp"
#include "vlmtta/types.hpp"

namespace vlmtta {

struct Scored {
  Vec logits;  // softmax: scale*cos; sigmoid: scale*cos + bias (raw, pre-sigmoid)
  Vec probs;   // always a distribution over classes
};

/// v / ‖v‖. Throws ValidationError when ‖v‖ <= 1e-12.
Vec l2_normalize(const Vec& v);

/// Normalizes every row of `m` in place.
void normalize_rows(Mat& m);

/// Cosine similarities of a unit feature against every row of `bank`.
Vec cosines(const Vec& feature, const Mat& bank);

/// Logits from cosines under `rule` (scale, and bias for the sigmoid kind).
Vec logits_from_cosines(const Vec& cos, const ScoringRule& rule);

/// The probability map shared by every method: softmax, or normalized sigmoid.
Vec probs_from_logits(const Vec& logits, const ScoringRule& rule);

Scored score(const Vec& image_feat, const Mat& text_bank, const ScoringRule& rule);

/// Probabilities of every row of `views` (M x D) against the bank; result M x C.
Mat score_views(const Mat& views, const Mat& text_bank, const ScoringRule& rule);

Vec softmax(const Vec& logits);

/// Shannon entropy in nats, with 0 ln 0 = 0.
double entropy(const Vec& p);

/// Top-1 minus top-2 probability; 1 for a single class.
double top_margin(const Vec& p);

/// Per-class mean over templates, renormalized. T = 1 returns the input
/// unchanged. Throws when a class mean vanishes.
Mat ensemble_templates(const std::vector<Mat>& text_features);

}  // namespace vlmtta
