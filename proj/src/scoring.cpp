#include "vlmtta/scoring.hpp"

#include <algorithm>
#include <cmath>

namespace vlmtta {

Vec l2_normalize(const Vec& v) {
  const double n = norm(v);
  if (!(n > 1e-12)) throw ValidationError("cannot normalize a near-zero vector");
  return v / n;
}

void normalize_rows(Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = norm(m.row(r));
    if (!(n > 1e-12)) throw ValidationError("cannot normalize a near-zero row");
    m.row(r) /= n;
  }
}

Vec cosines(const Vec& feature, const Mat& bank) {
  if (feature.size() != bank.cols())
    throw ValidationError("feature dimension does not match text bank");
  Vec out(bank.rows());
  for (Eigen::Index k = 0; k < bank.rows(); ++k) out(k) = dot(bank.row(k), feature);
  return out;
}

Vec logits_from_cosines(const Vec& cos, const ScoringRule& rule) {
  Vec z = rule.scale * cos;
  if (rule.kind == ScoreKind::sigmoid) z.array() += rule.bias;
  return z;
}

Vec softmax(const Vec& logits) {
  const double mx = logits.maxCoeff();
  Vec e(logits.size());
  for (Eigen::Index k = 0; k < logits.size(); ++k) e(k) = std::exp(logits(k) - mx);
  return e / sum(e);
}

namespace {

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

Vec probs_from_logits(const Vec& logits, const ScoringRule& rule) {
  if (rule.kind == ScoreKind::softmax) return softmax(logits);
  Vec s(logits.size());
  for (Eigen::Index k = 0; k < logits.size(); ++k) s(k) = sigmoid(logits(k));
  const double total = sum(s);
  // All sigmoids underflowed: fall back to the softmax ranking.
  if (!(total > 0.0)) return softmax(logits);
  return s / total;
}

Scored score(const Vec& image_feat, const Mat& text_bank, const ScoringRule& rule) {
  Scored out;
  out.logits = logits_from_cosines(cosines(image_feat, text_bank), rule);
  out.probs = probs_from_logits(out.logits, rule);
  return out;
}

Mat score_views(const Mat& views, const Mat& text_bank, const ScoringRule& rule) {
  Mat out(views.rows(), text_bank.rows());
  for (Eigen::Index m = 0; m < views.rows(); ++m)
    out.row(m) = score(views.row(m).transpose(), text_bank, rule).probs.transpose();
  return out;
}

double entropy(const Vec& p) {
  double h = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k)
    if (p(k) > 0.0) h -= p(k) * std::log(p(k));
  return h;
}

double top_margin(const Vec& p) {
  if (p.size() < 2) return 1.0;
  double a = -1.0, b = -1.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (p(k) > a) {
      b = a;
      a = p(k);
    } else if (p(k) > b) {
      b = p(k);
    }
  }
  return a - b;
}

Mat ensemble_templates(const std::vector<Mat>& text_features) {
  if (text_features.empty()) throw ValidationError("ensemble_templates needs at least one template");
  if (text_features.size() == 1) return text_features.front();
  const Mat& first = text_features.front();
  Mat acc = Mat::Zero(first.rows(), first.cols());
  for (const Mat& t : text_features) {
    if (t.rows() != first.rows() || t.cols() != first.cols())
      throw ValidationError("templates disagree in shape");
    acc += t;
  }
  acc /= static_cast<double>(text_features.size());
  for (Eigen::Index r = 0; r < acc.rows(); ++r) {
    const double n = norm(acc.row(r));
    if (!(n > 1e-12))
      throw ValidationError("template mean vanishes for class " + std::to_string(r));
    acc.row(r) /= n;
  }
  return acc;
}

}  // namespace vlmtta
