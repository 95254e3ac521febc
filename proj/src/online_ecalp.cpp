#include <algorithm>
#include <cmath>
#include <numeric>

#include "vlmtta/online.hpp"
#include "vlmtta/scoring.hpp"

namespace vlmtta {

Vec ecalp_dimension_weights(const Mat& text_bank) {
  const Eigen::Index C = text_bank.rows();
  const Eigen::Index D = text_bank.cols();
  Vec var(D);
  for (Eigen::Index j = 0; j < D; ++j) {
    double mean = 0.0;
    for (Eigen::Index k = 0; k < C; ++k) mean += text_bank(k, j);
    mean /= static_cast<double>(C);
    double acc = 0.0;
    for (Eigen::Index k = 0; k < C; ++k) acc += (text_bank(k, j) - mean) * (text_bank(k, j) - mean);
    var(j) = acc / static_cast<double>(C);
  }
  const double mean_var = sum(var) / static_cast<double>(D);
  if (!(mean_var > 0.0)) return Vec::Ones(D);
  return var / mean_var;
}

Mat ecalp_affinity(const Mat& nodes, const Vec& dim_weights, double gamma, std::size_t knn) {
  const Eigen::Index n = nodes.rows();
  Mat f(n, nodes.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    f.row(i) = nodes.row(i).cwiseProduct(dim_weights.transpose());
    const double len = norm(f.row(i));
    if (len > 0.0) f.row(i) /= len;
  }
  Mat a = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) a(i, j) = std::pow(std::max(0.0, dot(f.row(i), f.row(j))), gamma);

  Mat kept = a;
  if (knn > 0 && static_cast<Eigen::Index>(knn) < n - 1) {
    kept.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      std::vector<Eigen::Index> order;
      for (Eigen::Index j = 0; j < n; ++j)
        if (j != i) order.push_back(j);
      std::stable_sort(order.begin(), order.end(),
                       [&](Eigen::Index x, Eigen::Index y) { return a(i, x) > a(i, y); });
      for (std::size_t r = 0; r < knn; ++r) kept(i, order[r]) = a(i, order[r]);
    }
  }
  const Mat w = 0.5 * (kept + kept.transpose());
  Vec inv_sqrt_deg(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = sum(w.row(i));
    inv_sqrt_deg(i) = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  Mat s(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) s(i, j) = inv_sqrt_deg(i) * w(i, j) * inv_sqrt_deg(j);
  return s;
}

Mat ecalp_propagate(const Mat& affinity, const Mat& seeds, double alpha, int iterations) {
  Mat f = seeds;
  for (int it = 0; it < iterations; ++it) {
    Mat next((1.0 - alpha) * seeds);
    for (Eigen::Index i = 0; i < f.rows(); ++i)
      for (Eigen::Index j = 0; j < f.rows(); ++j)
        if (affinity(i, j) != 0.0) next.row(i) += (alpha * affinity(i, j)) * f.row(j);
    f = std::move(next);
  }
  return f;
}

Prediction ecalp_step(EcalpState& state, const SampleRecord& sample, const Mat& text_bank,
                      const ScoringRule& rule, const EcalpConfig& cfg) {
  const Vec x = sample.weak_view().transpose();
  const Vec p0 = score(x, text_bank, rule).probs;

  Prediction out;
  if (cfg.alpha == 0.0 || cfg.iterations == 0) {
    out = Prediction::from_probs(p0, "ecalp");
  } else {
    const Eigen::Index C = text_bank.rows();
    const auto W = static_cast<Eigen::Index>(state.window.size());
    const Eigen::Index n = C + W + 1;
    Mat nodes(n, text_bank.cols());
    Mat seeds = Mat::Zero(n, C);
    nodes.topRows(C) = text_bank;
    for (Eigen::Index k = 0; k < C; ++k) seeds(k, k) = 1.0;
    for (Eigen::Index w = 0; w < W; ++w) {
      nodes.row(C + w) = state.window[static_cast<std::size_t>(w)].feature.transpose();
      seeds.row(C + w) = state.window[static_cast<std::size_t>(w)].probs.transpose();
    }
    nodes.row(n - 1) = x.transpose();
    seeds.row(n - 1) = p0.transpose();

    const Vec weights = cfg.reweight ? ecalp_dimension_weights(text_bank)
                                     : Vec::Ones(text_bank.cols());
    const Mat s = ecalp_affinity(nodes, weights, cfg.gamma, cfg.knn);
    const Mat f = ecalp_propagate(s, seeds, cfg.alpha, cfg.iterations);
    Vec row = f.row(n - 1).transpose();
    const double total = sum(row);
    out = Prediction::from_probs(total > 0.0 ? Vec(row / total) : p0, "ecalp");
  }

  if (cfg.full_stream || cfg.window > 0) {
    state.window.push_back({x, p0});
    if (!cfg.full_stream)
      while (state.window.size() > cfg.window) state.window.pop_front();
  }
  ++state.step_counter;
  return out;
}

}  // namespace vlmtta
