#pragma once

// Shared test fixtures and independent reference implementations. Oracles here
// are written the slow, obvious way and never call the library routine they
// check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "vlmtta/embedding_store.hpp"
#include "vlmtta/rng.hpp"
#include "vlmtta/synthetic.hpp"

namespace vlmtta::testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("vlmtta_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Every regular file below `dir`, keyed by relative path, with its bytes.
inline std::map<std::string, std::string> snapshot_dir(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_bytes(e.path());
  return out;
}

inline Mat random_unit_rows(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    double n2 = 0.0;
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = rng.normal();
      n2 += m(r, c) * m(r, c);
    }
    m.row(r) /= std::sqrt(n2);
  }
  return m;
}

inline double uniform_in(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

inline SynthSpec small_spec(std::uint64_t seed, int C = 5, int D = 16, int N = 40, int V = 12) {
  SynthSpec s;
  s.seed = seed;
  s.num_classes = C;
  s.dim = D;
  s.num_samples = N;
  s.views_per_sample = V;
  s.weak_noise_sigma = 0.3;
  s.view_noise_sigma = 0.4;
  return s;
}

/// The frozen efficacy spec; every other field keeps its default.
inline SynthSpec frozen_spec() {
  SynthSpec s;
  s.seed = 0;
  s.num_classes = 10;
  s.dim = 64;
  s.num_samples = 500;
  s.views_per_sample = 64;
  s.class_separation = 1.0;
  s.view_noise_sigma = 0.9;
  s.weak_noise_sigma = 0.7;
  return s;
}

// ---- oracles ------------------------------------------------------------------

/// Zero-shot softmax prediction computed with plain scalar loops.
inline std::size_t scalar_zero_shot_label(const SampleRecord& s, const Mat& bank, double scale) {
  std::size_t best = 0;
  double best_logit = -1e300;
  for (Eigen::Index k = 0; k < bank.rows(); ++k) {
    double c = 0.0;
    for (Eigen::Index d = 0; d < bank.cols(); ++d) c += s.views(0, d) * bank(k, d);
    if (scale * c > best_logit) {
      best_logit = scale * c;
      best = static_cast<std::size_t>(k);
    }
  }
  return best;
}

/// ECE by scanning every bin for membership (b/B, (b+1)/B], with 0 in bin 0.
inline double brute_ece(const std::vector<double>& conf, const std::vector<bool>& correct, int bins) {
  const double n = static_cast<double>(conf.size());
  double total = 0.0;
  for (int b = 0; b < bins; ++b) {
    const double lo = static_cast<double>(b) / bins;
    const double hi = static_cast<double>(b + 1) / bins;
    double cs = 0.0, acc = 0.0, cnt = 0.0;
    for (std::size_t i = 0; i < conf.size(); ++i) {
      const bool member = (conf[i] > lo && conf[i] <= hi) || (b == 0 && conf[i] == 0.0);
      if (!member) continue;
      cs += conf[i];
      acc += correct[i] ? 1.0 : 0.0;
      cnt += 1.0;
    }
    if (cnt > 0) total += (cnt / n) * std::abs(acc / cnt - cs / cnt);
  }
  return total;
}

inline double brute_auroc(const std::vector<double>& id, const std::vector<double>& ood) {
  double s = 0.0;
  for (double a : id)
    for (double b : ood) s += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  return s / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

inline std::size_t brute_vote(const std::vector<std::size_t>& votes, std::size_t classes) {
  std::size_t best = 0, best_count = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    std::size_t c = 0;
    for (std::size_t v : votes) c += v == k;
    if (c > best_count) {
      best_count = c;
      best = k;
    }
  }
  return best;
}

/// Central differences of `f` with respect to every entry of `x`.
inline Mat central_differences(const std::function<double(const Mat&)>& f, const Mat& x,
                               double h = 1e-4) {
  Mat g(x.rows(), x.cols());
  Mat probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const double up = f(probe);
    probe.data()[i] = orig - h;
    const double down = f(probe);
    probe.data()[i] = orig;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

struct GradCheck {
  double worst = 0.0;  // largest per-coordinate relative error
  bool ok = true;
};

/// Per-coordinate relative error |a - n| / max(|a|, |n|, floor). The floor keeps
/// coordinates whose true derivative is ~0 from dividing rounding noise by zero.
inline GradCheck compare_gradients(const Mat& analytic, const Mat& numeric, double tol,
                                   double floor = 1e-6) {
  GradCheck out;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i], n = numeric.data()[i];
    const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
    out.worst = std::max(out.worst, rel);
    if (!(rel < tol)) out.ok = false;
  }
  return out;
}

/// Fixed point of F = (1 - alpha) Y + alpha S F, solved densely.
inline Mat dense_propagation(const Mat& S, const Mat& Y, double alpha) {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(S.rows(), S.cols());
  const Eigen::MatrixXd A = I - alpha * Eigen::MatrixXd(S);
  return A.fullPivLu().solve((1.0 - alpha) * Eigen::MatrixXd(Y));
}

/// Class probabilities of one view under the bank rows normalize(t_k + d_k),
/// written with scalar loops.
inline std::vector<double> oracle_probs(const double* view, const Mat& bank, const Mat& delta,
                                        double scale, bool sigmoid, double bias) {
  const Eigen::Index C = bank.rows(), D = bank.cols();
  std::vector<double> z(static_cast<std::size_t>(C));
  for (Eigen::Index k = 0; k < C; ++k) {
    double n2 = 0.0, c = 0.0;
    for (Eigen::Index d = 0; d < D; ++d) {
      const double t = bank(k, d) + delta(k, d);
      n2 += t * t;
      c += view[d] * t;
    }
    z[static_cast<std::size_t>(k)] = scale * c / std::sqrt(n2) + (sigmoid ? bias : 0.0);
  }
  std::vector<double> p(z.size());
  double total = 0.0;
  if (sigmoid) {
    for (std::size_t k = 0; k < z.size(); ++k) total += p[k] = 1.0 / (1.0 + std::exp(-z[k]));
  } else {
    const double hi = *std::max_element(z.begin(), z.end());
    for (std::size_t k = 0; k < z.size(); ++k) total += p[k] = std::exp(z[k] - hi);
  }
  for (double& v : p) v /= total;
  return p;
}

inline double oracle_entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

enum class OracleLoss { marginal, marginal_dispersion, pointwise, weighted };

/// Reference test-time losses as a function of the shift. For the weighted
/// loss the per-view weights are supplied (they are constants of the step).
inline double oracle_loss(OracleLoss kind, const Mat& views, const Mat& bank, const Mat& delta,
                          double scale, bool sigmoid, double bias, double lambda = 1.0,
                          const std::vector<double>& weights = {}) {
  const Eigen::Index M = views.rows(), C = bank.rows(), D = bank.cols();
  std::vector<std::vector<double>> probs;
  for (Eigen::Index m = 0; m < M; ++m)
    probs.push_back(oracle_probs(views.row(m).data(), bank, delta, scale, sigmoid, bias));
  double loss = 0.0;
  if (kind == OracleLoss::marginal || kind == OracleLoss::marginal_dispersion) {
    std::vector<double> mean(static_cast<std::size_t>(C), 0.0);
    for (const auto& p : probs)
      for (std::size_t k = 0; k < p.size(); ++k) mean[k] += p[k] / static_cast<double>(M);
    loss = oracle_entropy(mean);
  } else {
    for (std::size_t m = 0; m < probs.size(); ++m) {
      const double w = kind == OracleLoss::weighted ? weights[m] : 1.0;
      loss += w * oracle_entropy(probs[m]) / static_cast<double>(M);
    }
  }
  if (kind == OracleLoss::marginal_dispersion) {
    Mat rows(C, D);
    for (Eigen::Index k = 0; k < C; ++k) {
      double n2 = 0.0;
      for (Eigen::Index d = 0; d < D; ++d) n2 += std::pow(bank(k, d) + delta(k, d), 2);
      for (Eigen::Index d = 0; d < D; ++d) rows(k, d) = (bank(k, d) + delta(k, d)) / std::sqrt(n2);
    }
    for (Eigen::Index k = 0; k < C; ++k) {
      double dist2 = 0.0;
      for (Eigen::Index d = 0; d < D; ++d) {
        double centroid = 0.0;
        for (Eigen::Index j = 0; j < C; ++j) centroid += rows(j, d) / static_cast<double>(C);
        dist2 += std::pow(centroid - rows(k, d), 2);
      }
      loss += lambda * std::sqrt(dist2);
    }
  }
  return loss;
}

/// DPE objective: entropy of the mixed prediction plus the alignment penalty of
/// class `anchor`, with t' = normalize(T + dt) and v' = normalize(P + dv).
inline double oracle_dpe_loss(const Vec& x, const Mat& T, const Mat& P, const Mat& dt, const Mat& dv,
                              double scale, bool sigmoid, double bias, double mix, double eta,
                              std::size_t anchor) {
  const Eigen::Index C = T.rows(), D = T.cols();
  std::vector<double> z(static_cast<std::size_t>(C));
  Mat tn(C, D), vn(C, D);
  for (Eigen::Index k = 0; k < C; ++k) {
    double a2 = 0.0, b2 = 0.0;
    for (Eigen::Index d = 0; d < D; ++d) {
      a2 += std::pow(T(k, d) + dt(k, d), 2);
      b2 += std::pow(P(k, d) + dv(k, d), 2);
    }
    double ct = 0.0, cv = 0.0;
    for (Eigen::Index d = 0; d < D; ++d) {
      tn(k, d) = (T(k, d) + dt(k, d)) / std::sqrt(a2);
      vn(k, d) = (P(k, d) + dv(k, d)) / std::sqrt(b2);
      ct += x(d) * tn(k, d);
      cv += x(d) * vn(k, d);
    }
    z[static_cast<std::size_t>(k)] = scale * ct + (sigmoid ? bias : 0.0) + mix * scale * cv;
  }
  std::vector<double> p(z.size());
  double total = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k)
    total += p[k] = sigmoid ? 1.0 / (1.0 + std::exp(-z[k])) : std::exp(z[k]);
  for (double& v : p) v /= total;
  double align = 0.0;
  const auto a = static_cast<Eigen::Index>(anchor);
  for (Eigen::Index d = 0; d < D; ++d) align += tn(a, d) * vn(a, d);
  return oracle_entropy(p) + eta * (1.0 - align);
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace vlmtta::testing
