#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace vlmtta {

using Vec = Eigen::VectorXd;
// Row-major so that a class bank or a view stack is a contiguous list of rows.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Raised for malformed inputs: bad shapes, out-of-range hyperparameters,
/// incompatible bundles. The CLI maps these to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for on-disk problems (missing blobs, size mismatch, bad manifest).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sequential dot product. Every similarity in the library goes through this so
// that results never depend on SIMD alignment or on where a row happens to live.
template <class A, class B>
double dot(const A& a, const B& b) {
  double acc = 0.0;
  const Eigen::Index n = a.size();
  for (Eigen::Index i = 0; i < n; ++i) acc += a(i) * b(i);
  return acc;
}

template <class A>
double sum(const A& a) {
  double acc = 0.0;
  const Eigen::Index n = a.size();
  for (Eigen::Index i = 0; i < n; ++i) acc += a(i);
  return acc;
}

template <class A>
double norm(const A& a) {
  return std::sqrt(dot(a, a));
}

inline Eigen::Index argmax(const Vec& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

}  // namespace vlmtta
