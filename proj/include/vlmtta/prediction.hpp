#pragma once

#include <optional>
#include <string>

#include "vlmtta/types.hpp"

namespace vlmtta {

/// Output of any method. Vote-only methods (ZERO) carry no probabilities and
/// no confidence.
struct Prediction {
  std::optional<Vec> probs;
  std::size_t hard_label = 0;
  std::optional<double> confidence;
  std::string method_tag;

  static Prediction from_probs(Vec p, std::string tag) {
    Prediction out;
    out.hard_label = static_cast<std::size_t>(argmax(p));
    out.confidence = p(static_cast<Eigen::Index>(out.hard_label));
    out.probs = std::move(p);
    out.method_tag = std::move(tag);
    return out;
  }

  static Prediction from_vote(std::size_t label, std::string tag) {
    Prediction out;
    out.hard_label = label;
    out.method_tag = std::move(tag);
    return out;
  }
};

/// Bitwise equality (probabilities compared exactly).
inline bool identical(const Prediction& a, const Prediction& b) {
  if (a.hard_label != b.hard_label || a.confidence != b.confidence) return false;
  if (a.probs.has_value() != b.probs.has_value()) return false;
  if (!a.probs) return true;
  return a.probs->size() == b.probs->size() && *a.probs == *b.probs;
}

}  // namespace vlmtta
