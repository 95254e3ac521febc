#pragma once

#include <cstdint>

#include "vlmtta/embedding_store.hpp"
#include "vlmtta/rng.hpp"

namespace vlmtta {

/// Knobs of the seeded synthetic bundle generator.
///
/// Noise sigmas are per coordinate: a view is normalize(prototype + sigma * g)
/// with g ~ N(0, I_D).
struct SynthSpec {
  std::uint64_t seed = 0;
  int num_classes = 10;
  int dim = 64;
  int num_samples = 500;
  int views_per_sample = 64;
  double class_separation = 1.0;
  double view_noise_sigma = 0.9;
  double weak_noise_sigma = 0.7;
  double ood_class_fraction = 0.0;
  double adversarial_fraction = 0.0;
  // Extra templates are jittered copies of the prototypes.
  int num_templates = 1;
  double template_noise_sigma = 0.0125;
  // Logit scale 10 puts zero-shot calibration of these clouds in the range
  // reported for CLIP; at 100 the softmax saturates.
  ScoringRule scoring{ScoreKind::softmax, 10.0, 0.0};
  std::string dataset_name = "synthetic";

  /// Throws ValidationError naming the first offending field.
  void validate() const;
};

/// Deterministic in `spec`: equal specs give bit-identical bundles.
///
/// Prototype recipe: one shared random unit center c, and per class a direction
/// a_k orthonormalized (Gram-Schmidt) against c and the earlier directions while
/// room remains in R^D; prototype_k = normalize(c + separation * a_k). The
/// pairwise prototype cosine is therefore 1 / (1 + separation^2) when C < D.
/// Features are rounded through float32 so that memory equals disk.
EmbeddingBundle generate_synthetic(const SynthSpec& spec);

/// Pushes every view of `sample` toward `bank` row `target` in steps of 0.05
/// (v <- normalize((1 - a) v + a t_target)) until the weak view's zero-shot
/// argmax differs from the sample label. Flags the sample adversarial.
/// Stand-in for transferred pixel-space attacks.
void perturb_toward_class(SampleRecord& sample, const Mat& bank, const ScoringRule& rule,
                          std::uint32_t target);

/// Copy of `bundle` where every sample has been perturbed toward a seeded wrong
/// class and flagged adversarial.
EmbeddingBundle make_adversarial_bundle(const EmbeddingBundle& bundle, std::uint64_t seed);

}  // namespace vlmtta
