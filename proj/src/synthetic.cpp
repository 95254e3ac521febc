#include "vlmtta/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "vlmtta/scoring.hpp"

namespace vlmtta {

void SynthSpec::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ValidationError(std::string(name) + " must be a positive integer");
  };
  positive(num_classes, "num_classes");
  positive(dim, "dim");
  if (num_samples < 0) throw ValidationError("num_samples must be non-negative");
  positive(views_per_sample, "views_per_sample");
  positive(num_templates, "num_templates");
  if (!(class_separation > 0.0)) throw ValidationError("class_separation must be positive");
  if (!(view_noise_sigma >= 0.0)) throw ValidationError("view_noise_sigma must be non-negative");
  if (!(weak_noise_sigma >= 0.0)) throw ValidationError("weak_noise_sigma must be non-negative");
  if (!(template_noise_sigma >= 0.0))
    throw ValidationError("template_noise_sigma must be non-negative");
  if (!(ood_class_fraction >= 0.0 && ood_class_fraction <= 1.0))
    throw ValidationError("ood_class_fraction must lie in [0, 1]");
  if (!(adversarial_fraction >= 0.0 && adversarial_fraction <= 1.0))
    throw ValidationError("adversarial_fraction must lie in [0, 1]");
  if (num_classes < 2 && adversarial_fraction > 0.0)
    throw ValidationError("adversarial samples need at least two classes");
  scoring.validate();
}

namespace {

Vec gaussian(Rng& rng, int d) {
  Vec g(d);
  for (int i = 0; i < d; ++i) g(i) = rng.normal();
  return g;
}

Vec noisy(const Vec& center, double sigma, Rng& rng) {
  const int d = static_cast<int>(center.size());
  if (sigma == 0.0) return center;
  return l2_normalize(center + sigma * gaussian(rng, d));
}

void round_to_f32(Mat& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

}  // namespace

EmbeddingBundle generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int C = spec.num_classes;
  const int D = spec.dim;

  const Vec center = l2_normalize(gaussian(rng, D));
  std::vector<Vec> basis{center};
  Mat protos(C, D);
  for (int k = 0; k < C; ++k) {
    Vec a = gaussian(rng, D);
    if (static_cast<int>(basis.size()) < D) {
      for (const Vec& b : basis) a -= dot(a, b) * b;
      if (norm(a) > 1e-8) {
        a = l2_normalize(a);
        basis.push_back(a);
      } else {
        a = l2_normalize(gaussian(rng, D));
      }
    } else {
      a = l2_normalize(a);
    }
    protos.row(k) = l2_normalize(center + spec.class_separation * a).transpose();
  }

  EmbeddingBundle b;
  b.dataset_name = spec.dataset_name;
  b.dim = D;
  b.scoring = spec.scoring;
  b.has_stream_order = true;
  for (int k = 0; k < C; ++k) b.class_names.push_back("class_" + std::to_string(k));
  for (int t = 0; t < spec.num_templates; ++t) {
    b.templates.push_back(t == 0 ? "a photo of a {}." : "template " + std::to_string(t) + " {}");
    Mat tf(C, D);
    for (int k = 0; k < C; ++k) {
      const Vec p = protos.row(k).transpose();
      tf.row(k) = (t == 0 ? p : noisy(p, spec.template_noise_sigma, rng)).transpose();
    }
    round_to_f32(tf);
    b.text_features.push_back(std::move(tf));
  }
  // Samples are drawn around the exact prototypes, not the rounded text rows.
  const int n_ood = static_cast<int>(std::floor(spec.ood_class_fraction * C));
  std::vector<int> class_perm(C);
  std::iota(class_perm.begin(), class_perm.end(), 0);
  rng.shuffle(class_perm);
  const std::set<int> ood_classes(class_perm.begin(), class_perm.begin() + n_ood);

  const int N = spec.num_samples;
  const int V = spec.views_per_sample;
  b.samples.resize(N);
  for (int i = 0; i < N; ++i) {
    SampleRecord& s = b.samples[i];
    s.id = sample_id(i);
    s.label = static_cast<std::uint32_t>(rng.below(C));
    const Vec p = protos.row(s.label).transpose();
    s.views.resize(V, D);
    s.views.row(0) = noisy(p, spec.weak_noise_sigma, rng).transpose();
    for (int v = 1; v < V; ++v) s.views.row(v) = noisy(p, spec.view_noise_sigma, rng).transpose();
    round_to_f32(s.views);
    s.flag = ood_classes.count(static_cast<int>(s.label)) ? SampleFlag::ood : SampleFlag::clean;
  }

  std::vector<std::uint32_t> order(N);
  std::iota(order.begin(), order.end(), 0u);
  rng.shuffle(order);
  for (int i = 0; i < N; ++i) b.samples[i].stream_position = order[i];

  const int n_adv = static_cast<int>(std::floor(spec.adversarial_fraction * N));
  if (n_adv > 0) {
    std::vector<int> candidates;
    for (int i = 0; i < N; ++i)
      if (b.samples[i].flag == SampleFlag::clean) candidates.push_back(i);
    rng.shuffle(candidates);
    candidates.resize(std::min<std::size_t>(candidates.size(), static_cast<std::size_t>(n_adv)));
    std::sort(candidates.begin(), candidates.end());
    for (int i : candidates) {
      SampleRecord& s = b.samples[i];
      auto target = static_cast<std::uint32_t>(rng.below(C - 1));
      if (target >= s.label) ++target;
      perturb_toward_class(s, b.text_features.front(), b.scoring, target);
    }
  }
  return b;
}

void perturb_toward_class(SampleRecord& sample, const Mat& bank, const ScoringRule& rule,
                          std::uint32_t target) {
  if (target >= bank.rows()) throw ValidationError("perturbation target out of range");
  const Mat original = sample.views;
  const Vec t = bank.row(target).transpose();
  for (int step = 1; step <= 20; ++step) {
    const double a = 0.05 * step;
    for (Eigen::Index v = 0; v < original.rows(); ++v) {
      const Vec mixed = (1.0 - a) * original.row(v).transpose() + a * t;
      sample.views.row(v) = l2_normalize(mixed).transpose();
    }
    const Vec probs = score(sample.views.row(0).transpose(), bank, rule).probs;
    if (argmax(probs) != static_cast<Eigen::Index>(sample.label)) break;
  }
  round_to_f32(sample.views);
  sample.flag = SampleFlag::adversarial;
}

EmbeddingBundle make_adversarial_bundle(const EmbeddingBundle& bundle, std::uint64_t seed) {
  if (bundle.num_classes() < 2) throw ValidationError("adversarial bundle needs two classes");
  EmbeddingBundle out = bundle;
  Rng rng(seed);
  const Mat& bank = out.text_features.front();
  for (SampleRecord& s : out.samples) {
    auto target = static_cast<std::uint32_t>(rng.below(out.num_classes() - 1));
    if (s.label < static_cast<std::uint32_t>(out.num_classes()) && target >= s.label) ++target;
    perturb_toward_class(s, bank, out.scoring, target);
  }
  return out;
}

}  // namespace vlmtta
