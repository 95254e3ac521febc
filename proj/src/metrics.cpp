#include "vlmtta/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "vlmtta/rng.hpp"

namespace vlmtta {

namespace {

void check_lengths(const std::vector<Prediction>& preds, const std::vector<std::uint32_t>& labels) {
  if (preds.empty()) throw ValidationError("metric over an empty prediction list");
  if (preds.size() != labels.size()) throw ValidationError("predictions and labels differ in length");
}

}  // namespace

double accuracy(const std::vector<Prediction>& preds, const std::vector<std::uint32_t>& labels) {
  check_lengths(preds, labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i].hard_label == labels[i];
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

int ece_bin(double confidence, int bins) {
  if (!(confidence > 0.0)) return 0;
  const double b = static_cast<double>(bins);
  int bin = static_cast<int>(std::ceil(confidence * b)) - 1;
  bin = std::clamp(bin, 0, bins - 1);
  // Snap to the exact (b/B, (b+1)/B] interval despite rounding in the product.
  while (bin > 0 && confidence <= static_cast<double>(bin) / b) --bin;
  while (bin < bins - 1 && confidence > static_cast<double>(bin + 1) / b) ++bin;
  return bin;
}

double ece(const std::vector<Prediction>& preds, const std::vector<std::uint32_t>& labels,
           int bins) {
  check_lengths(preds, labels);
  if (bins < 1) throw ValidationError("ECE needs at least one bin");
  std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0);
  std::vector<double> correct(static_cast<std::size_t>(bins), 0.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(bins), 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!preds[i].confidence)
      throw ValidationError("ECE needs confidences; method '" + preds[i].method_tag +
                            "' only produces hard labels");
    const double c = *preds[i].confidence;
    const auto b = static_cast<std::size_t>(ece_bin(c, bins));
    conf_sum[b] += c;
    correct[b] += preds[i].hard_label == labels[i] ? 1.0 : 0.0;
    ++count[b];
  }
  const double n = static_cast<double>(preds.size());
  double total = 0.0;
  for (std::size_t b = 0; b < count.size(); ++b) {
    if (count[b] == 0) continue;
    const double nb = static_cast<double>(count[b]);
    total += (nb / n) * std::abs(correct[b] / nb - conf_sum[b] / nb);
  }
  return total;
}

double auroc(const std::vector<double>& id_scores, const std::vector<double>& ood_scores) {
  if (id_scores.empty() || ood_scores.empty())
    throw ValidationError("AUROC needs at least one in-distribution and one OOD score");
  struct Item {
    double score;
    bool id;
  };
  std::vector<Item> all;
  all.reserve(id_scores.size() + ood_scores.size());
  for (double s : id_scores) all.push_back({s, true});
  for (double s : ood_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
  // Mid-ranks (1-based) over tie groups.
  double id_rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (all[k].id) id_rank_sum += mid;
    i = j;
  }
  const double n_id = static_cast<double>(id_scores.size());
  const double n_ood = static_cast<double>(ood_scores.size());
  return (id_rank_sum - n_id * (n_id + 1.0) / 2.0) / (n_id * n_ood);
}

OodSplit ood_split(const EmbeddingBundle& bundle, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0))
    throw ValidationError("OOD fraction must lie in [0, 1)");
  const auto C = static_cast<std::size_t>(bundle.num_classes());
  const auto n_discard = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(C)));
  std::vector<std::size_t> perm(C);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(perm);

  OodSplit out;
  out.discarded_classes.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_discard));
  out.kept_classes.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_discard), perm.end());
  std::sort(out.discarded_classes.begin(), out.discarded_classes.end());
  std::sort(out.kept_classes.begin(), out.kept_classes.end());

  std::vector<long> remap(C, -1);
  for (std::size_t i = 0; i < out.kept_classes.size(); ++i)
    remap[out.kept_classes[i]] = static_cast<long>(i);

  EmbeddingBundle& b = out.bundle;
  b = bundle;
  b.class_names.clear();
  for (std::size_t k : out.kept_classes) b.class_names.push_back(bundle.class_names[k]);
  for (std::size_t t = 0; t < bundle.text_features.size(); ++t) {
    Mat m(static_cast<Eigen::Index>(out.kept_classes.size()), bundle.dim);
    for (std::size_t i = 0; i < out.kept_classes.size(); ++i)
      m.row(static_cast<Eigen::Index>(i)) =
          bundle.text_features[t].row(static_cast<Eigen::Index>(out.kept_classes[i]));
    b.text_features[t] = std::move(m);
  }
  for (SampleRecord& s : b.samples) {
    if (s.flag == SampleFlag::ood) continue;
    if (s.label >= C) continue;
    if (remap[s.label] < 0) {
      s.flag = SampleFlag::ood;
    } else {
      s.label = static_cast<std::uint32_t>(remap[s.label]);
    }
  }
  return out;
}

std::string ids_digest(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const std::string& id : ids) {
    h = fnv1a64(id, h);
    h = fnv1a64(std::string_view("\n", 1), h);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double stability_delta(const MetricReport& clean, const MetricReport& mixed) {
  if (clean.evaluated_ids_digest != mixed.evaluated_ids_digest ||
      clean.n_evaluated != mixed.n_evaluated)
    throw ValidationError("stability delta needs both reports over the same clean sample ids");
  return mixed.accuracy - clean.accuracy;
}

MetricReport evaluate(const std::vector<Prediction>& preds, const std::vector<std::uint32_t>& labels,
                      const std::vector<std::string>& ids, std::size_t num_classes, int ece_bins) {
  MetricReport r;
  r.n_evaluated = preds.size();
  r.evaluated_ids_digest = ids_digest(ids);
  r.per_class_accuracy.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
  r.per_class_count.assign(num_classes, 0);
  if (preds.empty()) return r;
  r.accuracy = accuracy(preds, labels);
  std::vector<std::size_t> correct(num_classes, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] >= num_classes) continue;
    ++r.per_class_count[labels[i]];
    correct[labels[i]] += preds[i].hard_label == labels[i];
  }
  for (std::size_t k = 0; k < num_classes; ++k)
    if (r.per_class_count[k] > 0)
      r.per_class_accuracy[k] =
          static_cast<double>(correct[k]) / static_cast<double>(r.per_class_count[k]);
  const bool all_confident =
      std::all_of(preds.begin(), preds.end(), [](const Prediction& p) { return p.confidence.has_value(); });
  if (all_confident) r.ece = ece(preds, labels, ece_bins);
  return r;
}

}  // namespace vlmtta
