#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vlmtta/embedding_store.hpp"
#include "vlmtta/prediction.hpp"

namespace vlmtta {

struct MetricReport {
  std::string method_tag;
  std::string bundle_name;
  std::string config_hash;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::optional<double> ece;
  std::optional<double> auroc;
  std::size_t n_evaluated = 0;
  std::vector<double> per_class_accuracy;  // NaN for classes with no samples
  std::vector<std::size_t> per_class_count;
  // FNV-1a digest of the evaluated sample ids, in sorted order.
  std::string evaluated_ids_digest;
};

/// Fraction of predictions whose hard label matches. Throws on empty input or
/// length mismatch.
double accuracy(const std::vector<Prediction>& preds, const std::vector<std::uint32_t>& labels);

/// Expected calibration error over `bins` equal-width bins (b/B, (b+1)/B];
/// confidence 0 lands in bin 0. Throws when a prediction has no confidence.
double ece(const std::vector<Prediction>& preds, const std::vector<std::uint32_t>& labels,
           int bins = 20);

/// Bin index for `confidence` under the convention above.
int ece_bin(double confidence, int bins);

/// Mann-Whitney AUROC with ties counted half; sorting-based, O(n log n).
double auroc(const std::vector<double>& id_scores, const std::vector<double>& ood_scores);

struct OodSplit {
  std::vector<std::size_t> kept_classes;       // original indices, ascending
  std::vector<std::size_t> discarded_classes;  // original indices, ascending
  EmbeddingBundle bundle;  // text bank restricted to kept classes, labels remapped
};

/// Discards floor(fraction * C) classes chosen uniformly by `seed`. Samples of
/// discarded classes are flagged ood and keep their original label; the rest
/// are relabeled into the kept-class index space.
OodSplit ood_split(const EmbeddingBundle& bundle, double fraction, std::uint64_t seed);

/// accuracy(mixed, clean subset) - accuracy(clean). Both reports must cover the
/// same clean sample ids.
double stability_delta(const MetricReport& clean, const MetricReport& mixed);

std::string ids_digest(std::vector<std::string> ids);

/// Fills accuracy, per-class accuracy, ECE (when every prediction has a
/// confidence), n_evaluated and the id digest.
MetricReport evaluate(const std::vector<Prediction>& preds, const std::vector<std::uint32_t>& labels,
                      const std::vector<std::string>& ids, std::size_t num_classes, int ece_bins = 20);

// ---- report I/O -------------------------------------------------------------

std::string report_csv_header();
std::string report_csv_row(const MetricReport& r);
void write_reports_csv(std::ostream& out, const std::vector<MetricReport>& reports);
std::vector<MetricReport> read_reports_csv(std::istream& in);

/// Methods as rows, bundles as columns, plus an "Avg." column; accuracy in
/// percent with two decimals. Row and column order follow first appearance.
std::string render_markdown_table(const std::vector<MetricReport>& reports);

}  // namespace vlmtta
