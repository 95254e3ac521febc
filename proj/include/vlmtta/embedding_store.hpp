#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vlmtta/types.hpp"

namespace vlmtta {

enum class SampleFlag : std::uint8_t { clean = 0, ood = 1, adversarial = 2 };

const char* to_string(SampleFlag flag);
SampleFlag sample_flag_from_string(const std::string& name);

enum class ScoreKind { softmax, sigmoid };

const char* to_string(ScoreKind kind);
ScoreKind score_kind_from_string(const std::string& name);

/// How cosine similarities become logits and probabilities.
///   softmax: logit_k = scale * cos_k, probs = softmax(logits)
///   sigmoid: logit_k = scale * cos_k + bias, probs = sigmoid(logits) / sum
struct ScoringRule {
  ScoreKind kind = ScoreKind::softmax;
  double scale = 100.0;
  double bias = 0.0;

  static ScoringRule softmax_default() { return {ScoreKind::softmax, 100.0, 0.0}; }
  static ScoringRule sigmoid_default() { return {ScoreKind::sigmoid, 100.0, -10.0}; }

  void validate() const;
  bool operator==(const ScoringRule&) const = default;
};

struct SampleRecord {
  std::string id;
  std::uint32_t label = 0;
  Mat views;  // [V x D], row 0 is the weak view
  SampleFlag flag = SampleFlag::clean;
  std::uint32_t stream_position = 0;

  auto weak_view() const { return views.row(0); }
  Eigen::Index num_views() const { return views.rows(); }

  bool operator==(const SampleRecord& o) const {
    return id == o.id && label == o.label && flag == o.flag &&
           stream_position == o.stream_position && views.rows() == o.views.rows() &&
           views.cols() == o.views.cols() && views == o.views;
  }
};

/// Sample ids are positional ("s<index>"); the on-disk layout carries no id
/// table, so the id of a record is a function of its slot in the bundle.
std::string sample_id(std::size_t index);

inline constexpr int kBundleFormatVersion = 1;
inline constexpr double kUnitNormTolerance = 1e-5;
inline constexpr double kLoadNormTolerance = 1e-3;

struct EmbeddingBundle {
  int format_version = kBundleFormatVersion;
  std::string dataset_name;
  int dim = 0;
  std::vector<std::string> class_names;
  std::vector<std::string> templates;
  std::vector<Mat> text_features;  // T entries of [C x D]
  std::vector<SampleRecord> samples;
  ScoringRule scoring;
  bool has_stream_order = false;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  int num_templates() const { return static_cast<int>(templates.size()); }
  int num_samples() const { return static_cast<int>(samples.size()); }
  /// Shared view count V; 0 for an empty bundle.
  int views_per_sample() const;

  /// Sample indices sorted by stream_position.
  std::vector<std::size_t> stream_sequence() const;

  /// Checks every structural invariant. `norm_tolerance` bounds |‖row‖ - 1|.
  void validate(double norm_tolerance = kUnitNormTolerance) const;

  bool operator==(const EmbeddingBundle& o) const;
};

/// Writes manifest.json plus the little-endian blobs into `dir` (created if
/// needed). Throws FormatError when the directory cannot be written.
void save_bundle(const EmbeddingBundle& bundle, const std::filesystem::path& dir);

/// Reads and re-validates a bundle. Rows are checked against a 1e-3 norm
/// tolerance and never renormalized.
EmbeddingBundle load_bundle(const std::filesystem::path& dir);

namespace blob {
std::vector<float> read_f32(const std::filesystem::path& file, std::size_t expected_count);
std::vector<std::uint32_t> read_u32(const std::filesystem::path& file, std::size_t expected_count);
std::vector<std::uint8_t> read_u8(const std::filesystem::path& file, std::size_t expected_count);
std::vector<double> read_f64(const std::filesystem::path& file, std::size_t expected_count);
void write_f32(const std::filesystem::path& file, const std::vector<float>& values);
void write_u32(const std::filesystem::path& file, const std::vector<std::uint32_t>& values);
void write_u8(const std::filesystem::path& file, const std::vector<std::uint8_t>& values);
void write_f64(const std::filesystem::path& file, const std::vector<double>& values);
}  // namespace blob

}  // namespace vlmtta
