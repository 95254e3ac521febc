#include "vlmtta/embedding_store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace vlmtta {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(SampleFlag flag) {
  switch (flag) {
    case SampleFlag::clean: return "clean";
    case SampleFlag::ood: return "ood";
    case SampleFlag::adversarial: return "adversarial";
  }
  return "unknown";
}

SampleFlag sample_flag_from_string(const std::string& name) {
  if (name == "clean") return SampleFlag::clean;
  if (name == "ood") return SampleFlag::ood;
  if (name == "adversarial") return SampleFlag::adversarial;
  throw ValidationError("unknown sample flag '" + name + "' (expected clean, ood or adversarial)");
}

const char* to_string(ScoreKind kind) {
  return kind == ScoreKind::softmax ? "softmax" : "sigmoid";
}

ScoreKind score_kind_from_string(const std::string& name) {
  if (name == "softmax") return ScoreKind::softmax;
  if (name == "sigmoid") return ScoreKind::sigmoid;
  throw ValidationError("unknown scoring kind '" + name + "' (expected softmax or sigmoid)");
}

void ScoringRule::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw ValidationError("scoring scale must be a positive finite number");
  if (!std::isfinite(bias)) throw ValidationError("scoring bias must be finite");
}

std::string sample_id(std::size_t index) { return "s" + std::to_string(index); }

int EmbeddingBundle::views_per_sample() const {
  return samples.empty() ? 0 : static_cast<int>(samples.front().views.rows());
}

std::vector<std::size_t> EmbeddingBundle::stream_sequence() const {
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return samples[a].stream_position < samples[b].stream_position;
  });
  return order;
}

namespace {

void check_rows_unit(const Mat& m, double tol, const std::string& what) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = norm(m.row(r));
    if (!std::isfinite(n) || std::abs(n - 1.0) > tol) {
      std::ostringstream os;
      os << what << " row " << r << " has norm " << n << " (tolerance " << tol << ")";
      throw ValidationError(os.str());
    }
  }
}

}  // namespace

void EmbeddingBundle::validate(double norm_tolerance) const {
  if (format_version != kBundleFormatVersion)
    throw ValidationError("unsupported format_version " + std::to_string(format_version));
  if (dim <= 0) throw ValidationError("dim must be positive");
  if (class_names.empty()) throw ValidationError("bundle needs at least one class");
  if (templates.empty()) throw ValidationError("bundle needs at least one template");
  if (text_features.size() != templates.size())
    throw ValidationError("text_features count does not match template count");
  scoring.validate();
  const auto C = static_cast<Eigen::Index>(class_names.size());
  for (std::size_t t = 0; t < text_features.size(); ++t) {
    const Mat& m = text_features[t];
    if (m.rows() != C || m.cols() != dim)
      throw ValidationError("text_features[" + std::to_string(t) + "] has wrong shape");
    check_rows_unit(m, norm_tolerance, "text_features[" + std::to_string(t) + "]");
  }
  const int V = views_per_sample();
  std::vector<char> seen(samples.size(), 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SampleRecord& s = samples[i];
    if (s.views.rows() != V || V < 1)
      throw ValidationError("sample " + s.id + " has a different view count");
    if (s.views.cols() != dim) throw ValidationError("sample " + s.id + " has wrong dimension");
    if (s.flag != SampleFlag::ood && s.label >= static_cast<std::uint32_t>(C))
      throw ValidationError("sample " + s.id + " label out of range");
    check_rows_unit(s.views, norm_tolerance, "sample " + s.id + " view");
    if (s.stream_position >= samples.size() || seen[s.stream_position])
      throw ValidationError("stream positions are not a permutation (sample " + s.id + ")");
    seen[s.stream_position] = 1;
  }
}

bool EmbeddingBundle::operator==(const EmbeddingBundle& o) const {
  if (format_version != o.format_version || dataset_name != o.dataset_name || dim != o.dim ||
      class_names != o.class_names || templates != o.templates || scoring != o.scoring ||
      has_stream_order != o.has_stream_order || samples != o.samples ||
      text_features.size() != o.text_features.size())
    return false;
  for (std::size_t t = 0; t < text_features.size(); ++t) {
    if (text_features[t].rows() != o.text_features[t].rows() ||
        text_features[t].cols() != o.text_features[t].cols() ||
        text_features[t] != o.text_features[t])
      return false;
  }
  return true;
}

namespace blob {
namespace {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

template <class T>
std::vector<T> read_blob(const fs::path& file, std::size_t expected_count) {
  std::error_code ec;
  if (!fs::exists(file, ec)) throw FormatError("missing blob " + file.string());
  const auto size = fs::file_size(file, ec);
  if (ec) throw FormatError("cannot stat blob " + file.string());
  const auto expected = expected_count * sizeof(T);
  if (size != expected) {
    std::ostringstream os;
    os << "size mismatch in blob " << file.filename().string() << ": expected " << expected
       << " bytes, found " << size;
    throw FormatError(os.str());
  }
  std::vector<T> out(expected_count);
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open blob " + file.string());
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(expected));
  if (!in) throw FormatError("short read on blob " + file.string());
  for (auto& v : out) v = to_little(v);
  return out;
}

template <class T>
void write_blob(const fs::path& file, const std::vector<T>& values) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + file.string());
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(T)));
  } else {
    for (T v : values) {
      const T le = to_little(v);
      out.write(reinterpret_cast<const char*>(&le), sizeof(T));
    }
  }
  if (!out) throw FormatError("write failed for " + file.string());
}

}  // namespace

std::vector<float> read_f32(const fs::path& f, std::size_t n) { return read_blob<float>(f, n); }
std::vector<std::uint32_t> read_u32(const fs::path& f, std::size_t n) {
  return read_blob<std::uint32_t>(f, n);
}
std::vector<std::uint8_t> read_u8(const fs::path& f, std::size_t n) {
  return read_blob<std::uint8_t>(f, n);
}
std::vector<double> read_f64(const fs::path& f, std::size_t n) { return read_blob<double>(f, n); }
void write_f32(const fs::path& f, const std::vector<float>& v) { write_blob(f, v); }
void write_u32(const fs::path& f, const std::vector<std::uint32_t>& v) { write_blob(f, v); }
void write_u8(const fs::path& f, const std::vector<std::uint8_t>& v) { write_blob(f, v); }
void write_f64(const fs::path& f, const std::vector<double>& v) { write_blob(f, v); }

}  // namespace blob

void save_bundle(const EmbeddingBundle& bundle, const fs::path& dir) {
  bundle.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw FormatError("cannot create directory " + dir.string());

  const auto C = static_cast<std::size_t>(bundle.num_classes());
  const auto D = static_cast<std::size_t>(bundle.dim);
  const auto N = bundle.samples.size();
  const auto V = static_cast<std::size_t>(bundle.views_per_sample());

  json manifest = {
      {"format_version", bundle.format_version},
      {"dataset_name", bundle.dataset_name},
      {"dim", bundle.dim},
      {"num_classes", C},
      {"num_samples", N},
      {"views_per_sample", V},
      {"num_templates", bundle.templates.size()},
      {"scoring",
       {{"kind", to_string(bundle.scoring.kind)},
        {"scale", bundle.scoring.scale},
        {"bias", bundle.scoring.bias}}},
      {"class_names", bundle.class_names},
      {"templates", bundle.templates},
      {"has_stream_order", bundle.has_stream_order},
  };
  {
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
  }

  std::vector<float> text;
  text.reserve(bundle.text_features.size() * C * D);
  for (const Mat& m : bundle.text_features)
    for (Eigen::Index i = 0; i < m.size(); ++i) text.push_back(static_cast<float>(m.data()[i]));
  blob::write_f32(dir / "text_features.f32", text);

  std::vector<float> feats;
  feats.reserve(N * V * D);
  std::vector<std::uint32_t> labels, order;
  std::vector<std::uint8_t> flags;
  for (const SampleRecord& s : bundle.samples) {
    for (Eigen::Index i = 0; i < s.views.size(); ++i)
      feats.push_back(static_cast<float>(s.views.data()[i]));
    labels.push_back(s.label);
    flags.push_back(static_cast<std::uint8_t>(s.flag));
    order.push_back(s.stream_position);
  }
  blob::write_f32(dir / "samples.f32", feats);
  blob::write_u32(dir / "labels.u32", labels);
  blob::write_u8(dir / "flags.u8", flags);
  if (bundle.has_stream_order) {
    blob::write_u32(dir / "stream_order.u32", order);
  } else {
    fs::remove(dir / "stream_order.u32", ec);
  }
}

EmbeddingBundle load_bundle(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("missing manifest " + manifest_path.string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest.json: " + std::string(e.what()));
  }

  EmbeddingBundle b;
  try {
    b.format_version = m.at("format_version").get<int>();
    if (b.format_version != kBundleFormatVersion)
      throw FormatError("unknown format_version " + std::to_string(b.format_version));
    b.dataset_name = m.at("dataset_name").get<std::string>();
    b.dim = m.at("dim").get<int>();
    b.class_names = m.at("class_names").get<std::vector<std::string>>();
    b.templates = m.at("templates").get<std::vector<std::string>>();
    b.has_stream_order = m.at("has_stream_order").get<bool>();
    const auto& sc = m.at("scoring");
    b.scoring.kind = score_kind_from_string(sc.at("kind").get<std::string>());
    b.scoring.scale = sc.at("scale").get<double>();
    b.scoring.bias = sc.value("bias", 0.0);
    const auto C = m.at("num_classes").get<std::size_t>();
    const auto T = m.at("num_templates").get<std::size_t>();
    const auto N = m.at("num_samples").get<std::size_t>();
    const auto V = m.at("views_per_sample").get<std::size_t>();
    if (b.dim <= 0) throw FormatError("manifest dim must be positive");
    if (C != b.class_names.size()) throw FormatError("num_classes disagrees with class_names");
    if (T != b.templates.size()) throw FormatError("num_templates disagrees with templates");
    const auto D = static_cast<std::size_t>(b.dim);

    const auto text = blob::read_f32(dir / "text_features.f32", T * C * D);
    b.text_features.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
      Mat tf(static_cast<Eigen::Index>(C), b.dim);
      for (std::size_t i = 0; i < C * D; ++i) tf.data()[i] = text[t * C * D + i];
      b.text_features.push_back(std::move(tf));
    }

    const auto feats = blob::read_f32(dir / "samples.f32", N * V * D);
    const auto labels = blob::read_u32(dir / "labels.u32", N);
    const auto flags = blob::read_u8(dir / "flags.u8", N);
    std::vector<std::uint32_t> order;
    if (b.has_stream_order) order = blob::read_u32(dir / "stream_order.u32", N);

    b.samples.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
      SampleRecord& s = b.samples[i];
      s.id = sample_id(i);
      s.label = labels[i];
      if (flags[i] > 2) throw FormatError("flags.u8 entry " + std::to_string(i) + " is not 0, 1 or 2");
      s.flag = static_cast<SampleFlag>(flags[i]);
      s.stream_position = b.has_stream_order ? order[i] : static_cast<std::uint32_t>(i);
      s.views.resize(static_cast<Eigen::Index>(V), b.dim);
      const std::size_t base = i * V * D;
      for (std::size_t k = 0; k < V * D; ++k) s.views.data()[k] = feats[base + k];
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }

  try {
    b.validate(kLoadNormTolerance);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("invalid bundle in ") + dir.string() + ": " + e.what());
  }
  return b;
}

}  // namespace vlmtta
