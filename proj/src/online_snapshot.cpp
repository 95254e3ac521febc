#include <fstream>

#include <nlohmann/json.hpp>

#include "vlmtta/online.hpp"

namespace vlmtta {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kStateFormatVersion = 1;

// Arrays go to one float64 blob; the JSON side records (offset, rows, cols).
class BlobPack {
 public:
  json add(const Mat& m) {
    json ref = {{"offset", data_.size()}, {"rows", m.rows()}, {"cols", m.cols()}};
    data_.insert(data_.end(), m.data(), m.data() + m.size());
    return ref;
  }
  json add(const Vec& v) {
    json ref = {{"offset", data_.size()}, {"rows", v.size()}, {"cols", 1}};
    data_.insert(data_.end(), v.data(), v.data() + v.size());
    return ref;
  }
  const std::vector<double>& data() const { return data_; }

 private:
  std::vector<double> data_;
};

class BlobView {
 public:
  explicit BlobView(std::vector<double> data) : data_(std::move(data)) {}

  Mat mat(const json& ref) const {
    const auto [off, rows, cols] = extent(ref);
    Mat m(rows, cols);
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(off), rows * cols, m.data());
    return m;
  }
  Vec vec(const json& ref) const {
    const auto [off, rows, cols] = extent(ref);
    if (cols != 1) throw FormatError("state array is not a vector");
    Vec v(rows);
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(off), rows, v.data());
    return v;
  }

 private:
  std::tuple<std::size_t, Eigen::Index, Eigen::Index> extent(const json& ref) const {
    const auto off = ref.at("offset").get<std::size_t>();
    const auto rows = ref.at("rows").get<Eigen::Index>();
    const auto cols = ref.at("cols").get<Eigen::Index>();
    if (rows < 0 || cols < 0 || off + static_cast<std::size_t>(rows * cols) > data_.size())
      throw FormatError("state array reference out of range");
    return {off, rows, cols};
  }
  std::vector<double> data_;
};

json save_cache(const EntropyCache& c, BlobPack& pack) {
  json entries = json::array();
  for (std::size_t b = 0; b < c.buckets().size(); ++b)
    for (const CacheEntry& e : c.buckets()[b])
      entries.push_back({{"bucket", b},
                         {"entropy", e.entropy},
                         {"pseudo_label", e.pseudo_label},
                         {"feature", pack.add(e.feature)},
                         {"probs", pack.add(e.probs)}});
  return {{"classes", c.buckets().size()}, {"capacity", c.capacity()}, {"entries", entries}};
}

EntropyCache load_cache(const json& j, const BlobView& blob) {
  EntropyCache c(j.at("classes").get<std::size_t>(), j.at("capacity").get<std::size_t>());
  for (const json& e : j.at("entries")) {
    const auto bucket = e.at("bucket").get<std::size_t>();
    if (bucket >= c.buckets().size()) throw FormatError("cache bucket out of range");
    c.buckets()[bucket].push_back({blob.vec(e.at("feature")), e.at("entropy").get<double>(),
                                   e.at("pseudo_label").get<std::size_t>(),
                                   blob.vec(e.at("probs"))});
  }
  return c;
}

json save_items(const std::deque<MemoryItem>& items, BlobPack& pack) {
  json out = json::array();
  for (const MemoryItem& m : items)
    out.push_back({{"feature", pack.add(m.feature)}, {"probs", pack.add(m.probs)}});
  return out;
}

std::deque<MemoryItem> load_items(const json& j, const BlobView& blob) {
  std::deque<MemoryItem> out;
  for (const json& m : j) out.push_back({blob.vec(m.at("feature")), blob.vec(m.at("probs"))});
  return out;
}

}  // namespace

void save_online_state(const std::string& tag, const OnlineState& state, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw FormatError("cannot create directory " + dir.string());
  BlobPack pack;
  json body;
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, TdaState>) {
          body["positive"] = save_cache(s.positive, pack);
          body["negative"] = save_cache(s.negative, pack);
        } else if constexpr (std::is_same_v<T, BoostAdapterState>) {
          body["historical"] = save_cache(s.historical, pack);
        } else if constexpr (std::is_same_v<T, DmnState>) {
          body["memory"] = save_items(s.memory, pack);
        } else if constexpr (std::is_same_v<T, EcalpState>) {
          body["window"] = save_items(s.window, pack);
        } else if constexpr (std::is_same_v<T, OnzetaState>) {
          body["label_distribution"] = pack.add(s.label_distribution);
          body["proxies"] = pack.add(s.proxies);
        } else if constexpr (std::is_same_v<T, DpeState>) {
          body["text_protos"] = pack.add(s.text_protos);
          body["vision_protos"] = pack.add(s.vision_protos);
          body["counts"] = s.counts;
        } else if constexpr (std::is_same_v<T, DynaPromptState>) {
          json shifts = json::array();
          for (const ShiftParameters& sh : s.shifts) shifts.push_back(pack.add(sh.delta));
          body["shifts"] = shifts;
          body["last_selected_step"] = s.last_selected_step;
        }
      },
      state);
  const json doc = {{"format_version", kStateFormatVersion},
                    {"method", tag},
                    {"variant", state.index()},
                    {"step_counter", step_counter(state)},
                    {"blob_values", pack.data().size()},
                    {"state", body}};
  std::ofstream out(dir / "state.json", std::ios::trunc);
  if (!out) throw FormatError("cannot write " + (dir / "state.json").string());
  out << doc.dump(2) << "\n";
  blob::write_f64(dir / "state.f64", pack.data());
}

std::pair<std::string, OnlineState> load_online_state(const fs::path& dir) {
  std::ifstream in(dir / "state.json");
  if (!in) throw FormatError("missing " + (dir / "state.json").string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed state.json: ") + e.what());
  }
  try {
    if (doc.at("format_version").get<int>() != kStateFormatVersion)
      throw FormatError("unknown state format_version");
    const auto tag = doc.at("method").get<std::string>();
    const BlobView blob(blob::read_f64(dir / "state.f64", doc.at("blob_values").get<std::size_t>()));
    const json& body = doc.at("state");
    const auto steps = doc.at("step_counter").get<std::uint64_t>();
    const auto variant = doc.at("variant").get<std::size_t>();

    OnlineState state;
    switch (variant) {
      case 0: state = ZeroShotOnlineState{steps}; break;
      case 1:
        state = TdaState{load_cache(body.at("positive"), blob), load_cache(body.at("negative"), blob),
                         steps};
        break;
      case 2: state = DmnState{load_items(body.at("memory"), blob), steps}; break;
      case 3:
        state = OnzetaState{blob.vec(body.at("label_distribution")), blob.mat(body.at("proxies")),
                            steps};
        break;
      case 4: state = BoostAdapterState{load_cache(body.at("historical"), blob), steps}; break;
      case 5:
        state = DpeState{blob.mat(body.at("text_protos")), blob.mat(body.at("vision_protos")),
                         body.at("counts").get<std::vector<std::uint64_t>>(), steps};
        break;
      case 6: state = EcalpState{load_items(body.at("window"), blob), steps}; break;
      case 7: {
        DynaPromptState d;
        for (const json& ref : body.at("shifts")) d.shifts.push_back({blob.mat(ref)});
        d.last_selected_step = body.at("last_selected_step").get<std::vector<std::uint64_t>>();
        d.step_counter = steps;
        state = std::move(d);
        break;
      }
      default: throw FormatError("unknown state variant " + std::to_string(variant));
    }
    return {tag, std::move(state)};
  } catch (const json::exception& e) {
    throw FormatError(std::string("state.json: ") + e.what());
  }
}

}  // namespace vlmtta
