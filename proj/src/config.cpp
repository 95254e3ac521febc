#include "vlmtta/config.hpp"

#include <fstream>
#include <set>

namespace vlmtta {

using nlohmann::json;

namespace {

// Reads the keys of one JSON object and rejects whatever is left unread.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ValidationError(where_ + " must be a JSON object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ValidationError(where_ + "." + key + " has the wrong type");
    }
  }

  template <class E>
  void get_enum(const char* key, E& out, E (*parse)(const std::string&)) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    if (!it->is_string()) throw ValidationError(where_ + "." + key + " must be a string");
    try {
      out = parse(it->template get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ValidationError(where_ + "." + key + ": " + e.what());
    }
  }

  void touch(const char* key) { seen_.insert(key); }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key()))
        throw ValidationError("unknown key '" + where_ + "." + item.key() + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

BandwidthMode bandwidth_mode_from_string(const std::string& s) {
  if (s == "median_pairwise") return BandwidthMode::median_pairwise;
  if (s == "fixed") return BandwidthMode::fixed;
  throw std::invalid_argument("expected median_pairwise or fixed, got '" + s + "'");
}

const char* to_string(BandwidthMode m) {
  return m == BandwidthMode::fixed ? "fixed" : "median_pairwise";
}

ZeroSelection zero_selection_from_string(const std::string& s) {
  if (s == "msp") return ZeroSelection::msp;
  if (s == "entropy") return ZeroSelection::entropy;
  throw std::invalid_argument("expected msp or entropy, got '" + s + "'");
}

const char* to_string(ZeroSelection z) { return z == ZeroSelection::entropy ? "entropy" : "msp"; }

LossKind loss_kind_checked(const std::string& s) { return loss_kind_from_string(s); }

void check_groups(const std::string& tag, bool online, const json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  const auto groups = config_groups(tag, online);
  for (const auto& item : j.items())
    if (std::find(groups.begin(), groups.end(), item.key()) == groups.end())
      throw ValidationError("config group '" + item.key() + "' does not apply to method '" +
                            tag + "'");
}

}  // namespace

std::vector<std::string> config_groups(const std::string& tag, bool online) {
  if (online) {
    if (tag == "zero_shot") return {};
    if (tag == "dmn" || tag == "dmn_w") return {"dmn"};
    if (is_online_method(tag)) return {tag};
    throw ValidationError("unknown online method '" + tag + "'");
  }
  if (tag == "zero_shot") return {};
  if (tag == "tpt" || tag == "tps" || tag == "ctpt" || tag == "ttl") return {"optim", "loss"};
  if (tag == "rtpt") return {"optim", "loss", "rtpt"};
  if (tag == "rlcf") return {"optim", "rlcf"};
  if (tag == "mta") return {"mta"};
  if (tag == "zero") return {"optim", "zero"};
  throw ValidationError("unknown episodic method '" + tag + "'");
}

EpisodicConfig episodic_config_from_json(const std::string& tag, const json& j) {
  EpisodicConfig cfg = default_episodic_config(tag);
  check_groups(tag, false, j);
  if (j.contains("optim")) {
    Fields f(j.at("optim"), "optim");
    f.get("steps", cfg.optim.steps);
    f.get("learning_rate", cfg.optim.learning_rate);
    f.get("selection_fraction", cfg.optim.selection_fraction);
    f.get("reselect_each_step", cfg.optim.reselect_each_step);
    f.finish();
  }
  if (j.contains("loss")) {
    Fields f(j.at("loss"), "loss");
    f.get_enum("kind", cfg.loss.kind, &loss_kind_checked);
    f.get("lambda", cfg.loss.lambda);
    f.get("epsilon", cfg.loss.epsilon);
    f.finish();
  }
  if (j.contains("mta")) {
    Fields f(j.at("mta"), "mta");
    f.get("iterations", cfg.mta.iterations);
    f.get_enum("bandwidth_mode", cfg.mta.bandwidth_mode, &bandwidth_mode_from_string);
    f.get("fixed_bandwidth", cfg.mta.fixed_bandwidth);
    f.finish();
  }
  if (j.contains("rlcf")) {
    Fields f(j.at("rlcf"), "rlcf");
    f.get("samples_per_step", cfg.rlcf.samples_per_step);
    f.get("reward_baseline", cfg.rlcf.reward_baseline);
    f.finish();
  }
  if (j.contains("rtpt")) {
    Fields f(j.at("rtpt"), "rtpt");
    f.get("ensemble", cfg.rtpt.ensemble);
    f.finish();
  }
  if (j.contains("zero")) {
    Fields f(j.at("zero"), "zero");
    f.get_enum("selection", cfg.zero.selection, &zero_selection_from_string);
    f.finish();
  }
  if (tag == "rlcf" && cfg.loss.kind != LossKind::reinforce_reward)
    throw ValidationError("rlcf always uses the reinforce_reward loss");
  if (tag != "rlcf" && cfg.loss.kind == LossKind::reinforce_reward)
    throw ValidationError("reinforce_reward is only available through rlcf");
  cfg.validate();
  return cfg;
}

json episodic_config_to_json(const std::string& tag, const EpisodicConfig& cfg) {
  json out = json::object();
  for (const std::string& g : config_groups(tag, false)) {
    if (g == "optim") {
      out[g] = {{"steps", cfg.optim.steps},
                {"learning_rate", cfg.optim.learning_rate},
                {"selection_fraction", cfg.optim.selection_fraction},
                {"reselect_each_step", cfg.optim.reselect_each_step}};
    } else if (g == "loss") {
      out[g] = {{"kind", to_string(cfg.loss.kind)},
                {"lambda", cfg.loss.lambda},
                {"epsilon", cfg.loss.epsilon}};
    } else if (g == "mta") {
      out[g] = {{"iterations", cfg.mta.iterations},
                {"bandwidth_mode", to_string(cfg.mta.bandwidth_mode)},
                {"fixed_bandwidth", cfg.mta.fixed_bandwidth}};
    } else if (g == "rlcf") {
      out[g] = {{"samples_per_step", cfg.rlcf.samples_per_step},
                {"reward_baseline", cfg.rlcf.reward_baseline}};
    } else if (g == "rtpt") {
      out[g] = {{"ensemble", cfg.rtpt.ensemble}};
    } else if (g == "zero") {
      out[g] = {{"selection", to_string(cfg.zero.selection)}};
    }
  }
  return out;
}

OnlineConfig online_config_from_json(const std::string& tag, const json& j) {
  OnlineConfig cfg = default_online_config(tag);
  check_groups(tag, true, j);
  if (j.contains("tda")) {
    Fields f(j.at("tda"), "tda");
    f.get("pos_capacity", cfg.tda.pos_capacity);
    f.get("neg_capacity", cfg.tda.neg_capacity);
    f.get("pos_alpha", cfg.tda.pos_alpha);
    f.get("pos_gamma", cfg.tda.pos_gamma);
    f.get("neg_beta", cfg.tda.neg_beta);
    f.get("neg_gamma", cfg.tda.neg_gamma);
    f.get("neg_entropy_low", cfg.tda.neg_entropy_low);
    f.get("neg_entropy_high", cfg.tda.neg_entropy_high);
    f.get("neg_mask_low", cfg.tda.neg_mask_low);
    f.get("neg_mask_high", cfg.tda.neg_mask_high);
    f.finish();
  }
  if (j.contains("dmn")) {
    Fields f(j.at("dmn"), "dmn");
    f.get("alpha", cfg.dmn.alpha);
    f.get("use_aug", cfg.dmn.use_aug);
    f.get("memory_capacity", cfg.dmn.memory_capacity);
    f.get("selection_fraction", cfg.dmn.selection_fraction);
    f.finish();
    if (tag == "dmn_w" && cfg.dmn.use_aug)
      throw ValidationError("dmn_w is the weak-view variant; use method 'dmn' for use_aug=true");
  }
  if (j.contains("onzeta")) {
    Fields f(j.at("onzeta"), "onzeta");
    f.get("label_lr", cfg.onzeta.label_lr);
    f.get("proxy_lr", cfg.onzeta.proxy_lr);
    f.get("mix", cfg.onzeta.mix);
    f.get("temper", cfg.onzeta.temper);
    f.finish();
  }
  if (j.contains("boostadapter")) {
    Fields f(j.at("boostadapter"), "boostadapter");
    f.get("capacity", cfg.boostadapter.capacity);
    f.get("alpha", cfg.boostadapter.alpha);
    f.get("gamma", cfg.boostadapter.gamma);
    f.get("selection_fraction", cfg.boostadapter.selection_fraction);
    f.get("boosting", cfg.boostadapter.boosting);
    f.finish();
  }
  if (j.contains("dpe")) {
    Fields f(j.at("dpe"), "dpe");
    f.get("residual_steps", cfg.dpe.residual_steps);
    f.get("residual_lr", cfg.dpe.residual_lr);
    f.get("align_weight", cfg.dpe.align_weight);
    f.get("mix", cfg.dpe.mix);
    f.get("update_threshold", cfg.dpe.update_threshold);
    f.get("momentum", cfg.dpe.momentum);
    f.finish();
  }
  if (j.contains("ecalp")) {
    Fields f(j.at("ecalp"), "ecalp");
    f.get("window", cfg.ecalp.window);
    f.get("full_stream", cfg.ecalp.full_stream);
    f.get("alpha", cfg.ecalp.alpha);
    f.get("iterations", cfg.ecalp.iterations);
    f.get("knn", cfg.ecalp.knn);
    f.get("gamma", cfg.ecalp.gamma);
    f.get("reweight", cfg.ecalp.reweight);
    f.finish();
  }
  if (j.contains("dynaprompt")) {
    Fields f(j.at("dynaprompt"), "dynaprompt");
    f.get("capacity", cfg.dynaprompt.capacity);
    f.get("learning_rate", cfg.dynaprompt.learning_rate);
    f.get("selection_fraction", cfg.dynaprompt.selection_fraction);
    f.finish();
  }
  cfg.validate();
  return cfg;
}

json online_config_to_json(const std::string& tag, const OnlineConfig& cfg) {
  json out = json::object();
  for (const std::string& g : config_groups(tag, true)) {
    if (g == "tda") {
      const TdaConfig& c = cfg.tda;
      out[g] = {{"pos_capacity", c.pos_capacity},       {"neg_capacity", c.neg_capacity},
                {"pos_alpha", c.pos_alpha},             {"pos_gamma", c.pos_gamma},
                {"neg_beta", c.neg_beta},               {"neg_gamma", c.neg_gamma},
                {"neg_entropy_low", c.neg_entropy_low}, {"neg_entropy_high", c.neg_entropy_high},
                {"neg_mask_low", c.neg_mask_low},       {"neg_mask_high", c.neg_mask_high}};
    } else if (g == "dmn") {
      out[g] = {{"alpha", cfg.dmn.alpha},
                {"use_aug", cfg.dmn.use_aug},
                {"memory_capacity", cfg.dmn.memory_capacity},
                {"selection_fraction", cfg.dmn.selection_fraction}};
    } else if (g == "onzeta") {
      out[g] = {{"label_lr", cfg.onzeta.label_lr},
                {"proxy_lr", cfg.onzeta.proxy_lr},
                {"mix", cfg.onzeta.mix},
                {"temper", cfg.onzeta.temper}};
    } else if (g == "boostadapter") {
      const BoostAdapterConfig& c = cfg.boostadapter;
      out[g] = {{"capacity", c.capacity},
                {"alpha", c.alpha},
                {"gamma", c.gamma},
                {"selection_fraction", c.selection_fraction},
                {"boosting", c.boosting}};
    } else if (g == "dpe") {
      const DpeConfig& c = cfg.dpe;
      out[g] = {{"residual_steps", c.residual_steps}, {"residual_lr", c.residual_lr},
                {"align_weight", c.align_weight},     {"mix", c.mix},
                {"update_threshold", c.update_threshold}, {"momentum", c.momentum}};
    } else if (g == "ecalp") {
      const EcalpConfig& c = cfg.ecalp;
      out[g] = {{"window", c.window}, {"full_stream", c.full_stream}, {"alpha", c.alpha},
                {"iterations", c.iterations}, {"knn", c.knn}, {"gamma", c.gamma},
                {"reweight", c.reweight}};
    } else if (g == "dynaprompt") {
      out[g] = {{"capacity", cfg.dynaprompt.capacity},
                {"learning_rate", cfg.dynaprompt.learning_rate},
                {"selection_fraction", cfg.dynaprompt.selection_fraction}};
    }
  }
  return out;
}

SynthSpec synth_spec_from_json(const json& j) {
  SynthSpec s;
  Fields f(j, "spec");
  f.get("seed", s.seed);
  f.get("num_classes", s.num_classes);
  f.get("dim", s.dim);
  f.get("num_samples", s.num_samples);
  f.get("views_per_sample", s.views_per_sample);
  f.get("class_separation", s.class_separation);
  f.get("view_noise_sigma", s.view_noise_sigma);
  f.get("weak_noise_sigma", s.weak_noise_sigma);
  f.get("ood_class_fraction", s.ood_class_fraction);
  f.get("adversarial_fraction", s.adversarial_fraction);
  f.get("num_templates", s.num_templates);
  f.get("template_noise_sigma", s.template_noise_sigma);
  f.get("dataset_name", s.dataset_name);
  if (j.contains("scoring")) {
    const json& sj = j.at("scoring");
    Fields sf(sj, "spec.scoring");
    std::string kind = to_string(s.scoring.kind);
    sf.get("kind", kind);
    try {
      // Synthetic defaults: the real-model rules divided by ten.
      s.scoring = score_kind_from_string(kind) == ScoreKind::sigmoid
                      ? ScoringRule{ScoreKind::sigmoid, 10.0, -1.0}
                      : ScoringRule{ScoreKind::softmax, 10.0, 0.0};
    } catch (const std::invalid_argument& e) {
      throw ValidationError(std::string("spec.scoring.kind: ") + e.what());
    }
    sf.get("scale", s.scoring.scale);
    sf.get("bias", s.scoring.bias);
    sf.finish();
  }
  f.touch("scoring");
  f.finish();
  s.validate();
  return s;
}

json synth_spec_to_json(const SynthSpec& s) {
  return {{"seed", s.seed},
          {"num_classes", s.num_classes},
          {"dim", s.dim},
          {"num_samples", s.num_samples},
          {"views_per_sample", s.views_per_sample},
          {"class_separation", s.class_separation},
          {"view_noise_sigma", s.view_noise_sigma},
          {"weak_noise_sigma", s.weak_noise_sigma},
          {"ood_class_fraction", s.ood_class_fraction},
          {"adversarial_fraction", s.adversarial_fraction},
          {"num_templates", s.num_templates},
          {"template_noise_sigma", s.template_noise_sigma},
          {"dataset_name", s.dataset_name},
          {"scoring",
           {{"kind", to_string(s.scoring.kind)}, {"scale", s.scoring.scale}, {"bias", s.scoring.bias}}}};
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

}  // namespace vlmtta
