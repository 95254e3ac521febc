#include "vlmtta/online.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vlmtta/episodic.hpp"
#include "vlmtta/scoring.hpp"

namespace vlmtta {

void OnlineConfig::validate() const {
  auto nonneg = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw ValidationError(std::string(name) + " must be non-negative");
  };
  auto fraction = [](double v, const char* name) {
    if (!(v > 0.0 && v <= 1.0)) throw ValidationError(std::string(name) + " must lie in (0, 1]");
  };
  nonneg(tda.pos_alpha, "tda.pos_alpha");
  nonneg(tda.neg_beta, "tda.neg_beta");
  nonneg(tda.pos_gamma, "tda.pos_gamma");
  nonneg(tda.neg_gamma, "tda.neg_gamma");
  if (tda.neg_entropy_low > tda.neg_entropy_high)
    throw ValidationError("tda negative entropy band is empty");
  nonneg(dmn.alpha, "dmn.alpha");
  fraction(dmn.selection_fraction, "dmn.selection_fraction");
  if (!(onzeta.label_lr >= 0.0 && onzeta.label_lr <= 1.0))
    throw ValidationError("onzeta.label_lr must lie in [0, 1]");
  nonneg(onzeta.proxy_lr, "onzeta.proxy_lr");
  if (!(onzeta.mix >= 0.0 && onzeta.mix <= 1.0))
    throw ValidationError("onzeta.mix must lie in [0, 1]");
  nonneg(onzeta.temper, "onzeta.temper");
  nonneg(boostadapter.alpha, "boostadapter.alpha");
  nonneg(boostadapter.gamma, "boostadapter.gamma");
  fraction(boostadapter.selection_fraction, "boostadapter.selection_fraction");
  if (dpe.residual_steps < 0) throw ValidationError("dpe.residual_steps must be non-negative");
  nonneg(dpe.residual_lr, "dpe.residual_lr");
  nonneg(dpe.align_weight, "dpe.align_weight");
  nonneg(dpe.mix, "dpe.mix");
  if (!(dpe.momentum >= 0.0 && dpe.momentum <= 1.0))
    throw ValidationError("dpe.momentum must lie in [0, 1]");
  if (!(ecalp.alpha >= 0.0 && ecalp.alpha < 1.0))
    throw ValidationError("ecalp.alpha must lie in [0, 1)");
  if (ecalp.iterations < 0) throw ValidationError("ecalp.iterations must be non-negative");
  nonneg(ecalp.gamma, "ecalp.gamma");
  if (dynaprompt.capacity < 1) throw ValidationError("dynaprompt.capacity must be >= 1");
  nonneg(dynaprompt.learning_rate, "dynaprompt.learning_rate");
  fraction(dynaprompt.selection_fraction, "dynaprompt.selection_fraction");
}

OnlineConfig default_online_config(const std::string& tag) {
  OnlineConfig cfg;
  cfg.dmn.use_aug = tag != "dmn_w";
  return cfg;
}

const std::vector<std::string>& online_method_tags() {
  static const std::vector<std::string> tags = {"zero_shot", "tda",  "dmn", "dmn_w",     "onzeta",
                                                "boostadapter", "dpe", "ecalp", "dynaprompt"};
  return tags;
}

bool is_online_method(const std::string& tag) {
  const auto& t = online_method_tags();
  return std::find(t.begin(), t.end(), tag) != t.end();
}

OnlineState init_online_state(const std::string& tag, const Mat& text_bank,
                              const OnlineConfig& cfg) {
  const auto C = static_cast<std::size_t>(text_bank.rows());
  if (tag == "zero_shot") return ZeroShotOnlineState{};
  if (tag == "tda") return tda_init(C, cfg.tda);
  if (tag == "dmn" || tag == "dmn_w") return DmnState{};
  if (tag == "onzeta") return onzeta_init(text_bank);
  if (tag == "boostadapter") return boostadapter_init(C, cfg.boostadapter);
  if (tag == "dpe") return dpe_init(text_bank);
  if (tag == "ecalp") return EcalpState{};
  if (tag == "dynaprompt") return dynaprompt_init(text_bank);
  throw ValidationError("unknown online method '" + tag + "'");
}

namespace {

template <class T>
T& expect(OnlineState& state, const std::string& tag) {
  if (auto* s = std::get_if<T>(&state)) return *s;
  throw ValidationError("state does not belong to online method '" + tag + "'");
}

}  // namespace

Prediction online_step(const std::string& tag, OnlineState& state, const SampleRecord& sample,
                       const Mat& text_bank, const ScoringRule& rule, const OnlineConfig& cfg) {
  if (tag == "zero_shot") {
    ++expect<ZeroShotOnlineState>(state, tag).step_counter;
    return zero_shot_predict(sample, text_bank, rule);
  }
  if (tag == "tda") return tda_step(expect<TdaState>(state, tag), sample, text_bank, rule, cfg.tda);
  if (tag == "dmn" || tag == "dmn_w") {
    Prediction p = dmn_step(expect<DmnState>(state, tag), sample, text_bank, rule, cfg.dmn);
    p.method_tag = tag;
    return p;
  }
  if (tag == "onzeta")
    return onzeta_step(expect<OnzetaState>(state, tag), sample, text_bank, rule, cfg.onzeta);
  if (tag == "boostadapter")
    return boostadapter_step(expect<BoostAdapterState>(state, tag), sample, text_bank, rule,
                             cfg.boostadapter);
  if (tag == "dpe") return dpe_step(expect<DpeState>(state, tag), sample, text_bank, rule, cfg.dpe);
  if (tag == "ecalp")
    return ecalp_step(expect<EcalpState>(state, tag), sample, text_bank, rule, cfg.ecalp);
  if (tag == "dynaprompt")
    return dynaprompt_step(expect<DynaPromptState>(state, tag), sample, text_bank, rule,
                           cfg.dynaprompt);
  throw ValidationError("unknown online method '" + tag + "'");
}

std::uint64_t step_counter(const OnlineState& state) {
  return std::visit([](const auto& s) { return s.step_counter; }, state);
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::logic_error("state invariant violated: " + what);
}

void require_unit_rows(const Mat& m, const std::string& what) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    require(std::abs(norm(m.row(r)) - 1.0) <= kUnitNormTolerance,
            what + " row " + std::to_string(r));
}

void check_cache(const EntropyCache& c, std::size_t capacity, const std::string& what) {
  require(c.capacity() == capacity, what + " capacity changed");
  for (const auto& b : c.buckets()) require(b.size() <= capacity, what + " bucket over capacity");
}

}  // namespace

void check_state_invariants(const OnlineState& state, const OnlineConfig& cfg) {
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, TdaState>) {
          check_cache(s.positive, cfg.tda.pos_capacity, "tda positive cache");
          check_cache(s.negative, cfg.tda.neg_capacity, "tda negative cache");
        } else if constexpr (std::is_same_v<T, BoostAdapterState>) {
          check_cache(s.historical, cfg.boostadapter.capacity, "boostadapter memory");
        } else if constexpr (std::is_same_v<T, DmnState>) {
          require(s.memory.size() <= cfg.dmn.memory_capacity, "dmn memory over capacity");
        } else if constexpr (std::is_same_v<T, EcalpState>) {
          if (!cfg.ecalp.full_stream)
            require(s.window.size() <= cfg.ecalp.window, "ecalp window over capacity");
        } else if constexpr (std::is_same_v<T, DynaPromptState>) {
          require(!s.shifts.empty() && s.shifts.size() <= cfg.dynaprompt.capacity,
                  "dynaprompt buffer size out of [1, M]");
          require(s.shifts.size() == s.last_selected_step.size(), "dynaprompt bookkeeping");
        } else if constexpr (std::is_same_v<T, OnzetaState>) {
          double total = 0.0;
          for (Eigen::Index k = 0; k < s.label_distribution.size(); ++k) {
            require(s.label_distribution(k) >= 0.0, "onzeta label distribution negative");
            total += s.label_distribution(k);
          }
          require(std::abs(total - 1.0) <= 1e-9, "onzeta label distribution off the simplex");
          require_unit_rows(s.proxies, "onzeta proxy");
        } else if constexpr (std::is_same_v<T, DpeState>) {
          require_unit_rows(s.vision_protos, "dpe vision prototype");
          require_unit_rows(s.text_protos, "dpe text prototype");
        }
      },
      state);
}

}  // namespace vlmtta
