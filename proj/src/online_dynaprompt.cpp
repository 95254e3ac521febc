#include <algorithm>
#include <cmath>

#include "vlmtta/online.hpp"
#include "vlmtta/scoring.hpp"

namespace vlmtta {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace

DynaPromptState dynaprompt_init(const Mat& text_bank) {
  DynaPromptState s;
  s.shifts.push_back(ShiftParameters::zeros(text_bank.rows(), text_bank.cols()));
  s.last_selected_step.push_back(0);
  return s;
}

std::vector<std::size_t> dynaprompt_select(const std::vector<double>& entropies,
                                           const std::vector<double>& margins) {
  const double h_med = median(entropies);
  const double m_med = median(margins);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entropies.size(); ++i)
    if (entropies[i] <= h_med && margins[i] >= m_med) out.push_back(i);
  return out;
}

Prediction dynaprompt_step(DynaPromptState& state, const SampleRecord& sample,
                           const Mat& text_bank, const ScoringRule& rule,
                           const DynaPromptConfig& cfg) {
  const Vec x = sample.weak_view().transpose();
  const std::uint64_t now = state.step_counter;

  std::vector<double> entropies, margins;
  for (const ShiftParameters& s : state.shifts) {
    const Vec p = score(x, apply_shift(text_bank, s), rule).probs;
    entropies.push_back(entropy(p));
    margins.push_back(top_margin(p));
  }
  std::vector<std::size_t> selected = dynaprompt_select(entropies, margins);
  if (selected.empty()) {
    if (state.shifts.size() >= cfg.capacity) {
      const auto stale = static_cast<std::size_t>(
          std::min_element(state.last_selected_step.begin(), state.last_selected_step.end()) -
          state.last_selected_step.begin());
      state.shifts.erase(state.shifts.begin() + static_cast<std::ptrdiff_t>(stale));
      state.last_selected_step.erase(state.last_selected_step.begin() +
                                     static_cast<std::ptrdiff_t>(stale));
    }
    state.shifts.push_back(ShiftParameters::zeros(text_bank.rows(), text_bank.cols()));
    state.last_selected_step.push_back(now);
    selected = {state.shifts.size() - 1};
  }

  const Mat candidates = augmented_views(sample);
  LossSpec spec;
  spec.kind = LossKind::marginal_entropy;
  std::vector<Vec> probs;
  for (std::size_t i : selected) {
    ShiftParameters& shift = state.shifts[i];
    if (cfg.learning_rate != 0.0) {
      const Mat view_probs = score_views(candidates, apply_shift(text_bank, shift), rule);
      const Mat chosen =
          gather_rows(candidates, select_confident_views(view_probs, cfg.selection_fraction));
      shift.delta -= cfg.learning_rate * loss_and_grad(chosen, text_bank, shift, rule, spec).grad;
    }
    state.last_selected_step[i] = now;
    probs.push_back(score(x, apply_shift(text_bank, shift), rule).probs);
  }

  // first + mean of differences: identical members average to themselves exactly
  Vec acc = Vec::Zero(probs.front().size());
  for (const Vec& p : probs) acc += p - probs.front();
  const Vec mean = probs.front() + acc / static_cast<double>(probs.size());
  ++state.step_counter;
  return Prediction::from_probs(mean, "dynaprompt");
}

}  // namespace vlmtta
