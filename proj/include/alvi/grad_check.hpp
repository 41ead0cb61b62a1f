#pragma once

// Finite-difference verification of the analytic gradients in double precision.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "alvi/handformer.hpp"

namespace alvi {

enum class CheckedLoss { l1, mae };

struct GradCheckOptions {
  CheckedLoss loss = CheckedLoss::l1;
  std::size_t samples = 200;
  double h = 1e-5;
  std::uint64_t seed = 0;
  /// Absolute floor on the denominator of the relative error. Central
  /// differences on a loss of order 1 carry ~1e-11 of rounding error, so
  /// gradients far below this floor are compared in absolute terms.
  double abs_floor = 1e-6;
  /// Restrict the check (and the set of trainable parameters) to matching names.
  std::function<bool(const std::string&)> param_filter;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

namespace grad_check_detail {

inline bool used_by(CheckedLoss loss, const std::string& name) {
  const bool mae_only = name.rfind("mae.", 0) == 0;
  const bool supervised_only = name.rfind("dec.", 0) == 0 || name.rfind("head.", 0) == 0;
  return loss == CheckedLoss::mae ? !supervised_only : !mae_only;
}

}  // namespace grad_check_detail

/// Window pairs whose targets sit 0.1..0.3 rad away from the current
/// predictions, so no L1 term is near its kink.
inline std::vector<WindowPair> tie_free_batch(const ModelState& s, const std::vector<MatF>& windows, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> mag(0.1, 0.3);
  std::bernoulli_distribution sign(0.5);
  std::vector<WindowPair> out;
  for (const auto& w : windows) {
    WindowPair p;
    p.emg = w;
    p.target = forward(s, w);
    for (Eigen::Index i = 0; i < p.target.size(); ++i)
      p.target.data()[i] += static_cast<float>((sign(rng) ? 1.0 : -1.0) * mag(rng));
    out.push_back(std::move(p));
  }
  return out;
}

/// Maximum of |analytic - numeric| / max(|analytic|, |numeric|, abs_floor) over sampled
/// scalar parameters, using central differences with step h.
inline GradCheckResult grad_check(const ModelState& state, const std::vector<WindowPair>& batch,
                                  const GradCheckOptions& opt = {}) {
  require(!batch.empty(), ErrorCode::invalid_argument, "grad_check: empty batch");
  const ModelConfig& cfg = state.config;
  ParamSet<double> params = state.params.cast<double>();

  std::mt19937_64 rng(opt.seed);
  std::vector<MaeExample> mae_batch;
  if (opt.loss == CheckedLoss::mae)
    for (const auto& p : batch)
      mae_batch.push_back({p.emg, p.emg, sample_mask(static_cast<std::size_t>(cfg.token_count()), cfg.mask_ratio, rng)});

  auto loss = [&](ParamSet<double>* grads) {
    return opt.loss == CheckedLoss::l1 ? finetune_loss<double>(cfg, params, batch, grads)
                                       : mae_loss<double>(cfg, params, mae_batch, grads);
  };

  ParamSet<double> analytic = params.zeros_like();
  loss(&analytic);

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.names[i];
    if (!grad_check_detail::used_by(opt.loss, name)) continue;
    if (opt.param_filter && !opt.param_filter(name)) continue;
    candidates.push_back(i);
  }
  require(!candidates.empty(), ErrorCode::invalid_argument, "grad_check: no parameters selected");

  // Every selected tensor once, then uniformly over scalars.
  std::vector<std::pair<std::size_t, Eigen::Index>> picks;
  for (auto i : candidates) {
    std::uniform_int_distribution<Eigen::Index> u(0, params.tensors[i].size() - 1);
    picks.emplace_back(i, u(rng));
  }
  std::vector<double> weights;
  for (auto i : candidates) weights.push_back(static_cast<double>(params.tensors[i].size()));
  std::discrete_distribution<std::size_t> which(weights.begin(), weights.end());
  while (picks.size() < opt.samples) {
    const std::size_t i = candidates[which(rng)];
    std::uniform_int_distribution<Eigen::Index> u(0, params.tensors[i].size() - 1);
    picks.emplace_back(i, u(rng));
  }

  GradCheckResult res;
  for (const auto& [i, k] : picks) {
    double& w = params.tensors[i].data()[k];
    const double orig = w;
    w = orig + opt.h;
    const double up = loss(nullptr);
    w = orig - opt.h;
    const double down = loss(nullptr);
    w = orig;
    const double numeric = (up - down) / (2.0 * opt.h);
    const double a = analytic.tensors[i].data()[k];
    const double denom = std::max({std::abs(a), std::abs(numeric), opt.abs_floor});
    const double rel = std::abs(a - numeric) / denom;
    ++res.checked;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_param = params.names[i] + "[" + std::to_string(k) + "]";
      res.worst_analytic = a;
      res.worst_numeric = numeric;
    }
  }
  return res;
}

}  // namespace alvi
