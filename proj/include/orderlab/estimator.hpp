#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "orderlab/store.hpp"

namespace orderlab {

enum class EstimatorMode : uint8_t { fut = 0, futpp = 1 };

inline const char* mode_name(EstimatorMode m) {
  return m == EstimatorMode::fut ? "fut" : "futpp";
}

struct EstimatorConfig {
  EstimatorMode mode = EstimatorMode::fut;
  double c = 0.5;            // second-order term weight
  double clip_bound = 1.0;   // elementwise cap on the estimated update
  bool clip_raw_params = false;  // sensitivity flag: clip parameters instead

  void validate() const {
    if (!(clip_bound > 0)) throw ConfigError("EstimatorConfig: clip_bound must be positive");
    if (c < 0) throw ConfigError("EstimatorConfig: c must be non-negative");
  }
};

struct EstimatedTrajectory {
  std::vector<ParamVector> gammas;  // gamma_0..gamma_T
  Permutation permutation;
  EstimatorConfig config;
  size_t clip_events = 0;  // coordinates where the update cap engaged

  const ParamVector& final_params() const { return gammas.back(); }
};

// Stage 3: recursive trajectory estimation for an arbitrary permutation.
// gamma_0 = theta_0; each step applies the stored Taylor expansion of the
// update term around the reference checkpoint. No model gradients are
// evaluated here -- only store lookups and elementwise arithmetic.
inline EstimatedTrajectory estimate(const UpdateTermStore& store,
                                    const ReferenceTrajectory& theta, const Permutation& perm,
                                    const EstimatorConfig& cfg) {
  cfg.validate();
  perm.validate();
  theta.check_complete();
  if (perm.size() != store.t_batches() || theta.t_batches() != store.t_batches())
    throw StoreError("estimate: permutation/trajectory/store sizes disagree");
  if (cfg.mode == EstimatorMode::futpp && !store.includes_second_order())
    throw StoreError("estimate: FUT++ requested but the store has no second-order terms");

  const double lr = store.adam_config().lr;
  const double bound = cfg.clip_bound;
  const size_t t_total = store.t_batches();

  EstimatedTrajectory est;
  est.permutation = perm;
  est.config = cfg;
  est.gammas.reserve(t_total + 1);
  est.gammas.push_back(theta.checkpoints[0]);

  ParamVector current = theta.checkpoints[0];
  for (size_t t = 0; t < t_total; ++t) {
    const UpdateTerms& terms = store.terms(t, perm[t]);
    const ParamVector& ref = theta.checkpoints[t];
    ParamVector next = current;
    bool finite = true;
    for (size_t i = 0; i < current.total_dim(); ++i) {
      const double delta = current.data()[i] - ref.data()[i];
      double update = terms.gamma.data()[i] + delta * terms.dgamma.data()[i];
      if (cfg.mode == EstimatorMode::futpp)
        update += cfg.c * delta * delta * terms.d2gamma.data()[i];
      if (!cfg.clip_raw_params) {
        if (update > bound) {
          update = bound;
          ++est.clip_events;
        } else if (update < -bound) {
          update = -bound;
          ++est.clip_events;
        }
      }
      double value = current.data()[i] - lr * update;
      if (cfg.clip_raw_params) {
        if (value > bound) {
          value = bound;
          ++est.clip_events;
        } else if (value < -bound) {
          value = -bound;
          ++est.clip_events;
        }
      }
      if (!std::isfinite(value)) finite = false;
      next.data()[i] = value;
    }
    if (!finite)
      throw DivergenceError("estimate: non-finite parameters at step " + std::to_string(t));
    est.gammas.push_back(next);
    current = std::move(next);
  }
  return est;
}

// Evaluates R(gamma_t, dataset): by default only the final step; with
// every_step the whole curve including the initial parameters.
inline std::vector<EvalResult> estimate_performance(const EstimatedTrajectory& est,
                                                    const DifferentiableModel& model,
                                                    const Dataset& dataset,
                                                    bool every_step = false) {
  if (est.gammas.empty()) throw InputError("estimate_performance: empty trajectory");
  std::vector<EvalResult> out;
  if (every_step) {
    out.reserve(est.gammas.size());
    for (const auto& g : est.gammas) out.push_back(evaluate(model, g, dataset));
  } else {
    out.push_back(evaluate(model, est.final_params(), dataset));
  }
  return out;
}

}  // namespace orderlab
