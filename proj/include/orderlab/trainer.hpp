#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "orderlab/data.hpp"
#include "orderlab/model.hpp"
#include "orderlab/param_vector.hpp"
#include "orderlab/permutation.hpp"

namespace orderlab {

struct AdamConfig {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0) || !(eps > 0) || !(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1))
      throw ConfigError("AdamConfig: need lr>0, eps>0, 0<beta1<1, 0<beta2<1");
  }
};

// Raw (uncorrected) moment accumulators; the bias-corrected values are
// derived from them at each step. step counts completed updates.
struct AdamState {
  ParamVector m, v;
  uint64_t step = 0;

  static AdamState fresh(const ParamVector& templ) {
    AdamState s;
    s.m = ParamVector(templ.layout());
    s.v = ParamVector(templ.layout());
    return s;
  }
};

namespace detail {

// Single source of truth for the corrected moments and the update term:
// both the trainer and the update-term store go through this exact
// floating-point sequence, so a stored term for the reference pair (t, t)
// matches the recorded training step bit for bit.
struct AdamTermScratch {
  ParamVector m_raw, v_raw, m_corr, v_corr, gamma;
  void ensure(const ParamVector& templ) {
    if (!m_raw.conformable_with(templ)) {
      m_raw = ParamVector(templ.layout());
      v_raw = ParamVector(templ.layout());
      m_corr = ParamVector(templ.layout());
      v_corr = ParamVector(templ.layout());
      gamma = ParamVector(templ.layout());
    }
  }
};

inline void adam_update_term(const AdamConfig& cfg, const ParamVector& m_prev,
                             const ParamVector& v_prev, const ParamVector& grad,
                             uint64_t completed_steps, AdamTermScratch& out) {
  out.ensure(grad);
  const double s = static_cast<double>(completed_steps + 1);  // bias index starts at 1
  const double bc1 = 1.0 - std::pow(cfg.beta1, s);
  const double bc2 = 1.0 - std::pow(cfg.beta2, s);
  const size_t n = grad.total_dim();
  for (size_t i = 0; i < n; ++i) {
    const double g = grad.data()[i];
    const double mr = cfg.beta1 * m_prev.data()[i] + (1.0 - cfg.beta1) * g;
    const double vr = cfg.beta2 * v_prev.data()[i] + (1.0 - cfg.beta2) * g * g;
    const double mc = mr / bc1;
    const double vc = vr / bc2;
    out.m_raw.data()[i] = mr;
    out.v_raw.data()[i] = vr;
    out.m_corr.data()[i] = mc;
    out.v_corr.data()[i] = vc;
    out.gamma.data()[i] = mc / (std::sqrt(vc) + cfg.eps);
  }
}

}  // namespace detail

// One Adam update: params <- params - lr * m_hat/(sqrt(v_hat)+eps), with the
// raw accumulators persisting in the state.
inline std::pair<ParamVector, AdamState> adam_step(const ParamVector& params,
                                                   const AdamState& state,
                                                   const ParamVector& grad,
                                                   const AdamConfig& cfg) {
  cfg.validate();
  detail::require_conformable(params, grad, "adam_step");
  detail::require_conformable(params, state.m, "adam_step");
  if (!grad.all_finite()) throw NumericError("adam_step: non-finite gradient");

  detail::AdamTermScratch scratch;
  detail::adam_update_term(cfg, state.m, state.v, grad, state.step, scratch);

  ParamVector next = params;
  for (size_t i = 0; i < next.total_dim(); ++i)
    next.data()[i] -= cfg.lr * scratch.gamma.data()[i];

  AdamState ns;
  ns.m = std::move(scratch.m_raw);
  ns.v = std::move(scratch.v_raw);
  ns.step = state.step + 1;
  return {std::move(next), std::move(ns)};
}

// Everything recorded while training once along a fixed order: checkpoints
// theta_0..theta_T, per-step gradients, and the raw Adam accumulators after
// each step.
struct ReferenceTrajectory {
  std::vector<ParamVector> checkpoints;  // T+1
  std::vector<ParamVector> grads;        // T
  std::vector<ParamVector> m_raw;        // T (after step t)
  std::vector<ParamVector> v_raw;        // T
  Permutation order;
  AdamConfig config;

  size_t t_batches() const { return grads.size(); }

  const ParamVector& m_prev(size_t t) const {
    if (t == 0) return zero();
    return m_raw[t - 1];
  }
  const ParamVector& v_prev(size_t t) const {
    if (t == 0) return zero();
    return v_raw[t - 1];
  }

  void check_complete() const {
    size_t t = grads.size();
    if (checkpoints.size() != t + 1 || m_raw.size() != t || v_raw.size() != t ||
        order.size() != t)
      throw StoreError("trajectory is incomplete (checkpoint/gradient/state counts disagree)");
  }

 private:
  const ParamVector& zero() const {
    if (zero_.total_dim() == 0 && !checkpoints.empty())
      zero_ = ParamVector(checkpoints[0].layout());
    return zero_;
  }
  mutable ParamVector zero_;
};

namespace detail {
inline void check_divergence(double loss, size_t step) {
  if (!std::isfinite(loss) || loss > 1e6)
    throw TrainingError("training diverged at step " + std::to_string(step) +
                        " (loss=" + std::to_string(loss) + ")");
}
}  // namespace detail

// Stage 1: one epoch along `order`, capturing every checkpoint, gradient and
// Adam state. Deterministic for fixed (initial params, config, order).
inline ReferenceTrajectory train_reference(const DifferentiableModel& model,
                                           const Corpus& corpus, const Permutation& order,
                                           const AdamConfig& cfg,
                                           const ParamVector& initial_params) {
  cfg.validate();
  if (order.size() != corpus.train.size())
    throw InputError("train_reference: order length != batch count");
  ReferenceTrajectory traj;
  traj.order = order;
  traj.config = cfg;
  traj.checkpoints.push_back(initial_params);

  ParamVector params = initial_params;
  AdamState state = AdamState::fresh(initial_params);
  ParamVector grad(initial_params.layout());
  for (size_t t = 0; t < order.size(); ++t) {
    const Batch& batch = corpus.train[order[t]];
    double loss = model.loss_and_grad(params, batch, grad);
    detail::check_divergence(loss, t);
    auto [next, ns] = adam_step(params, state, grad, cfg);
    traj.grads.push_back(grad);
    traj.m_raw.push_back(ns.m);
    traj.v_raw.push_back(ns.v);
    traj.checkpoints.push_back(next);
    params = std::move(next);
    state = std::move(ns);
  }
  return traj;
}

struct OracleRun {
  ReferenceTrajectory trajectory;
  std::vector<EvalResult> evals;  // T+1, including the initial parameters
};

// Ground-truth retraining: identical mechanics to train_reference, plus the
// evaluation metric after every step. This is the r in AbsDiff.
inline OracleRun retrain_oracle(const DifferentiableModel& model, const Corpus& corpus,
                                const Permutation& order, const AdamConfig& cfg,
                                const ParamVector& initial_params, const Dataset& eval_set) {
  OracleRun run;
  run.trajectory = train_reference(model, corpus, order, cfg, initial_params);
  run.evals.reserve(order.size() + 1);
  for (const auto& ckpt : run.trajectory.checkpoints)
    run.evals.push_back(evaluate(model, ckpt, eval_set));
  return run;
}

// ---------------------------------------------------------------------------
// OLT1 container
// ---------------------------------------------------------------------------

namespace detail {

inline void write_layout(ByteWriter& w, const std::vector<LayerSpec>& layout) {
  w.u32(static_cast<uint32_t>(layout.size()));
  for (const auto& l : layout) {
    w.str(l.id);
    w.u8(static_cast<uint8_t>(l.shape.size()));
    for (uint32_t d : l.shape) w.u32(d);
  }
}

inline std::vector<LayerSpec> read_layout(ByteReader& r) {
  std::vector<LayerSpec> layout(r.u32());
  for (auto& l : layout) {
    l.id = r.str();
    l.shape.resize(r.u8());
    for (auto& d : l.shape) d = r.u32();
  }
  return layout;
}

inline void write_pv(ByteWriter& w, const ParamVector& pv) {
  w.f64_span(pv.raw(), pv.total_dim());
}

inline ParamVector read_pv(ByteReader& r, const std::vector<LayerSpec>& layout) {
  ParamVector pv(layout);
  r.f64_span(pv.raw(), pv.total_dim());
  return pv;
}

}  // namespace detail

inline void save_trajectory(const ReferenceTrajectory& traj, const std::string& path,
                            uint64_t config_digest) {
  traj.check_complete();
  ByteWriter w;
  w.bytes("OLT1", 4);
  w.u16(1);
  w.u64(config_digest);
  w.f64(traj.config.lr);
  w.f64(traj.config.beta1);
  w.f64(traj.config.beta2);
  w.f64(traj.config.eps);
  const auto t = static_cast<uint32_t>(traj.t_batches());
  w.u32(t);
  detail::write_layout(w, traj.checkpoints[0].layout());
  for (uint32_t i = 0; i < t; ++i) w.u32(traj.order[i]);
  for (const auto& pv : traj.checkpoints) detail::write_pv(w, pv);
  for (const auto& pv : traj.grads) detail::write_pv(w, pv);
  for (const auto& pv : traj.m_raw) detail::write_pv(w, pv);
  for (const auto& pv : traj.v_raw) detail::write_pv(w, pv);
  detail::write_file(path, w);
}

inline ReferenceTrajectory load_trajectory(const std::string& path,
                                           uint64_t* config_digest = nullptr) {
  auto buf = detail::read_checked(path, "OLT1");
  ByteReader r(buf);
  r.skip(4);
  if (r.u16() != 1) throw CorruptionError(path + ": unsupported OLT1 version");
  uint64_t digest = r.u64();
  if (config_digest) *config_digest = digest;

  ReferenceTrajectory traj;
  traj.config.lr = r.f64();
  traj.config.beta1 = r.f64();
  traj.config.beta2 = r.f64();
  traj.config.eps = r.f64();
  uint32_t t = r.u32();
  auto layout = detail::read_layout(r);
  traj.order.order.resize(t);
  for (auto& o : traj.order.order) o = r.u32();
  traj.order.validate();
  for (uint32_t i = 0; i <= t; ++i) traj.checkpoints.push_back(detail::read_pv(r, layout));
  for (uint32_t i = 0; i < t; ++i) traj.grads.push_back(detail::read_pv(r, layout));
  for (uint32_t i = 0; i < t; ++i) traj.m_raw.push_back(detail::read_pv(r, layout));
  for (uint32_t i = 0; i < t; ++i) traj.v_raw.push_back(detail::read_pv(r, layout));
  traj.check_complete();
  return traj;
}

}  // namespace orderlab
