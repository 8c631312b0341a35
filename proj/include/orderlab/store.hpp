#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "orderlab/parallel.hpp"
#include "orderlab/projection.hpp"
#include "orderlab/trainer.hpp"

namespace orderlab {

// Update terms for one (checkpoint, batch) pair. All derivative quantities
// are diagonal (per-coordinate); there are no Hessian matrices anywhere.
struct UpdateTerms {
  ParamVector gamma;    // Gamma(theta_t, B_l)
  ParamVector dgamma;   // d Gamma / d theta, elementwise
  ParamVector d2gamma;  // d^2 Gamma / d theta^2, elementwise (second order only)
  bool has_second = false;
};

// ---------------------------------------------------------------------------
// Term computation (Stage 2 math)
// ---------------------------------------------------------------------------

// Precomputes the reference-run derivative accumulators once, then assembles
// terms for arbitrary (t, batch) pairs. The moment seeds m_{t-1}, v_{t-1}
// always come from the reference run, never from a re-simulated order.
class UpdateTermEngine {
 public:
  UpdateTermEngine(const DifferentiableModel& model, const ReferenceTrajectory& traj,
                   const Corpus& corpus, bool second_order)
      : model_(model), traj_(traj), second_(second_order) {
    traj_.check_complete();
    const size_t t_total = traj_.t_batches();
    const auto& layout = traj_.checkpoints[0].layout();
    zero_ = ParamVector(layout);

    // Reference-run difference quotients h_t, tau_t at (theta_t, B_{ref_t}).
    std::vector<ParamVector> h_ref(t_total, zero_), tau_ref;
    if (second_) tau_ref.assign(t_total, zero_);
    ParamVector grad_prev(layout), grad_prev2(layout);
    for (size_t t = 1; t < t_total; ++t) {
      const Batch& batch = corpus.train[traj_.order[t]];
      model_.loss_and_grad(traj_.checkpoints[t - 1], batch, grad_prev);
      h_ref[t] = diff_quotient(traj_.grads[t], grad_prev, traj_.checkpoints[t],
                               traj_.checkpoints[t - 1]);
      if (second_ && t >= 2) {
        model_.loss_and_grad(traj_.checkpoints[t - 2], batch, grad_prev2);
        ParamVector h_prev = diff_quotient(grad_prev, grad_prev2, traj_.checkpoints[t - 1],
                                           traj_.checkpoints[t - 2]);
        tau_ref[t] = diff_quotient(h_ref[t], h_prev, traj_.checkpoints[t],
                                   traj_.checkpoints[t - 1]);
      }
    }

    // Raw derivative accumulators after each reference step, mirroring the
    // raw moment recursions with the difference-quotient inputs; zero at t=0.
    const double b1 = traj_.config.beta1, b2 = traj_.config.beta2;
    dm_acc_.assign(t_total, zero_);
    dv_acc_.assign(t_total, zero_);
    if (second_) {
      d2m_acc_.assign(t_total, zero_);
      d2v_acc_.assign(t_total, zero_);
    }
    for (size_t t = 0; t < t_total; ++t) {
      const ParamVector& dm_p = t ? dm_acc_[t - 1] : zero_;
      const ParamVector& dv_p = t ? dv_acc_[t - 1] : zero_;
      for (size_t i = 0; i < zero_.total_dim(); ++i) {
        double g = traj_.grads[t].data()[i];
        double h = h_ref[t].data()[i];
        dm_acc_[t].data()[i] = b1 * dm_p.data()[i] + (1 - b1) * h;
        dv_acc_[t].data()[i] = b2 * dv_p.data()[i] + 2 * (1 - b2) * g * h;
      }
      if (second_) {
        const ParamVector& d2m_p = t ? d2m_acc_[t - 1] : zero_;
        const ParamVector& d2v_p = t ? d2v_acc_[t - 1] : zero_;
        for (size_t i = 0; i < zero_.total_dim(); ++i) {
          double g = traj_.grads[t].data()[i];
          double h = h_ref[t].data()[i];
          double tau = tau_ref[t].data()[i];
          d2m_acc_[t].data()[i] = b1 * d2m_p.data()[i] + (1 - b1) * tau;
          d2v_acc_[t].data()[i] = b2 * d2v_p.data()[i] + 2 * (1 - b2) * (h * h + g * tau);
        }
      }
    }
  }

  bool second_order() const { return second_; }
  const ReferenceTrajectory& trajectory() const { return traj_; }

  // Guarded elementwise difference quotient (grad_a - grad_b)/(theta_a -
  // theta_b); the guard scales with the checkpoint magnitude because the
  // parameter delta can vanish where updates are tiny.
  static ParamVector diff_quotient(const ParamVector& grad_a, const ParamVector& grad_b,
                                   const ParamVector& theta_a, const ParamVector& theta_b) {
    ParamVector out(grad_a.layout());
    for (size_t i = 0; i < out.total_dim(); ++i) {
      double guard = 1e-8 * (1.0 + std::abs(theta_a.data()[i]));
      out.data()[i] = guarded_div(grad_a.data()[i] - grad_b.data()[i],
                                  theta_a.data()[i] - theta_b.data()[i], guard);
    }
    return out;
  }

  // Full computation for one pair: up to three gradient evaluations (at
  // theta_t, theta_{t-1}, theta_{t-2}) on the given batch.
  UpdateTerms compute(size_t t, const Batch& batch) const {
    require_step(t);
    ParamVector g(zero_.layout());
    model_.loss_and_grad(traj_.checkpoints[t], batch, g);
    ParamVector h = zero_, tau = zero_;
    if (t >= 1) {
      ParamVector g_prev(zero_.layout());
      model_.loss_and_grad(traj_.checkpoints[t - 1], batch, g_prev);
      h = diff_quotient(g, g_prev, traj_.checkpoints[t], traj_.checkpoints[t - 1]);
      if (second_ && t >= 2) {
        ParamVector g_prev2(zero_.layout());
        model_.loss_and_grad(traj_.checkpoints[t - 2], batch, g_prev2);
        ParamVector h_prev = diff_quotient(g_prev, g_prev2, traj_.checkpoints[t - 1],
                                           traj_.checkpoints[t - 2]);
        tau = diff_quotient(h, h_prev, traj_.checkpoints[t], traj_.checkpoints[t - 1]);
      }
    }
    return assemble(t, g, h, tau);
  }

  // Assembles Gamma and its diagonal derivatives from the loss gradient g,
  // the diagonal second-order gradient h, and (second order only) the
  // diagonal third-order gradient tau, all at (theta_t, batch).
  UpdateTerms assemble(size_t t, const ParamVector& g, const ParamVector& h,
                       const ParamVector& tau) const {
    require_step(t);
    const AdamConfig& cfg = traj_.config;
    detail::AdamTermScratch scratch;
    detail::adam_update_term(cfg, traj_.m_prev(t), traj_.v_prev(t), g, t, scratch);

    UpdateTerms terms;
    terms.gamma = std::move(scratch.gamma);
    terms.dgamma = ParamVector(zero_.layout());
    terms.has_second = second_;
    if (second_) terms.d2gamma = ParamVector(zero_.layout());

    const double s = static_cast<double>(t + 1);
    const double bc1 = 1.0 - std::pow(cfg.beta1, s);
    const double bc2 = 1.0 - std::pow(cfg.beta2, s);
    const ParamVector& dm_p = t ? dm_acc_[t - 1] : zero_;
    const ParamVector& dv_p = t ? dv_acc_[t - 1] : zero_;

    for (size_t i = 0; i < zero_.total_dim(); ++i) {
      const double gi = g.data()[i], hi = h.data()[i];
      const double mc = scratch.m_corr.data()[i], vc = scratch.v_corr.data()[i];
      const double sv = std::sqrt(vc);
      const double den = sv + cfg.eps;
      const double svg = std::max(sv, cfg.eps);  // guards the 1/sqrt(v) factors

      const double dm = (cfg.beta1 * dm_p.data()[i] + (1 - cfg.beta1) * hi) / bc1;
      const double dv = (cfg.beta2 * dv_p.data()[i] + 2 * (1 - cfg.beta2) * gi * hi) / bc2;
      const double dsq = dv / (2 * svg);
      terms.dgamma.data()[i] = (dm * den - dsq * mc) / (den * den);

      if (second_) {
        const double ti = tau.data()[i];
        const double d2m_pv = t ? d2m_acc_[t - 1].data()[i] : 0.0;
        const double d2v_pv = t ? d2v_acc_[t - 1].data()[i] : 0.0;
        const double d2m = (cfg.beta1 * d2m_pv + (1 - cfg.beta1) * ti) / bc1;
        const double d2v =
            (cfg.beta2 * d2v_pv + 2 * (1 - cfg.beta2) * (hi * hi + gi * ti)) / bc2;
        const double d2sq = d2v / (2 * svg) - dv * dv / (4 * svg * svg * svg);
        terms.d2gamma.data()[i] =
            (d2m * den - d2sq * mc - 2 * dsq * dm + 2 * dsq * dsq * mc / den) / (den * den);
      }
    }
    if (!terms.gamma.all_finite() || !terms.dgamma.all_finite() ||
        (second_ && !terms.d2gamma.all_finite()))
      throw NumericError("compute_terms: non-finite update term at step " + std::to_string(t));
    return terms;
  }

 private:
  void require_step(size_t t) const {
    if (t >= traj_.t_batches())
      throw StoreError("compute_terms: step " + std::to_string(t) + " out of range");
  }

  const DifferentiableModel& model_;
  const ReferenceTrajectory& traj_;
  bool second_;
  ParamVector zero_;
  std::vector<ParamVector> dm_acc_, dv_acc_, d2m_acc_, d2v_acc_;
};

// One-off convenience wrapper; building a full store shares one engine.
inline UpdateTerms compute_terms(const ReferenceTrajectory& traj,
                                 const DifferentiableModel& model, const Corpus& corpus,
                                 const Batch& batch, size_t t, bool want_second_order) {
  UpdateTermEngine engine(model, traj, corpus, want_second_order);
  return engine.compute(t, batch);
}

// ---------------------------------------------------------------------------
// The store: compressed terms for the full (t, l) grid
// ---------------------------------------------------------------------------

enum class StoreCompression : uint8_t { none = 0, jl = 1 };

struct StoreOptions {
  StoreCompression compression = StoreCompression::jl;
  std::vector<uint32_t> k_ladder = {300, 200, 160, 80, 20, 8};
  bool second_order = true;
  uint64_t seed = 0x6f6c73ULL;  // per-layer projection seeds derive from this
  unsigned jobs = 0;
};

// How one layer's term blocks are stored: 2-D layers wide enough to benefit
// are projected; 1-D layers (biases, norms) bypass projection and stay raw.
struct LayerPlan {
  bool projected = false;
  uint32_t rows = 0, cols = 0;  // matrix view, projected layers only
  ProjectionSpec spec;
  double roundtrip_bound = 0.0;  // max observed relative Frobenius error
};

class UpdateTermStore {
 public:
  UpdateTermStore() = default;
  UpdateTermStore(UpdateTermStore&&) = default;
  UpdateTermStore& operator=(UpdateTermStore&&) = default;

  size_t t_batches() const { return t_; }
  bool includes_second_order() const { return second_; }
  const Permutation& reference_order() const { return order_; }
  const AdamConfig& adam_config() const { return adam_; }
  const std::vector<LayerSpec>& layout() const { return layout_; }
  const std::vector<LayerPlan>& plans() const { return plans_; }
  uint64_t config_digest() const { return config_digest_; }

  // Decompressed terms for pair (t, l). Thread-safe; entries decompress once
  // on first access and stay cached.
  const UpdateTerms& terms(size_t t, size_t l) const {
    if (t >= t_ || l >= t_)
      throw StoreError("store: no entry for pair (" + std::to_string(t) + ", " +
                       std::to_string(l) + ")");
    Slot& slot = *slots_[t * t_ + l];
    std::call_once(slot.once, [&] { slot.terms = decompress(blobs_[t * t_ + l]); });
    return slot.terms;
  }

  size_t stored_value_count() const {
    size_t n = 0;
    for (const auto& b : blobs_) n += b.size();
    return n;
  }
  size_t raw_value_count() const {
    size_t per_entry = 0;
    for (const auto& l : layout_) per_entry += l.size();
    return blobs_.size() * per_entry * (second_ ? 3 : 2);
  }

  void save(const std::string& path) const {
    ByteWriter w;
    w.bytes("OLS1", 4);
    w.u16(1);
    w.u64(config_digest_);
    w.u32(static_cast<uint32_t>(t_));
    w.u8(second_ ? 1 : 0);
    w.f64(adam_.lr);
    w.f64(adam_.beta1);
    w.f64(adam_.beta2);
    w.f64(adam_.eps);
    for (uint32_t i = 0; i < t_; ++i) w.u32(order_[i]);
    detail::write_layout(w, layout_);
    for (const auto& plan : plans_) {
      w.u8(plan.projected ? 1 : 0);
      w.u32(plan.rows);
      w.u32(plan.cols);
      w.u64(plan.spec.seed);
      w.u32(plan.spec.target_dim);
      w.f64(plan.roundtrip_bound);
    }
    // Manifest: per-entry offset (in doubles, within the blob region),
    // length and checksum, then the blob region itself.
    uint64_t offset = 0;
    for (const auto& blob : blobs_) {
      w.u64(offset);
      w.u64(blob.size());
      w.u64(crc64(blob.data(), blob.size() * sizeof(double)));
      offset += blob.size();
    }
    for (const auto& blob : blobs_) w.f64_span(blob.data(), blob.size());
    detail::write_file(path, w);
  }

  static UpdateTermStore load(const std::string& path,
                              const std::vector<LayerSpec>* expected_layout = nullptr) {
    auto buf = detail::read_checked(path, "OLS1");
    ByteReader r(buf);
    r.skip(4);
    if (r.u16() != 1) throw CorruptionError(path + ": unsupported OLS1 version");
    UpdateTermStore store;
    store.config_digest_ = r.u64();
    store.t_ = r.u32();
    store.second_ = r.u8() != 0;
    store.adam_.lr = r.f64();
    store.adam_.beta1 = r.f64();
    store.adam_.beta2 = r.f64();
    store.adam_.eps = r.f64();
    store.order_.order.resize(store.t_);
    for (auto& o : store.order_.order) o = r.u32();
    store.order_.validate();
    store.layout_ = detail::read_layout(r);
    if (expected_layout && ParamVector::compute_layout_digest(store.layout_) !=
                               ParamVector::compute_layout_digest(*expected_layout))
      throw ShapeError(path + ": store layer layout does not match the model");
    store.plans_.resize(store.layout_.size());
    for (size_t li = 0; li < store.plans_.size(); ++li) {
      LayerPlan& plan = store.plans_[li];
      plan.projected = r.u8() != 0;
      plan.rows = r.u32();
      plan.cols = r.u32();
      plan.spec.seed = r.u64();
      plan.spec.target_dim = r.u32();
      plan.spec.source_dim = plan.cols;
      plan.roundtrip_bound = r.f64();
    }
    struct Entry {
      uint64_t offset, count, crc;
    };
    std::vector<Entry> index(store.t_ * store.t_);
    for (auto& e : index) {
      e.offset = r.u64();
      e.count = r.u64();
      e.crc = r.u64();
    }
    store.blobs_.resize(index.size());
    for (size_t i = 0; i < index.size(); ++i) {
      store.blobs_[i].resize(index[i].count);
      r.f64_span(store.blobs_[i].data(), index[i].count);
      if (crc64(store.blobs_[i].data(), index[i].count * sizeof(double)) != index[i].crc)
        throw CorruptionError(path + ": entry checksum mismatch at index " + std::to_string(i));
    }
    store.prepare_runtime();
    return store;
  }

 private:
  friend UpdateTermStore build_store(const ReferenceTrajectory&, const DifferentiableModel&,
                                     const Corpus&, const StoreOptions&, uint64_t);

  struct Slot {
    std::once_flag once;
    UpdateTerms terms;
  };

  // Regenerate projection matrices and pseudoinverses from the stored specs
  // and reset the decompression cache.
  void prepare_runtime() {
    as_.assign(layout_.size(), Matrix());
    pinvs_.assign(layout_.size(), Matrix());
    for (size_t li = 0; li < layout_.size(); ++li) {
      if (!plans_[li].projected) continue;
      as_[li] = gaussian_matrix(plans_[li].spec);
      pinvs_[li] = pseudoinverse(as_[li], plans_[li].spec.seed);
    }
    slots_.clear();
    slots_.reserve(t_ * t_);
    for (size_t i = 0; i < t_ * t_; ++i) slots_.push_back(std::make_unique<Slot>());
  }

  std::vector<double> compress(const UpdateTerms& terms) const {
    std::vector<double> blob;
    auto emit = [&](const ParamVector& pv) {
      for (size_t li = 0; li < layout_.size(); ++li) {
        auto span = pv.layer(li);
        const LayerPlan& plan = plans_[li];
        if (!plan.projected) {
          blob.insert(blob.end(), span.begin(), span.end());
        } else {
          detail::MapConstMat m(span.data(), plan.rows, plan.cols);
          Matrix mp = project_with(m, as_[li]);
          for (uint32_t row = 0; row < plan.rows; ++row)
            for (uint32_t c = 0; c < plan.spec.target_dim; ++c) blob.push_back(mp(row, c));
        }
      }
    };
    emit(terms.gamma);
    emit(terms.dgamma);
    if (second_) emit(terms.d2gamma);
    return blob;
  }

  UpdateTerms decompress(const std::vector<double>& blob) const {
    UpdateTerms terms;
    terms.has_second = second_;
    size_t pos = 0;
    auto take = [&](ParamVector& pv) {
      pv = ParamVector(layout_);
      for (size_t li = 0; li < layout_.size(); ++li) {
        auto span = pv.layer(li);
        const LayerPlan& plan = plans_[li];
        if (!plan.projected) {
          if (pos + span.size() > blob.size())
            throw CorruptionError("store: entry blob too short");
          std::copy(blob.begin() + static_cast<long>(pos),
                    blob.begin() + static_cast<long>(pos + span.size()), span.begin());
          pos += span.size();
        } else {
          size_t need = static_cast<size_t>(plan.rows) * plan.spec.target_dim;
          if (pos + need > blob.size()) throw CorruptionError("store: entry blob too short");
          Matrix mp(plan.rows, plan.spec.target_dim);
          for (uint32_t row = 0; row < plan.rows; ++row)
            for (uint32_t c = 0; c < plan.spec.target_dim; ++c) mp(row, c) = blob[pos++];
          Matrix m = recover_with(mp, pinvs_[li]);
          detail::MapMat(span.data(), plan.rows, plan.cols) = m;
        }
      }
    };
    take(terms.gamma);
    take(terms.dgamma);
    if (second_) take(terms.d2gamma);
    if (pos != blob.size()) throw CorruptionError("store: entry blob size mismatch");
    return terms;
  }

  size_t t_ = 0;
  bool second_ = false;
  Permutation order_;
  AdamConfig adam_;
  std::vector<LayerSpec> layout_;
  std::vector<LayerPlan> plans_;
  std::vector<std::vector<double>> blobs_;  // index t*T + l
  uint64_t config_digest_ = 0;
  mutable std::vector<std::unique_ptr<Slot>> slots_;
  std::vector<Matrix> as_, pinvs_;  // per-layer projection runtime
};

namespace detail {

inline std::vector<LayerPlan> plan_layers(const std::vector<LayerSpec>& layout,
                                          const StoreOptions& opts) {
  std::vector<LayerPlan> plans(layout.size());
  uint64_t seed = opts.seed;
  for (size_t li = 0; li < layout.size(); ++li) {
    seed = splitmix64(seed);
    LayerPlan& plan = plans[li];
    if (opts.compression == StoreCompression::none) continue;
    if (layout[li].shape.size() != 2) continue;  // 1-D layers bypass projection
    uint32_t rows = layout[li].shape[0], cols = layout[li].shape[1];
    // Largest ladder k no wider than half the layer width; layers too narrow
    // to compress stay raw.
    uint32_t k = 0;
    for (uint32_t cand : opts.k_ladder)
      if (cand <= cols / 2) k = std::max(k, cand);
    if (k == 0) continue;
    plan.projected = true;
    plan.rows = rows;
    plan.cols = cols;
    plan.spec = ProjectionSpec{cols, k, seed};
  }
  return plans;
}

}  // namespace detail

// Stage 2: compute and compress update terms for all T^2 (checkpoint, batch)
// pairs. Work is parallel across batch columns; every task reads immutable
// trajectory data and writes distinct entry slots.
inline UpdateTermStore build_store(const ReferenceTrajectory& traj,
                                   const DifferentiableModel& model, const Corpus& corpus,
                                   const StoreOptions& opts, uint64_t config_digest) {
  traj.check_complete();
  const size_t t_total = traj.t_batches();
  if (corpus.train.size() != t_total)
    throw StoreError("build_store: corpus batch count != trajectory length");

  UpdateTermStore store;
  store.t_ = t_total;
  store.second_ = opts.second_order;
  store.order_ = traj.order;
  store.adam_ = traj.config;
  store.layout_ = traj.checkpoints[0].layout();
  store.plans_ = detail::plan_layers(store.layout_, opts);
  store.blobs_.assign(t_total * t_total, {});
  store.config_digest_ = config_digest;
  store.prepare_runtime();

  UpdateTermEngine engine(model, traj, corpus, opts.second_order);
  const auto& layout = store.layout_;
  const ParamVector zero(layout);

  std::vector<std::vector<double>> layer_errs(t_total);  // per column, per layer
  parallel_for(t_total, opts.jobs, [&](size_t l) {
    const Batch& batch = corpus.train[l];
    std::vector<double> max_err(layout.size(), 0.0);
    ParamVector g(layout), h = zero, h_prev = zero, tau = zero;
    ParamVector g_prev(layout);
    for (size_t t = 0; t < t_total; ++t) {
      // The reference diagonal reuses the recorded gradient; every other pair
      // costs exactly one evaluation.
      if (traj.order[t] == l)
        g = traj.grads[t];
      else
        model.loss_and_grad(traj.checkpoints[t], batch, g);
      if (t >= 1) {
        h = UpdateTermEngine::diff_quotient(g, g_prev, traj.checkpoints[t],
                                            traj.checkpoints[t - 1]);
        if (opts.second_order)
          tau = (t >= 2) ? UpdateTermEngine::diff_quotient(h, h_prev, traj.checkpoints[t],
                                                           traj.checkpoints[t - 1])
                         : zero;
      }
      UpdateTerms terms = engine.assemble(t, g, h, tau);
      std::vector<double> blob = store.compress(terms);

      // Track the worst roundtrip error per projected layer.
      size_t pos = 0;
      auto track = [&](const ParamVector& pv) {
        for (size_t li = 0; li < layout.size(); ++li) {
          const LayerPlan& plan = store.plans_[li];
          auto span = pv.layer(li);
          if (!plan.projected) {
            pos += span.size();
            continue;
          }
          detail::MapConstMat orig(span.data(), plan.rows, plan.cols);
          Matrix mp(plan.rows, plan.spec.target_dim);
          for (uint32_t row = 0; row < plan.rows; ++row)
            for (uint32_t c = 0; c < plan.spec.target_dim; ++c) mp(row, c) = blob[pos++];
          Matrix rec = recover_with(mp, store.pinvs_[li]);
          double denom = std::max(orig.norm(), 1e-300);
          max_err[li] = std::max(max_err[li], (rec - orig).norm() / denom);
        }
      };
      track(terms.gamma);
      track(terms.dgamma);
      if (opts.second_order) track(terms.d2gamma);

      store.blobs_[t * t_total + l] = std::move(blob);
      g_prev = g;
      h_prev = h;
    }
    layer_errs[l] = std::move(max_err);
  });

  for (size_t li = 0; li < layout.size(); ++li)
    for (size_t l = 0; l < t_total; ++l)
      store.plans_[li].roundtrip_bound =
          std::max(store.plans_[li].roundtrip_bound, layer_errs[l][li]);

  return store;
}

}  // namespace orderlab
