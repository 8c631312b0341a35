#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "orderlab/curriculum.hpp"
#include "orderlab/estimator.hpp"

namespace orderlab {

// ---------------------------------------------------------------------------
// Small statistics helpers
// ---------------------------------------------------------------------------

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw InputError("pearson: need >= 2 paired values");
  const double n = static_cast<double>(a.size());
  double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sa = 0, sb = 0, sab = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    sa += (a[i] - ma) * (a[i] - ma);
    sb += (b[i] - mb) * (b[i] - mb);
    sab += (a[i] - ma) * (b[i] - mb);
  }
  if (sa == 0 || sb == 0) return 0.0;
  return sab / std::sqrt(sa * sb);
}

namespace detail {
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  size_t i = 0;
  while (i < idx.size()) {  // average ranks over ties
    size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}
}  // namespace detail

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(detail::ranks(a), detail::ranks(b));
}

// Least-squares slope of y against x.
inline double trend_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InputError("trend_slope: need >= 2 points");
  const double n = static_cast<double>(x.size());
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0) return 0.0;
  return sxy / sxx;
}

// ---------------------------------------------------------------------------
// AbsDiff: estimator accuracy against the retraining oracle
// ---------------------------------------------------------------------------

struct AbsDiffEntry {
  Permutation perm;
  double r_true = 0;
  double r_est = 0;
};

struct AbsDiffReport {
  std::string method;
  std::vector<AbsDiffEntry> orders;
  double absdiff = 0;  // mean |r_est - r_true|
};

inline double absdiff_of(const std::vector<double>& r_est, const std::vector<double>& r_true) {
  if (r_est.size() != r_true.size() || r_est.empty())
    throw InputError("absdiff: need matching non-empty sequences");
  double s = 0;
  for (size_t i = 0; i < r_est.size(); ++i) s += std::abs(r_est[i] - r_true[i]);
  return s / static_cast<double>(r_est.size());
}

struct AbsDiffOptions {
  size_t n_orders = 10;
  std::set<std::string> methods = {"fut", "futpp", "random"};
  uint64_t seed = 0;
  unsigned jobs = 0;
};

// Samples N orders, retrains each for the ground truth, estimates each with
// the requested methods, and reports AbsDiff per method. The Random baseline
// draws uniformly from [min r, max r]. An order whose oracle retraining
// diverges is resampled once.
inline std::vector<AbsDiffReport> absdiff_eval(const UpdateTermStore& store,
                                               const ReferenceTrajectory& traj,
                                               const DifferentiableModel& model,
                                               const Corpus& corpus,
                                               const EstimatorConfig& est_cfg,
                                               const AbsDiffOptions& opts) {
  if (opts.n_orders < 1) throw InputError("absdiff_eval: need N >= 1");
  const size_t t = store.t_batches();
  Rng perm_rng(sub_seed(opts.seed, "absdiff_perms"));
  std::vector<Permutation> perms;
  perms.reserve(opts.n_orders);
  for (size_t k = 0; k < opts.n_orders; ++k) perms.push_back(Permutation::random(t, perm_rng));

  const Dataset val = corpus.validation_set();
  std::vector<double> r_true(opts.n_orders);
  parallel_for(opts.n_orders, opts.jobs, [&](size_t k) {
    for (int attempt = 0;; ++attempt) {
      try {
        OracleRun run = retrain_oracle(model, corpus, perms[k], traj.config,
                                       traj.checkpoints[0], val);
        r_true[k] = run.evals.back().metric(model.mode());
        return;
      } catch (const TrainingError&) {
        if (attempt >= 1) throw;
        Rng resample(sub_seed(opts.seed, "absdiff_resample") + k);
        perms[k] = Permutation::random(t, resample);
      }
    }
  });

  std::vector<AbsDiffReport> reports;
  auto estimated_report = [&](EstimatorMode mode, const std::string& name) {
    AbsDiffReport rep;
    rep.method = name;
    rep.orders.resize(opts.n_orders);
    EstimatorConfig cfg = est_cfg;
    cfg.mode = mode;
    parallel_for(opts.n_orders, opts.jobs, [&](size_t k) {
      EstimatedTrajectory est = estimate(store, traj, perms[k], cfg);
      rep.orders[k] = {perms[k], r_true[k],
                       evaluate(model, est.final_params(), val).metric(model.mode())};
    });
    std::vector<double> est_v(opts.n_orders), true_v(opts.n_orders);
    for (size_t k = 0; k < opts.n_orders; ++k) {
      est_v[k] = rep.orders[k].r_est;
      true_v[k] = rep.orders[k].r_true;
    }
    rep.absdiff = absdiff_of(est_v, true_v);
    reports.push_back(std::move(rep));
  };

  if (opts.methods.count("fut")) estimated_report(EstimatorMode::fut, "fut");
  if (opts.methods.count("futpp")) estimated_report(EstimatorMode::futpp, "futpp");
  if (opts.methods.count("random")) {
    double lo = *std::min_element(r_true.begin(), r_true.end());
    double hi = *std::max_element(r_true.begin(), r_true.end());
    Rng rng(sub_seed(opts.seed, "absdiff_random"));
    AbsDiffReport rep;
    rep.method = "random";
    rep.orders.resize(opts.n_orders);
    for (size_t k = 0; k < opts.n_orders; ++k)
      rep.orders[k] = {perms[k], r_true[k], rng.uniform(lo, hi)};
    std::vector<double> est_v(opts.n_orders), true_v(opts.n_orders);
    for (size_t k = 0; k < opts.n_orders; ++k) {
      est_v[k] = rep.orders[k].r_est;
      true_v[k] = rep.orders[k].r_true;
    }
    rep.absdiff = absdiff_of(est_v, true_v);
    reports.push_back(std::move(rep));
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Memorization / generalization heatmaps
// ---------------------------------------------------------------------------

struct Heatmap {
  size_t t = 0;            // grid is t x t: batch index x pinned position
  size_t n_per_cell = 0;   // permutations averaged per cell
  std::vector<double> cells;

  double at(size_t i, size_t j) const { return cells[i * t + j]; }
  double& at(size_t i, size_t j) { return cells[i * t + j]; }

  // Mean over rows of the Spearman correlation between position and value.
  double mean_position_spearman() const {
    std::vector<double> pos(t);
    std::iota(pos.begin(), pos.end(), 0.0);
    double s = 0;
    for (size_t i = 0; i < t; ++i) {
      std::vector<double> row(cells.begin() + static_cast<long>(i * t),
                              cells.begin() + static_cast<long>((i + 1) * t));
      s += spearman(pos, row);
    }
    return s / static_cast<double>(t);
  }
};

struct MemGenOptions {
  size_t n_per_cell = 3;
  uint64_t seed = 0;
  bool oracle = false;  // retrain instead of estimating
  unsigned jobs = 0;
};

struct MemGenResult {
  Heatmap mem;  // R(final params, B_i)
  Heatmap gen;  // R(final params, D)
  std::vector<double> similarity;  // sim(B_i, D), LM corpora only
  double tau = 0;                  // mean similarity threshold
  std::vector<bool> high_group;    // sim >= tau (ties go high)
};

// For each (i, j): N permutations pin B_i at position j with the rest
// shuffled; the cell is the mean metric of the final parameters, measured on
// B_i (memorization) and on D (generalization) from the same trajectories.
inline MemGenResult memgen_heatmaps(const UpdateTermStore* store,
                                    const ReferenceTrajectory& traj,
                                    const DifferentiableModel& model, const Corpus& corpus,
                                    const Dataset& d_set, const EstimatorConfig& est_cfg,
                                    const MemGenOptions& opts) {
  const size_t t = traj.t_batches();
  if (!opts.oracle && (!store || store->t_batches() != t))
    throw StoreError("memgen: estimation mode needs a complete store");
  if (opts.n_per_cell < 1) throw InputError("memgen: need N >= 1 permutations per cell");

  // All pinned permutations are drawn up front from one seeded stream, so
  // cells reproduce bitwise regardless of evaluation parallelism.
  Rng rng(sub_seed(opts.seed, "memgen_pins"));
  const size_t total = t * t * opts.n_per_cell;
  std::vector<Permutation> pins;
  pins.reserve(total);
  for (size_t i = 0; i < t; ++i)
    for (size_t j = 0; j < t; ++j)
      for (size_t k = 0; k < opts.n_per_cell; ++k)
        pins.push_back(Permutation::pinned_shuffle(t, static_cast<uint32_t>(i), j, rng));

  std::vector<double> mem_vals(total), gen_vals(total);
  parallel_for(total, opts.jobs, [&](size_t idx) {
    size_t i = idx / (t * opts.n_per_cell);
    const Permutation& perm = pins[idx];
    ParamVector final_params;
    if (opts.oracle) {
      ReferenceTrajectory run =
          train_reference(model, corpus, perm, traj.config, traj.checkpoints[0]);
      final_params = run.checkpoints.back();
    } else {
      final_params = estimate(*store, traj, perm, est_cfg).final_params();
    }
    mem_vals[idx] =
        evaluate(model, final_params, corpus.batch_set(corpus.train[i])).metric(model.mode());
    gen_vals[idx] = evaluate(model, final_params, d_set).metric(model.mode());
  });

  MemGenResult out;
  out.mem.t = out.gen.t = t;
  out.mem.n_per_cell = out.gen.n_per_cell = opts.n_per_cell;
  out.mem.cells.assign(t * t, 0);
  out.gen.cells.assign(t * t, 0);
  for (size_t i = 0; i < t; ++i)
    for (size_t j = 0; j < t; ++j) {
      double ms = 0, gs = 0;
      for (size_t k = 0; k < opts.n_per_cell; ++k) {
        size_t idx = (i * t + j) * opts.n_per_cell + k;
        ms += mem_vals[idx];
        gs += gen_vals[idx];
      }
      out.mem.at(i, j) = ms / static_cast<double>(opts.n_per_cell);
      out.gen.at(i, j) = gs / static_cast<double>(opts.n_per_cell);
    }

  if (corpus.mode == DataMode::language_model) {
    out.similarity.resize(t);
    for (size_t i = 0; i < t; ++i)
      out.similarity[i] = batch_similarity(corpus, corpus.train[i], d_set);
    out.tau = std::accumulate(out.similarity.begin(), out.similarity.end(), 0.0) /
              static_cast<double>(t);
    out.high_group.resize(t);
    for (size_t i = 0; i < t; ++i) out.high_group[i] = out.similarity[i] >= out.tau;
  }
  return out;
}

inline Heatmap memorization_heatmap(const UpdateTermStore* store,
                                    const ReferenceTrajectory& traj,
                                    const DifferentiableModel& model, const Corpus& corpus,
                                    const EstimatorConfig& est_cfg, const MemGenOptions& opts) {
  return memgen_heatmaps(store, traj, model, corpus, corpus.test_set(), est_cfg, opts).mem;
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

struct TimingRow {
  size_t n_orders = 0;
  double amortized_per_order = 0;  // store build amortized + one estimation
  double retrain_per_order = 0;
  double speedup = 0;
};

inline std::vector<TimingRow> timing_compare(double store_build_cost,
                                             double per_order_est_cost,
                                             double per_order_retrain_cost,
                                             const std::vector<size_t>& n_values) {
  std::vector<TimingRow> rows;
  for (size_t n : n_values) {
    if (n == 0) throw InputError("timing_compare: N must be positive");
    TimingRow row;
    row.n_orders = n;
    row.amortized_per_order = store_build_cost / static_cast<double>(n) + per_order_est_cost;
    row.retrain_per_order = per_order_retrain_cost;
    row.speedup = row.retrain_per_order / row.amortized_per_order;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace orderlab
