#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "orderlab/estimator.hpp"
#include "orderlab/parallel.hpp"

namespace orderlab {

struct GAConfig {
  size_t population = 8;   // N, even
  size_t generations = 8;  // K
  double mutation_prob = 0.1;
  uint64_t seed = 0;
  bool inject_identity = false;  // seed the initial population with identity
  unsigned jobs = 0;

  void validate() const {
    if (population < 2 || population % 2 != 0)
      throw ConfigError("GAConfig: population must be even and >= 2");
    if (generations < 1) throw ConfigError("GAConfig: generations must be >= 1");
    if (mutation_prob < 0 || mutation_prob > 1)
      throw ConfigError("GAConfig: mutation_prob must be in [0, 1]");
  }
};

// Partially matched crossover. The child carries parent_b's segment at the
// 1-indexed inclusive positions [l, r] and parent_a's genes elsewhere;
// conflicts resolve through the segment's value mapping.
inline Permutation pmx_crossover(const Permutation& parent_a, const Permutation& parent_b,
                                 size_t l, size_t r) {
  const size_t t = parent_a.size();
  if (parent_b.size() != t) throw InputError("pmx_crossover: parent sizes differ");
  if (!(l >= 1 && l < r && r <= t))
    throw InputError("pmx_crossover: need 1 <= l < r <= T, got l=" + std::to_string(l) +
                     " r=" + std::to_string(r));
  const size_t lo = l - 1, hi = r - 1;

  std::vector<uint32_t> child(t);
  std::vector<long> pos_in_seg(t, -1);  // value -> index within b's segment
  for (size_t i = lo; i <= hi; ++i) {
    child[i] = parent_b[i];
    pos_in_seg[parent_b[i]] = static_cast<long>(i);
  }
  for (size_t i = 0; i < t; ++i) {
    if (i >= lo && i <= hi) continue;
    uint32_t gene = parent_a[i];
    while (pos_in_seg[gene] >= 0) gene = parent_a[static_cast<size_t>(pos_in_seg[gene])];
    child[i] = gene;
  }
  return Permutation(std::move(child));
}

struct GAGenerationStats {
  size_t generation = 0;
  double best_fitness = 0;
  double median_fitness = 0;
  Permutation best;
};

struct GAResult {
  Permutation best;
  double best_fitness = 0;  // estimated PPL / MSE of the best order seen
  std::vector<GAGenerationStats> history;
  size_t fitness_evaluations = 0;  // cache misses: actual estimator runs
  size_t failed_evaluations = 0;   // genomes that drew the worst fitness
};

// Generic GA driver over permutations, minimizing fitness_fn. A genome whose
// evaluation throws is assigned the worst fitness and the search continues.
// The fitness cache keeps total evaluations within N + K*N/2.
inline GAResult ga_search_with(size_t t_batches,
                               const std::function<double(const Permutation&)>& fitness_fn,
                               const GAConfig& cfg) {
  cfg.validate();
  if (t_batches == 0) throw InputError("ga_search: T must be positive");
  Rng rng(cfg.seed);
  GAResult result;

  std::map<std::vector<uint32_t>, double> cache;
  auto fitness_of = [&](const Permutation& p) {
    auto it = cache.find(p.order);
    return it == cache.end() ? std::numeric_limits<double>::quiet_NaN() : it->second;
  };
  auto evaluate_all = [&](const std::vector<Permutation>& pop) {
    std::vector<size_t> pending;
    for (size_t i = 0; i < pop.size(); ++i)
      if (cache.find(pop[i].order) == cache.end()) pending.push_back(i);
    std::vector<double> values(pending.size());
    parallel_for(pending.size(), cfg.jobs, [&](size_t j) {
      try {
        values[j] = fitness_fn(pop[pending[j]]);
      } catch (const std::exception&) {
        values[j] = std::numeric_limits<double>::infinity();
      }
    });
    for (size_t j = 0; j < pending.size(); ++j) {
      if (std::isinf(values[j])) ++result.failed_evaluations;
      cache[pop[pending[j]].order] = values[j];
      ++result.fitness_evaluations;
    }
  };

  // T=1 has a single order; nothing to evolve.
  if (t_batches == 1) {
    Permutation only = Permutation::identity(1);
    result.best = only;
    result.best_fitness = fitness_fn(only);
    result.fitness_evaluations = 1;
    result.history.push_back({0, result.best_fitness, result.best_fitness, only});
    return result;
  }

  std::vector<Permutation> pop;
  pop.reserve(cfg.population);
  if (cfg.inject_identity) pop.push_back(Permutation::identity(t_batches));
  while (pop.size() < cfg.population) pop.push_back(Permutation::random(t_batches, rng));

  Permutation best_ever;
  double best_fit = std::numeric_limits<double>::infinity();

  for (size_t gen = 0; gen < cfg.generations; ++gen) {
    evaluate_all(pop);
    std::vector<size_t> idx(pop.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
      return fitness_of(pop[a]) < fitness_of(pop[b]);
    });

    double gen_best = fitness_of(pop[idx[0]]);
    if (gen_best < best_fit) {
      best_fit = gen_best;
      best_ever = pop[idx[0]];
    }
    double median = fitness_of(pop[idx[idx.size() / 2]]);
    result.history.push_back({gen, best_fit, median, best_ever});

    // Top 50% survive; the rest are replaced by PMX children of randomly
    // chosen surviving parents, each mutated by a swap with probability p_m.
    std::vector<Permutation> survivors;
    for (size_t i = 0; i < cfg.population / 2; ++i) survivors.push_back(pop[idx[i]]);

    std::vector<Permutation> children;
    while (children.size() < cfg.population / 2) {
      size_t a = static_cast<size_t>(rng.below(survivors.size()));
      size_t b = static_cast<size_t>(rng.below(survivors.size()));
      if (survivors.size() >= 2)
        while (b == a) b = static_cast<size_t>(rng.below(survivors.size()));
      size_t l = 1 + static_cast<size_t>(rng.below(t_batches - 1));      // 1..T-1
      size_t r = l + 1 + static_cast<size_t>(rng.below(t_batches - l));  // l+1..T
      Permutation child = pmx_crossover(survivors[a], survivors[b], l, r);
      if (rng.uniform() < cfg.mutation_prob) {
        size_t i = static_cast<size_t>(rng.below(t_batches));
        size_t j = static_cast<size_t>(rng.below(t_batches));
        while (j == i) j = static_cast<size_t>(rng.below(t_batches));
        std::swap(child.order[i], child.order[j]);
      }
      children.push_back(std::move(child));
    }
    pop = std::move(survivors);
    for (auto& c : children) pop.push_back(std::move(c));
  }

  evaluate_all(pop);
  for (const auto& p : pop) {
    double f = fitness_of(p);
    if (f < best_fit) {
      best_fit = f;
      best_ever = p;
    }
  }
  result.best = best_ever;
  result.best_fitness = best_fit;
  return result;
}

// Curriculum search: minimize the estimated validation metric R(gamma_T^pi).
inline GAResult ga_search(const UpdateTermStore& store, const ReferenceTrajectory& traj,
                          const DifferentiableModel& model, const Dataset& val_set,
                          const GAConfig& ga_cfg, const EstimatorConfig& est_cfg) {
  auto fitness = [&](const Permutation& perm) {
    EstimatedTrajectory est = estimate(store, traj, perm, est_cfg);
    return evaluate(model, est.final_params(), val_set).metric(model.mode());
  };
  return ga_search_with(store.t_batches(), fitness, ga_cfg);
}

// ---------------------------------------------------------------------------
// Heuristic curriculum baselines
// ---------------------------------------------------------------------------

enum class CurriculumStrategy : uint8_t { ro = 0, sl = 1, ppl = 2, pd = 3 };

inline CurriculumStrategy parse_strategy(const std::string& s) {
  if (s == "ro") return CurriculumStrategy::ro;
  if (s == "sl") return CurriculumStrategy::sl;
  if (s == "ppl") return CurriculumStrategy::ppl;
  if (s == "pd") return CurriculumStrategy::pd;
  throw ConfigError("unknown curriculum strategy: " + s + " (expected ro|sl|ppl|pd)");
}

struct BaselineRefs {
  const DifferentiableModel* model = nullptr;  // PPL and PD
  const ParamVector* ref_params = nullptr;     // PPL; doubles as the strong model for PD
  const DifferentiableModel* weak_model = nullptr;  // PD (defaults to model)
  const ParamVector* weak_params = nullptr;         // PD
};

// Difficulty scores per strategy, sorted easy-to-hard (ascending score, ties
// by batch_id).
inline Permutation baseline_order(const Corpus& corpus, CurriculumStrategy strategy,
                                  const BaselineRefs& refs, uint64_t seed,
                                  bool descending = false) {
  const size_t t = corpus.train.size();
  if (t == 0) throw InputError("baseline_order: empty corpus");
  std::vector<double> score(t, 0.0);
  Rng rng(seed);

  switch (strategy) {
    case CurriculumStrategy::ro:
      for (size_t i = 0; i < t; ++i) score[i] = rng.uniform();
      break;
    case CurriculumStrategy::sl:
      for (size_t i = 0; i < t; ++i)
        score[i] = static_cast<double>(corpus.train[i].token_count);
      break;
    case CurriculumStrategy::ppl: {
      if (!refs.model || !refs.ref_params)
        throw ConfigError("baseline_order: PPL strategy needs a trained reference model");
      for (size_t i = 0; i < t; ++i) {
        EvalResult r = evaluate(*refs.model, *refs.ref_params,
                                corpus.batch_set(corpus.train[i]));
        score[i] = -r.metric(refs.model->mode());  // high-PPL batches first
      }
      break;
    }
    case CurriculumStrategy::pd: {
      if (!refs.model || !refs.ref_params || !refs.weak_params)
        throw ConfigError("baseline_order: PD strategy needs strong and weak trained models");
      const DifferentiableModel& weak = refs.weak_model ? *refs.weak_model : *refs.model;
      for (size_t i = 0; i < t; ++i) {
        Dataset d = corpus.batch_set(corpus.train[i]);
        double r_strong = evaluate(*refs.model, *refs.ref_params, d).metric(refs.model->mode());
        double r_weak = evaluate(weak, *refs.weak_params, d).metric(weak.mode());
        score[i] = guarded_div(r_weak - r_strong, r_weak, 1e-12);
      }
      break;
    }
  }

  std::vector<uint32_t> order(t);
  for (size_t i = 0; i < t; ++i) order[i] = static_cast<uint32_t>(i);
  std::stable_sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
    double sa = descending ? -score[a] : score[a];
    double sb = descending ? -score[b] : score[b];
    if (sa != sb) return sa < sb;
    return a < b;
  });
  return Permutation(std::move(order));
}

}  // namespace orderlab
