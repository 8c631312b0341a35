#include <catch2/catch_amalgamated.hpp>
#include <cstring>
#include <ranges>

#include "orderlab/analysis.hpp"
#include "orderlab/estimator.hpp"

using namespace orderlab;

namespace {

struct Rig {
  Corpus corpus;
  std::unique_ptr<DifferentiableModel> model;
  ReferenceTrajectory traj;
  UpdateTermStore store;

  static Rig regression(uint64_t seed, uint32_t t, bool second_order = true) {
    Rig rig;
    rig.corpus = synth_regression(seed, 40 * t, 4, t);
    rig.model = std::make_unique<MlpRegressor>(4, 8);
    AdamConfig cfg;
    cfg.lr = 0.02;
    rig.traj = train_reference(*rig.model, rig.corpus, Permutation::identity(t), cfg,
                               rig.model->init_params(seed + 1));
    StoreOptions opts;
    opts.compression = StoreCompression::none;
    opts.second_order = second_order;
    rig.store = build_store(rig.traj, *rig.model, rig.corpus, opts, 0);
    return rig;
  }

  static Rig char_lm(uint64_t seed, uint32_t t) {
    Rig rig;
    SynthTextSpec spec;
    spec.seed = seed;
    spec.n_docs = 220;
    spec.styles = 2;
    spec.blocks = t;
    IngestConfig icfg;
    icfg.t_batches = t;
    rig.corpus = ingest_docs(synth_text_docs(spec), icfg);
    rig.model = std::make_unique<CharLm>(rig.corpus.vocab_size(), 6, 8, 24);
    AdamConfig cfg;
    cfg.lr = 0.005;
    rig.traj = train_reference(*rig.model, rig.corpus, Permutation::identity(t), cfg,
                               rig.model->init_params(seed + 2));
    StoreOptions opts;
    opts.compression = StoreCompression::none;
    rig.store = build_store(rig.traj, *rig.model, rig.corpus, opts, 0);
    return rig;
  }

  EstimatorConfig est_cfg(EstimatorMode mode = EstimatorMode::fut) const {
    EstimatorConfig cfg;
    cfg.mode = mode;
    cfg.clip_bound = 1.1;
    return cfg;
  }
};

}  // namespace

TEST_CASE("permutation parsing and validation", "[estimator]") {
  Permutation p = Permutation::parse("3,1,2,0");
  REQUIRE(p.size() == 4);
  REQUIRE(p[0] == 3);
  REQUIRE(p.to_string() == "3,1,2,0");
  REQUIRE(Permutation::identity(4).is_identity());
  REQUIRE_THROWS_AS(Permutation::parse("0,1,1"), InputError);
  REQUIRE_THROWS_AS(Permutation::parse("0,2"), InputError);
  REQUIRE_THROWS_AS(Permutation::parse("a,b"), InputError);
  REQUIRE_THROWS_AS(Permutation({0, 0, 1}), InputError);
}

TEST_CASE("pinned shuffles really pin", "[estimator]") {
  Rng rng(9);
  for (int rep = 0; rep < 100; ++rep) {
    uint32_t b = static_cast<uint32_t>(rng.below(8));
    size_t pos = static_cast<size_t>(rng.below(8));
    Permutation p = Permutation::pinned_shuffle(8, b, pos, rng);
    REQUIRE(p[pos] == b);
    p.validate();
  }
}

TEST_CASE("identity order reproduces the reference exactly", "[estimator]") {
  for (uint32_t t : {4u, 8u}) {
    Rig rig = Rig::regression(100 + t, t);
    for (EstimatorMode mode : {EstimatorMode::fut, EstimatorMode::futpp}) {
      EstimatedTrajectory est =
          estimate(rig.store, rig.traj, Permutation::identity(t), rig.est_cfg(mode));
      REQUIRE(est.gammas.size() == t + 1);
      REQUIRE(est.clip_events == 0);
      for (size_t s = 0; s <= t; ++s)
        REQUIRE(std::memcmp(est.gammas[s].raw(), rig.traj.checkpoints[s].raw(),
                            est.gammas[s].total_dim() * sizeof(double)) == 0);
    }
  }
}

TEST_CASE("swapping byte-identical batches changes nothing", "[estimator]") {
  Corpus corpus = synth_regression(31, 160, 4, 8);
  corpus.train[5].samples = corpus.train[2].samples;  // duplicate content
  MlpRegressor model(4, 8);
  AdamConfig cfg;
  ReferenceTrajectory traj = train_reference(model, corpus, Permutation::identity(8), cfg,
                                             model.init_params(11));
  StoreOptions opts;
  opts.compression = StoreCompression::none;
  UpdateTermStore store = build_store(traj, model, corpus, opts, 0);

  Permutation swapped = Permutation::identity(8);
  std::swap(swapped.order[2], swapped.order[5]);
  EstimatorConfig ec;
  ec.clip_bound = 1.1;
  EstimatedTrajectory est = estimate(store, traj, swapped, ec);
  for (size_t s = 0; s <= 8; ++s)
    REQUIRE(max_rel_err(est.gammas[s], traj.checkpoints[s]) < 1e-9);
}

TEST_CASE("estimation is bitwise deterministic", "[estimator]") {
  Rig rig = Rig::regression(32, 6);
  Rng rng(5);
  Permutation perm = Permutation::random(6, rng);
  EstimatedTrajectory a = estimate(rig.store, rig.traj, perm, rig.est_cfg());
  EstimatedTrajectory b = estimate(rig.store, rig.traj, perm, rig.est_cfg());
  for (size_t s = 0; s <= 6; ++s)
    REQUIRE(std::memcmp(a.gammas[s].raw(), b.gammas[s].raw(),
                        a.gammas[s].total_dim() * sizeof(double)) == 0);
}

TEST_CASE("every applied update respects the clip bound", "[estimator]") {
  Rig rig = Rig::regression(33, 8);
  EstimatorConfig cfg = rig.est_cfg();
  cfg.clip_bound = 0.25;  // far below typical Adam updates: must engage
  Rng rng(6);
  Permutation perm = Permutation::random(8, rng);
  EstimatedTrajectory est = estimate(rig.store, rig.traj, perm, cfg);
  REQUIRE(est.clip_events > 0);
  const double lr = rig.store.adam_config().lr;
  for (size_t s = 0; s < 8; ++s) {
    ParamVector step = sub(est.gammas[s], est.gammas[s + 1]);
    REQUIRE(max_abs(step) <= lr * cfg.clip_bound * (1 + 1e-12));
  }
}

TEST_CASE("raw parameter clipping is available behind a flag", "[estimator]") {
  Rig rig = Rig::regression(34, 6);
  EstimatorConfig cfg = rig.est_cfg();
  cfg.clip_raw_params = true;
  cfg.clip_bound = 0.05;
  Rng rng(7);
  EstimatedTrajectory est = estimate(rig.store, rig.traj, Permutation::random(6, rng), cfg);
  for (const auto& g : est.gammas | std::views::drop(1)) REQUIRE(max_abs(g) <= 0.05 + 1e-15);
}

TEST_CASE("estimator contract errors", "[estimator]") {
  Rig rig = Rig::regression(35, 4, /*second_order=*/false);
  REQUIRE_THROWS_AS(
      estimate(rig.store, rig.traj, Permutation::identity(3), rig.est_cfg()), StoreError);
  REQUIRE_THROWS_AS(
      estimate(rig.store, rig.traj, Permutation::identity(4), rig.est_cfg(EstimatorMode::futpp)),
      StoreError);
  EstimatorConfig bad = rig.est_cfg();
  bad.clip_bound = 0;
  REQUIRE_THROWS_AS(estimate(rig.store, rig.traj, Permutation::identity(4), bad), ConfigError);
}

TEST_CASE("estimate_performance contracts", "[estimator]") {
  Rig rig = Rig::regression(36, 5);
  EstimatedTrajectory est =
      estimate(rig.store, rig.traj, Permutation::identity(5), rig.est_cfg());
  auto final_only =
      estimate_performance(est, *rig.model, rig.corpus.validation_set(), false);
  REQUIRE(final_only.size() == 1);
  auto full = estimate_performance(est, *rig.model, rig.corpus.validation_set(), true);
  REQUIRE(full.size() == 6);

  // Identity order: the estimated curve is the oracle curve.
  OracleRun oracle = retrain_oracle(*rig.model, rig.corpus, Permutation::identity(5),
                                    rig.traj.config, rig.traj.checkpoints[0],
                                    rig.corpus.validation_set());
  for (size_t s = 0; s <= 5; ++s)
    REQUIRE(full[s].loss == Catch::Approx(oracle.evals[s].loss).epsilon(1e-9));
}

TEST_CASE("per-step estimates track the oracle curve", "[estimator]") {
  Rig rig = Rig::char_lm(40, 8);
  Rng rng(8);
  Permutation perm = Permutation::random(8, rng);

  EstimatedTrajectory est = estimate(rig.store, rig.traj, perm, rig.est_cfg());
  auto est_curve = estimate_performance(est, *rig.model, rig.corpus.validation_set(), true);
  OracleRun oracle = retrain_oracle(*rig.model, rig.corpus, perm, rig.traj.config,
                                    rig.traj.checkpoints[0], rig.corpus.validation_set());

  std::vector<double> e, o;
  for (size_t s = 0; s <= 8; ++s) {
    e.push_back(est_curve[s].perplexity);
    o.push_back(oracle.evals[s].perplexity);
  }
  REQUIRE(pearson(e, o) > 0.9);
}
