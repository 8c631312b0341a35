#include <catch2/catch_amalgamated.hpp>

#include "orderlab/analysis.hpp"

using namespace orderlab;

namespace {

struct Rig {
  Corpus corpus;
  std::unique_ptr<DifferentiableModel> model;
  ReferenceTrajectory traj;
  UpdateTermStore store;
  EstimatorConfig est_cfg;

  static Rig regression(uint64_t seed, uint32_t t) {
    Rig rig;
    rig.corpus = synth_regression(seed, 40 * t, 4, t);
    rig.model = std::make_unique<MlpRegressor>(4, 8);
    AdamConfig cfg;
    cfg.lr = 0.02;
    rig.traj = train_reference(*rig.model, rig.corpus, Permutation::identity(t), cfg,
                               rig.model->init_params(seed + 1));
    StoreOptions opts;
    opts.compression = StoreCompression::none;
    rig.store = build_store(rig.traj, *rig.model, rig.corpus, opts, 0);
    rig.est_cfg.clip_bound = 1.1;
    return rig;
  }
};

}  // namespace

TEST_CASE("statistics helpers", "[analysis]") {
  std::vector<double> x = {0, 1, 2, 3}, y = {1, 3, 5, 7};
  REQUIRE(pearson(x, y) == Catch::Approx(1.0));
  REQUIRE(spearman(x, {7, 5, 3, 1}) == Catch::Approx(-1.0));
  REQUIRE(trend_slope(x, y) == Catch::Approx(2.0));
  REQUIRE(spearman({1, 1, 2, 2}, {1, 1, 2, 2}) == Catch::Approx(1.0));  // tie handling
}

TEST_CASE("absdiff arithmetic", "[analysis]") {
  REQUIRE(absdiff_of({1.0, 2.0}, {1.5, 1.5}) == Catch::Approx(0.5));
  REQUIRE(absdiff_of({2.0, 3.0}, {2.0, 3.0}) == 0.0);
  REQUIRE_THROWS_AS(absdiff_of({1.0}, {1.0, 2.0}), InputError);
  // The mean is invariant to processing order.
  REQUIRE(absdiff_of({1, 2, 3}, {0, 0, 0}) == absdiff_of({3, 2, 1}, {0, 0, 0}));
}

TEST_CASE("absdiff evaluation beats the random baseline on regression", "[analysis]") {
  Rig rig = Rig::regression(61, 8);
  AbsDiffOptions opts;
  opts.n_orders = 10;
  opts.seed = 5;
  auto reports = absdiff_eval(rig.store, rig.traj, *rig.model, rig.corpus, rig.est_cfg, opts);
  REQUIRE(reports.size() == 3);

  double fut = 0, random = 0;
  for (const auto& rep : reports) {
    REQUIRE(rep.orders.size() == 10);
    REQUIRE(rep.absdiff >= 0);
    if (rep.method == "fut") fut = rep.absdiff;
    if (rep.method == "random") random = rep.absdiff;
    if (rep.method == "random") {
      double lo = rep.orders[0].r_true, hi = rep.orders[0].r_true;
      for (const auto& o : rep.orders) {
        lo = std::min(lo, o.r_true);
        hi = std::max(hi, o.r_true);
      }
      for (const auto& o : rep.orders) {
        REQUIRE(o.r_est >= lo);
        REQUIRE(o.r_est <= hi);
      }
    }
  }
  REQUIRE(fut < random);
}

TEST_CASE("absdiff is reproducible for a fixed seed", "[analysis]") {
  Rig rig = Rig::regression(62, 4);
  AbsDiffOptions opts;
  opts.n_orders = 4;
  opts.seed = 9;
  auto a = absdiff_eval(rig.store, rig.traj, *rig.model, rig.corpus, rig.est_cfg, opts);
  auto b = absdiff_eval(rig.store, rig.traj, *rig.model, rig.corpus, rig.est_cfg, opts);
  for (size_t m = 0; m < a.size(); ++m) {
    REQUIRE(a[m].absdiff == b[m].absdiff);
    for (size_t k = 0; k < a[m].orders.size(); ++k)
      REQUIRE(a[m].orders[k].r_est == b[m].orders[k].r_est);
  }
}

TEST_CASE("single-batch heatmap equals training on the only batch", "[analysis]") {
  Rig rig = Rig::regression(63, 1);
  MemGenOptions opts;
  opts.n_per_cell = 3;
  opts.oracle = true;
  MemGenResult res = memgen_heatmaps(nullptr, rig.traj, *rig.model, rig.corpus,
                                     rig.corpus.test_set(), rig.est_cfg, opts);
  OracleRun oracle = retrain_oracle(*rig.model, rig.corpus, Permutation::identity(1),
                                    rig.traj.config, rig.traj.checkpoints[0],
                                    rig.corpus.batch_set(rig.corpus.train[0]));
  REQUIRE(res.mem.at(0, 0) == Catch::Approx(oracle.evals.back().loss).epsilon(1e-12));
}

TEST_CASE("heatmap cells are reproducible means of N values", "[analysis]") {
  Rig rig = Rig::regression(64, 4);
  MemGenOptions opts;
  opts.n_per_cell = 2;
  opts.seed = 21;
  MemGenResult a = memgen_heatmaps(&rig.store, rig.traj, *rig.model, rig.corpus,
                                   rig.corpus.test_set(), rig.est_cfg, opts);
  MemGenResult b = memgen_heatmaps(&rig.store, rig.traj, *rig.model, rig.corpus,
                                   rig.corpus.test_set(), rig.est_cfg, opts);
  REQUIRE(a.mem.cells == b.mem.cells);
  REQUIRE(a.gen.cells == b.gen.cells);
  for (double v : a.mem.cells) REQUIRE(std::isfinite(v));
  REQUIRE(a.mem.cells.size() == 16);
}

TEST_CASE("generalization against a training batch equals its memorization row",
          "[analysis]") {
  Rig rig = Rig::regression(65, 4);
  MemGenOptions opts;
  opts.n_per_cell = 2;
  opts.seed = 22;
  // D := contents of batch 1 -- gen row must coincide with mem row 1.
  MemGenResult res = memgen_heatmaps(&rig.store, rig.traj, *rig.model, rig.corpus,
                                     rig.corpus.batch_set(rig.corpus.train[1]), rig.est_cfg,
                                     opts);
  for (size_t j = 0; j < 4; ++j)
    REQUIRE(res.gen.at(1, j) == Catch::Approx(res.mem.at(1, j)).epsilon(1e-12));
}

TEST_CASE("identical batches fall into a single similarity group", "[analysis]") {
  // All batches share the same content: every similarity equals tau and the
  // tie rule sends everything to the high group.
  Corpus c;
  c.mode = DataMode::language_model;
  c.vocab = {"a", "b"};
  for (uint32_t i = 0; i < 3; ++i) {
    Batch b;
    b.batch_id = i;
    b.sequences = {{0, 1, 0}};
    b.token_count = 3;
    c.train.push_back(b);
  }
  c.validation_seqs = {{0, 1}};
  c.test_seqs = {{1, 0}};

  CharLm model(2, 2, 4, 8);
  AdamConfig cfg;
  ReferenceTrajectory traj =
      train_reference(model, c, Permutation::identity(3), cfg, model.init_params(5));
  MemGenOptions opts;
  opts.n_per_cell = 1;
  opts.oracle = true;
  MemGenResult res =
      memgen_heatmaps(nullptr, traj, model, c, c.test_set(), EstimatorConfig{}, opts);
  for (bool hg : res.high_group) REQUIRE(hg);
}

TEST_CASE("timing table arithmetic", "[analysis]") {
  auto rows = timing_compare(40.0, 0.1, 10.0, {10, 1000000});
  REQUIRE(rows[0].amortized_per_order == Catch::Approx(4.1));
  REQUIRE(rows[0].retrain_per_order == 10.0);
  // As N grows the amortized cost approaches the pure estimation cost.
  REQUIRE(rows[1].amortized_per_order == Catch::Approx(0.1).epsilon(1e-3));
  REQUIRE_THROWS_AS(timing_compare(1, 1, 1, {0}), InputError);
}
