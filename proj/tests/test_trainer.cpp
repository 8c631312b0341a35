#include <catch2/catch_amalgamated.hpp>
#include <cstring>
#include <filesystem>

#include "orderlab/data.hpp"
#include "orderlab/model.hpp"
#include "orderlab/trainer.hpp"

using namespace orderlab;

namespace {

ParamVector scalar_pv(double v) {
  ParamVector p({{"theta", {1}}});
  p.data()[0] = v;
  return p;
}

struct DivergentModel final : DifferentiableModel {
  DataMode mode() const override { return DataMode::regression; }
  ParamVector param_template() const override { return ParamVector({{"w", {1}}}); }
  ParamVector init_params(uint64_t) const override { return param_template(); }
  double loss_and_grad(const ParamVector&, const Batch&, ParamVector& grad) const override {
    grad.fill(1.0);
    return 2e6;  // over the divergence threshold
  }
  double dataset_loss(const ParamVector&, const Dataset&, uint64_t* tc) const override {
    if (tc) *tc = 1;
    return 2e6;
  }
};

}  // namespace

TEST_CASE("adam step matches the hand-derived first update", "[trainer]") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  ParamVector params = scalar_pv(0.0);
  AdamState state = AdamState::fresh(params);
  ParamVector grad = scalar_pv(1.0);

  auto [next, ns] = adam_step(params, state, grad, cfg);
  // s=1: m=1, v=1, Gamma = 1/(1+eps), theta' = -0.1/(1+eps).
  const double expected_gamma = 1.0 / (1.0 + cfg.eps);
  REQUIRE(next.data()[0] == Catch::Approx(-cfg.lr * expected_gamma).epsilon(1e-12));
  REQUIRE(ns.m.data()[0] == Catch::Approx(0.1).epsilon(1e-12));   // raw accumulator
  REQUIRE(ns.v.data()[0] == Catch::Approx(0.05).epsilon(1e-12));
  REQUIRE(ns.step == 1);
}

TEST_CASE("zero gradients never move parameters", "[trainer]") {
  AdamConfig cfg;
  ParamVector params = scalar_pv(3.5);
  AdamState state = AdamState::fresh(params);
  ParamVector zero = scalar_pv(0.0);
  for (int i = 0; i < 5; ++i) {
    auto [next, ns] = adam_step(params, state, zero, cfg);
    REQUIRE(next.data()[0] == 3.5);
    params = next;
    state = ns;
  }
}

TEST_CASE("constant gradient drives updates to the sign of g", "[trainer]") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  const double g = 0.37;
  ParamVector params = scalar_pv(1.0);
  AdamState state = AdamState::fresh(params);
  ParamVector grad = scalar_pv(g);
  // Bias-corrected m_s = g and v_s = g^2 at every step under a constant
  // gradient, so Gamma = g/(g + eps) at both steps.
  for (int s = 0; s < 2; ++s) {
    auto [next, ns] = adam_step(params, state, grad, cfg);
    double gamma = (params.data()[0] - next.data()[0]) / cfg.lr;
    REQUIRE(gamma == Catch::Approx(g / (g + cfg.eps)).epsilon(1e-12));
    params = next;
    state = ns;
  }
}

TEST_CASE("adam step rejects non-finite gradients", "[trainer]") {
  AdamConfig cfg;
  ParamVector params = scalar_pv(0.0);
  AdamState state = AdamState::fresh(params);
  ParamVector bad = scalar_pv(std::numeric_limits<double>::infinity());
  REQUIRE_THROWS_AS(adam_step(params, state, bad, cfg), NumericError);
}

TEST_CASE("second moments stay non-negative", "[trainer]") {
  Corpus c = synth_regression(12, 120, 4, 8);
  MlpRegressor model(4, 8);
  ReferenceTrajectory traj = train_reference(model, c, Permutation::identity(8), AdamConfig{},
                                             model.init_params(12));
  for (const auto& v : traj.v_raw)
    for (double x : v.data()) REQUIRE(x >= 0.0);
}

TEST_CASE("single-step training records exactly one update", "[trainer]") {
  Corpus c = synth_regression(13, 20, 2, 1);
  MlpRegressor model(2, 0);
  AdamConfig cfg;
  ParamVector p0 = model.init_params(1);
  ReferenceTrajectory traj = train_reference(model, c, Permutation::identity(1), cfg, p0);
  REQUIRE(traj.checkpoints.size() == 2);
  REQUIRE(traj.grads.size() == 1);

  // theta_1 must equal one adam_step from theta_0 with the recorded gradient.
  AdamState state = AdamState::fresh(p0);
  auto [next, ns] = adam_step(p0, state, traj.grads[0], cfg);
  REQUIRE(std::memcmp(next.raw(), traj.checkpoints[1].raw(),
                      next.total_dim() * sizeof(double)) == 0);
}

TEST_CASE("training is bitwise deterministic", "[trainer]") {
  Corpus c = synth_regression(14, 120, 3, 8);
  MlpRegressor model(3, 8);
  ParamVector p0 = model.init_params(5);
  auto a = train_reference(model, c, Permutation::identity(8), AdamConfig{}, p0);
  auto b = train_reference(model, c, Permutation::identity(8), AdamConfig{}, p0);
  for (size_t t = 0; t <= 8; ++t)
    REQUIRE(std::memcmp(a.checkpoints[t].raw(), b.checkpoints[t].raw(),
                        a.checkpoints[t].total_dim() * sizeof(double)) == 0);
}

TEST_CASE("replaying stored gradients reconstructs the checkpoints", "[trainer]") {
  Corpus c = synth_regression(15, 120, 4, 8);
  MlpRegressor model(4, 8);
  AdamConfig cfg;
  ReferenceTrajectory traj =
      train_reference(model, c, Permutation::identity(8), cfg, model.init_params(2));

  ParamVector params = traj.checkpoints[0];
  AdamState state = AdamState::fresh(params);
  for (size_t t = 0; t < traj.t_batches(); ++t) {
    auto [next, ns] = adam_step(params, state, traj.grads[t], cfg);
    REQUIRE(max_rel_err(next, traj.checkpoints[t + 1]) < 1e-12);
    REQUIRE(max_rel_err(ns.m, traj.m_raw[t]) < 1e-12);
    REQUIRE(max_rel_err(ns.v, traj.v_raw[t]) < 1e-12);
    params = next;
    state = ns;
  }
}

TEST_CASE("training reduces validation error", "[trainer]") {
  Corpus c = synth_regression(16, 200, 4, 8);
  MlpRegressor model(4, 8);
  AdamConfig cfg;
  cfg.lr = 0.05;
  ReferenceTrajectory traj =
      train_reference(model, c, Permutation::identity(8), cfg, model.init_params(3));
  double before = evaluate(model, traj.checkpoints.front(), c.validation_set()).loss;
  double after = evaluate(model, traj.checkpoints.back(), c.validation_set()).loss;
  REQUIRE(after < before);
}

TEST_CASE("oracle under the reference order reproduces the trajectory", "[trainer]") {
  Corpus c = synth_regression(17, 120, 3, 6);
  MlpRegressor model(3, 4);
  AdamConfig cfg;
  ParamVector p0 = model.init_params(4);
  Permutation order = Permutation::identity(6);
  ReferenceTrajectory ref = train_reference(model, c, order, cfg, p0);
  OracleRun oracle = retrain_oracle(model, c, order, cfg, p0, c.validation_set());
  for (size_t t = 0; t <= 6; ++t)
    REQUIRE(std::memcmp(oracle.trajectory.checkpoints[t].raw(), ref.checkpoints[t].raw(),
                        p0.total_dim() * sizeof(double)) == 0);
  REQUIRE(oracle.evals.size() == 7);  // T+1 including the initial parameters
}

TEST_CASE("permutation composed with its inverse is the identity", "[trainer]") {
  Rng rng(55);
  for (int rep = 0; rep < 50; ++rep) {
    Permutation p = Permutation::random(12, rng);
    Permutation inv = p.inverse();
    for (uint32_t t = 0; t < 12; ++t) REQUIRE(inv[p[t]] == t);
  }
}

TEST_CASE("divergence is named with its step", "[trainer]") {
  Corpus c = synth_regression(18, 40, 1, 2);
  DivergentModel model;
  try {
    train_reference(model, c, Permutation::identity(2), AdamConfig{}, model.init_params(0));
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    REQUIRE(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("trajectory container roundtrips and rejects corruption", "[trainer]") {
  auto dir = std::filesystem::temp_directory_path() / "orderlab_trainer_test";
  std::filesystem::create_directories(dir);
  auto path = (dir / "ref.olt").string();

  Corpus c = synth_regression(19, 120, 3, 5);
  MlpRegressor model(3, 4);
  ReferenceTrajectory traj = train_reference(model, c, Permutation::identity(5), AdamConfig{},
                                             model.init_params(6));
  save_trajectory(traj, path, 0xabc);

  uint64_t digest = 0;
  ReferenceTrajectory back = load_trajectory(path, &digest);
  REQUIRE(digest == 0xabc);
  REQUIRE(back.t_batches() == 5);
  REQUIRE(back.config.lr == traj.config.lr);
  for (size_t t = 0; t <= 5; ++t)
    REQUIRE(std::memcmp(back.checkpoints[t].raw(), traj.checkpoints[t].raw(),
                        traj.checkpoints[t].total_dim() * sizeof(double)) == 0);
  for (size_t t = 0; t < 5; ++t) {
    REQUIRE(back.grads[t].data() == traj.grads[t].data());
    REQUIRE(back.m_raw[t].data() == traj.m_raw[t].data());
    REQUIRE(back.v_raw[t].data() == traj.v_raw[t].data());
  }

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 9);
  REQUIRE_THROWS_AS(load_trajectory(path), CorruptionError);
}
