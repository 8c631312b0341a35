#include <catch2/catch_amalgamated.hpp>
#include <cstring>

#include "orderlab/data.hpp"
#include "orderlab/model.hpp"

using namespace orderlab;

namespace {

Corpus tiny_lm_corpus(uint64_t seed = 17, size_t docs = 120, uint32_t t = 4) {
  SynthTextSpec spec;
  spec.seed = seed;
  spec.n_docs = docs;
  IngestConfig icfg;
  icfg.t_batches = t;
  return ingest_docs(synth_text_docs(spec), icfg);
}

// Central finite differences with a relative step; coordinates with tiny
// gradients are compared absolutely via the denominator floor.
double grad_check_max_err(const DifferentiableModel& model, const ParamVector& params,
                          const Batch& batch, int n_coords, uint64_t seed) {
  ParamVector grad(params.layout());
  model.loss_and_grad(params, batch, grad);
  Rng rng(seed);
  double max_err = 0;
  ParamVector perturbed = params;
  for (int c = 0; c < n_coords; ++c) {
    size_t i = static_cast<size_t>(rng.below(params.total_dim()));
    double h = 1e-4 * (1.0 + std::abs(params.data()[i]));
    ParamVector dummy(params.layout());
    perturbed.data()[i] = params.data()[i] + h;
    double lp = model.loss_and_grad(perturbed, batch, dummy);
    perturbed.data()[i] = params.data()[i] - h;
    double lm = model.loss_and_grad(perturbed, batch, dummy);
    perturbed.data()[i] = params.data()[i];
    double fd = (lp - lm) / (2 * h);
    double a = grad.data()[i];
    max_err = std::max(max_err, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-2}));
  }
  return max_err;
}

struct PerfectModel final : DifferentiableModel {
  DataMode mode() const override { return DataMode::language_model; }
  ParamVector param_template() const override { return ParamVector({{"w", {1}}}); }
  ParamVector init_params(uint64_t) const override { return param_template(); }
  double loss_and_grad(const ParamVector&, const Batch&, ParamVector& grad) const override {
    grad.fill(0);
    return 0.0;
  }
  double dataset_loss(const ParamVector&, const Dataset&, uint64_t* tc) const override {
    if (tc) *tc = 1;
    return 0.0;
  }
};

}  // namespace

TEST_CASE("linear regressor is exact at the generating weights", "[model]") {
  std::vector<double> w_star;
  Corpus c = synth_regression(3, 80, 2, 4, 0.8, 0.1, 0.0, &w_star);
  MlpRegressor model(2, 0);
  ParamVector params = model.param_template();
  params.layer(0)[0] = w_star[0];
  params.layer(0)[1] = w_star[1];
  params.layer(1)[0] = 0.0;

  ParamVector grad(params.layout());
  double loss = model.loss_and_grad(params, c.train[1], grad);
  REQUIRE(loss == 0.0);
  REQUIRE(max_abs(grad) == 0.0);
}

TEST_CASE("quadratic model gradient equals parameters", "[model]") {
  QuadraticModel model(5);
  ParamVector params = model.init_params(8);
  ParamVector grad(params.layout());
  model.loss_and_grad(params, Batch{}, grad);
  REQUIRE(grad.data() == params.data());
}

TEST_CASE("analytic gradients match central differences", "[model]") {
  SECTION("char lm") {
    Corpus c = tiny_lm_corpus();
    CharLm model(c.vocab_size(), 4, 8, 16);
    ParamVector params = model.init_params(3);
    REQUIRE(grad_check_max_err(model, params, c.train[0], 10, 77) < 1e-5);
  }
  SECTION("mlp regressor") {
    Corpus c = synth_regression(5, 80, 4, 4);
    MlpRegressor model(4, 8);
    ParamVector params = model.init_params(4);
    REQUIRE(grad_check_max_err(model, params, c.train[0], 10, 78) < 1e-5);
  }
  SECTION("linear regressor") {
    Corpus c = synth_regression(6, 80, 3, 4);
    MlpRegressor model(3, 0);
    ParamVector params = model.init_params(5);
    REQUIRE(grad_check_max_err(model, params, c.train[0], 10, 79) < 1e-5);
  }
}

TEST_CASE("uniform predictor scores perplexity equal to vocab size", "[model]") {
  Corpus c = tiny_lm_corpus();
  CharLm model(c.vocab_size(), 4, 8, 16);
  ParamVector zeros = model.param_template();  // all-zero params -> uniform softmax
  EvalResult r = evaluate(model, zeros, c.validation_set());
  REQUIRE(r.loss == Catch::Approx(std::log(static_cast<double>(c.vocab_size()))).epsilon(1e-12));
  REQUIRE(r.perplexity == Catch::Approx(static_cast<double>(c.vocab_size())).epsilon(1e-12));
}

TEST_CASE("perfect predictions give perplexity one", "[model]") {
  PerfectModel model;
  std::vector<std::vector<int32_t>> seqs = {{0, 1}};
  EvalResult r = evaluate(model, model.param_template(),
                          {DataMode::language_model, &seqs, nullptr});
  REQUIRE(r.perplexity == 1.0);
}

TEST_CASE("perplexity is exp of the mean loss by construction", "[model]") {
  Corpus c = tiny_lm_corpus();
  CharLm model(c.vocab_size(), 4, 8, 16);
  EvalResult r = evaluate(model, model.init_params(2), c.test_set());
  REQUIRE(r.perplexity == std::exp(r.loss));
  REQUIRE(r.token_count > 0);
}

TEST_CASE("evaluation is invariant to dataset order", "[model]") {
  Corpus c = tiny_lm_corpus();
  CharLm model(c.vocab_size(), 4, 8, 16);
  ParamVector params = model.init_params(6);
  auto seqs = c.validation_seqs;
  std::reverse(seqs.begin(), seqs.end());
  EvalResult a = evaluate(model, params, c.validation_set());
  EvalResult b = evaluate(model, params, {DataMode::language_model, &seqs, nullptr});
  REQUIRE(a.loss == Catch::Approx(b.loss).epsilon(1e-12));
}

TEST_CASE("loss and gradient are bitwise deterministic", "[model]") {
  Corpus c = tiny_lm_corpus();
  CharLm model(c.vocab_size(), 4, 8, 16);
  ParamVector params = model.init_params(9);
  ParamVector g1(params.layout()), g2(params.layout());
  double l1 = model.loss_and_grad(params, c.train[1], g1);
  double l2 = model.loss_and_grad(params, c.train[1], g2);
  REQUIRE(l1 == l2);
  REQUIRE(std::memcmp(g1.raw(), g2.raw(), g1.total_dim() * sizeof(double)) == 0);
}

TEST_CASE("model error paths", "[model]") {
  Corpus c = tiny_lm_corpus();
  CharLm model(c.vocab_size(), 4, 8, 16);
  ParamVector bad = model.param_template();
  bad.data()[0] = std::nan("");
  ParamVector grad(bad.layout());
  try {
    model.loss_and_grad(bad, c.train[2], grad);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    REQUIRE(std::string(e.what()).find(std::to_string(c.train[2].batch_id)) !=
            std::string::npos);
  }

  ParamVector wrong({{"nope", {3}}});
  REQUIRE_THROWS_AS(model.loss_and_grad(wrong, c.train[0], grad), ShapeError);

  std::vector<std::vector<int32_t>> empty_seqs;
  REQUIRE_THROWS_AS(
      evaluate(model, model.param_template(), {DataMode::language_model, &empty_seqs, nullptr}),
      InputError);
}
