#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "orderlab/data.hpp"
#include "orderlab/param_vector.hpp"
#include "orderlab/rng.hpp"

namespace orderlab {

struct EvalResult {
  double loss = 0;        // mean cross-entropy (nats/token) or MSE
  double perplexity = 0;  // exp(loss); the metric in LM mode
  uint64_t token_count = 0;

  // Scalar performance R(params, dataset): PPL for LMs, MSE for regression.
  double metric(DataMode mode) const {
    return mode == DataMode::language_model ? perplexity : loss;
  }
};

// A deterministic differentiable model: mean loss over a batch plus its exact
// analytic gradient in the flat parameter layout.
class DifferentiableModel {
 public:
  virtual ~DifferentiableModel() = default;
  virtual DataMode mode() const = 0;
  virtual ParamVector param_template() const = 0;
  virtual ParamVector init_params(uint64_t seed) const = 0;
  virtual double loss_and_grad(const ParamVector& params, const Batch& batch,
                               ParamVector& grad) const = 0;
  virtual double dataset_loss(const ParamVector& params, const Dataset& data,
                              uint64_t* token_count) const = 0;
};

inline EvalResult evaluate(const DifferentiableModel& model, const ParamVector& params,
                           const Dataset& data) {
  if (data.empty()) throw InputError("evaluate: empty dataset");
  EvalResult r;
  r.loss = model.dataset_loss(params, data, &r.token_count);
  if (!std::isfinite(r.loss)) throw NumericError("evaluate: non-finite loss");
  r.perplexity = std::exp(r.loss);
  return r;
}

namespace detail {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using MapConstVec = Eigen::Map<const Eigen::VectorXd>;

inline void require_params(const ParamVector& params, const ParamVector& templ,
                           const char* who) {
  if (!params.conformable_with(templ))
    throw ShapeError(std::string(who) + ": parameters not conformable with model layout");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Fixed-window feedforward character LM:
//   context embeddings -> concat -> tanh hidden -> softmax over vocab.
// The forward pass is loop/GEMM only, so it is bitwise deterministic for
// fixed params and batch.
// ---------------------------------------------------------------------------
class CharLm final : public DifferentiableModel {
 public:
  CharLm(uint32_t vocab, uint32_t window, uint32_t embed_dim, uint32_t hidden_dim,
         double init_scale = 0.1)
      : v_(vocab), w_(window), e_(embed_dim), h_(hidden_dim), init_scale_(init_scale) {
    if (v_ == 0 || w_ == 0 || e_ == 0 || h_ == 0)
      throw ConfigError("CharLm: all dimensions must be positive");
  }

  DataMode mode() const override { return DataMode::language_model; }
  uint32_t vocab_size() const { return v_; }
  uint32_t window() const { return w_; }

  ParamVector param_template() const override {
    // Embedding row v_ is the out-of-text padding context.
    return ParamVector({{"embed", {v_ + 1, e_}},
                        {"w1", {w_ * e_, h_}},
                        {"b1", {h_}},
                        {"w2", {h_, v_}},
                        {"b2", {v_}}});
  }

  ParamVector init_params(uint64_t seed) const override {
    ParamVector p = param_template();
    Rng rng(seed);
    auto fill = [&](size_t layer) {
      for (double& x : p.layer(layer)) x = rng.normal() * init_scale_;
    };
    fill(0);  // embed
    fill(1);  // w1
    fill(3);  // w2  (biases stay zero)
    return p;
  }

  double loss_and_grad(const ParamVector& params, const Batch& batch,
                       ParamVector& grad) const override {
    detail::require_params(params, param_template(), "CharLm::loss_and_grad");
    if (!grad.conformable_with(params)) grad = param_template();
    grad.fill(0.0);
    double loss = run(params, batch.sequences, &grad);
    if (!std::isfinite(loss))
      throw NumericError("CharLm: non-finite loss on batch " + std::to_string(batch.batch_id));
    return loss;
  }

  double dataset_loss(const ParamVector& params, const Dataset& data,
                      uint64_t* token_count) const override {
    detail::require_params(params, param_template(), "CharLm::dataset_loss");
    if (data.mode != DataMode::language_model || !data.seqs)
      throw InputError("CharLm: dataset mode mismatch");
    if (token_count) {
      *token_count = 0;
      for (const auto& s : *data.seqs) *token_count += s.size();
    }
    return run(params, *data.seqs, nullptr);
  }

 private:
  double run(const ParamVector& params, const std::vector<std::vector<int32_t>>& seqs,
             ParamVector* grad) const {
    using namespace detail;
    size_t total = 0;
    for (const auto& s : seqs) total += s.size();
    if (total == 0) throw InputError("CharLm: no tokens to score");

    MapConstMat embed(params.layer(0).data(), v_ + 1, e_);
    MapConstMat w1(params.layer(1).data(), w_ * e_, h_);
    MapConstVec b1(params.layer(2).data(), h_);
    MapConstMat w2(params.layer(3).data(), h_, v_);
    MapConstVec b2(params.layer(4).data(), v_);

    const auto p = static_cast<Eigen::Index>(total);
    RowMat x(p, w_ * e_);
    std::vector<int32_t> targets(total);
    std::vector<int32_t> ctx(total * w_);

    Eigen::Index row = 0;
    for (const auto& s : seqs) {
      for (size_t i = 0; i < s.size(); ++i, ++row) {
        for (uint32_t j = 0; j < w_; ++j) {
          long src = static_cast<long>(i) - static_cast<long>(w_) + static_cast<long>(j);
          int32_t id = src >= 0 ? s[static_cast<size_t>(src)] : static_cast<int32_t>(v_);
          if (id < 0 || id > static_cast<int32_t>(v_))
            throw InputError("CharLm: token id out of range");
          ctx[static_cast<size_t>(row) * w_ + j] = id;
          x.block(row, j * e_, 1, e_) = embed.row(id);
        }
        targets[static_cast<size_t>(row)] = s[i];
      }
    }

    RowMat hidden = ((x * w1).rowwise() + b1.transpose()).array().tanh();
    RowMat logits = (hidden * w2).rowwise() + b2.transpose();

    // Row softmax with max-shift; accumulate mean cross-entropy.
    double loss = 0;
    RowMat probs(p, v_);
    for (Eigen::Index r = 0; r < p; ++r) {
      double mx = logits.row(r).maxCoeff();
      Eigen::ArrayXd ex = (logits.row(r).transpose().array() - mx).exp();
      double z = ex.sum();
      probs.row(r) = (ex / z).transpose();
      int32_t tgt = targets[static_cast<size_t>(r)];
      if (tgt < 0 || tgt >= static_cast<int32_t>(v_))
        throw InputError("CharLm: target id out of range");
      loss -= std::log(probs(r, tgt));
    }
    loss /= static_cast<double>(total);
    if (!grad) return loss;

    MapMat d_embed(grad->layer(0).data(), v_ + 1, e_);
    MapMat d_w1(grad->layer(1).data(), w_ * e_, h_);
    MapVec d_b1(grad->layer(2).data(), h_);
    MapMat d_w2(grad->layer(3).data(), h_, v_);
    MapVec d_b2(grad->layer(4).data(), v_);

    RowMat d_logits = probs;
    for (Eigen::Index r = 0; r < p; ++r) d_logits(r, targets[static_cast<size_t>(r)]) -= 1.0;
    d_logits /= static_cast<double>(total);

    d_w2 += hidden.transpose() * d_logits;
    d_b2 += d_logits.colwise().sum().transpose();
    RowMat d_hidden = d_logits * w2.transpose();
    RowMat d_pre = d_hidden.array() * (1.0 - hidden.array().square());
    d_w1 += x.transpose() * d_pre;
    d_b1 += d_pre.colwise().sum().transpose();
    RowMat d_x = d_pre * w1.transpose();
    for (Eigen::Index r = 0; r < p; ++r)
      for (uint32_t j = 0; j < w_; ++j)
        d_embed.row(ctx[static_cast<size_t>(r) * w_ + j]) += d_x.block(r, j * e_, 1, e_);
    return loss;
  }

  uint32_t v_, w_, e_, h_;
  double init_scale_;
};

// ---------------------------------------------------------------------------
// MLP regressor: optional tanh hidden layer; hidden_dim = 0 gives the plain
// linear model y = w.x + b. Loss is mean squared error.
// ---------------------------------------------------------------------------
class MlpRegressor final : public DifferentiableModel {
 public:
  MlpRegressor(uint32_t input_dim, uint32_t hidden_dim, double init_scale = 0.1)
      : d_(input_dim), h_(hidden_dim), init_scale_(init_scale) {
    if (d_ == 0) throw ConfigError("MlpRegressor: input_dim must be positive");
  }

  DataMode mode() const override { return DataMode::regression; }

  ParamVector param_template() const override {
    if (h_ == 0) return ParamVector({{"w", {d_}}, {"b", {1}}});
    return ParamVector({{"w1", {d_, h_}}, {"b1", {h_}}, {"w2", {h_}}, {"b2", {1}}});
  }

  ParamVector init_params(uint64_t seed) const override {
    ParamVector p = param_template();
    Rng rng(seed);
    for (double& x : p.layer(0)) x = rng.normal() * init_scale_;
    if (h_ > 0)
      for (double& x : p.layer(2)) x = rng.normal() * init_scale_;
    return p;
  }

  double loss_and_grad(const ParamVector& params, const Batch& batch,
                       ParamVector& grad) const override {
    detail::require_params(params, param_template(), "MlpRegressor::loss_and_grad");
    if (!grad.conformable_with(params)) grad = param_template();
    grad.fill(0.0);
    double loss = run(params, batch.samples, &grad);
    if (!std::isfinite(loss))
      throw NumericError("MlpRegressor: non-finite loss on batch " +
                         std::to_string(batch.batch_id));
    return loss;
  }

  double dataset_loss(const ParamVector& params, const Dataset& data,
                      uint64_t* token_count) const override {
    detail::require_params(params, param_template(), "MlpRegressor::dataset_loss");
    if (data.mode != DataMode::regression || !data.regs)
      throw InputError("MlpRegressor: dataset mode mismatch");
    if (token_count) *token_count = data.regs->size();
    return run(params, *data.regs, nullptr);
  }

 private:
  double run(const ParamVector& params, const std::vector<RegressionSample>& samples,
             ParamVector* grad) const {
    if (samples.empty()) throw InputError("MlpRegressor: no samples to score");
    const double inv_n = 1.0 / static_cast<double>(samples.size());
    double loss = 0;

    if (h_ == 0) {
      auto w = params.layer(0);
      double b = params.layer(1)[0];
      for (const auto& s : samples) {
        if (s.x.size() != d_) throw ShapeError("MlpRegressor: sample dim mismatch");
        double yhat = b;
        for (uint32_t j = 0; j < d_; ++j) yhat += w[j] * s.x[j];
        double err = yhat - s.y;
        loss += err * err;
        if (grad) {
          double g = 2.0 * err * inv_n;
          auto gw = grad->layer(0);
          for (uint32_t j = 0; j < d_; ++j) gw[j] += g * s.x[j];
          grad->layer(1)[0] += g;
        }
      }
      return loss * inv_n;
    }

    using namespace detail;
    MapConstMat w1(params.layer(0).data(), d_, h_);
    MapConstVec b1(params.layer(1).data(), h_);
    MapConstVec w2(params.layer(2).data(), h_);
    double b2 = params.layer(3)[0];

    Eigen::VectorXd hid(h_), dpre(h_);
    for (const auto& s : samples) {
      if (s.x.size() != d_) throw ShapeError("MlpRegressor: sample dim mismatch");
      MapConstVec x(s.x.data(), d_);
      hid = ((w1.transpose() * x) + b1).array().tanh();
      double yhat = w2.dot(hid) + b2;
      double err = yhat - s.y;
      loss += err * err;
      if (grad) {
        double g = 2.0 * err * inv_n;
        MapMat d_w1(grad->layer(0).data(), d_, h_);
        MapVec d_b1(grad->layer(1).data(), h_);
        MapVec d_w2(grad->layer(2).data(), h_);
        d_w2 += g * hid;
        grad->layer(3)[0] += g;
        dpre = (g * w2.array() * (1.0 - hid.array().square())).matrix();
        d_w1 += x * dpre.transpose();
        d_b1 += dpre;
      }
    }
    return loss * inv_n;
  }

  uint32_t d_, h_;
  double init_scale_;
};

// ---------------------------------------------------------------------------
// Quadratic test model: L(theta, B) = 1/2 sum theta^2 regardless of the
// batch, so grad = theta and the diagonal second derivative is exactly 1.
// ---------------------------------------------------------------------------
class QuadraticModel final : public DifferentiableModel {
 public:
  explicit QuadraticModel(uint32_t dim) : dim_(dim) {}

  DataMode mode() const override { return DataMode::regression; }
  ParamVector param_template() const override { return ParamVector({{"theta", {dim_}}}); }

  ParamVector init_params(uint64_t seed) const override {
    ParamVector p = param_template();
    Rng rng(seed);
    for (double& x : p.layer(0)) x = 1.0 + rng.uniform();
    return p;
  }

  double loss_and_grad(const ParamVector& params, const Batch&,
                       ParamVector& grad) const override {
    detail::require_params(params, param_template(), "QuadraticModel");
    grad = params;
    double loss = 0;
    for (double v : params.data()) loss += 0.5 * v * v;
    return loss;
  }

  double dataset_loss(const ParamVector& params, const Dataset&,
                      uint64_t* token_count) const override {
    if (token_count) *token_count = 1;
    double loss = 0;
    for (double v : params.data()) loss += 0.5 * v * v;
    return loss;
  }

 private:
  uint32_t dim_;
};

}  // namespace orderlab
