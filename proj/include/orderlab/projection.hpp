#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>

#include "orderlab/common.hpp"
#include "orderlab/rng.hpp"

namespace orderlab {

using Matrix = Eigen::MatrixXd;

// Random-projection descriptor. The projection matrix is never persisted:
// (seed, dims) regenerate it exactly, which halves storage and pins
// reproducibility to the seed.
struct ProjectionSpec {
  uint32_t source_dim = 0;  // d2: width of the matrices being compressed
  uint32_t target_dim = 0;  // k
  uint64_t seed = 0;

  void validate() const {
    if (target_dim < 1 || target_dim > source_dim)
      throw InputError("ProjectionSpec: need 1 <= k <= source_dim, got k=" +
                       std::to_string(target_dim) + " d2=" + std::to_string(source_dim));
  }
};

// Target dimension from the Johnson-Lindenstrauss bound
// k >= 4 ln(n) / (eps^2/2 - eps^3/3) for n vectors at distortion eps.
inline int jl_target_dim(int n_vectors, double eps) {
  if (n_vectors < 2 || eps <= 0 || eps >= 1)
    throw InputError("jl_target_dim: need n >= 2 and 0 < eps < 1");
  double denom = eps * eps / 2.0 - eps * eps * eps / 3.0;
  return static_cast<int>(std::ceil(4.0 * std::log(static_cast<double>(n_vectors)) / denom));
}

// Regenerate the d2 x k Gaussian matrix A with entries ~ N(0, 1/k). Entries
// are drawn row-major so regeneration is order-stable for a given seed.
inline Matrix gaussian_matrix(const ProjectionSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec.target_dim));
  Matrix a(spec.source_dim, spec.target_dim);
  for (uint32_t i = 0; i < spec.source_dim; ++i)
    for (uint32_t j = 0; j < spec.target_dim; ++j) a(i, j) = rng.normal() * scale;
  return a;
}

inline Matrix project_with(const Matrix& m, const Matrix& a) {
  if (m.cols() != a.rows())
    throw ShapeError("project: matrix width " + std::to_string(m.cols()) +
                     " does not match projection source dim " + std::to_string(a.rows()));
  return m * a;
}

// Compress M (d1 x d2) to M*A (d1 x k).
inline Matrix project(const Matrix& m, const ProjectionSpec& spec) {
  if (m.cols() != static_cast<Eigen::Index>(spec.source_dim))
    throw ShapeError("project: matrix width " + std::to_string(m.cols()) +
                     " does not match spec source dim " + std::to_string(spec.source_dim));
  return project_with(m, gaussian_matrix(spec));
}

// Moore-Penrose pseudoinverse of a full-column-rank A via Householder QR
// (least-squares solve against the identity; no normal equations).
inline Matrix pseudoinverse(const Matrix& a, uint64_t seed_for_error = 0) {
  Eigen::HouseholderQR<Matrix> qr(a);
  const auto& qrm = qr.matrixQR();
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    if (std::abs(qrm(i, i)) < 1e-12)
      throw NumericError("pseudoinverse: rank-deficient projection matrix (pivot " +
                         std::to_string(qrm(i, i)) + " at column " + std::to_string(i) +
                         ", seed " + std::to_string(seed_for_error) + ")");
  }
  return qr.solve(Matrix::Identity(a.rows(), a.rows()));
}

inline Matrix recover_with(const Matrix& mp, const Matrix& a_pinv) {
  if (mp.cols() != a_pinv.rows())
    throw ShapeError("recover: compressed width " + std::to_string(mp.cols()) +
                     " does not match pseudoinverse rows " + std::to_string(a_pinv.rows()));
  return mp * a_pinv;
}

// Approximate M from its compressed form: M~ = M' * A+.
inline Matrix recover(const Matrix& mp, const ProjectionSpec& spec) {
  if (mp.cols() != static_cast<Eigen::Index>(spec.target_dim))
    throw ShapeError("recover: compressed width " + std::to_string(mp.cols()) +
                     " does not match spec target dim " + std::to_string(spec.target_dim));
  return recover_with(mp, pseudoinverse(gaussian_matrix(spec), spec.seed));
}

}  // namespace orderlab
