#pragma once

// Reference reconstructions the learned regularizer is compared against.

#include "wcrr/forward.hpp"
#include "wcrr/image.hpp"
#include "wcrr/solvers.hpp"

#include <stdexcept>

namespace wcrr {

namespace detail {

// D^T D x for forward differences with a zero difference past the last
// row / column (Neumann boundary).
inline Image laplacian_normal(const Image& x) {
  const Eigen::Index h = x.rows(), w = x.cols();
  Image out = Image::Zero(h, w);
  if (h > 1) {
    const Image dr = x.bottomRows(h - 1) - x.topRows(h - 1);
    out.bottomRows(h - 1) += dr;
    out.topRows(h - 1) -= dr;
  }
  if (w > 1) {
    const Image dc = x.rightCols(w - 1) - x.leftCols(w - 1);
    out.rightCols(w - 1) += dc;
    out.leftCols(w - 1) -= dc;
  }
  return out;
}

}  // namespace detail

/// ||grad x||^2 with forward differences.
inline double gradient_energy(const Image& x) {
  double e = 0.0;
  if (x.rows() > 1) e += (x.bottomRows(x.rows() - 1) - x.topRows(x.rows() - 1)).squaredNorm();
  if (x.cols() > 1) e += (x.rightCols(x.cols() - 1) - x.leftCols(x.cols() - 1)).squaredNorm();
  return e;
}

/// argmin 1/2 ||x - y||^2 + lambda ||grad x||^2, i.e. (I + 2 lambda D^T D) x = y.
inline Image tikhonov_denoise(const Image& y, double lambda, double tol = 1e-10, int max_iters = 2000) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("tikhonov_denoise: lambda must be non-negative");
  Image x = y;
  conjugate_gradient([&](const Image& u) { return Image(u + 2.0 * lambda * detail::laplacian_normal(u)); }, y, x, tol, max_iters);
  return x;
}

/// Ridge least squares argmin 1/2 ||H x - y||^2 + lambda/2 ||x||^2.
inline Image ridge_least_squares(const MeasurementOp& H, const Vector& y, double lambda, double tol = 1e-10, int max_iters = 2000) {
  if (!(lambda > 0.0)) throw std::invalid_argument("ridge_least_squares: lambda must be positive");
  const Image b = H.adjoint(y);
  Image x = Image::Zero(b.rows(), b.cols());
  conjugate_gradient([&](const Image& u) { return Image(H.normal(u) + lambda * u); }, b, x, tol, max_iters);
  return x;
}

/// Zero-filled reconstruction H^T y (the masked-Fourier baseline).
inline Image zero_filled(const MeasurementOp& H, const Vector& y) { return H.adjoint(y); }

}  // namespace wcrr
