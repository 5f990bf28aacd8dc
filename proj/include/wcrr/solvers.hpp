#pragma once

// Iterative solvers:
//  * prox_denoise: argmin_x 1/2 ||x - y||^2 + R(x) by accelerated gradient
//    descent with gradient-based restart;
//  * sagd_solve: safeguarded accelerated gradient descent for the
//    lambda-weakly convex objective 1/2 ||H x - y||^2 + lambda R(x);
//  * conjugate_gradient for symmetric positive-definite image operators.

#include "wcrr/forward.hpp"
#include "wcrr/image.hpp"
#include "wcrr/regularizer.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace wcrr {

struct SolveOptions {
  double tol = 1e-4;          // relative change of consecutive iterates
  int max_iters = 2000;
  double a = 2.0;             // safeguard slack, must exceed 1
  std::optional<double> step_override;
  std::optional<double> op_norm;  // ||H||, estimated when absent
  bool record_trace = true;

  void validate() const {
    if (!(tol >= 0.0)) throw std::invalid_argument("SolveOptions: tol must be non-negative");
    if (max_iters < 1) throw std::invalid_argument("SolveOptions: max_iters must be positive");
    if (!(a > 1.0)) throw std::invalid_argument("SolveOptions: a must exceed 1");
    if (step_override && !(*step_override > 0.0)) throw std::invalid_argument("SolveOptions: step must be positive");
  }
};

enum class StopReason { tolerance, max_iters };

inline const char* to_string(StopReason r) { return r == StopReason::tolerance ? "tolerance" : "max_iters"; }

struct SolveReport {
  int iterations = 0;
  std::vector<double> objective_trace;  // objective at the extrapolated point z_k
  std::vector<double> grad_norm_trace;  // ||grad(z_k)||
  std::vector<char> restart_trace;      // 1 where momentum was reset
  std::vector<double> step_trace;       // ||x_{k+1} - x_k||
  int restart_count = 0;
  StopReason stop_reason = StopReason::max_iters;
  double step = 0.0;

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out.precision(15);
    out << "iteration,objective,grad_norm,restart\n";
    for (std::size_t k = 0; k < objective_trace.size(); ++k)
      out << k + 1 << "," << objective_trace[k] << "," << grad_norm_trace[k] << "," << int(restart_trace[k]) << "\n";
  }
};

struct SolveResult {
  Image x;
  SolveReport report;
};

namespace detail {

inline double relative_change(const Image& next, const Image& prev) {
  const double d = (next - prev).norm();
  const double p = prev.norm();
  if (p == 0.0) return d == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return d / p;
}

}  // namespace detail

/// Proximal denoiser D(y) = argmin 1/2 ||x - y||^2 + weight * R(x; sigma),
/// started at y with step 1 / (1 + weight * max(1, mu)).
inline SolveResult prox_denoise(const WcrrModel& model, const Image& y, double sigma, const SolveOptions& opts = {}, double weight = 1.0) {
  opts.validate();
  const double step = opts.step_override ? *opts.step_override : 1.0 / (1.0 + weight * std::max(1.0, model.mu()));
  SolveResult res;
  SolveReport& rep = res.report;
  rep.step = step;
  Image x = y, z = y, g, gr;
  double t = 1.0;
  for (int k = 1; k <= opts.max_iters; ++k) {
    if (opts.record_trace) {
      const double e = model.energy_and_grad(z, sigma, gr);
      const double f = 0.5 * (z - y).squaredNorm() + weight * e;
      if (!std::isfinite(f)) throw std::runtime_error("prox_denoise: non-finite objective at iteration " + std::to_string(k));
      rep.objective_trace.push_back(f);
    } else {
      gr = model.grad(z, sigma);
    }
    g = (z - y) + weight * gr;
    Image x_new = z - step * g;
    const bool restart = dot(g, x_new - x) > 0.0;
    if (opts.record_trace) {
      rep.grad_norm_trace.push_back(g.norm());
      rep.restart_trace.push_back(restart ? 1 : 0);
    }
    if (restart) {
      ++rep.restart_count;
      t = 1.0;
      z = x_new;
    } else {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      z = x_new + ((t - 1.0) / t_next) * (x_new - x);
      t = t_next;
    }
    const double rel = detail::relative_change(x_new, x);
    if (opts.record_trace) rep.step_trace.push_back((x_new - x).norm());
    x = std::move(x_new);
    rep.iterations = k;
    if (rel <= opts.tol) {
      rep.stop_reason = StopReason::tolerance;
      break;
    }
  }
  res.x = std::move(x);
  return res;
}

/// J(x) = 1/2 ||H x - y||^2 + lambda R(x; sigma).
inline double objective(const MeasurementOp& H, const Vector& y, double lambda, const WcrrModel& model, double sigma, const Image& x) {
  const double data = 0.5 * (H.apply(x) - y).squaredNorm();
  return lambda == 0.0 ? data : data + lambda * model.energy(x, sigma);
}

namespace detail {

inline double objective_and_grad(const MeasurementOp& H, const Vector& y, double lambda, const WcrrModel& model, double sigma,
                                 const Image& x, Image& g) {
  const Vector r = H.apply(x) - y;
  Image gr;
  const double e = model.energy_and_grad(x, sigma, gr);
  g = H.adjoint(r) + lambda * gr;
  return 0.5 * r.squaredNorm() + lambda * e;
}

}  // namespace detail

/// Safeguarded AGD.  The momentum step is kept only when
///   <grad J(z_k), z_k - z_{k-1}> + (a lambda / 2) ||z_k - z_{k-1}||^2 <= 0,
/// otherwise z_k = x_k and the momentum sequence restarts.  The sequence
/// J(z_k) is non-increasing.
inline SolveResult sagd_solve(const MeasurementOp& H, const Vector& y, double lambda, const WcrrModel& model, double sigma,
                              const Image& x0, const SolveOptions& opts = {}) {
  opts.validate();
  if (!(lambda > 0.0)) throw std::invalid_argument("sagd_solve: lambda must be positive");
  if (x0.rows() != H.image_rows() || x0.cols() != H.image_cols()) throw std::invalid_argument("sagd_solve: x0 shape does not match operator");
  double step;
  if (opts.step_override) {
    step = *opts.step_override;
  } else {
    const double hn = opts.op_norm ? *opts.op_norm : operator_norm(H);
    step = 1.0 / (hn * hn + lambda * model.lipschitz_bound());
  }

  SolveResult res;
  SolveReport& rep = res.report;
  rep.step = step;
  double t_prev = 1.0, t = 1.0;
  Image x_prev = x0, x = x0, z_prev = x0, z, g;
  for (int k = 1;; ++k) {
    z = x + ((t_prev - 1.0) / t) * (x - x_prev);
    double f = detail::objective_and_grad(H, y, lambda, model, sigma, z, g);
    const Image dz = z - z_prev;
    const double crit = dot(g, dz) + 0.5 * opts.a * lambda * dz.squaredNorm();
    const bool restart = crit > 0.0;
    if (restart) {
      z = x;
      t = t_prev = 1.0;
      f = detail::objective_and_grad(H, y, lambda, model, sigma, z, g);
      ++rep.restart_count;
    }
    if (!std::isfinite(f))
      throw std::runtime_error("sagd_solve: non-finite objective at iteration " + std::to_string(k) + " (check lambda, sigma and the step size)");
    if (opts.record_trace) {
      rep.objective_trace.push_back(f);
      rep.grad_norm_trace.push_back(g.norm());
      rep.restart_trace.push_back(restart ? 1 : 0);
    }
    Image x_next = z - step * g;
    if (opts.record_trace) rep.step_trace.push_back((x_next - x).norm());
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    x_prev = std::move(x);
    x = std::move(x_next);
    z_prev = z;
    t_prev = t;
    t = t_next;
    rep.iterations = k;
    if (detail::relative_change(x, x_prev) <= opts.tol) {
      rep.stop_reason = StopReason::tolerance;
      break;
    }
    if (k >= opts.max_iters) {
      rep.stop_reason = StopReason::max_iters;
      break;
    }
  }
  res.x = std::move(x);
  return res;
}

/// grad J at x, exposed for convergence diagnostics.
inline Image objective_grad(const MeasurementOp& H, const Vector& y, double lambda, const WcrrModel& model, double sigma, const Image& x) {
  Image g;
  detail::objective_and_grad(H, y, lambda, model, sigma, x, g);
  return g;
}

struct CgResult {
  int iterations = 0;
  double residual = 0.0;  // ||b - A x||
  bool converged = false;
};

/// Conjugate gradients for A x = b, A symmetric positive definite, stopping
/// when ||b - A x|| <= tol * ||b||.  `x` holds the initial guess.
template <class Op>
CgResult conjugate_gradient(Op&& A, const Image& b, Image& x, double tol, int max_iters) {
  CgResult res;
  const double bn = b.norm();
  if (bn == 0.0) {
    x.setZero(b.rows(), b.cols());
    res.converged = true;
    return res;
  }
  if (x.rows() != b.rows() || x.cols() != b.cols()) x = Image::Zero(b.rows(), b.cols());
  Image r = b - A(x);
  Image p = r;
  double rr = r.squaredNorm();
  res.residual = std::sqrt(rr);
  if (res.residual <= tol * bn) {
    res.converged = true;
    return res;
  }
  for (int it = 1; it <= max_iters; ++it) {
    const Image Ap = A(p);
    const double pAp = dot(p, Ap);
    if (!(pAp > 0.0)) break;
    const double step = rr / pAp;
    x += step * p;
    r -= step * Ap;
    const double rr_next = r.squaredNorm();
    res.iterations = it;
    res.residual = std::sqrt(rr_next);
    if (res.residual <= tol * bn) {
      res.converged = true;
      break;
    }
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  return res;
}

}  // namespace wcrr
