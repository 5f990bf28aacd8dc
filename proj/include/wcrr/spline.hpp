#pragma once

// Linear splines on a uniform knot grid with constant extensions.
//
// A spline with M intervals stores the values c_0..c_M at the knots
// tau_m = origin + m * delta.  Left of tau_0 it equals c_0, right of tau_M it
// equals c_M.  Its primitive is piecewise quadratic on the grid and affine
// outside, and is anchored so that psi(0) = 0.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wcrr {

using Coeffs = std::vector<double>;

class LinearSpline {
 public:
  /// Position of t relative to the grid: t lies in [tau_index, tau_index+1)
  /// with barycentric weight `frac` on the right knot.  `inside` is false in
  /// the constant extensions, where index/frac point at the boundary knot.
  struct Bracket {
    int index;
    double frac;
    bool inside;
  };

  LinearSpline() = default;

  LinearSpline(double delta, Coeffs coeffs, double origin)
      : delta_(delta), origin_(origin), coeffs_(std::move(coeffs)) {
    if (!(delta_ > 0.0)) throw std::invalid_argument("LinearSpline: delta must be positive");
    if (coeffs_.size() < 2) throw std::invalid_argument("LinearSpline: need at least two knots");
    build_primitive();
  }

  /// Grid symmetric about zero, tau_m = (m - M/2) * delta; M must be even.
  static LinearSpline centered(double delta, Coeffs coeffs) {
    if (coeffs.size() % 2 == 0) throw std::invalid_argument("LinearSpline: centered grid needs even M");
    const double origin = -0.5 * double(coeffs.size() - 1) * delta;
    return LinearSpline(delta, std::move(coeffs), origin);
  }

  double delta() const { return delta_; }
  double origin() const { return origin_; }
  int intervals() const { return int(coeffs_.size()) - 1; }
  const Coeffs& coeffs() const { return coeffs_; }
  double knot(int m) const { return origin_ + m * delta_; }

  Bracket bracket(double t) const {
    const int M = intervals();
    const double u = (t - origin_) / delta_;
    if (!(u > 0.0)) return {0, 0.0, false};
    if (u >= M) return {M - 1, 1.0, false};
    int m = static_cast<int>(std::floor(u));
    if (m > M - 1) m = M - 1;
    return {m, u - m, true};
  }

  double operator()(double t) const { return eval(t); }

  double eval(double t) const {
    const Bracket b = bracket(t);
    if (!b.inside) return b.frac == 0.0 ? coeffs_.front() : coeffs_.back();
    const double c0 = coeffs_[b.index];
    return c0 + b.frac * (coeffs_[b.index + 1] - c0);
  }

  /// Right-continuous slope; zero in the constant extensions.
  double derivative(double t) const {
    const double u = (t - origin_) / delta_;
    if (u < 0.0 || u >= intervals()) return 0.0;
    const int m = std::min(static_cast<int>(std::floor(u)), intervals() - 1);
    return (coeffs_[m + 1] - coeffs_[m]) / delta_;
  }

  /// Primitive with value 0 at t = 0.
  double antiderivative(double t) const { return primitive_from_start(t) - anchor_; }

  /// Slope of each knot interval, (c_{m+1} - c_m) / delta.
  std::vector<double> slopes() const {
    std::vector<double> s(intervals());
    for (int m = 0; m < intervals(); ++m) s[m] = (coeffs_[m + 1] - coeffs_[m]) / delta_;
    return s;
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out.precision(12);
    out << "tau,c\n";
    for (int m = 0; m <= intervals(); ++m) out << knot(m) << "," << coeffs_[m] << "\n";
  }

 private:
  double primitive_from_start(double t) const {
    const int M = intervals();
    const double u = (t - origin_) / delta_;
    if (u <= 0.0) return coeffs_[0] * (t - origin_);
    if (u >= M) return cumulative_[M] + coeffs_[M] * (t - knot(M));
    const int m = std::min(static_cast<int>(std::floor(u)), M - 1);
    const double s = t - knot(m);
    const double slope = (coeffs_[m + 1] - coeffs_[m]) / delta_;
    return cumulative_[m] + coeffs_[m] * s + 0.5 * slope * s * s;
  }

  void build_primitive() {
    cumulative_.assign(coeffs_.size(), 0.0);
    for (std::size_t m = 1; m < coeffs_.size(); ++m)
      cumulative_[m] = cumulative_[m - 1] + 0.5 * delta_ * (coeffs_[m - 1] + coeffs_[m]);
    anchor_ = 0.0;
    anchor_ = primitive_from_start(0.0);
  }

  double delta_ = 1.0;
  double origin_ = 0.0;
  Coeffs coeffs_;
  Coeffs cumulative_;  // integral from tau_0 to tau_m
  double anchor_ = 0.0;
};

inline double eval(const LinearSpline& s, double t) { return s.eval(t); }
inline double eval_derivative(const LinearSpline& s, double t) { return s.derivative(t); }
inline double eval_antiderivative(const LinearSpline& s, double t) { return s.antiderivative(t); }

namespace detail {

// Slack used when deciding whether a finite difference sits inside [0, delta]
// for the derivative of the projection; absorbs rounding of knot grids.
inline double clip_slack(double delta) { return 1e-9 * delta; }

}  // namespace detail

/// Projection onto coefficient vectors whose finite differences lie in
/// [0, delta]: differences are clipped, re-accumulated, and shifted so the
/// mean is preserved.  Feasible inputs are returned unchanged.
inline Coeffs project_monotone_nonexpansive(std::span<const double> c, double delta) {
  const std::size_t n = c.size();
  if (n < 2) return Coeffs(c.begin(), c.end());
  bool feasible = true;
  for (std::size_t k = 0; k + 1 < n && feasible; ++k) {
    const double d = c[k + 1] - c[k];
    feasible = d >= 0.0 && d <= delta;
  }
  if (feasible) return Coeffs(c.begin(), c.end());

  Coeffs out(n);
  out[0] = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) out[k + 1] = out[k] + std::clamp(c[k + 1] - c[k], 0.0, delta);
  const double mean_in = std::accumulate(c.begin(), c.end(), 0.0) / double(n);
  const double mean_out = std::accumulate(out.begin(), out.end(), 0.0) / double(n);
  const double shift = mean_in - mean_out;
  for (auto& v : out) v += shift;
  return out;
}

/// Vector-Jacobian product of project_monotone_nonexpansive at c.
/// Clipped differences pass no gradient.
inline Coeffs project_monotone_nonexpansive_vjp(std::span<const double> c, double delta,
                                                std::span<const double> grad_out) {
  const std::size_t n = c.size();
  Coeffs grad(n, 0.0);
  if (n < 2) {
    std::copy(grad_out.begin(), grad_out.end(), grad.begin());
    return grad;
  }
  const double total = std::accumulate(grad_out.begin(), grad_out.end(), 0.0);
  const double slack = detail::clip_slack(delta);
  const double inv_n = 1.0 / double(n);
  double tail = 0.0;  // sum of grad_out[m] for m > k
  for (std::size_t kk = n - 1; kk-- > 0;) {
    tail += grad_out[kk + 1];
    const double d = c[kk + 1] - c[kk];
    if (d < -slack || d > delta + slack) continue;
    const double g_diff = tail - total * double(n - 1 - kk) * inv_n;
    grad[kk + 1] += g_diff;
    grad[kk] -= g_diff;
  }
  for (auto& g : grad) g += total * inv_n;
  return grad;
}

/// Odd part about the centre knot: o = (c - reverse(c)) / 2.
inline Coeffs symmetrize_odd(std::span<const double> c) {
  const std::size_t n = c.size();
  Coeffs out(n);
  for (std::size_t m = 0; m < n; ++m) out[m] = 0.5 * (c[m] - c[n - 1 - m]);
  return out;
}

inline Coeffs symmetrize_odd_vjp(std::span<const double> grad_out) { return symmetrize_odd(grad_out); }

/// Raw (unconstrained) coefficients to the effective odd, non-decreasing,
/// non-expansive activation coefficients.
inline Coeffs reparameterize_activation(std::span<const double> raw, double delta) {
  return symmetrize_odd(project_monotone_nonexpansive(raw, delta));
}

inline Coeffs reparameterize_activation_vjp(std::span<const double> raw, double delta,
                                            std::span<const double> grad_out) {
  const Coeffs g = symmetrize_odd_vjp(grad_out);
  return project_monotone_nonexpansive_vjp(raw, delta, g);
}

}  // namespace wcrr
