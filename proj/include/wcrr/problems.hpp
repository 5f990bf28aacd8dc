#pragma once

// Desk-scale inverse problems: operator construction, WCRR reconstruction,
// baselines and validation-set tuning of (lambda, sigma).

#include "wcrr/baselines.hpp"
#include "wcrr/forward.hpp"
#include "wcrr/metrics.hpp"
#include "wcrr/solvers.hpp"
#include "wcrr/tune.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace wcrr {

struct ProblemSpec {
  std::string kind = "mri";          // mri | ct | identity
  int size = 64;
  double acceleration = 4.0;         // mri
  double center_fraction = 0.08;     // mri
  unsigned mask_seed = 0;            // mri
  int num_angles = 60;               // ct
  int num_detectors = 95;            // ct
  double noise_sigma = 1e-2;
  unsigned noise_seed = 0;
};

inline MeasurementOp make_operator(const ProblemSpec& s) {
  if (s.size < 1) throw std::invalid_argument("problem: size must be positive");
  if (s.kind == "mri") return MeasurementOp::masked_fourier(s.size, s.size, make_cartesian_mask(s.size, s.acceleration, s.center_fraction, s.mask_seed));
  if (s.kind == "ct") return MeasurementOp::radon(s.size, s.num_angles, s.num_detectors);
  if (s.kind == "identity") return MeasurementOp::identity(s.size, s.size);
  throw std::invalid_argument("problem: unknown kind '" + s.kind + "' (expected mri, ct or identity)");
}

/// SAGD from x0 = 0 on 1/2 ||Hx - y||^2 + lambda R(x; sigma).
inline SolveResult reconstruct(const MeasurementOp& H, const Vector& y, const WcrrModel& model, double lambda, double sigma,
                               SolveOptions opts = {}) {
  if (!opts.op_norm) opts.op_norm = operator_norm(H);
  return sagd_solve(H, y, lambda, model, sigma, Image::Zero(H.image_rows(), H.image_cols()), opts);
}

/// ||grad J(x)|| / ||grad J(0)||.
inline double relative_gradient(const MeasurementOp& H, const Vector& y, const WcrrModel& model, double lambda, double sigma, const Image& x) {
  const Image g0 = objective_grad(H, y, lambda, model, sigma, Image::Zero(x.rows(), x.cols()));
  return objective_grad(H, y, lambda, model, sigma, x).norm() / g0.norm();
}

struct ValidationPair {
  Image truth;
  Vector measurements;
};

inline std::vector<ValidationPair> simulate_pairs(const MeasurementOp& H, const std::vector<Image>& truths, const ProblemSpec& s) {
  std::vector<ValidationPair> out;
  for (std::size_t i = 0; i < truths.size(); ++i) out.push_back({truths[i], simulate(H, truths[i], s.noise_sigma, s.noise_seed + unsigned(i))});
  return out;
}

/// Coarse-to-fine (lambda, sigma) search maximizing mean validation PSNR.
inline TuneResult tune_reconstruction(const MeasurementOp& H, const std::vector<ValidationPair>& val, const WcrrModel& model, const TuneGrid& grid,
                                      SolveOptions opts = {}) {
  if (val.empty()) throw std::invalid_argument("tune: need at least one validation pair");
  opts.record_trace = false;
  if (!opts.op_norm) opts.op_norm = operator_norm(H);
  return coarse_to_fine(
      [&](double lambda, double sigma) {
        double total = 0.0;
        for (const auto& v : val) total += psnr(v.truth, reconstruct(H, v.measurements, model, lambda, sigma, opts).x);
        return total / double(val.size());
      },
      grid);
}

/// Ridge least-squares baseline with lambda chosen on the validation set
/// from a log grid.
inline double tune_ridge_lambda(const MeasurementOp& H, const std::vector<ValidationPair>& val, double lo = 1e-3, double hi = 1e2, int points = 16) {
  if (val.empty()) throw std::invalid_argument("tune: need at least one validation pair");
  double best = lo, best_score = -1e300;
  for (int i = 0; i < points; ++i) {
    const double lambda = lo * std::pow(hi / lo, points > 1 ? double(i) / (points - 1) : 0.0);
    double total = 0.0;
    for (const auto& v : val) total += psnr(v.truth, ridge_least_squares(H, v.measurements, lambda));
    if (total > best_score) {
      best_score = total;
      best = lambda;
    }
  }
  return best;
}

}  // namespace wcrr
