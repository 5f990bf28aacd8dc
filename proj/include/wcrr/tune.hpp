#pragma once

// Coarse-to-fine search of (lambda, sigma) maximizing a validation score.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

namespace wcrr {

struct TuneGrid {
  double lambda_lo = 1e-3, lambda_hi = 1e1;
  double sigma_lo = 1.0 / 255.0, sigma_hi = 30.0 / 255.0;
  int points = 4;   // per axis, log-spaced
  int rounds = 3;   // refinements, each halving the log-span around the incumbent

  void validate() const {
    if (!(lambda_lo > 0.0 && lambda_hi >= lambda_lo)) throw std::invalid_argument("TuneGrid: need 0 < lambda_lo <= lambda_hi");
    if (!(sigma_lo > 0.0 && sigma_hi >= sigma_lo)) throw std::invalid_argument("TuneGrid: need 0 < sigma_lo <= sigma_hi");
    if (points < 1 || rounds < 0) throw std::invalid_argument("TuneGrid: points >= 1 and rounds >= 0 required");
  }
};

struct TunePoint {
  double lambda = 0.0, sigma = 0.0, score = 0.0;
};

struct TuneResult {
  TunePoint best;
  std::vector<TunePoint> evaluations;   // in evaluation order
  double final_log_step_lambda = 0.0;   // spacing of the last grid (natural log)
  double final_log_step_sigma = 0.0;
};

namespace detail {

inline std::vector<double> log_axis(double log_lo, double log_hi, int n) {
  if (n == 1 || log_hi == log_lo) return {std::exp(0.5 * (log_lo + log_hi))};
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = std::exp(log_lo + (log_hi - log_lo) * i / double(n - 1));
  return v;
}

// Window of the given width centred at c, shifted to stay inside [lo, hi].
inline std::pair<double, double> clamp_window(double c, double width, double lo, double hi) {
  double a = c - 0.5 * width, b = c + 0.5 * width;
  if (a < lo) {
    b += lo - a;
    a = lo;
  }
  if (b > hi) {
    a -= b - hi;
    b = hi;
  }
  return {std::max(a, lo), std::min(b, hi)};
}

// Higher score wins; ties go to the smaller lambda, then the smaller sigma.
inline bool better(const TunePoint& a, const TunePoint& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.lambda != b.lambda) return a.lambda < b.lambda;
  return a.sigma < b.sigma;
}

}  // namespace detail

/// Evaluates `score(lambda, sigma)` on a points x points log grid, then
/// `rounds` times on a grid whose log-span is halved around the incumbent.
/// Points already evaluated are not recomputed.
inline TuneResult coarse_to_fine(const std::function<double(double, double)>& score, const TuneGrid& g) {
  g.validate();
  const double L0 = std::log(g.lambda_lo), L1 = std::log(g.lambda_hi);
  const double S0 = std::log(g.sigma_lo), S1 = std::log(g.sigma_hi);
  double llo = L0, lhi = L1, slo = S0, shi = S1;
  TuneResult res;
  std::map<std::pair<double, double>, double> cache;
  bool have = false;
  for (int round = 0; round <= g.rounds; ++round) {
    if (round > 0) {
      const double lw = 0.5 * (lhi - llo), sw = 0.5 * (shi - slo);
      std::tie(llo, lhi) = detail::clamp_window(std::log(res.best.lambda), lw, L0, L1);
      std::tie(slo, shi) = detail::clamp_window(std::log(res.best.sigma), sw, S0, S1);
    }
    for (double lam : detail::log_axis(llo, lhi, g.points))
      for (double sig : detail::log_axis(slo, shi, g.points)) {
        const auto key = std::make_pair(lam, sig);
        auto it = cache.find(key);
        if (it == cache.end()) {
          it = cache.emplace(key, score(lam, sig)).first;
          res.evaluations.push_back({lam, sig, it->second});
        }
        const TunePoint p{lam, sig, it->second};
        if (!have || detail::better(p, res.best)) {
          res.best = p;
          have = true;
        }
      }
    res.final_log_step_lambda = g.points > 1 ? (lhi - llo) / (g.points - 1) : 0.0;
    res.final_log_step_sigma = g.points > 1 ? (shi - slo) / (g.points - 1) : 0.0;
  }
  return res;
}

}  // namespace wcrr
