#pragma once

// Synthetic CT phantoms: the modified Shepp-Logan head and random ellipses.

#include "wcrr/image.hpp"

#include <array>
#include <cmath>
#include <random>
#include <vector>

namespace wcrr {

struct Ellipse {
  double value;       // additive intensity
  double a, b;        // semi-axes in [-1, 1] units
  double x0, y0;      // centre
  double phi_deg;     // rotation
};

/// Sum of filled ellipses on an n x n grid covering [-1, 1]^2, clipped to [0, 1].
inline Image render_ellipses(const std::vector<Ellipse>& es, int n) {
  Image img = Image::Zero(n, n);
  const double pi = 3.14159265358979323846;
  for (const auto& e : es) {
    const double th = e.phi_deg * pi / 180.0, ct = std::cos(th), st = std::sin(th);
    for (int c = 0; c < n; ++c)
      for (int r = 0; r < n; ++r) {
        const double x = (2.0 * c + 1.0) / n - 1.0, y = 1.0 - (2.0 * r + 1.0) / n;
        const double u = (x - e.x0) * ct + (y - e.y0) * st, v = -(x - e.x0) * st + (y - e.y0) * ct;
        if ((u * u) / (e.a * e.a) + (v * v) / (e.b * e.b) <= 1.0) img(r, c) += e.value;
      }
  }
  return img.cwiseMax(0.0).cwiseMin(1.0);
}

/// Modified Shepp-Logan phantom (Toft's contrast-enhanced variant).
inline Image shepp_logan(int n) {
  const std::vector<Ellipse> es = {
      {1.0, 0.69, 0.92, 0.0, 0.0, 0.0},        {-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0},
      {-0.2, 0.11, 0.31, 0.22, 0.0, -18.0},    {-0.2, 0.16, 0.41, -0.22, 0.0, 18.0},
      {0.1, 0.21, 0.25, 0.0, 0.35, 0.0},       {0.1, 0.046, 0.046, 0.0, 0.1, 0.0},
      {0.1, 0.046, 0.046, 0.0, -0.1, 0.0},     {0.1, 0.046, 0.023, -0.08, -0.605, 0.0},
      {0.1, 0.023, 0.023, 0.0, -0.606, 0.0},   {0.1, 0.023, 0.046, 0.06, -0.605, 0.0},
  };
  return render_ellipses(es, n);
}

/// A head-like outer ellipse with a handful of random inner ellipses.
inline Image random_ellipse_phantom(int n, unsigned seed, int inner = 6) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Ellipse> es = {{0.9, 0.7 + 0.15 * u(rng), 0.8 + 0.12 * u(rng), 0.0, 0.0, 30.0 * (u(rng) - 0.5)}};
  es.push_back({-0.6, es[0].a - 0.05, es[0].b - 0.05, 0.0, 0.0, es[0].phi_deg});
  for (int k = 0; k < inner; ++k)
    es.push_back({0.6 * (u(rng) - 0.3), 0.05 + 0.2 * u(rng), 0.05 + 0.25 * u(rng), 0.8 * (u(rng) - 0.5), 0.9 * (u(rng) - 0.5),
                  180.0 * u(rng)});
  return render_ellipses(es, n);
}

}  // namespace wcrr
