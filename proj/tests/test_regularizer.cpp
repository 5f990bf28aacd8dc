#include "wcrr/regularizer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace wcrr;

namespace {

Image random_image(std::mt19937_64& rng, int h, int w, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Image x(h, w);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  return x;
}

WcrrHyper tiny_hyper() {
  WcrrHyper h;
  h.delta = 0.25;
  h.intervals = 20;
  h.sigma_max = 0.2;
  h.alpha_knots = 5;
  return h;
}

// Small model whose features land on the spline grid for unit-scale images.
WcrrParams random_params(std::mt19937_64& rng, const WcrrHyper& h = tiny_hyper()) {
  WcrrParams p = WcrrParams::initial(ConvShape{{2, 3, 4}, 3}, rng, h, 0.0);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.5, 2.5);
  p.mu = u(rng);
  for (auto& v : p.c_plus) v = h.delta * 2.0 * n(rng);
  for (auto& v : p.c_minus) v = h.delta * 2.0 * n(rng);
  for (auto& row : p.alpha)
    for (auto& v : row) v = 0.3 * n(rng) - 1.0;
  return p;
}

WcrrModel random_model(std::mt19937_64& rng, int norm_size = 8) {
  return WcrrModel::with_power_norm(random_params(rng), norm_size, norm_size, 1000);
}

// True if some feature alpha (W (x + s u)) crosses a knot of phi for s in [-h, h].
bool crosses_knot(const WcrrModel& m, const Image& x, const Image& u, double h, double sigma) {
  const Features z = m.conv().forward(x), d = m.conv().forward(u);
  const auto& phi = m.phi();
  for (int i = 0; i < m.num_channels(); ++i) {
    const double a = m.alpha(i, sigma);
    for (Eigen::Index k = 0; k < z[i].size(); ++k) {
      const double lo = a * (z[i].data()[k] - h * std::abs(d[i].data()[k]));
      const double hi = a * (z[i].data()[k] + h * std::abs(d[i].data()[k]));
      const double ulo = (lo - phi.origin()) / phi.delta(), uhi = (hi - phi.origin()) / phi.delta();
      if (std::floor(ulo) != std::floor(uhi) && uhi > 0 && ulo < phi.intervals()) return true;
    }
  }
  return false;
}

// Naive reference energy: scalar-loop convolutions and direct summation.
double naive_energy(const WcrrModel& m, const Image& x, double sigma) {
  const Kernels& K = m.conv().kernels();
  const int h = int(x.rows()), w = int(x.cols());
  Features a{x};
  for (const auto& L : K) {
    const int p = (L.k - 1) / 2;
    Features out(L.out, Image::Zero(h, w));
    for (int o = 0; o < L.out; ++o)
      for (int i = 0; i < L.in; ++i)
        for (int r = 0; r < h; ++r)
          for (int c = 0; c < w; ++c)
            for (int da = 0; da < L.k; ++da)
              for (int db = 0; db < L.k; ++db) {
                const int rr = r + da - p, cc = c + db - p;
                if (rr >= 0 && rr < h && cc >= 0 && cc < w) out[o](r, c) += L.at(o, i, da, db) * a[i](rr, cc);
              }
    a = out;
  }
  double e = 0.0;
  for (int i = 0; i < m.num_channels(); ++i) {
    const double al = std::exp(m.alpha_spline(i).eval(sigma)) / (sigma + m.hyper().epsilon);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) e += m.phi().antiderivative(al * a[i](r, c) / m.conv().norm()) / (al * al);
  }
  return e;
}

}  // namespace

TEST(Alpha, ZeroSplineAtZeroNoise) {
  std::mt19937_64 rng(1);
  WcrrParams p = WcrrParams::initial(ConvShape{{2, 2, 3}, 3}, rng, WcrrHyper{}, 0.0);
  const auto m = WcrrModel::with_power_norm(p, 16, 16);
  EXPECT_NEAR(m.alpha(0, 0.0), 1e5, 1e-6);
  EXPECT_NEAR(alpha(m, 2, 0.0), 1e5, 1e-6);
}

TEST(Alpha, InitialValueFive) {
  std::mt19937_64 rng(2);
  const auto m = WcrrModel::with_power_norm(WcrrParams::initial(ConvShape{{2, 2, 3}, 3}, rng), 16, 16);
  EXPECT_NEAR(m.alpha(1, 0.1), std::exp(5.0) / (0.1 + 1e-5), 1e-10);
}

TEST(Alpha, MatchesDirectFormulaAndIsPositive) {
  std::mt19937_64 rng(3);
  const auto m = random_model(rng);
  std::uniform_real_distribution<double> us(0.0, 0.2);
  for (int k = 0; k < 50; ++k) {
    const double s = us(rng);
    for (int i = 0; i < m.num_channels(); ++i) {
      const auto& c = m.params().alpha[i];
      const double u = s / (0.2 / 4);
      const int j = std::min(int(u), 3);
      const double spline = c[j] + (u - j) * (c[j + 1] - c[j]);
      EXPECT_NEAR(m.alpha(i, s), std::exp(spline) / (s + 1e-5), 1e-12 * m.alpha(i, s));
      EXPECT_GT(m.alpha(i, s), 0.0);
    }
  }
}

TEST(Activation, ZeroSplinesGiveZero) {
  std::mt19937_64 rng(4);
  WcrrParams p = random_params(rng);
  std::fill(p.c_plus.begin(), p.c_plus.end(), 0.0);
  std::fill(p.c_minus.begin(), p.c_minus.end(), 0.0);
  const auto m = WcrrModel::with_power_norm(p, 8, 8);
  for (double t : {-3.0, -0.1, 0.0, 0.4, 10.0}) EXPECT_EQ(activation_phi(m, t), 0.0);
  EXPECT_EQ(weak_convexity_bound(m), 0.0);
  const Image x = random_image(rng, 8, 8);
  EXPECT_EQ(energy(m, x, 0.1), 0.0);
  EXPECT_EQ(grad(m, x, 0.1).norm(), 0.0);
}

TEST(Activation, InitializationIsNegativeIdentity) {
  std::mt19937_64 rng(5);
  const auto m = WcrrModel::with_power_norm(WcrrParams::initial(ConvShape{{2, 2, 3}, 3}, rng), 16, 16);
  for (int j = -50; j <= 50; ++j) {
    const double t = j * 2e-3 * 0.999;
    EXPECT_NEAR(activation_phi(m, t), -t, 1e-15);
  }
  EXPECT_NEAR(weak_convexity_bound(m), 1.0, 1e-12);
}

TEST(Activation, SlopesWithinBoundsAndOdd) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = random_model(rng);
    const double mu = m.mu();
    for (double s : m.phi().slopes()) {
      EXPECT_GE(s, -1.0 - 1e-12);
      EXPECT_LE(s, mu + 1e-12);
    }
    for (double t : {0.1, 0.7, 2.3, 9.0}) EXPECT_NEAR(activation_phi(m, t), -activation_phi(m, -t), 1e-12);
    EXPECT_LE(weak_convexity_bound(m), 1.0 + 1e-12);
  }
}

TEST(Activation, ConvexWhenMinusSplineVanishes) {
  std::mt19937_64 rng(7);
  WcrrParams p = random_params(rng);
  std::fill(p.c_minus.begin(), p.c_minus.end(), 0.0);
  EXPECT_EQ(weak_convexity_bound(WcrrModel::with_power_norm(p, 8, 8)), 0.0);
}

TEST(Activation, WeakConvexityBoundIgnoresAlpha) {
  std::mt19937_64 rng(8);
  WcrrParams p = random_params(rng);
  const double before = WcrrModel::with_power_norm(p, 8, 8).weak_convexity_bound();
  std::normal_distribution<double> n;
  for (auto& row : p.alpha)
    for (auto& v : row) v += n(rng);
  EXPECT_EQ(WcrrModel::with_power_norm(p, 8, 8).weak_convexity_bound(), before);
}

TEST(Energy, ZeroImageHasZeroEnergy) {
  std::mt19937_64 rng(9);
  const auto m = random_model(rng);
  EXPECT_EQ(energy(m, Image::Zero(8, 8), 0.05), 0.0);
}

TEST(Energy, MatchesNaiveSummation) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 3; ++trial) {
    const auto m = random_model(rng);
    const Image x = random_image(rng, 8, 8);
    const double e = energy(m, x, 0.07), ref = naive_energy(m, x, 0.07);
    EXPECT_NEAR(e, ref, 1e-12 * std::abs(ref));
  }
}

TEST(Gradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  int checked = 0;
  for (int trial = 0; trial < 40 && checked < 20; ++trial) {
    const auto m = random_model(rng);
    const Image x = random_image(rng, 8, 8), d = random_image(rng, 8, 8);
    const double h = 1e-5, sigma = 0.1;
    if (crosses_knot(m, x, d, h, sigma)) continue;
    ++checked;
    const double fd = (energy(m, x + h * d, sigma) - energy(m, x - h * d, sigma)) / (2 * h);
    const double an = dot(grad(m, x, sigma), d);
    EXPECT_NEAR(an, fd, 1e-5 * std::abs(fd));
  }
  EXPECT_GE(checked, 10);
}

TEST(Gradient, EnergyAndGradAgree) {
  std::mt19937_64 rng(12);
  const auto m = random_model(rng);
  const Image x = random_image(rng, 8, 8);
  Image g;
  const double e = m.energy_and_grad(x, 0.03, g);
  EXPECT_EQ(e, m.energy(x, 0.03));
  EXPECT_EQ((g - m.grad(x, 0.03)).norm(), 0.0);
}

TEST(Gradient, LipschitzBound) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = random_model(rng);
    const double L = lipschitz_bound(m);
    EXPECT_EQ(L, std::max(1.0, m.mu()));
    for (int k = 0; k < 1000; ++k) {
      const Image a = random_image(rng, 8, 8), b = a + random_image(rng, 8, 8, 0.05 * (1 + k % 10));
      ASSERT_LE((grad(m, a, 0.1) - grad(m, b, 0.1)).norm(), L * (a - b).norm() * (1 + 1e-9));
    }
  }
}

TEST(Gradient, LipschitzBoundValues) {
  std::mt19937_64 rng(14);
  WcrrParams p = random_params(rng);
  p.mu = 0.0;
  EXPECT_EQ(lipschitz_bound(WcrrModel::with_power_norm(p, 8, 8)), 1.0);
  p.mu = 3.0;
  EXPECT_EQ(lipschitz_bound(WcrrModel::with_power_norm(p, 8, 8)), 3.0);
  p.mu = -2.0;  // clamped on read
  EXPECT_EQ(WcrrModel::with_power_norm(p, 8, 8).mu(), 0.0);
}

TEST(Hessian, ZeroDirection) {
  std::mt19937_64 rng(15);
  const auto m = random_model(rng);
  EXPECT_EQ(hvp(m, random_image(rng, 8, 8), Image::Zero(8, 8), 0.1).norm(), 0.0);
}

TEST(Hessian, MatchesFiniteDifferenceOfGradient) {
  std::mt19937_64 rng(16);
  int checked = 0;
  for (int trial = 0; trial < 60 && checked < 20; ++trial) {
    const auto m = random_model(rng);
    const Image x = random_image(rng, 8, 8), u = random_image(rng, 8, 8);
    const double h = 1e-6, sigma = 0.12;
    if (crosses_knot(m, x, u, h, sigma)) continue;
    ++checked;
    const Image fd = (grad(m, x + h * u, sigma) - grad(m, x - h * u, sigma)) / (2 * h);
    const Image an = hvp(m, x, u, sigma);
    EXPECT_LE((an - fd).norm(), 1e-4 * fd.norm());
  }
  EXPECT_GE(checked, 10);
}

TEST(Hessian, IsSymmetric) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    const auto m = random_model(rng);
    const Image x = random_image(rng, 8, 8), u = random_image(rng, 8, 8), v = random_image(rng, 8, 8);
    const double a = dot(hvp(m, x, u, 0.1), v), b = dot(u, hvp(m, x, v, 0.1));
    EXPECT_NEAR(a, b, 1e-10 * std::abs(a));
    const Features curv = m.curvature(x, 0.1);
    EXPECT_EQ((m.hvp_with(curv, u) - hvp(m, x, u, 0.1)).norm(), 0.0);
  }
}

TEST(Hessian, WeakConvexityCertificate) {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 3; ++trial) {
    const auto m = random_model(rng, 8);
    const double s_inf = weak_convexity_bound(m);
    for (int k = 0; k < 50; ++k) {
      const Image x = random_image(rng, 8, 8);
      EXPECT_GE(min_hessian_eigenvalue(m, x, 0.1, 300, k), -s_inf - 1e-6);
      EXPECT_GE(min_hessian_eigenvalue(m, x, 0.1, 300, k), -1.0 - 1e-5);
    }
  }
}

TEST(Hessian, MinEigenvalueMatchesDenseOracle) {
  // Dense Hessian from HVPs on basis vectors, smallest eigenvalue by Eigen.
  std::mt19937_64 rng(19);
  const auto m = random_model(rng, 6);
  const Image x = random_image(rng, 6, 6);
  Eigen::MatrixXd H(36, 36);
  for (int j = 0; j < 36; ++j) {
    Image e = Image::Zero(6, 6);
    e.data()[j] = 1.0;
    H.col(j) = flatten(hvp(m, x, e, 0.1));
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (H + H.transpose()));
  const double lo = es.eigenvalues().minCoeff();
  EXPECT_GE(lo, -weak_convexity_bound(m) - 1e-10);
  EXPECT_NEAR(min_hessian_eigenvalue(m, x, 0.1, 3000), lo, 1e-3);
}

TEST(Profiles, ScaledProfileCurvatureAtLeastMinusOne) {
  // d^2/dt^2 [alpha^-2 psi(alpha t)] = phi'(alpha t), scanned per interval
  std::mt19937_64 rng(20);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = random_model(rng);
    const double a = m.alpha(0, 0.1);
    const auto& phi = m.phi();
    for (int k = 0; k < phi.intervals(); ++k) {
      const double t = (phi.knot(k) + 0.5 * phi.delta()) / a;
      const double h = 1e-3 * phi.delta() / a;
      const auto prof = [&](double s) { return phi.antiderivative(a * s) / (a * a); };
      const double second = (prof(t + h) - 2 * prof(t) + prof(t - h)) / (h * h);
      EXPECT_GE(second, -1.0 - 1e-5);
    }
  }
}

TEST(ParamGrad, MatchesFiniteDifferencesForEveryGroup) {
  std::mt19937_64 rng(21);
  for (bool dft : {false, true}) {
    WcrrParams p = random_params(rng);
    const Image x = random_image(rng, 8, 8), w = random_image(rng, 8, 8);
    const double sigma = 0.09;
    auto build = [&](const WcrrParams& q) {
      return dft ? WcrrModel::with_dft_norm(q, 16, 16, 0.999) : WcrrModel(q, NormalizedConv(q.conv, 2.0, NormMethod::fixed), 0.999);
    };
    auto f = [&](const WcrrParams& q) { return dot(w, build(q).grad(x, sigma)); };
    const ParamGrad g = build(p).grad_inner_param_grad(x, w, sigma);
    const double h = 1e-6;
    auto check = [&](double& slot, double analytic, const char* what) {
      const double keep = slot;
      slot = keep + h;
      const double fp = f(p);
      slot = keep - h;
      const double fm = f(p);
      slot = keep;
      const double fd = (fp - fm) / (2 * h);
      EXPECT_NEAR(analytic, fd, 1e-4 * std::max(1.0, std::abs(fd))) << what << (dft ? " (dft norm)" : "");
    };
    check(p.mu, g.mu, "mu");
    for (int j : {3, 9, 10, 11, 17}) check(p.c_plus[j], g.c_plus[j], "c_plus");
    for (int j : {2, 8, 10, 13, 19}) check(p.c_minus[j], g.c_minus[j], "c_minus");
    for (int i : {0, 3})
      for (int j : {1, 2}) check(p.alpha[i][j], g.alpha[i][j], "alpha");
    for (int l = 0; l < 3; ++l)
      for (std::size_t j : {std::size_t(0), std::size_t(4), std::size_t(13)}) check(p.conv.raw()[l].w[j], g.conv[l].w[j], "kernel");
  }
}
