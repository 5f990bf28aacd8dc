#pragma once

// Weakly convex ridge regularizer
//
//   R(x; sigma) = sum_i sum_k alpha_i(sigma)^-2 psi(alpha_i(sigma) (W x)_{i,k}),
//
// with psi' = phi = mu * phi_plus - phi_minus, phi_plus / phi_minus odd,
// non-decreasing, non-expansive linear splines, W = U / ||U|| and
// alpha_i(sigma) = exp(s_i(sigma)) / (sigma + eps).  Since every slope of phi
// lies in [-1, mu], R is 1-weakly convex and grad R is max(mu, 1)-Lipschitz
// whenever ||W|| <= 1.

#include "wcrr/convstack.hpp"
#include "wcrr/image.hpp"
#include "wcrr/spline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace wcrr {

/// Fixed (non-learned) hyperparameters of the model.
struct WcrrHyper {
  double delta = 2e-3;          // activation knot spacing
  int intervals = 100;          // M, so M + 1 = 101 knots
  double sigma_max = 30.0 / 255.0;
  double epsilon = 1e-5;
  int alpha_knots = 11;         // knots of s_alpha on [0, sigma_max]
};

/// All learnable parameters in their raw (unconstrained) form.
struct WcrrParams {
  ConvStack conv;
  double mu = 1.0;                 // clamped to [0, inf) on read
  Coeffs c_plus;                   // raw, M + 1 entries
  Coeffs c_minus;                  // raw, M + 1 entries
  std::vector<Coeffs> alpha;       // N_C rows of alpha_knots entries
  WcrrHyper hyper;

  /// Initial state: phi_plus = 0, phi_minus the identity ramp, constant
  /// s_alpha = alpha_init and Gaussian kernels.
  template <class Rng>
  static WcrrParams initial(const ConvShape& shape, Rng& rng, const WcrrHyper& hyper = {}, double alpha_init = 5.0) {
    WcrrParams p;
    p.hyper = hyper;
    p.conv = ConvStack(shape);
    int fan_in = 1;
    for (auto& K : p.conv.raw()) {
      std::normal_distribution<double> n(0.0, 1.0 / (K.k * std::sqrt(double(fan_in))));
      for (auto& v : K.w) v = n(rng);
      fan_in = K.out;
    }
    p.mu = 1.0;
    const int M = hyper.intervals;
    p.c_plus.assign(M + 1, 0.0);
    p.c_minus.resize(M + 1);
    for (int m = 0; m <= M; ++m) p.c_minus[m] = (m - M / 2) * hyper.delta;
    p.alpha.assign(shape.num_channels(), Coeffs(hyper.alpha_knots, alpha_init));
    return p;
  }

  void validate() const {
    if (hyper.intervals % 2 != 0 || hyper.intervals < 2) throw std::invalid_argument("WcrrParams: M must be even and >= 2");
    if (int(c_plus.size()) != hyper.intervals + 1 || int(c_minus.size()) != hyper.intervals + 1)
      throw std::invalid_argument("WcrrParams: spline coefficient count must be M + 1");
    if (int(alpha.size()) != conv.num_channels()) throw std::invalid_argument("WcrrParams: one alpha spline per channel");
    for (const auto& a : alpha)
      if (int(a.size()) != hyper.alpha_knots) throw std::invalid_argument("WcrrParams: alpha spline size mismatch");
    if (!(hyper.delta > 0.0) || !(hyper.sigma_max > 0.0) || !(hyper.epsilon > 0.0))
      throw std::invalid_argument("WcrrParams: delta, sigma_max and epsilon must be positive");
  }
};

/// Gradient with respect to the raw parameters (same layout as WcrrParams).
struct ParamGrad {
  Kernels conv;
  double mu = 0.0;
  Coeffs c_plus, c_minus;
  std::vector<Coeffs> alpha;

  static ParamGrad zeros_like(const WcrrParams& p) {
    ParamGrad g;
    g.conv = wcrr::zeros_like(p.conv.raw());
    g.c_plus.assign(p.c_plus.size(), 0.0);
    g.c_minus.assign(p.c_minus.size(), 0.0);
    g.alpha.assign(p.alpha.size(), Coeffs(p.alpha.empty() ? 0 : p.alpha[0].size(), 0.0));
    return g;
  }

  void axpy(double s, const ParamGrad& o) {
    wcrr::axpy(conv, s, o.conv);
    mu += s * o.mu;
    for (std::size_t j = 0; j < c_plus.size(); ++j) c_plus[j] += s * o.c_plus[j];
    for (std::size_t j = 0; j < c_minus.size(); ++j) c_minus[j] += s * o.c_minus[j];
    for (std::size_t i = 0; i < alpha.size(); ++i)
      for (std::size_t j = 0; j < alpha[i].size(); ++j) alpha[i][j] += s * o.alpha[i][j];
  }
};

class WcrrModel {
 public:
  WcrrModel() = default;

  /// `minus_scale` multiplies phi_minus; values below one keep the slope
  /// floor of phi strictly above -1.
  WcrrModel(WcrrParams params, NormalizedConv conv, double minus_scale = 1.0)
      : params_(std::move(params)), conv_(std::move(conv)), minus_scale_(minus_scale) {
    params_.validate();
    const auto& h = params_.hyper;
    phi_plus_ = LinearSpline::centered(h.delta, reparameterize_activation(params_.c_plus, h.delta));
    phi_minus_ = LinearSpline::centered(h.delta, reparameterize_activation(params_.c_minus, h.delta));
    const double m = mu();
    Coeffs c(phi_plus_.coeffs().size());
    for (std::size_t j = 0; j < c.size(); ++j) c[j] = m * phi_plus_.coeffs()[j] - minus_scale_ * phi_minus_.coeffs()[j];
    phi_ = LinearSpline::centered(h.delta, std::move(c));
    alpha_delta_ = h.sigma_max / double(h.alpha_knots - 1);
  }

  static WcrrModel with_power_norm(WcrrParams params, int h = 64, int w = 64, int iters = 1000) {
    auto conv = NormalizedConv::with_power(params.conv, h, w, iters);
    return WcrrModel(std::move(params), std::move(conv));
  }

  static WcrrModel with_dft_norm(WcrrParams params, int h = 64, int w = 64, double minus_scale = 1.0) {
    auto conv = NormalizedConv::with_dft(params.conv, h, w);
    return WcrrModel(std::move(params), std::move(conv), minus_scale);
  }

  const WcrrParams& params() const { return params_; }
  const WcrrHyper& hyper() const { return params_.hyper; }
  const NormalizedConv& conv() const { return conv_; }
  int num_channels() const { return conv_.num_channels(); }
  double minus_scale() const { return minus_scale_; }

  double mu() const { return std::max(params_.mu, 0.0); }
  const LinearSpline& phi_plus() const { return phi_plus_; }
  const LinearSpline& phi_minus() const { return phi_minus_; }
  /// Combined activation phi = mu * phi_plus - phi_minus.
  const LinearSpline& phi() const { return phi_; }

  LinearSpline alpha_spline(int channel) const { return LinearSpline(alpha_delta_, params_.alpha.at(channel), 0.0); }

  double alpha(int channel, double sigma) const {
    return std::exp(alpha_spline(channel).eval(sigma)) / (sigma + params_.hyper.epsilon);
  }

  std::vector<double> alphas(double sigma) const {
    std::vector<double> a(num_channels());
    for (int i = 0; i < num_channels(); ++i) a[i] = alpha(i, sigma);
    return a;
  }

  double activation_phi(double t) const { return phi_.eval(t); }

  double energy(const Image& x, double sigma) const { return energy_from_features(conv_.forward(x), alphas(sigma)); }

  Image grad(const Image& x, double sigma) const {
    const auto a = alphas(sigma);
    Features z = conv_.forward(x);
    apply_activation(z, a);
    return conv_.adjoint(z);
  }

  /// Energy and gradient sharing one application of W.
  double energy_and_grad(const Image& x, double sigma, Image& g) const {
    const auto a = alphas(sigma);
    Features z = conv_.forward(x);
    const double e = energy_from_features(z, a);
    apply_activation(z, a);
    g = conv_.adjoint(z);
    return e;
  }

  /// H_R(x) u = W^T (phi'(alpha W x) . W u).
  Image hvp(const Image& x, const Image& u, double sigma) const {
    const auto a = alphas(sigma);
    const Features z = conv_.forward(x);
    Features wu = conv_.forward(u);
    for (int i = 0; i < num_channels(); ++i) {
      Image& q = wu[i];
      const Image& zi = z[i];
      for (Eigen::Index k = 0; k < q.size(); ++k) q.data()[k] *= phi_.derivative(a[i] * zi.data()[k]);
    }
    return conv_.adjoint(wu);
  }

  /// Curvature multipliers phi'(alpha_i (W x)_i), reused by repeated HVPs at
  /// the same point.
  Features curvature(const Image& x, double sigma) const {
    const auto a = alphas(sigma);
    Features z = conv_.forward(x);
    for (int i = 0; i < num_channels(); ++i)
      for (Eigen::Index k = 0; k < z[i].size(); ++k) z[i].data()[k] = phi_.derivative(a[i] * z[i].data()[k]);
    return z;
  }

  Image hvp_with(const Features& curv, const Image& u) const {
    Features wu = conv_.forward(u);
    for (int i = 0; i < num_channels(); ++i) wu[i].array() *= curv[i].array();
    return conv_.adjoint(wu);
  }

  /// s_inf = max(0, -min slope of phi); exact because phi is piecewise linear.
  double weak_convexity_bound() const {
    double lo = 0.0;
    for (double s : phi_.slopes()) lo = std::min(lo, s);
    return -lo;
  }

  double lipschitz_bound() const { return std::max(mu(), 1.0); }

  /// Gradient with respect to the raw parameters of <w, grad_x R(theta, x)>
  /// at fixed x.  When the cached norm came from the DFT estimate, the
  /// dependence of ||U|| on the kernels is included.
  ParamGrad grad_inner_param_grad(const Image& x, const Image& w, double sigma) const;

 private:
  double energy_from_features(const Features& z, const std::vector<double>& a) const {
    double e = 0.0;
    for (int i = 0; i < num_channels(); ++i) {
      double ei = 0.0;
      const Image& zi = z[i];
      for (Eigen::Index k = 0; k < zi.size(); ++k) ei += phi_.antiderivative(a[i] * zi.data()[k]);
      e += ei / (a[i] * a[i]);
    }
    return e;
  }

  void apply_activation(Features& z, const std::vector<double>& a) const {
    for (int i = 0; i < num_channels(); ++i) {
      Image& zi = z[i];
      const double inv = 1.0 / a[i];
      for (Eigen::Index k = 0; k < zi.size(); ++k) zi.data()[k] = inv * phi_.eval(a[i] * zi.data()[k]);
    }
  }

  WcrrParams params_;
  NormalizedConv conv_;
  double minus_scale_ = 1.0;
  LinearSpline phi_plus_, phi_minus_, phi_;
  double alpha_delta_ = 1.0;
};

inline ParamGrad WcrrModel::grad_inner_param_grad(const Image& x, const Image& w, double sigma) const {
  const auto& hp = params_.hyper;
  const int nc = num_channels();
  const auto a = alphas(sigma);
  const Features z = conv_.forward(x);
  const Features q = conv_.forward(w);

  Features gz = zeros_like(z);
  Features gq = zeros_like(q);
  Coeffs g_phi(phi_.coeffs().size(), 0.0);
  std::vector<double> g_alpha(nc, 0.0);
  const auto& cp = phi_plus_.coeffs();
  double g_mu = 0.0;

  for (int i = 0; i < nc; ++i) {
    const double ai = a[i], inv = 1.0 / ai;
    double ga = 0.0;
    for (Eigen::Index k = 0; k < z[i].size(); ++k) {
      const double zk = z[i].data()[k], qk = q[i].data()[k];
      const double t = ai * zk;
      const auto br = phi_.bracket(t);
      const double c0 = phi_.coeffs()[br.index], c1 = phi_.coeffs()[br.index + 1];
      const double val = c0 + br.frac * (c1 - c0);
      const double slope = phi_.derivative(t);
      gz[i].data()[k] = qk * slope;
      gq[i].data()[k] = inv * val;
      ga += qk * (-inv * inv * val + inv * zk * slope);
      const double wq = qk * inv;
      g_phi[br.index] += wq * (1.0 - br.frac);
      g_phi[br.index + 1] += wq * br.frac;
      g_mu += wq * (cp[br.index] + br.frac * (cp[br.index + 1] - cp[br.index]));
    }
    g_alpha[i] = ga;
  }

  ParamGrad g = ParamGrad::zeros_like(params_);

  // Splines: phi = mu * phi_plus - kappa * phi_minus, effective coefficients
  // come from the raw ones through projection + odd symmetrisation.
  const double m = mu();
  Coeffs g_plus_eff(g_phi.size()), g_minus_eff(g_phi.size());
  for (std::size_t j = 0; j < g_phi.size(); ++j) {
    g_plus_eff[j] = m * g_phi[j];
    g_minus_eff[j] = -minus_scale_ * g_phi[j];
  }
  g.c_plus = reparameterize_activation_vjp(params_.c_plus, hp.delta, g_plus_eff);
  g.c_minus = reparameterize_activation_vjp(params_.c_minus, hp.delta, g_minus_eff);
  g.mu = params_.mu >= 0.0 ? g_mu : 0.0;

  // alpha_i = exp(s_i(sigma)) / (sigma + eps): d alpha / d coeff = alpha * B_m(sigma).
  for (int i = 0; i < nc; ++i) {
    const auto br = alpha_spline(i).bracket(sigma);
    const double ga = g_alpha[i] * a[i];
    g.alpha[i][br.index] += ga * (1.0 - br.frac);
    g.alpha[i][br.index + 1] += ga * br.frac;
  }

  // Kernels: z = U x / s, q = U w / s.
  const double s = conv_.norm();
  const Kernels& K = conv_.kernels();
  Kernels gk = layers_param_grad(K, x, gz, Boundary::zero);
  axpy(gk, 1.0, layers_param_grad(K, w, gq, Boundary::zero));
  for (auto& L : gk)
    for (auto& v : L.w) v /= s;
  if (conv_.method() == NormMethod::dft_estimate) {
    const double g_norm = -(dot(gz, z) + dot(gq, q)) / s;
    const DftNorm at = spectral_norm_dft_detail(K, conv_.norm_height(), conv_.norm_width());
    axpy(gk, g_norm, spectral_norm_dft_grad(K, conv_.norm_height(), conv_.norm_width(), at));
  }
  g.conv = zero_mean_vjp(gk);
  return g;
}

// Free-function spellings of the model operations.

inline double alpha(const WcrrModel& m, int channel, double sigma) { return m.alpha(channel, sigma); }
inline double activation_phi(const WcrrModel& m, double t) { return m.activation_phi(t); }
inline double energy(const WcrrModel& m, const Image& x, double sigma) { return m.energy(x, sigma); }
inline Image grad(const WcrrModel& m, const Image& x, double sigma) { return m.grad(x, sigma); }
inline Image hvp(const WcrrModel& m, const Image& x, const Image& u, double sigma) { return m.hvp(x, u, sigma); }
inline double weak_convexity_bound(const WcrrModel& m) { return m.weak_convexity_bound(); }
inline double lipschitz_bound(const WcrrModel& m) { return m.lipschitz_bound(); }

/// Smallest eigenvalue of H_R(x) by power iteration on (shift I - H_R(x));
/// `shift` must upper-bound the spectrum (lipschitz_bound() does).
inline double min_hessian_eigenvalue(const WcrrModel& m, const Image& x, double sigma, int iters = 300, unsigned seed = 0) {
  const double shift = m.lipschitz_bound();
  const Features curv = m.curvature(x, sigma);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Image v(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = n01(rng);
  v /= v.norm();
  double top = 0.0;
  for (int it = 0; it < iters; ++it) {
    const Image y = shift * v - m.hvp_with(curv, v);
    top = dot(v, y);
    const double ny = y.norm();
    if (ny == 0.0) break;
    v = y / ny;
  }
  return shift - top;
}

/// Curves of phi, psi and alpha_i(sigma) for plotting.
inline void write_profiles_csv(const WcrrModel& m, const std::string& path, int samples = 401) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.precision(12);
  const auto& phi = m.phi();
  const double lo = phi.knot(0) * 1.5, hi = phi.knot(phi.intervals()) * 1.5;
  out << "t,phi,psi,phi_plus,phi_minus\n";
  for (int j = 0; j < samples; ++j) {
    const double t = lo + (hi - lo) * j / double(samples - 1);
    out << t << "," << phi.eval(t) << "," << phi.antiderivative(t) << "," << m.phi_plus().eval(t) << "," << m.phi_minus().eval(t) << "\n";
  }
}

inline void write_alpha_csv(const WcrrModel& m, const std::string& path, int samples = 61) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.precision(12);
  out << "sigma";
  for (int i = 0; i < m.num_channels(); ++i) out << ",alpha_" << i;
  out << "\n";
  const double smax = m.hyper().sigma_max;
  for (int j = 0; j < samples; ++j) {
    const double s = smax * j / double(samples - 1);
    out << s;
    for (int i = 0; i < m.num_channels(); ++i) out << "," << m.alpha(i, s);
    out << "\n";
  }
}

}  // namespace wcrr
