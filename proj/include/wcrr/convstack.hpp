#pragma once

// Three-layer zero-mean convolution operator U, its adjoint, parameter
// gradients, and the two spectral-norm estimators that define W = U / ||U||.
//
// Layers are correlations ("same" size output):
//   out[o](r, c) = sum_i sum_{a,b} K[o,i,a,b] * in[i](r + a - p, c + b - p),
// with p = (k - 1) / 2 and either zero or periodic extension of `in`.

#include "wcrr/fft.hpp"
#include "wcrr/image.hpp"

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace wcrr {

enum class Boundary { zero, circular };

/// Kernel tensor of shape (out, in, k, k), row-major.
struct ConvKernel {
  int out = 0;
  int in = 0;
  int k = 0;
  std::vector<double> w;

  ConvKernel() = default;
  ConvKernel(int out_ch, int in_ch, int size) : out(out_ch), in(in_ch), k(size), w(std::size_t(out_ch) * in_ch * size * size, 0.0) {}

  double& at(int o, int i, int a, int b) { return w[((std::size_t(o) * in + i) * k + a) * k + b]; }
  double at(int o, int i, int a, int b) const { return w[((std::size_t(o) * in + i) * k + a) * k + b]; }
  std::size_t slice_size() const { return std::size_t(k) * k; }
};

using Kernels = std::array<ConvKernel, 3>;

namespace detail {

inline Eigen::Index wrap(Eigen::Index i, Eigen::Index n) {
  i %= n;
  return i < 0 ? i + n : i;
}

// dst(r, c) += s * src(r + dr, c + dc), out-of-range source reads are zero
// (or periodic).
inline void shifted_axpy(Image& dst, const Image& src, double s, int dr, int dc, Boundary bc) {
  if (s == 0.0) return;
  const Eigen::Index h = dst.rows(), w = dst.cols();
  if (bc == Boundary::zero) {
    const Eigen::Index nr = h - std::abs(dr), nc = w - std::abs(dc);
    if (nr <= 0 || nc <= 0) return;
    const Eigen::Index r0 = std::max(0, -dr), c0 = std::max(0, -dc);
    dst.block(r0, c0, nr, nc).noalias() += s * src.block(r0 + dr, c0 + dc, nr, nc);
    return;
  }
  for (Eigen::Index c = 0; c < w; ++c) {
    const Eigen::Index sc = wrap(c + dc, w);
    for (Eigen::Index r = 0; r < h; ++r) dst(r, c) += s * src(wrap(r + dr, h), sc);
  }
}

// sum_{r,c} a(r, c) * b(r + dr, c + dc)
inline double shifted_dot(const Image& a, const Image& b, int dr, int dc, Boundary bc) {
  const Eigen::Index h = a.rows(), w = a.cols();
  if (bc == Boundary::zero) {
    const Eigen::Index nr = h - std::abs(dr), nc = w - std::abs(dc);
    if (nr <= 0 || nc <= 0) return 0.0;
    const Eigen::Index r0 = std::max(0, -dr), c0 = std::max(0, -dc);
    return (a.block(r0, c0, nr, nc).array() * b.block(r0 + dr, c0 + dc, nr, nc).array()).sum();
  }
  double s = 0.0;
  for (Eigen::Index c = 0; c < w; ++c) {
    const Eigen::Index sc = wrap(c + dc, w);
    for (Eigen::Index r = 0; r < h; ++r) s += a(r, c) * b(wrap(r + dr, h), sc);
  }
  return s;
}

// 2D full convolution of two square arrays stored row-major.
inline std::vector<double> full_conv(const std::vector<double>& a, int na, const std::vector<double>& b, int nb) {
  const int n = na + nb - 1;
  std::vector<double> out(std::size_t(n) * n, 0.0);
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < na; ++j) {
      const double v = a[std::size_t(i) * na + j];
      if (v == 0.0) continue;
      for (int p = 0; p < nb; ++p)
        for (int q = 0; q < nb; ++q) out[std::size_t(i + p) * n + (j + q)] += v * b[std::size_t(p) * nb + q];
    }
  return out;
}

}  // namespace detail

/// One correlation layer.
inline Features conv_forward(const ConvKernel& K, const Features& in, Boundary bc) {
  if (int(in.size()) != K.in) throw std::invalid_argument("conv_forward: channel mismatch");
  const int p = (K.k - 1) / 2;
  Features out(K.out, Image::Zero(in[0].rows(), in[0].cols()));
  for (int o = 0; o < K.out; ++o)
    for (int i = 0; i < K.in; ++i)
      for (int a = 0; a < K.k; ++a)
        for (int b = 0; b < K.k; ++b) detail::shifted_axpy(out[o], in[i], K.at(o, i, a, b), a - p, b - p, bc);
  return out;
}

inline Features conv_adjoint(const ConvKernel& K, const Features& grad_out, Boundary bc) {
  if (int(grad_out.size()) != K.out) throw std::invalid_argument("conv_adjoint: channel mismatch");
  const int p = (K.k - 1) / 2;
  Features in(K.in, Image::Zero(grad_out[0].rows(), grad_out[0].cols()));
  for (int o = 0; o < K.out; ++o)
    for (int i = 0; i < K.in; ++i)
      for (int a = 0; a < K.k; ++a)
        for (int b = 0; b < K.k; ++b) detail::shifted_axpy(in[i], grad_out[o], K.at(o, i, a, b), p - a, p - b, bc);
  return in;
}

/// d<grad_out, conv_forward(K, in)> / dK.
inline ConvKernel conv_kernel_grad(const ConvKernel& shape, const Features& in, const Features& grad_out, Boundary bc) {
  ConvKernel g(shape.out, shape.in, shape.k);
  const int p = (shape.k - 1) / 2;
  for (int o = 0; o < shape.out; ++o)
    for (int i = 0; i < shape.in; ++i)
      for (int a = 0; a < shape.k; ++a)
        for (int b = 0; b < shape.k; ++b) g.at(o, i, a, b) = detail::shifted_dot(grad_out[o], in[i], a - p, b - p, bc);
  return g;
}

/// Subtracts the mean of every (out, in) kernel slice.
inline ConvKernel zero_mean(const ConvKernel& K) {
  ConvKernel z = K;
  const std::size_t s = K.slice_size();
  for (std::size_t base = 0; base < z.w.size(); base += s) {
    double m = 0.0;
    for (std::size_t j = 0; j < s; ++j) m += z.w[base + j];
    m /= double(s);
    for (std::size_t j = 0; j < s; ++j) z.w[base + j] -= m;
  }
  return z;
}

inline Kernels zero_mean(const Kernels& raw) { return {zero_mean(raw[0]), zero_mean(raw[1]), zero_mean(raw[2])}; }

/// The mean subtraction is an orthogonal projection, so its VJP is itself.
inline Kernels zero_mean_vjp(const Kernels& grad_effective) { return zero_mean(grad_effective); }

/// Runs the three layers on a single-channel image.  If `activations` is
/// given it receives the input of every layer (for backpropagation).
inline Features apply_layers(const Kernels& K, const Image& x, Boundary bc, std::array<Features, 3>* activations = nullptr) {
  Features a{x};
  for (int l = 0; l < 3; ++l) {
    if (activations) (*activations)[l] = a;
    a = conv_forward(K[l], a, bc);
  }
  return a;
}

inline Image apply_layers_adjoint(const Kernels& K, const Features& z, Boundary bc) {
  Features g = z;
  for (int l = 2; l >= 0; --l) g = conv_adjoint(K[l], g, bc);
  return g[0];
}

/// Gradient of <grad_out, apply_layers(K, x)> with respect to the kernels.
inline Kernels layers_param_grad(const Kernels& K, const Image& x, const Features& grad_out, Boundary bc) {
  std::array<Features, 3> acts;
  apply_layers(K, x, bc, &acts);
  Kernels g;
  Features gl = grad_out;
  for (int l = 2; l >= 0; --l) {
    g[l] = conv_kernel_grad(K[l], acts[l], gl, bc);
    if (l > 0) gl = conv_adjoint(K[l], gl, bc);
  }
  return g;
}

inline void axpy(Kernels& dst, double s, const Kernels& src) {
  for (int l = 0; l < 3; ++l)
    for (std::size_t j = 0; j < dst[l].w.size(); ++j) dst[l].w[j] += s * src[l].w[j];
}

inline Kernels zeros_like(const Kernels& K) {
  return {ConvKernel(K[0].out, K[0].in, K[0].k), ConvKernel(K[1].out, K[1].in, K[1].k), ConvKernel(K[2].out, K[2].in, K[2].k)};
}

/// Layer widths and kernel size of a stack; channels[2] is N_C.
struct ConvShape {
  std::array<int, 3> channels{4, 8, 60};
  int kernel_size = 5;

  int num_channels() const { return channels[2]; }
  int field_of_view() const { return 3 * kernel_size - 2; }
};

/// Raw (unconstrained) kernels of U.  Every read goes through zero_mean().
class ConvStack {
 public:
  ConvStack() = default;

  explicit ConvStack(const ConvShape& shape) : shape_(shape) {
    if (shape.kernel_size < 1 || shape.kernel_size % 2 == 0) throw std::invalid_argument("ConvStack: kernel size must be odd");
    int in = 1;
    for (int l = 0; l < 3; ++l) {
      raw_[l] = ConvKernel(shape.channels[l], in, shape.kernel_size);
      in = shape.channels[l];
    }
  }

  /// Gaussian raw kernels with standard deviation `scale`.
  template <class Rng>
  static ConvStack random(const ConvShape& shape, Rng& rng, double scale = 1.0) {
    ConvStack s(shape);
    std::normal_distribution<double> n(0.0, scale);
    for (auto& K : s.raw_)
      for (auto& v : K.w) v = n(rng);
    return s;
  }

  const ConvShape& shape() const { return shape_; }
  const Kernels& raw() const { return raw_; }
  Kernels& raw() { return raw_; }
  Kernels kernels() const { return zero_mean(raw_); }

  int num_channels() const { return shape_.num_channels(); }
  int kernel_size() const { return shape_.kernel_size; }
  int field_of_view() const { return shape_.field_of_view(); }

 private:
  ConvShape shape_;
  Kernels raw_;
};

inline Features forward(const ConvStack& u, const Image& x, Boundary bc = Boundary::zero) { return apply_layers(u.kernels(), x, bc); }

inline Image adjoint(const ConvStack& u, const Features& z, Boundary bc = Boundary::zero) {
  return apply_layers_adjoint(u.kernels(), z, bc);
}

/// Single-convolution kernels E_i (K_s x K_s, row-major) equivalent to the
/// stack, one per output channel: out_i = corr(E_i, x) up to boundary effects.
inline std::vector<std::vector<double>> equivalent_kernels(const Kernels& K) {
  const int k = K[0].k;
  auto slice = [](const ConvKernel& L, int o, int i) {
    std::vector<double> s(L.slice_size());
    for (int a = 0; a < L.k; ++a)
      for (int b = 0; b < L.k; ++b) s[std::size_t(a) * L.k + b] = L.at(o, i, a, b);
    return s;
  };
  // Kernels from the input to each channel of layer 1, then 2, then 3.
  std::vector<std::vector<double>> prev(K[0].out);
  int size = k;
  for (int o = 0; o < K[0].out; ++o) prev[o] = slice(K[0], o, 0);
  for (int l = 1; l < 3; ++l) {
    const int next_size = size + k - 1;
    std::vector<std::vector<double>> next(K[l].out, std::vector<double>(std::size_t(next_size) * next_size, 0.0));
    for (int o = 0; o < K[l].out; ++o)
      for (int i = 0; i < K[l].in; ++i) {
        const auto c = detail::full_conv(slice(K[l], o, i), k, prev[i], size);
        for (std::size_t j = 0; j < c.size(); ++j) next[o][j] += c[j];
      }
    prev = std::move(next);
    size = next_size;
  }
  return prev;
}

inline std::vector<std::vector<double>> equivalent_kernels(const ConvStack& u) { return equivalent_kernels(u.kernels()); }

/// Kernel of U^T U (size 2K_s - 1, centre at K_s - 1): the autocorrelation of
/// the equivalent kernels summed over channels.
inline Image gram_kernel(const std::vector<std::vector<double>>& E) {
  const int n = int(std::lround(std::sqrt(double(E.at(0).size()))));
  const int m = 2 * n - 1;
  Image A = Image::Zero(m, m);
  for (const auto& e : E)
    for (int a1 = 0; a1 < n; ++a1)
      for (int a2 = 0; a2 < n; ++a2) {
        const double v = e[std::size_t(a1) * n + a2];
        if (v == 0.0) continue;
        for (int b1 = 0; b1 < n; ++b1)
          for (int b2 = 0; b2 < n; ++b2) A(b1 - a1 + n - 1, b2 - a2 + n - 1) += v * e[std::size_t(b1) * n + b2];
      }
  return A;
}

/// Result of the DFT spectral-norm estimate: the norm and the frequency bin
/// where the spectrum of U^T U peaks.
struct DftNorm {
  double norm = 0.0;
  int freq_row = 0;
  int freq_col = 0;
};

/// max over DFT bins of sqrt(|DFT(Pad(K))|) for a U^T U kernel.
inline DftNorm spectral_norm_from_gram(const Image& gram, int h, int w) {
  const int m = int(gram.rows());
  if (h < m || w < m)
    throw std::invalid_argument("spectral_norm_dft: grid " + std::to_string(h) + "x" + std::to_string(w) +
                                " smaller than the U^T U kernel support " + std::to_string(m));
  const int c = (m - 1) / 2;
  ComplexImage padded = ComplexImage::Zero(h, w);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) padded(detail::wrap(i - c, h), detail::wrap(j - c, w)) += gram(i, j);
  fft2_inplace(padded, false);
  DftNorm best;
  double peak = -1.0;
  for (int j = 0; j < w; ++j)
    for (int i = 0; i < h; ++i) {
      const double v = std::abs(padded(i, j));
      if (v > peak) {
        peak = v;
        best.freq_row = i;
        best.freq_col = j;
      }
    }
  best.norm = std::sqrt(std::max(peak, 0.0));
  return best;
}

inline DftNorm spectral_norm_dft_detail(const Kernels& K, int h, int w) { return spectral_norm_from_gram(gram_kernel(equivalent_kernels(K)), h, w); }

/// ||U|| under circular boundary conditions on an h x w grid.
inline double spectral_norm_dft(const ConvStack& u, int h, int w) { return spectral_norm_dft_detail(u.kernels(), h, w).norm; }

/// Gradient of the DFT norm estimate with respect to the (effective)
/// kernels.  Uses the real eigenvector of the circulant U^T U at the peak
/// frequency, on the same grid.
inline Kernels spectral_norm_dft_grad(const Kernels& K, int h, int w, const DftNorm& at) {
  if (at.norm <= 0.0) return zeros_like(K);
  Image v(h, w);
  constexpr double two_pi = 6.283185307179586476925286766559;
  for (int c = 0; c < w; ++c)
    for (int r = 0; r < h; ++r) v(r, c) = std::cos(two_pi * (double(at.freq_row) * r / h + double(at.freq_col) * c / w));
  v /= v.norm();
  const Features uv = apply_layers(K, v, Boundary::circular);
  Kernels g = layers_param_grad(K, v, uv, Boundary::circular);
  for (auto& L : g)
    for (auto& x : L.w) x /= at.norm;
  return g;
}

/// sqrt of the dominant eigenvalue of U^T U (zero-padded) by power iteration.
/// `seed` selects the Gaussian start vector (0 is the documented default).
inline double spectral_norm_power(const Kernels& K, int h, int w, int iters = 1000, unsigned seed = 0) {
  if (iters < 1) throw std::invalid_argument("spectral_norm_power: iters must be >= 1");
  bool all_zero = true;
  for (const auto& L : K)
    for (double v : L.w) all_zero = all_zero && v == 0.0;
  if (all_zero) return 0.0;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Image x(h, w);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n01(rng);
  x /= x.norm();
  double lambda = 0.0;
  for (int it = 0; it < iters; ++it) {
    const Image y = apply_layers_adjoint(K, apply_layers(K, x, Boundary::zero), Boundary::zero);
    lambda = dot(x, y);
    const double ny = y.norm();
    if (ny == 0.0) return 0.0;
    x = y / ny;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

inline double spectral_norm_power(const ConvStack& u, int h, int w, int iters = 1000, unsigned seed = 0) {
  return spectral_norm_power(u.kernels(), h, w, iters, seed);
}

enum class NormMethod { dft_estimate, power_method, fixed };

/// W = U / ||U|| with the norm cached at construction.
class NormalizedConv {
 public:
  NormalizedConv() = default;

  NormalizedConv(ConvStack stack, double norm, NormMethod method, int norm_h = 0, int norm_w = 0)
      : stack_(std::move(stack)), kernels_(stack_.kernels()), norm_(norm), method_(method), norm_h_(norm_h), norm_w_(norm_w) {
    if (!(norm_ > 0.0)) throw std::invalid_argument("NormalizedConv: norm must be positive");
  }

  static NormalizedConv with_dft(ConvStack stack, int h = 64, int w = 64) {
    const double n = spectral_norm_dft(stack, h, w);
    return NormalizedConv(std::move(stack), n, NormMethod::dft_estimate, h, w);
  }

  static NormalizedConv with_power(ConvStack stack, int h = 64, int w = 64, int iters = 1000) {
    const double n = spectral_norm_power(stack, h, w, iters);
    return NormalizedConv(std::move(stack), n, NormMethod::power_method, h, w);
  }

  const ConvStack& stack() const { return stack_; }
  const Kernels& kernels() const { return kernels_; }
  double norm() const { return norm_; }
  NormMethod method() const { return method_; }
  int norm_height() const { return norm_h_; }
  int norm_width() const { return norm_w_; }
  int num_channels() const { return stack_.num_channels(); }

  Features forward(const Image& x) const {
    Features z = apply_layers(kernels_, x, Boundary::zero);
    const double s = 1.0 / norm_;
    for (auto& c : z) c *= s;
    return z;
  }

  Image adjoint(const Features& z) const { return apply_layers_adjoint(kernels_, z, Boundary::zero) / norm_; }

 private:
  ConvStack stack_;
  Kernels kernels_;
  double norm_ = 1.0;
  NormMethod method_ = NormMethod::fixed;
  int norm_h_ = 0;
  int norm_w_ = 0;
};

}  // namespace wcrr
