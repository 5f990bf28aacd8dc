#pragma once

// Image-quality metrics on [0, 1] images (peak value 1).

#include "wcrr/image.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace wcrr {

inline constexpr double kPsnrCap = 99.0;

inline double psnr(const Image& reference, const Image& candidate) {
  if (reference.rows() != candidate.rows() || reference.cols() != candidate.cols()) throw std::invalid_argument("psnr: shape mismatch");
  const double mse = (reference - candidate).squaredNorm() / double(reference.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sd) {
  std::vector<double> g(size);
  double s = 0.0;
  const int c = size / 2;
  for (int i = 0; i < size; ++i) s += g[i] = std::exp(-0.5 * (i - c) * (i - c) / (sd * sd));
  for (auto& v : g) v /= s;
  return g;
}

// Separable 'valid' filtering with a symmetric 1D window.
inline Image filter_valid(const Image& x, const std::vector<double>& g) {
  const int n = int(g.size());
  const Eigen::Index h = x.rows() - n + 1, w = x.cols() - n + 1;
  Image tmp = Image::Zero(h, x.cols());
  for (int i = 0; i < n; ++i) tmp += g[i] * x.middleRows(i, h);
  Image out = Image::Zero(h, w);
  for (int j = 0; j < n; ++j) out += g[j] * tmp.middleCols(j, w);
  return out;
}

}  // namespace detail

/// Mean SSIM with an 11x11 Gaussian window (sd 1.5), C1 = 0.01^2, C2 = 0.03^2,
/// averaged over the fully covered ('valid') window positions.
inline double ssim(const Image& reference, const Image& candidate) {
  if (reference.rows() != candidate.rows() || reference.cols() != candidate.cols()) throw std::invalid_argument("ssim: shape mismatch");
  constexpr int kWin = 11;
  if (reference.rows() < kWin || reference.cols() < kWin) throw std::invalid_argument("ssim: images must be at least 11x11");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto g = detail::gaussian_window(kWin, 1.5);
  const Image mx = detail::filter_valid(reference, g);
  const Image my = detail::filter_valid(candidate, g);
  const Image sxx = detail::filter_valid(reference.cwiseProduct(reference), g) - mx.cwiseProduct(mx);
  const Image syy = detail::filter_valid(candidate.cwiseProduct(candidate), g) - my.cwiseProduct(my);
  const Image sxy = detail::filter_valid(reference.cwiseProduct(candidate), g) - mx.cwiseProduct(my);
  const auto num = (2.0 * mx.array() * my.array() + c1) * (2.0 * sxy.array() + c2);
  const auto den = (mx.array().square() + my.array().square() + c1) * (sxx.array() + syy.array() + c2);
  return (num / den).mean();
}

}  // namespace wcrr
