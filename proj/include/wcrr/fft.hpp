#pragma once

// Separable 2D discrete Fourier transform on top of Eigen's FFT module.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <complex>
#include <vector>

namespace wcrr {

using ComplexImage = Eigen::MatrixXcd;

/// In-place 2D DFT.  Forward uses exp(-i...), inverse exp(+i...); neither
/// direction is scaled, callers apply the normalisation they need.
inline void fft2_inplace(ComplexImage& a, bool inverse) {
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::Unscaled);
  std::vector<std::complex<double>> in, out;
  const Eigen::Index h = a.rows(), w = a.cols();
  in.resize(w);
  for (Eigen::Index r = 0; r < h; ++r) {
    for (Eigen::Index c = 0; c < w; ++c) in[c] = a(r, c);
    inverse ? fft.inv(out, in) : fft.fwd(out, in);
    for (Eigen::Index c = 0; c < w; ++c) a(r, c) = out[c];
  }
  in.resize(h);
  for (Eigen::Index c = 0; c < w; ++c) {
    for (Eigen::Index r = 0; r < h; ++r) in[r] = a(r, c);
    inverse ? fft.inv(out, in) : fft.fwd(out, in);
    for (Eigen::Index r = 0; r < h; ++r) a(r, c) = out[r];
  }
}

/// Unitary forward DFT of a real image.
inline ComplexImage fft2_unitary(const Eigen::MatrixXd& x) {
  ComplexImage a = x.cast<std::complex<double>>();
  fft2_inplace(a, false);
  a /= std::sqrt(double(x.size()));
  return a;
}

/// Unitary inverse DFT.
inline ComplexImage ifft2_unitary(ComplexImage a) {
  const double n = double(a.size());
  fft2_inplace(a, true);
  a /= std::sqrt(n);
  return a;
}

}  // namespace wcrr
