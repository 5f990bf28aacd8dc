#pragma once

// Linear measurement operators H (y = H x + n) with exact adjoints.
//
//  * identity
//  * masked Fourier: unitary 2D DFT restricted to a set of k-space columns,
//    returned as interleaved (real, imaginary) pairs
//  * parallel-beam Radon: pixel-driven projection with linear interpolation
//    between detector bins; the adjoint reuses the same weights
//  * dense matrix acting on the column-major flattened image

#include "wcrr/fft.hpp"
#include "wcrr/image.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace wcrr {

/// Selected k-space columns, indexed in centred (fftshifted) order so that
/// column width/2 is the zero frequency.
struct CartesianMask {
  int width = 0;
  double acceleration = 1.0;
  double center_fraction = 1.0;
  std::vector<int> selected_columns;  // sorted
  int num_center = 0;

  bool contains(int col) const { return std::binary_search(selected_columns.begin(), selected_columns.end(), col); }
};

/// Keeps the floor(width * M_cf) centre columns and draws the remaining
/// columns uniformly without replacement until floor(width / M_acc) are
/// selected.
inline CartesianMask make_cartesian_mask(int width, double acceleration, double center_fraction, unsigned seed) {
  if (width <= 0) throw std::invalid_argument("make_cartesian_mask: width must be positive");
  if (!(acceleration >= 1.0)) throw std::invalid_argument("make_cartesian_mask: acceleration must be >= 1");
  if (!(center_fraction >= 0.0 && center_fraction <= 1.0)) throw std::invalid_argument("make_cartesian_mask: center fraction must lie in [0, 1]");
  const int num_low = int(std::floor(width * center_fraction + 1e-9));
  const int total = int(std::floor(width / acceleration + 1e-9));
  if (num_low > total)
    throw std::invalid_argument("make_cartesian_mask: infeasible, " + std::to_string(num_low) + " centre columns exceed " +
                                std::to_string(total) + " total columns");
  CartesianMask m;
  m.width = width;
  m.acceleration = acceleration;
  m.center_fraction = center_fraction;
  m.num_center = num_low;
  const int pad = (width - num_low + 1) / 2;
  std::vector<char> used(width, 0);
  for (int c = pad; c < pad + num_low; ++c) used[c] = 1;
  std::vector<int> pool;
  for (int c = 0; c < width; ++c)
    if (!used[c]) pool.push_back(c);
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates with an explicit uniform draw keeps the mask
  // independent of the standard library's shuffle implementation.
  const int extra = total - num_low;
  for (int j = 0; j < extra; ++j) {
    const auto range = static_cast<std::uint64_t>(pool.size() - j);
    const auto pick = j + static_cast<std::size_t>(rng() % range);
    std::swap(pool[j], pool[pick]);
    used[pool[j]] = 1;
  }
  for (int c = 0; c < width; ++c)
    if (used[c]) m.selected_columns.push_back(c);
  return m;
}

struct IdentityOp {
  int height = 0, width = 0;
};

struct MaskedFourierOp {
  int height = 0, width = 0;
  CartesianMask mask;
};

struct RadonOp {
  int image_size = 64;
  int num_angles = 60;
  int num_detectors = 95;
  double detector_spacing = 1.0;
};

struct DenseOp {
  int height = 0, width = 0;
  Eigen::MatrixXd matrix;  // m x (height * width)
};

class MeasurementOp {
 public:
  using Variant = std::variant<IdentityOp, MaskedFourierOp, RadonOp, DenseOp>;
  using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

  MeasurementOp() = default;
  MeasurementOp(Variant v) : op_(std::move(v)) {
    validate();
    if (const auto* r = std::get_if<RadonOp>(&op_)) radon_ = std::make_shared<const SparseMatrix>(radon_matrix(*r));
  }

  static MeasurementOp identity(int h, int w) { return MeasurementOp(IdentityOp{h, w}); }
  static MeasurementOp masked_fourier(int h, int w, CartesianMask mask) { return MeasurementOp(MaskedFourierOp{h, w, std::move(mask)}); }
  static MeasurementOp radon(int image_size, int num_angles, int num_detectors, double detector_spacing = 1.0) {
    return MeasurementOp(RadonOp{image_size, num_angles, num_detectors, detector_spacing});
  }
  static MeasurementOp dense(int h, int w, Eigen::MatrixXd matrix) { return MeasurementOp(DenseOp{h, w, std::move(matrix)}); }

  const Variant& variant() const { return op_; }

  Eigen::Index image_rows() const {
    return std::visit([](const auto& o) -> Eigen::Index {
      using T = std::decay_t<decltype(o)>;
      if constexpr (std::is_same_v<T, RadonOp>) return o.image_size;
      else return o.height;
    }, op_);
  }

  Eigen::Index image_cols() const {
    return std::visit([](const auto& o) -> Eigen::Index {
      using T = std::decay_t<decltype(o)>;
      if constexpr (std::is_same_v<T, RadonOp>) return o.image_size;
      else return o.width;
    }, op_);
  }

  Eigen::Index measurement_size() const {
    return std::visit([](const auto& o) -> Eigen::Index {
      using T = std::decay_t<decltype(o)>;
      if constexpr (std::is_same_v<T, IdentityOp>) return Eigen::Index(o.height) * o.width;
      else if constexpr (std::is_same_v<T, MaskedFourierOp>) return 2 * Eigen::Index(o.height) * Eigen::Index(o.mask.selected_columns.size());
      else if constexpr (std::is_same_v<T, RadonOp>) return Eigen::Index(o.num_angles) * o.num_detectors;
      else return o.matrix.rows();
    }, op_);
  }

  Vector apply(const Image& x) const {
    if (x.rows() != image_rows() || x.cols() != image_cols())
      throw std::invalid_argument("MeasurementOp::apply: image is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                                  ", operator expects " + std::to_string(image_rows()) + "x" + std::to_string(image_cols()));
    return std::visit([&](const auto& o) { return apply_impl(o, x); }, op_);
  }

  Image adjoint(const Vector& y) const {
    if (y.size() != measurement_size())
      throw std::invalid_argument("MeasurementOp::adjoint: got " + std::to_string(y.size()) + " measurements, expected " +
                                  std::to_string(measurement_size()));
    return std::visit([&](const auto& o) { return adjoint_impl(o, y); }, op_);
  }

  Image normal(const Image& x) const { return adjoint(apply(x)); }

 private:
  void validate() const {
    std::visit([](const auto& o) {
      using T = std::decay_t<decltype(o)>;
      if constexpr (std::is_same_v<T, RadonOp>) {
        if (o.image_size <= 0 || o.num_angles <= 0 || o.num_detectors <= 0 || !(o.detector_spacing > 0))
          throw std::invalid_argument("RadonOp: geometry parameters must be positive");
      } else {
        if (o.height <= 0 || o.width <= 0) throw std::invalid_argument("MeasurementOp: image size must be positive");
        if constexpr (std::is_same_v<T, MaskedFourierOp>) {
          if (o.mask.width != o.width) throw std::invalid_argument("MaskedFourierOp: mask width must equal image width");
        }
        if constexpr (std::is_same_v<T, DenseOp>) {
          if (o.matrix.cols() != Eigen::Index(o.height) * o.width) throw std::invalid_argument("DenseOp: matrix columns must equal h*w");
        }
      }
    }, op_);
  }

  static Vector apply_impl(const IdentityOp&, const Image& x) { return flatten(x); }
  static Image adjoint_impl(const IdentityOp& o, const Vector& y) { return unflatten(y, o.height, o.width); }

  static Vector apply_impl(const DenseOp& o, const Image& x) { return o.matrix * flatten(x); }
  static Image adjoint_impl(const DenseOp& o, const Vector& y) { return unflatten(o.matrix.transpose() * y, o.height, o.width); }

  // Centred column index -> unshifted DFT column.
  static int dft_column(int centred, int width) { return (centred - width / 2 + width) % width; }

  static Vector apply_impl(const MaskedFourierOp& o, const Image& x) {
    const ComplexImage k = fft2_unitary(x);
    const auto& cols = o.mask.selected_columns;
    Vector y(2 * Eigen::Index(o.height) * Eigen::Index(cols.size()));
    Eigen::Index j = 0;
    for (int col : cols) {
      const int c = dft_column(col, o.width);
      for (int r = 0; r < o.height; ++r) {
        y[j++] = k(r, c).real();
        y[j++] = k(r, c).imag();
      }
    }
    return y;
  }

  static Image adjoint_impl(const MaskedFourierOp& o, const Vector& y) {
    ComplexImage k = ComplexImage::Zero(o.height, o.width);
    Eigen::Index j = 0;
    for (int col : o.mask.selected_columns) {
      const int c = dft_column(col, o.width);
      for (int r = 0; r < o.height; ++r) {
        k(r, c) = {y[j], y[j + 1]};
        j += 2;
      }
    }
    return ifft2_unitary(std::move(k)).real();
  }

  template <class Fn>
  static void radon_weights(const RadonOp& o, Fn&& fn) {
    const int n = o.image_size;
    const double half = 0.5 * (n - 1);
    const double det_center = 0.5 * (o.num_detectors - 1);
    const double inv_ds = 1.0 / o.detector_spacing;
    const double pi = 3.14159265358979323846;
    for (int a = 0; a < o.num_angles; ++a) {
      const double th = pi * a / o.num_angles;
      const double ct = std::cos(th), st = std::sin(th);
      for (int c = 0; c < n; ++c) {
        const double px = c - half;
        for (int r = 0; r < n; ++r) {
          const double py = half - r;
          const double u = (px * ct + py * st) * inv_ds + det_center;
          const double fl = std::floor(u);
          const int i0 = int(fl);
          const double f = u - fl;
          const Eigen::Index base = Eigen::Index(a) * o.num_detectors;
          if (i0 >= 0 && i0 < o.num_detectors) fn(r, c, base + i0, (1.0 - f) * inv_ds);
          if (f > 0.0 && i0 + 1 >= 0 && i0 + 1 < o.num_detectors) fn(r, c, base + i0 + 1, f * inv_ds);
        }
      }
    }
  }

  static SparseMatrix radon_matrix(const RadonOp& o) {
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(std::size_t(2) * o.num_angles * o.image_size * o.image_size);
    radon_weights(o, [&](int r, int c, Eigen::Index j, double w) { t.emplace_back(j, Eigen::Index(c) * o.image_size + r, w); });
    SparseMatrix m(Eigen::Index(o.num_angles) * o.num_detectors, Eigen::Index(o.image_size) * o.image_size);
    m.setFromTriplets(t.begin(), t.end());
    return m;
  }

  Vector apply_impl(const RadonOp&, const Image& x) const { return *radon_ * flatten(x); }

  Image adjoint_impl(const RadonOp& o, const Vector& y) const {
    return unflatten(radon_->transpose() * y, o.image_size, o.image_size);
  }

  Variant op_;
  std::shared_ptr<const SparseMatrix> radon_;
};

inline Vector apply(const MeasurementOp& op, const Image& x) { return op.apply(x); }
inline Image adjoint(const MeasurementOp& op, const Vector& y) { return op.adjoint(y); }

/// y = H x + noise_sigma * g with g standard Gaussian per real entry (real and
/// imaginary parts of Fourier data are independent entries).
inline Vector simulate(const MeasurementOp& op, const Image& x, double noise_sigma, unsigned seed) {
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("simulate: noise_sigma must be >= 0");
  Vector y = op.apply(x);
  if (noise_sigma == 0.0) return y;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += noise_sigma * n01(rng);
  return y;
}

/// ||H|| by power iteration on H^T H with a fixed Gaussian start vector.
inline double operator_norm(const MeasurementOp& op, int iters = 200, unsigned seed = 0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Image x(op.image_rows(), op.image_cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n01(rng);
  x /= x.norm();
  double lambda = 0.0;
  for (int it = 0; it < iters; ++it) {
    const Image y = op.normal(x);
    lambda = dot(x, y);
    const double ny = y.norm();
    if (ny == 0.0) return 0.0;
    x = y / ny;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

/// Writes the mask as a one-row-per-column CSV (column, selected).
inline void write_mask_csv(const CartesianMask& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "column,selected\n";
  for (int c = 0; c < m.width; ++c) out << c << "," << (m.contains(c) ? 1 : 0) << "\n";
}

/// Sinogram as an image (rows = angles, cols = detectors).
inline Image sinogram_image(const RadonOp& o, const Vector& y) {
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(y.data(), o.num_angles, o.num_detectors);
}

}  // namespace wcrr
