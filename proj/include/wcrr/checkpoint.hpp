#pragma once

// Binary model checkpoint.
//
// Layout (all integers uint32, all reals float32, little-endian):
//
//   "WCRR" | version
//   n_layers | per layer: out, in, k, k            (kernel shape headers)
//   N_C | k_s | M | delta | sigma_max | epsilon | alpha_knots
//   mu
//   len | c_plus[len]
//   len | c_minus[len]
//   rows | cols | alpha[rows * cols]               (row-major, one row per channel)
//   per layer: count | raw kernel[count]           (out, in, k, k row-major)
//   norm | norm_method | norm_h | norm_w
//
// Models whose parameters are float32-representable round-trip bit-exactly.

#include "wcrr/convstack.hpp"
#include "wcrr/regularizer.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace wcrr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
  }
  void f32(double v) {
    const float f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    u32(bits);
  }
  void f32_block(const std::vector<double>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (double x : v) f32(x);
  }
  std::vector<unsigned char> bytes;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& b) : bytes_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::vector<double> f32_block(std::size_t expected) {
    const std::uint32_t n = u32();
    if (n != expected) throw CheckpointError("checkpoint: block of " + std::to_string(n) + " values, expected " + std::to_string(expected));
    std::vector<double> v(n);
    for (auto& x : v) x = f32();
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError("checkpoint: truncated file");
  }
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

inline double to_f32(double v) {
  volatile float f = static_cast<float>(v);
  return f;
}

}  // namespace detail

/// Rounds every stored parameter (and the stored hyperparameters) to float32.
inline void round_to_float32(WcrrParams& p) {
  using detail::to_f32;
  for (auto& K : p.conv.raw())
    for (auto& v : K.w) v = to_f32(v);
  p.mu = to_f32(p.mu);
  for (auto& v : p.c_plus) v = to_f32(v);
  for (auto& v : p.c_minus) v = to_f32(v);
  for (auto& row : p.alpha)
    for (auto& v : row) v = to_f32(v);
  p.hyper.delta = to_f32(p.hyper.delta);
  p.hyper.sigma_max = to_f32(p.hyper.sigma_max);
  p.hyper.epsilon = to_f32(p.hyper.epsilon);
}

/// Model with float32 parameters and a firm power-method norm (itself rounded
/// to float32), i.e. exactly what a checkpoint can represent.
inline WcrrModel export_model(WcrrParams params, int norm_h = 64, int norm_w = 64, int iters = 1000) {
  round_to_float32(params);
  const double n = detail::to_f32(spectral_norm_power(params.conv, norm_h, norm_w, iters));
  if (!(n > 0.0)) throw std::invalid_argument("export_model: convolution operator is zero");
  NormalizedConv conv(params.conv, n, NormMethod::power_method, norm_h, norm_w);
  return WcrrModel(std::move(params), std::move(conv));
}

inline std::vector<unsigned char> serialize(const WcrrModel& m) {
  detail::ByteWriter w;
  const auto& p = m.params();
  const auto& raw = p.conv.raw();
  for (char c : std::string("WCRR")) w.bytes.push_back(static_cast<unsigned char>(c));
  w.u32(kCheckpointVersion);
  w.u32(3);
  for (const auto& K : raw) {
    w.u32(K.out);
    w.u32(K.in);
    w.u32(K.k);
    w.u32(K.k);
  }
  w.u32(p.conv.num_channels());
  w.u32(p.conv.kernel_size());
  w.u32(p.hyper.intervals);
  w.f32(p.hyper.delta);
  w.f32(p.hyper.sigma_max);
  w.f32(p.hyper.epsilon);
  w.u32(p.hyper.alpha_knots);
  w.f32(p.mu);
  w.f32_block(p.c_plus);
  w.f32_block(p.c_minus);
  w.u32(static_cast<std::uint32_t>(p.alpha.size()));
  w.u32(static_cast<std::uint32_t>(p.hyper.alpha_knots));
  for (const auto& row : p.alpha)
    for (double v : row) w.f32(v);
  for (const auto& K : raw) w.f32_block(K.w);
  w.f32(m.conv().norm());
  w.u32(static_cast<std::uint32_t>(m.conv().method()));
  w.u32(m.conv().norm_height());
  w.u32(m.conv().norm_width());
  return w.bytes;
}

/// Parses a checkpoint.  With `verify`, a 100-step power iteration checks
/// that the stored norm makes ||W|| <= 1 + 1e-6.
inline WcrrModel deserialize(const std::vector<unsigned char>& bytes, bool verify = true) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "WCRR", 4) != 0) throw CheckpointError("checkpoint: bad magic (expected WCRR)");
  std::vector<unsigned char> body(bytes.begin() + 4, bytes.end());
  detail::ByteReader r(body);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  if (r.u32() != 3) throw CheckpointError("checkpoint: expected 3 convolution layers");
  ConvShape shape;
  int in = 1;
  for (int l = 0; l < 3; ++l) {
    const int out = int(r.u32()), lin = int(r.u32()), k1 = int(r.u32()), k2 = int(r.u32());
    if (lin != in || k1 != k2 || out <= 0 || k1 <= 0 || (l > 0 && k1 != shape.kernel_size))
      throw CheckpointError("checkpoint: inconsistent kernel shape header for layer " + std::to_string(l));
    shape.channels[l] = out;
    shape.kernel_size = k1;
    in = out;
  }
  WcrrParams p;
  const int nc = int(r.u32());
  const int ks = int(r.u32());
  if (nc != shape.channels[2] || ks != shape.kernel_size) throw CheckpointError("checkpoint: N_C / k_s disagree with kernel headers");
  p.hyper.intervals = int(r.u32());
  p.hyper.delta = r.f32();
  p.hyper.sigma_max = r.f32();
  p.hyper.epsilon = r.f32();
  p.hyper.alpha_knots = int(r.u32());
  p.mu = r.f32();
  p.c_plus = r.f32_block(std::size_t(p.hyper.intervals) + 1);
  p.c_minus = r.f32_block(std::size_t(p.hyper.intervals) + 1);
  const std::uint32_t rows = r.u32(), cols = r.u32();
  if (int(rows) != nc || int(cols) != p.hyper.alpha_knots) throw CheckpointError("checkpoint: alpha block shape mismatch");
  p.alpha.assign(rows, Coeffs(cols));
  for (auto& row : p.alpha)
    for (auto& v : row) v = r.f32();
  p.conv = ConvStack(shape);
  for (auto& K : p.conv.raw()) K.w = r.f32_block(K.w.size());
  const double norm = r.f32();
  const auto method = static_cast<NormMethod>(r.u32());
  const int nh = int(r.u32()), nw = int(r.u32());
  if (!r.done()) throw CheckpointError("checkpoint: trailing bytes");
  if (!(norm > 0.0)) throw CheckpointError("checkpoint: non-positive operator norm");
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  if (verify) {
    const int h = nh > 0 ? nh : 64, w = nw > 0 ? nw : 64;
    const double wn = spectral_norm_power(p.conv, h, w, 100) / norm;
    if (wn > 1.0 + 1e-6) throw CheckpointError("checkpoint: ||W|| = " + std::to_string(wn) + " exceeds 1 + 1e-6");
  }
  NormalizedConv conv(p.conv, norm, method, nh, nw);
  return WcrrModel(std::move(p), std::move(conv));
}

inline void save_checkpoint(const std::string& path, const WcrrModel& m) {
  const auto bytes = serialize(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline WcrrModel load_checkpoint(const std::string& path, bool verify = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes, verify);
}

}  // namespace wcrr
