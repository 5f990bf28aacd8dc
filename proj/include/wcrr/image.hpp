#pragma once

// Image containers and the small amount of file I/O the toolkit needs:
// binary PGM (8/16 bit) and PFM (float) images, plus CSV writing helpers.
// Pixel intensities are kept in [0, 1] internally.

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace wcrr {

/// Single-channel image, rows = height, cols = width.
using Image = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Stack of equally sized feature maps (one per channel).
using Features = std::vector<Image>;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double dot(const Image& a, const Image& b) { return (a.array() * b.array()).sum(); }

inline double dot(const Features& a, const Features& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += dot(a[i], b[i]);
  return s;
}

inline Features zeros_like(const Features& f) {
  Features out;
  out.reserve(f.size());
  for (const auto& c : f) out.push_back(Image::Zero(c.rows(), c.cols()));
  return out;
}

inline Eigen::Map<const Vector> flatten(const Image& x) { return {x.data(), x.size()}; }

inline Image unflatten(const Vector& v, Eigen::Index h, Eigen::Index w) {
  if (v.size() != h * w) throw std::invalid_argument("unflatten: size mismatch");
  return Eigen::Map<const Image>(v.data(), h, w);
}

namespace detail {

inline std::string next_token(std::istream& in) {
  std::string tok;
  while (in) {
    int ch = in.peek();
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  in >> tok;
  return tok;
}

inline bool host_little_endian() {
  const std::uint16_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}

}  // namespace detail

/// Reads a binary PGM (P5, maxval up to 65535) or a grayscale PFM (Pf).
/// PGM values are scaled by 1/maxval; PFM values are returned unchanged.
inline Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path + "'");
  const std::string magic = detail::next_token(in);
  if (magic == "P5") {
    const int w = std::stoi(detail::next_token(in));
    const int h = std::stoi(detail::next_token(in));
    const int maxval = std::stoi(detail::next_token(in));
    in.get();
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw IoError("bad PGM header in '" + path + "'");
    Image img(h, w);
    const bool wide = maxval > 255;
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * (wide ? 2 : 1));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw IoError("truncated PGM '" + path + "'");
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * w + c;
        const unsigned v = wide ? (unsigned(buf[2 * i]) << 8) | buf[2 * i + 1] : buf[i];
        img(r, c) = double(v) / maxval;
      }
    return img;
  }
  if (magic == "Pf") {
    const int w = std::stoi(detail::next_token(in));
    const int h = std::stoi(detail::next_token(in));
    const double scale = std::stod(detail::next_token(in));
    in.get();
    if (w <= 0 || h <= 0) throw IoError("bad PFM header in '" + path + "'");
    const bool file_le = scale < 0;
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw IoError("truncated PFM '" + path + "'");
    Image img(h, w);
    // PFM scanlines run bottom to top.
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        unsigned char* p = &buf[(static_cast<std::size_t>(h - 1 - r) * w + c) * 4];
        if (file_le != detail::host_little_endian()) std::swap(p[0], p[3]), std::swap(p[1], p[2]);
        float f;
        std::memcpy(&f, p, 4);
        img(r, c) = f;
      }
    return img;
  }
  throw IoError("unsupported image format in '" + path + "' (expected P5 or Pf)");
}

/// Writes an 8-bit (or 16-bit if `bits16`) PGM, clipping to [0, 1].
inline void write_pgm(const std::string& path, const Image& img, bool bits16 = false) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  const int maxval = bits16 ? 65535 : 255;
  out << "P5\n" << img.cols() << " " << img.rows() << "\n" << maxval << "\n";
  for (Eigen::Index r = 0; r < img.rows(); ++r)
    for (Eigen::Index c = 0; c < img.cols(); ++c) {
      const double v = std::clamp(img(r, c), 0.0, 1.0);
      const auto q = static_cast<unsigned>(std::lround(v * maxval));
      if (bits16) out.put(char(q >> 8));
      out.put(char(q & 0xff));
    }
}

/// Writes a little-endian grayscale PFM (no clipping).
inline void write_pfm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << "Pf\n" << img.cols() << " " << img.rows() << "\n-1.0\n";
  for (Eigen::Index r = img.rows() - 1; r >= 0; --r)
    for (Eigen::Index c = 0; c < img.cols(); ++c) {
      float f = static_cast<float>(img(r, c));
      unsigned char p[4];
      std::memcpy(p, &f, 4);
      if (!detail::host_little_endian()) std::swap(p[0], p[3]), std::swap(p[1], p[2]);
      out.write(reinterpret_cast<char*>(p), 4);
    }
}

/// Chooses PGM or PFM from the file extension.
inline void write_image(const std::string& path, const Image& img) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".pfm")
    write_pfm(path, img);
  else
    write_pgm(path, img);
}

/// Writes a matrix as comma-separated rows.
inline void write_matrix_csv(const std::string& path, const Image& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.precision(10);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << m(r, c);
    out << "\n";
  }
}

}  // namespace wcrr
