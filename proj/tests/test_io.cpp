#include "wcrr/checkpoint.hpp"
#include "wcrr/config.hpp"
#include "wcrr/image.hpp"
#include "wcrr/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace wcrr;

namespace {

std::string tmp_path(const std::string& name) { return (std::filesystem::temp_directory_path() / ("wcrr_io_" + name)).string(); }

Image random_unit_image(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image x(h, w);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(rng);
  return x;
}

WcrrModel small_model(unsigned seed) {
  std::mt19937_64 rng(seed);
  WcrrHyper h;
  h.intervals = 20;
  h.delta = 0.01;
  WcrrParams p = WcrrParams::initial(ConvShape{{2, 3, 4}, 3}, rng, h, -0.5);
  std::normal_distribution<double> n(0.0, 0.01);
  for (auto& c : p.c_plus) c = n(rng);
  p.mu = 1.7;
  return export_model(p, 16, 16, 200);
}

// Straightforward per-pixel SSIM: full 11x11 window sums at each valid position.
double scalar_ssim(const Image& x, const Image& y) {
  const int n = 11;
  const double sd = 1.5;
  double wsum = 0.0;
  double w[11][11];
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) wsum += w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * sd * sd));
  double total = 0.0;
  int count = 0;
  for (int r = 0; r + n <= x.rows(); ++r)
    for (int c = 0; c + n <= x.cols(); ++c) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double g = w[i][j] / wsum, a = x(r + i, c + j), b = y(r + i, c + j);
          mx += g * a;
          my += g * b;
          xx += g * a * a;
          yy += g * b * b;
          xy += g * a * b;
        }
      const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
      const double c1 = 1e-4, c2 = 9e-4;
      total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / count;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const WcrrModel m = small_model(1);
  const auto bytes = serialize(m);
  const WcrrModel back = deserialize(bytes);
  EXPECT_EQ(serialize(back), bytes);
  EXPECT_EQ(back.params().c_plus, m.params().c_plus);
  EXPECT_EQ(back.params().alpha, m.params().alpha);
  EXPECT_EQ(back.conv().norm(), m.conv().norm());
  std::mt19937_64 rng(2);
  const Image x = random_unit_image(rng, 12, 12);
  EXPECT_EQ(back.energy(x, 0.05), m.energy(x, 0.05));
  EXPECT_TRUE((back.grad(x, 0.05).array() == m.grad(x, 0.05).array()).all());
}

TEST(Checkpoint, FileRoundTrip) {
  const WcrrModel m = small_model(3);
  const auto path = tmp_path("model.wcrr");
  save_checkpoint(path, m);
  EXPECT_EQ(serialize(load_checkpoint(path)), serialize(m));
}

TEST(Checkpoint, StartsWithMagicAndVersion) {
  const auto bytes = serialize(small_model(4));
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "WCRR");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
}

TEST(Checkpoint, RejectsCorruption) {
  const auto good = serialize(small_model(5));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize(bad_magic), CheckpointError);
  auto bad_version = good;
  bad_version[4] = 2;
  EXPECT_THROW(deserialize(bad_version), CheckpointError);
  for (std::size_t cut : {std::size_t(3), std::size_t(20), good.size() / 2, good.size() - 1})
    EXPECT_THROW(deserialize(std::vector<unsigned char>(good.begin(), good.begin() + cut)), CheckpointError) << cut;
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(deserialize(trailing), CheckpointError);
  EXPECT_THROW(load_checkpoint(tmp_path("does_not_exist.wcrr")), CheckpointError);
}

TEST(Checkpoint, RejectsUnderstatedNorm) {
  const WcrrModel m = small_model(6);
  NormalizedConv shrunk(m.params().conv, 0.5 * m.conv().norm(), NormMethod::power_method, 16, 16);
  const WcrrModel bad(m.params(), shrunk);
  EXPECT_THROW(deserialize(serialize(bad)), CheckpointError);
  EXPECT_NO_THROW(deserialize(serialize(bad), false));
}

TEST(ImageIo, Pgm8RoundTrip) {
  Image x(5, 7);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = double((i * 37) % 256) / 255.0;
  const auto path = tmp_path("a.pgm");
  write_pgm(path, x);
  const Image y = read_image(path);
  ASSERT_EQ(y.rows(), 5);
  ASSERT_EQ(y.cols(), 7);
  EXPECT_LE((x - y).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ImageIo, Pgm16RoundTrip) {
  Image x(4, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = double(i * 5000) / 65535.0;
  const auto path = tmp_path("b.pgm");
  write_pgm(path, x, true);
  EXPECT_LE((x - read_image(path)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ImageIo, PfmRoundTripKeepsFloats) {
  std::mt19937_64 rng(8);
  Image x = random_unit_image(rng, 6, 9) * 3.0 - Image::Constant(6, 9, 1.0);
  x = x.unaryExpr([](double v) { return double(float(v)); });
  const auto path = tmp_path("c.pfm");
  write_image(path, x);
  EXPECT_TRUE((read_image(path).array() == x.array()).all());
}

TEST(ImageIo, RejectsUnknownAndTruncated) {
  const auto path = tmp_path("bad.pgm");
  {
    std::ofstream out(path, std::ios::binary);
    out << "P2\n2 2\n255\n";
  }
  EXPECT_THROW(read_image(path), IoError);
  {
    std::ofstream out(path, std::ios::binary);
    out << "P5\n4 4\n255\nabc";
  }
  EXPECT_THROW(read_image(path), IoError);
  EXPECT_THROW(read_image(tmp_path("missing.pgm")), IoError);
}

TEST(Metrics, PsnrExamples) {
  const Image x = Image::Constant(8, 8, 0.3);
  EXPECT_EQ(psnr(x, x), 99.0);
  EXPECT_NEAR(psnr(x, x + Image::Constant(8, 8, 0.1)), 20.0, 1e-12);
  EXPECT_THROW(psnr(x, Image::Zero(8, 7)), std::invalid_argument);
}

TEST(Metrics, SsimIdenticalIsOne) {
  std::mt19937_64 rng(9);
  const Image x = random_unit_image(rng, 20, 24);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
}

TEST(Metrics, SsimMatchesScalarOracle) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 3; ++t) {
    const Image x = random_unit_image(rng, 23, 31);
    Image y = x;
    std::normal_distribution<double> n(0.0, 0.1 * (t + 1));
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] += n(rng);
    const double ref = scalar_ssim(x, y);
    EXPECT_NEAR(ssim(x, y), ref, 1e-6 * std::abs(ref));
  }
}

TEST(Metrics, SsimShapeChecks) {
  EXPECT_THROW(ssim(Image::Zero(12, 12), Image::Zero(12, 13)), std::invalid_argument);
  EXPECT_THROW(ssim(Image::Zero(10, 10), Image::Zero(10, 10)), std::invalid_argument);
}

TEST(RunConfig, FileAndOverrides) {
  RunConfig cfg({{"lambda", "1"}, {"sigma", "0.1"}, {"out", "run"}, {"seed", "0"}, {"verbose", "false"}});
  const auto path = tmp_path("a.cfg");
  {
    std::ofstream out(path);
    out << "# comment\n  lambda = 2.5   # trailing\n\nout=dir one\n";
  }
  cfg.load_file(path);
  cfg.set("seed", "42");
  EXPECT_DOUBLE_EQ(cfg.num("lambda"), 2.5);
  EXPECT_EQ(cfg.str("out"), "dir one");
  EXPECT_EQ(cfg.integer("seed"), 42);
  EXPECT_FALSE(cfg.flag("verbose"));
  EXPECT_DOUBLE_EQ(cfg.num("sigma"), 0.1);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  RunConfig cfg({{"lambda", "1"}, {"steps", "10"}});
  EXPECT_THROW(cfg.set("lamda", "2"), ConfigError);
  const auto path = tmp_path("b.cfg");
  {
    std::ofstream out(path);
    out << "lambda = 3\nstep = 4\n";
  }
  EXPECT_THROW(cfg.load_file(path), ConfigError);
  cfg.set("steps", "4.5");
  EXPECT_THROW(cfg.integer("steps"), ConfigError);
  cfg.set("lambda", "abc");
  EXPECT_THROW(cfg.num("lambda"), ConfigError);
}

TEST(RunConfig, ResolvedFileReloads) {
  RunConfig a({{"x", "1"}, {"y", "two"}});
  a.set("x", "5");
  const auto path = tmp_path("c.cfg");
  a.write(path);
  RunConfig b({{"x", "0"}, {"y", "0"}});
  b.load_file(path);
  EXPECT_EQ(b.str("x"), "5");
  EXPECT_EQ(b.str("y"), "two");
}
