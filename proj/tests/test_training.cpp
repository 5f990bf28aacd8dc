#include "implicit_fd.hpp"
#include "wcrr/training.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

using namespace wcrr;

namespace {

PatchDataset tiny_dataset() {
  std::vector<Image> imgs;
  for (unsigned s = 0; s < 3; ++s) imgs.push_back(random_ellipse_phantom(24, s));
  return PatchDataset::from_images(imgs, 8, 8);
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.shape = ConvShape{{2, 2, 4}, 3};
  cfg.patch_size = 8;
  cfg.batch_size = 2;
  cfg.steps = 3;
  cfg.alpha_init = -0.5;
  cfg.norm_grid = 16;
  cfg.export_norm_size = 16;
  cfg.export_norm_iters = 200;
  cfg.lr_splines = 5e-3;
  return cfg;
}

}  // namespace

TEST(PatchDataset, TilesWithStride) {
  const auto d = PatchDataset::from_images({Image::Constant(20, 17, 0.5)}, 8, 4);
  EXPECT_EQ(d.size(), 4u * 3u);
  for (const auto& p : d.patches) EXPECT_EQ(p.rows(), 8);
}

TEST(PatchDataset, RejectsOutOfRangePixels) {
  EXPECT_THROW(PatchDataset::from_images({Image::Constant(8, 8, 1.5)}, 4, 4), std::invalid_argument);
}

TEST(SampleBatch, ZeroNoiseLevelIsClean) {
  auto d = tiny_dataset();
  TrainConfig cfg;
  cfg.sigma_max = 0.0;
  cfg.batch_size = 16;
  std::mt19937_64 rng(3);
  for (const auto& s : sample_batch(d, cfg, rng)) {
    EXPECT_EQ(s.sigma, 0.0);
    EXPECT_TRUE((s.noisy.array() == s.clean.array()).all());
  }
}

TEST(SampleBatch, NoiseLevelsAreUniform) {
  auto d = tiny_dataset();
  TrainConfig cfg;
  cfg.batch_size = 10000;
  std::mt19937_64 rng(11);
  const auto batch = sample_batch(d, cfg, rng);
  std::vector<double> u;
  for (const auto& s : batch) u.push_back(s.sigma / cfg.sigma_max);
  std::sort(u.begin(), u.end());
  double ks = 0.0;
  const double n = double(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) ks = std::max({ks, std::abs((i + 1) / n - u[i]), std::abs(u[i] - i / n)});
  EXPECT_LT(ks, 0.02);
}

TEST(SampleBatch, NoiseMatchesItsLevel) {
  auto d = PatchDataset::from_images({Image::Constant(64, 64, 0.5)}, 64, 64);
  TrainConfig cfg;
  cfg.batch_size = 20;
  std::mt19937_64 rng(5);
  for (const auto& s : sample_batch(d, cfg, rng)) {
    const Image r = s.noisy - s.clean;
    const double sd = std::sqrt(r.array().square().mean());
    EXPECT_NEAR(sd, s.sigma, 0.05 * s.sigma + 1e-12);
    EXPECT_NEAR(r.mean(), 0.0, 4.0 * s.sigma / 64.0 + 1e-12);
  }
}

TEST(SampleBatch, DeterministicForSeed) {
  auto d = tiny_dataset();
  TrainConfig cfg;
  std::mt19937_64 a(9), b(9);
  const auto x = sample_batch(d, cfg, a), y = sample_batch(d, cfg, b);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].sigma, y[i].sigma);
    EXPECT_TRUE((x[i].noisy.array() == y[i].noisy.array()).all());
  }
}

TEST(LossAndGrad, ZeroActivationGivesNoisyLoss) {
  std::mt19937_64 rng(2);
  TrainConfig cfg = tiny_config();
  WcrrParams p = WcrrParams::initial(cfg.shape, rng, cfg.hyper, -0.5);
  std::fill(p.c_minus.begin(), p.c_minus.end(), 0.0);
  auto d = tiny_dataset();
  const auto batch = sample_batch(d, cfg, rng);
  const LossGrad lg = loss_and_grad(training_model(p, cfg), batch, cfg);
  double expect = 0.0;
  for (const auto& s : batch) expect += (s.noisy - s.clean).cwiseAbs().sum();
  EXPECT_DOUBLE_EQ(lg.loss, expect);
  for (const auto& K : lg.grad.conv)
    for (double g : K.w) EXPECT_EQ(g, 0.0);
  for (const auto& row : lg.grad.alpha)
    for (double g : row) EXPECT_EQ(g, 0.0);
}

TEST(LossAndGrad, MatchesFiniteDifferences) {
  for (const auto& e : check::implicit_fd_check(7)) EXPECT_LE(e.rel_error(), 1e-2) << e.name << " analytic " << e.analytic << " fd " << e.numeric;
}

TEST(LossAndGrad, BackwardSolveResidual) {
  auto s = check::implicit_fd_setup(4);
  const WcrrModel model = training_model(s.params, s.cfg);
  const auto& t = s.batch[0];
  SolveOptions o;
  o.tol = 1e-10;
  o.max_iters = 50000;
  const Image x = prox_denoise(model, t.noisy, t.sigma, o).x;
  const Image v = (x - t.clean).unaryExpr([](double r) { return r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0); });
  const Features curv = model.curvature(x, t.sigma);
  auto A = [&](const Image& u) { return Image(u + model.hvp_with(curv, u)); };
  Image w = Image::Zero(v.rows(), v.cols());
  const CgResult cg = conjugate_gradient(A, v, w, 1e-10, 1000);
  ASSERT_TRUE(cg.converged);
  EXPECT_LE((A(w) - v).norm(), 1e-9 * v.norm());
}

TEST(Train, ZeroLearningRateKeepsParameters) {
  TrainConfig cfg = tiny_config();
  cfg.lr_mu = cfg.lr_conv = cfg.lr_alpha = cfg.lr_splines = 0.0;
  std::mt19937_64 rng(cfg.seed);
  const WcrrParams init = WcrrParams::initial(cfg.shape, rng, cfg.hyper, cfg.alpha_init);
  const auto res = train(tiny_dataset(), cfg, init);
  EXPECT_EQ(res.final_params.mu, init.mu);
  EXPECT_EQ(res.final_params.c_plus, init.c_plus);
  EXPECT_EQ(res.final_params.c_minus, init.c_minus);
  EXPECT_EQ(res.final_params.alpha, init.alpha);
  for (int l = 0; l < 3; ++l) EXPECT_EQ(res.final_params.conv.raw()[l].w, init.conv.raw()[l].w);
}

TEST(Train, ExportedModelKeepsConstraints) {
  TrainConfig cfg = tiny_config();
  cfg.steps = 5;
  cfg.lr_splines = 5e-2;
  cfg.lr_mu = 0.5;
  const auto res = train(tiny_dataset(), cfg);
  const WcrrModel& m = res.model;
  EXPECT_GE(m.mu(), 0.0);
  EXPECT_LE(spectral_norm_power(m.conv().kernels(), 16, 16, 100) / m.conv().norm(), 1.0 + 1e-6);
  const auto& c = m.phi().coeffs();
  for (std::size_t j = 0; j < c.size(); ++j) EXPECT_NEAR(c[j], -c[c.size() - 1 - j], 1e-12);
  for (double s : m.phi().slopes()) EXPECT_GE(s, -1.0 - 1e-12);
  EXPECT_GE(m.weak_convexity_bound(), 0.0);
  EXPECT_LE(m.weak_convexity_bound(), 1.0);
}

TEST(Train, DeterministicLog) {
  TrainConfig cfg = tiny_config();
  const auto a = train(tiny_dataset(), cfg), b = train(tiny_dataset(), cfg);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);
  EXPECT_EQ(a.final_params.c_plus, b.final_params.c_plus);
}

TEST(Train, LearningRateDecay) {
  TrainConfig cfg = tiny_config();
  cfg.steps = 5;
  cfg.decay_every = 2;
  const auto res = train(tiny_dataset(), cfg);
  const double expect[] = {1.0, 1.0, 0.75, 0.75, 0.5625};
  for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(res.log[i].lr_mu, cfg.lr_mu * expect[i]);
}

TEST(Train, LogCsv) {
  TrainConfig cfg = tiny_config();
  cfg.steps = 2;
  const auto res = train(tiny_dataset(), cfg);
  const auto path = std::filesystem::temp_directory_path() / "wcrr_train_log.csv";
  write_train_log_csv(res.log, path.string());
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "step,loss,lr_mu,lr_conv,lr_alpha,lr_splines,conv_norm,skipped");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2);
}
