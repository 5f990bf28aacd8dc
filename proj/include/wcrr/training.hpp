#pragma once

// Multi-noise-level training of the regularizer through its proximal
// denoiser.  Gradients of the l1 loss are obtained by implicit
// differentiation of the optimality condition x - y + grad R(x) = 0:
// (I + H_R(x)) w = sign(x - x_clean) is solved by conjugate gradients and
// d loss / d theta = -d/d theta <w, grad_x R(theta, x)>.

#include "wcrr/checkpoint.hpp"
#include "wcrr/image.hpp"
#include "wcrr/regularizer.hpp"
#include "wcrr/solvers.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <algorithm>
#include <functional>
#include <optional>
#include <span>
#include <iostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace wcrr {

struct TrainConfig {
  ConvShape shape{{4, 8, 60}, 5};
  WcrrHyper hyper;
  double sigma_max = 30.0 / 255.0;
  int patch_size = 40;
  int batch_size = 32;
  int steps = 500;
  double lr_mu = 5e-2;
  double lr_conv = 5e-3;
  double lr_alpha = 5e-3;
  double lr_splines = 5e-4;
  double lr_decay = 0.75;
  int decay_every = 500;
  double forward_tol = 1e-4;
  double backward_tol = 1e-6;
  int forward_max_iters = 2000;
  int backward_max_iters = 1000;
  double slope_margin = 1e-3;   // phi slope floor is -(1 - margin) while training
  double alpha_init = 5.0;
  int norm_grid = 64;           // grid of the DFT norm estimate
  int export_norm_size = 64;    // image size of the firm power-method norm
  int export_norm_iters = 1000;
  unsigned seed = 0;
  int checkpoint_every = 0;
  std::string checkpoint_dir;

  void validate() const {
    for (double lr : {lr_mu, lr_conv, lr_alpha, lr_splines})
      if (!(lr >= 0.0)) throw std::invalid_argument("TrainConfig: learning rates must be non-negative");
    if (!(forward_tol > 0.0) || !(backward_tol > 0.0)) throw std::invalid_argument("TrainConfig: tolerances must be positive");
    if (!(sigma_max >= 0.0)) throw std::invalid_argument("TrainConfig: sigma_max must be non-negative");
    if (patch_size < 1 || batch_size < 1 || steps < 0 || decay_every < 1) throw std::invalid_argument("TrainConfig: sizes must be positive");
    if (!(slope_margin >= 0.0 && slope_margin < 1.0)) throw std::invalid_argument("TrainConfig: slope_margin must lie in [0, 1)");
  }
};

/// Desk-scale run: 8 output channels, 3x3 kernels, 16x16 patches, 500 steps.
inline TrainConfig desk_train_config() {
  TrainConfig c;
  c.shape = ConvShape{{2, 4, 8}, 3};
  c.patch_size = 16;
  c.batch_size = 32;
  c.steps = 500;
  c.alpha_init = 5.0 - std::log(255.0);
  c.lr_mu = 1e-1;
  c.lr_conv = 2e-2;
  c.lr_alpha = 5e-2;
  c.lr_splines = 1e-2;
  return c;
}

/// Clean grayscale patches with values in [0, 1].
struct PatchDataset {
  std::vector<Image> patches;
  std::string source;

  bool empty() const { return patches.empty(); }
  std::size_t size() const { return patches.size(); }

  /// Tiles each image into patch x patch windows with the given stride.
  static PatchDataset from_images(const std::vector<Image>& images, int patch, int stride, std::string source = "in-memory") {
    if (patch < 1 || stride < 1) throw std::invalid_argument("PatchDataset: patch and stride must be positive");
    PatchDataset d;
    d.source = std::move(source);
    for (const auto& img : images) {
      if (img.minCoeff() < 0.0 || img.maxCoeff() > 1.0) throw std::invalid_argument("PatchDataset: pixel values must lie in [0, 1]");
      for (Eigen::Index r = 0; r + patch <= img.rows(); r += stride)
        for (Eigen::Index c = 0; c + patch <= img.cols(); c += stride) d.patches.push_back(img.block(r, c, patch, patch));
    }
    return d;
  }

  /// Every .pgm/.pfm file of a directory, in lexicographic order.
  static PatchDataset from_directory(const std::string& dir, int patch, int stride) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      const auto ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".pgm" || ext == ".pfm")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<Image> images;
    for (const auto& f : files) images.push_back(read_image(f.string()));
    if (images.empty()) throw IoError("no .pgm/.pfm images in '" + dir + "'");
    return from_images(images, patch, stride, dir);
  }
};

struct TrainingSample {
  Image clean;
  Image noisy;
  double sigma = 0.0;
};

/// Draws batch_size patches uniformly (with replacement), each with its own
/// sigma ~ U[0, sigma_max] and white Gaussian noise.
template <class Rng>
std::vector<TrainingSample> sample_batch(const PatchDataset& data, const TrainConfig& cfg, Rng& rng) {
  if (data.empty()) throw std::invalid_argument("sample_batch: empty dataset");
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::uniform_real_distribution<double> level(0.0, 1.0);
  std::normal_distribution<double> n01;
  std::vector<TrainingSample> batch(cfg.batch_size);
  for (auto& s : batch) {
    s.clean = data.patches[pick(rng)];
    s.sigma = cfg.sigma_max * level(rng);
    s.noisy = s.clean;
    if (cfg.sigma_max > 0.0)
      for (Eigen::Index k = 0; k < s.noisy.size(); ++k) s.noisy.data()[k] += s.sigma * n01(rng);
  }
  return batch;
}

struct LossGrad {
  double loss = 0.0;
  ParamGrad grad;
  int skipped = 0;
  int forward_iters = 0;
  int backward_iters = 0;
};

/// l1 loss of the denoised batch and its gradient with respect to the raw
/// parameters of `model`.
inline LossGrad loss_and_grad(const WcrrModel& model, const std::vector<TrainingSample>& batch, const TrainConfig& cfg) {
  LossGrad out;
  out.grad = ParamGrad::zeros_like(model.params());
  SolveOptions fopts;
  fopts.tol = cfg.forward_tol;
  fopts.max_iters = cfg.forward_max_iters;
  fopts.record_trace = false;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = batch[b];
    const SolveResult den = prox_denoise(model, s.noisy, s.sigma, fopts);
    out.forward_iters += den.report.iterations;
    if (den.report.stop_reason != StopReason::tolerance) {
      std::cerr << "warning: forward solve for batch element " << b << " did not converge in " << cfg.forward_max_iters
                << " iterations, skipped\n";
      ++out.skipped;
      continue;
    }
    const Image r = den.x - s.clean;
    out.loss += r.cwiseAbs().sum();
    const Image v = r.unaryExpr([](double t) { return t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0); });
    const Features curv = model.curvature(den.x, s.sigma);
    Image w = Image::Zero(v.rows(), v.cols());
    const CgResult cg = conjugate_gradient([&](const Image& u) { return Image(u + model.hvp_with(curv, u)); }, v, w, cfg.backward_tol,
                                           cfg.backward_max_iters);
    out.backward_iters += cg.iterations;
    if (!cg.converged)
      std::cerr << "warning: backward solve for batch element " << b << " stopped at residual " << cg.residual / v.norm() << "\n";
    out.grad.axpy(-1.0, model.grad_inner_param_grad(den.x, w, s.sigma));
  }
  return out;
}

/// Adam with the usual defaults (0.9, 0.999, 1e-8) on a flat parameter block.
class Adam {
 public:
  explicit Adam(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> param, std::span<const double> grad, double lr, int t) {
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    for (std::size_t j = 0; j < param.size(); ++j) {
      m_[j] = b1 * m_[j] + (1.0 - b1) * grad[j];
      v_[j] = b2 * v_[j] + (1.0 - b2) * grad[j] * grad[j];
      param[j] -= lr * (m_[j] / c1) / (std::sqrt(v_[j] / c2) + eps);
    }
  }

 private:
  std::vector<double> m_, v_;
};

struct TrainLogEntry {
  int step = 0;
  double loss = 0.0;   // sum of l1 errors over the batch
  double lr_mu = 0.0, lr_conv = 0.0, lr_alpha = 0.0, lr_splines = 0.0;
  double conv_norm = 0.0;  // DFT estimate of ||U||
  int skipped = 0;
};

inline void write_train_log_csv(const std::vector<TrainLogEntry>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.precision(12);
  out << "step,loss,lr_mu,lr_conv,lr_alpha,lr_splines,conv_norm,skipped\n";
  for (const auto& e : log)
    out << e.step << "," << e.loss << "," << e.lr_mu << "," << e.lr_conv << "," << e.lr_alpha << "," << e.lr_splines << ","
        << e.conv_norm << "," << e.skipped << "\n";
}

struct TrainResult {
  WcrrModel model;        // exported: float32 parameters, firm power-method norm
  WcrrParams final_params;
  std::vector<TrainLogEntry> log;
};

/// Model as seen inside the training loop (DFT norm, slope margin).
inline WcrrModel training_model(const WcrrParams& p, const TrainConfig& cfg) {
  return WcrrModel::with_dft_norm(p, cfg.norm_grid, cfg.norm_grid, 1.0 - cfg.slope_margin);
}

using TrainCallback = std::function<void(const TrainLogEntry&)>;

inline TrainResult train(const PatchDataset& data, const TrainConfig& cfg, std::optional<WcrrParams> init = std::nullopt,
                         const TrainCallback& on_step = {}) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  WcrrParams p = init ? *init : WcrrParams::initial(cfg.shape, rng, cfg.hyper, cfg.alpha_init);

  std::size_t nconv = 0;
  for (const auto& K : p.conv.raw()) nconv += K.w.size();
  std::vector<Adam> conv_opt;
  for (const auto& K : p.conv.raw()) conv_opt.emplace_back(K.w.size());
  Adam mu_opt(1), plus_opt(p.c_plus.size()), minus_opt(p.c_minus.size());
  std::vector<Adam> alpha_opt;
  for (const auto& row : p.alpha) alpha_opt.emplace_back(row.size());

  TrainResult res;
  for (int step = 1; step <= cfg.steps; ++step) {
    const WcrrModel model = training_model(p, cfg);
    const auto batch = sample_batch(data, cfg, rng);
    const LossGrad lg = loss_and_grad(model, batch, cfg);
    const double decay = std::pow(cfg.lr_decay, double((step - 1) / cfg.decay_every));

    TrainLogEntry e;
    e.step = step;
    e.loss = lg.loss;
    e.lr_mu = cfg.lr_mu * decay;
    e.lr_conv = cfg.lr_conv * decay;
    e.lr_alpha = cfg.lr_alpha * decay;
    e.lr_splines = cfg.lr_splines * decay;
    e.conv_norm = model.conv().norm();
    e.skipped = lg.skipped;

    for (int l = 0; l < 3; ++l) conv_opt[l].step(p.conv.raw()[l].w, lg.grad.conv[l].w, e.lr_conv, step);
    mu_opt.step(std::span<double>(&p.mu, 1), std::span<const double>(&lg.grad.mu, 1), e.lr_mu, step);
    plus_opt.step(p.c_plus, lg.grad.c_plus, e.lr_splines, step);
    minus_opt.step(p.c_minus, lg.grad.c_minus, e.lr_splines, step);
    for (std::size_t i = 0; i < p.alpha.size(); ++i) alpha_opt[i].step(p.alpha[i], lg.grad.alpha[i], e.lr_alpha, step);

    res.log.push_back(e);
    if (on_step) on_step(e);
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && step % cfg.checkpoint_every == 0) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
      save_checkpoint(cfg.checkpoint_dir + "/step_" + std::to_string(step) + ".wcrr",
                      export_model(p, cfg.export_norm_size, cfg.export_norm_size, cfg.export_norm_iters));
    }
  }
  (void)nconv;
  res.final_params = p;
  res.model = export_model(p, cfg.export_norm_size, cfg.export_norm_size, cfg.export_norm_iters);
  return res;
}

}  // namespace wcrr
