// wcrr_cli: train, denoise, reconstruct, tune, eval and inspect.
//
// Every subcommand takes `--config FILE` (key = value lines) and one flag per
// config key; flags override the file.  Outputs go to the run directory
// `--out`, together with the fully resolved config.txt.

#include <CLI11.hpp>

#include "wcrr/wcrr.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace wcrr;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string num(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

RunConfig train_keys() {
  const TrainConfig d;
  return RunConfig({{"data_dir", ""},
                    {"out", "runs/train"},
                    {"patch_size", std::to_string(d.patch_size)},
                    {"stride", std::to_string(d.patch_size)},
                    {"channels", "4,8,60"},
                    {"kernel_size", std::to_string(d.shape.kernel_size)},
                    {"steps", std::to_string(d.steps)},
                    {"batch_size", std::to_string(d.batch_size)},
                    {"sigma_max", num(d.sigma_max)},
                    {"alpha_init", num(d.alpha_init)},
                    {"lr_mu", num(d.lr_mu)},
                    {"lr_conv", num(d.lr_conv)},
                    {"lr_alpha", num(d.lr_alpha)},
                    {"lr_splines", num(d.lr_splines)},
                    {"lr_decay", num(d.lr_decay)},
                    {"decay_every", std::to_string(d.decay_every)},
                    {"forward_tol", num(d.forward_tol)},
                    {"backward_tol", num(d.backward_tol)},
                    {"forward_max_iters", std::to_string(d.forward_max_iters)},
                    {"backward_max_iters", std::to_string(d.backward_max_iters)},
                    {"norm_grid", std::to_string(d.norm_grid)},
                    {"export_norm_size", std::to_string(d.export_norm_size)},
                    {"checkpoint_every", "0"},
                    {"seed", "0"}});
}

RunConfig denoise_keys() {
  return RunConfig({{"checkpoint", ""},
                    {"input", ""},
                    {"sigma", num(25.0 / 255.0)},
                    {"reference", ""},
                    {"out", "runs/denoise"},
                    {"output", "denoised.pfm"},
                    {"tol", "1e-5"},
                    {"max_iters", "5000"}});
}

std::vector<std::pair<std::string, std::string>> problem_defaults() {
  const ProblemSpec p;
  return {{"problem", p.kind},
          {"size", std::to_string(p.size)},
          {"acceleration", num(p.acceleration)},
          {"center_fraction", num(p.center_fraction)},
          {"mask_seed", std::to_string(p.mask_seed)},
          {"num_angles", std::to_string(p.num_angles)},
          {"num_detectors", std::to_string(p.num_detectors)},
          {"matrix", ""},
          {"noise_sigma", num(p.noise_sigma)},
          {"noise_seed", std::to_string(p.noise_seed)},
          {"tol", "1e-6"},
          {"max_iters", "5000"},
          {"safeguard_a", "2"}};
}

RunConfig reconstruct_keys() {
  auto kv = problem_defaults();
  for (auto e : std::vector<std::pair<std::string, std::string>>{{"checkpoint", ""},
                                                                  {"truth", ""},
                                                                  {"measurements", ""},
                                                                  {"lambda", "1"},
                                                                  {"sigma", num(5.0 / 255.0)},
                                                                  {"out", "runs/reconstruct"}})
    kv.push_back(e);
  return RunConfig(kv);
}

RunConfig tune_keys() {
  const TuneGrid g;
  auto kv = problem_defaults();
  for (auto e : std::vector<std::pair<std::string, std::string>>{{"checkpoint", ""},
                                                                  {"validation", ""},
                                                                  {"lambda_lo", num(g.lambda_lo)},
                                                                  {"lambda_hi", num(g.lambda_hi)},
                                                                  {"sigma_lo", num(g.sigma_lo)},
                                                                  {"sigma_hi", ""},
                                                                  {"points", std::to_string(g.points)},
                                                                  {"rounds", std::to_string(g.rounds)},
                                                                  {"out", "runs/tune"}})
    kv.push_back(e);
  return RunConfig(kv);
}

RunConfig eval_keys() { return RunConfig({{"reference", ""}, {"candidate", ""}, {"out", "runs/eval"}}); }

RunConfig inspect_keys() { return RunConfig({{"checkpoint", ""}, {"out", "runs/inspect"}, {"samples", "401"}}); }

const std::string& required(const RunConfig& c, const std::string& key) {
  const std::string& v = c.str(key);
  if (v.empty()) throw UsageError("missing required setting '" + key + "'");
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string run_dir(const RunConfig& c) {
  const std::string dir = c.str("out");
  fs::create_directories(dir);
  c.write(dir + "/config.txt");
  return dir;
}

ProblemSpec problem_spec(const RunConfig& c) {
  ProblemSpec p;
  p.kind = c.str("problem");
  p.size = int(c.integer("size"));
  p.acceleration = c.num("acceleration");
  p.center_fraction = c.num("center_fraction");
  p.mask_seed = unsigned(c.integer("mask_seed"));
  p.num_angles = int(c.integer("num_angles"));
  p.num_detectors = int(c.integer("num_detectors"));
  p.noise_sigma = c.num("noise_sigma");
  p.noise_seed = unsigned(c.integer("noise_seed"));
  return p;
}

Eigen::MatrixXd read_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> r;
    for (const auto& cell : split(line, ',')) r.push_back(std::stod(cell));
    if (!rows.empty() && r.size() != rows[0].size()) throw IoError("ragged CSV '" + path + "'");
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw IoError("empty CSV '" + path + "'");
  Eigen::MatrixXd m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

void write_vector_csv(const std::string& path, const Vector& v) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.precision(17);
  for (Eigen::Index i = 0; i < v.size(); ++i) out << v[i] << "\n";
}

MeasurementOp build_operator(const RunConfig& c, const ProblemSpec& p) {
  if (p.kind == "dense") {
    const Eigen::MatrixXd m = read_csv_matrix(required(c, "matrix"));
    if (m.cols() != Eigen::Index(p.size) * p.size)
      throw UsageError("dense matrix has " + std::to_string(m.cols()) + " columns, expected size^2 = " + std::to_string(p.size * p.size));
    return MeasurementOp::dense(p.size, p.size, m);
  }
  return make_operator(p);
}

Image load_sized(const std::string& path, int size) {
  Image x = read_image(path);
  if (x.rows() != size || x.cols() != size)
    throw UsageError("image '" + path + "' is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) + ", problem size is " +
                     std::to_string(size));
  return x;
}

SolveOptions solve_options(const RunConfig& c) {
  SolveOptions o;
  o.tol = c.num("tol");
  o.max_iters = int(c.integer("max_iters"));
  if (c.knows("safeguard_a")) o.a = c.num("safeguard_a");
  return o;
}

void write_metrics(const std::string& path, double p, double s) {
  std::ofstream out(path);
  out.precision(10);
  out << "psnr,ssim\n" << p << "," << s << "\n";
}

double ssim_or_nan(const Image& a, const Image& b) {
  if (a.rows() < 11 || a.cols() < 11) return std::nan("");
  return ssim(a, b);
}

int cmd_train(const RunConfig& c) {
  TrainConfig t;
  const auto ch = split(c.str("channels"), ',');
  if (ch.size() != 3) throw UsageError("channels must list 3 comma-separated widths");
  for (int l = 0; l < 3; ++l) t.shape.channels[l] = std::stoi(ch[l]);
  t.shape.kernel_size = int(c.integer("kernel_size"));
  t.patch_size = int(c.integer("patch_size"));
  t.steps = int(c.integer("steps"));
  t.batch_size = int(c.integer("batch_size"));
  t.sigma_max = c.num("sigma_max");
  t.hyper.sigma_max = t.sigma_max;
  t.alpha_init = c.num("alpha_init");
  t.lr_mu = c.num("lr_mu");
  t.lr_conv = c.num("lr_conv");
  t.lr_alpha = c.num("lr_alpha");
  t.lr_splines = c.num("lr_splines");
  t.lr_decay = c.num("lr_decay");
  t.decay_every = int(c.integer("decay_every"));
  t.forward_tol = c.num("forward_tol");
  t.backward_tol = c.num("backward_tol");
  t.forward_max_iters = int(c.integer("forward_max_iters"));
  t.backward_max_iters = int(c.integer("backward_max_iters"));
  t.norm_grid = int(c.integer("norm_grid"));
  t.export_norm_size = int(c.integer("export_norm_size"));
  t.seed = unsigned(c.integer("seed"));
  const std::string dir = run_dir(c);
  t.checkpoint_every = int(c.integer("checkpoint_every"));
  t.checkpoint_dir = dir + "/checkpoints";

  const auto data = PatchDataset::from_directory(required(c, "data_dir"), t.patch_size, int(c.integer("stride")));
  std::cout << "patches " << data.size() << "\n";
  const auto res = train(data, t, std::nullopt, [&](const TrainLogEntry& e) {
    if (e.step % 10 == 0 || e.step == 1) std::cout << "step " << e.step << " loss " << e.loss << " skipped " << e.skipped << std::endl;
  });
  save_checkpoint(dir + "/model.wcrr", res.model);
  write_train_log_csv(res.log, dir + "/train_log.csv");
  write_profiles_csv(res.model, dir + "/profiles.csv");
  write_alpha_csv(res.model, dir + "/alpha.csv");
  std::cout << "mu " << res.model.mu() << " s_inf " << res.model.weak_convexity_bound() << "\nwrote " << dir << "/model.wcrr\n";
  return 0;
}

int cmd_denoise(const RunConfig& c) {
  const WcrrModel m = load_checkpoint(required(c, "checkpoint"));
  const Image y = read_image(required(c, "input"));
  double sigma = c.num("sigma");
  const double smax = m.hyper().sigma_max;
  if (!(sigma >= 0.0 && sigma <= smax)) {
    const double clamped = std::clamp(std::isnan(sigma) ? 0.0 : sigma, 0.0, smax);
    std::cerr << "warning: sigma " << sigma << " outside [0, " << smax << "], clamped to " << clamped << "\n";
    sigma = clamped;
  }
  const std::string dir = run_dir(c);
  const SolveResult r = prox_denoise(m, y, sigma, solve_options(c));
  write_image(dir + "/" + c.str("output"), r.x);
  r.report.write_csv(dir + "/solve.csv");
  std::cout << "iterations " << r.report.iterations << " stop " << to_string(r.report.stop_reason) << "\n";
  if (!c.str("reference").empty()) {
    const Image ref = read_image(c.str("reference"));
    const double p = psnr(ref, r.x), s = ssim_or_nan(ref, r.x);
    std::cout << "psnr_input " << psnr(ref, y) << " psnr " << p << " ssim " << s << "\n";
    write_metrics(dir + "/metrics.csv", p, s);
  }
  return 0;
}

int cmd_reconstruct(const RunConfig& c) {
  const WcrrModel m = load_checkpoint(required(c, "checkpoint"));
  const ProblemSpec p = problem_spec(c);
  const MeasurementOp H = build_operator(c, p);
  const std::string dir = run_dir(c);
  std::optional<Image> truth;
  if (!c.str("truth").empty()) truth = load_sized(c.str("truth"), p.size);
  Vector y;
  if (!c.str("measurements").empty()) {
    const Eigen::MatrixXd v = read_csv_matrix(c.str("measurements"));
    if (v.cols() != 1 || v.rows() != H.measurement_size())
      throw UsageError("measurements must be one value per line, " + std::to_string(H.measurement_size()) + " values for this geometry");
    y = v.col(0);
  } else if (truth) {
    y = simulate(H, *truth, p.noise_sigma, p.noise_seed);
    write_vector_csv(dir + "/measurements.csv", y);
  } else {
    throw UsageError("reconstruct needs 'measurements' or a 'truth' image to simulate from");
  }
  const double lambda = c.num("lambda"), sigma = c.num("sigma");
  const SolveResult r = reconstruct(H, y, m, lambda, sigma, solve_options(c));
  write_image(dir + "/reconstruction.pfm", r.x);
  write_pgm(dir + "/reconstruction.pgm", r.x);
  r.report.write_csv(dir + "/solve.csv");
  std::cout << "iterations " << r.report.iterations << " stop " << to_string(r.report.stop_reason) << " relative_gradient "
            << relative_gradient(H, y, m, lambda, sigma, r.x) << "\n";
  if (p.kind == "mri") write_mask_csv(std::get<MaskedFourierOp>(H.variant()).mask, dir + "/mask.csv");
  if (p.kind == "ct") write_pfm(dir + "/sinogram.pfm", sinogram_image(std::get<RadonOp>(H.variant()), y));
  if (truth) {
    const double ps = psnr(*truth, r.x), ss = ssim_or_nan(*truth, r.x);
    std::cout << "psnr " << ps << " ssim " << ss << "\n";
    write_metrics(dir + "/metrics.csv", ps, ss);
  }
  return 0;
}

std::vector<Image> load_validation(const std::string& spec, int size) {
  std::vector<std::string> paths;
  if (fs::is_directory(spec)) {
    for (const auto& e : fs::directory_iterator(spec)) {
      const auto ext = e.path().extension().string();
      if (ext == ".pgm" || ext == ".pfm") paths.push_back(e.path().string());
    }
    std::sort(paths.begin(), paths.end());
  } else {
    paths = split(spec, ',');
  }
  std::vector<Image> out;
  for (const auto& path : paths) out.push_back(load_sized(path, size));
  if (out.empty()) throw UsageError("no validation images in '" + spec + "'");
  return out;
}

int cmd_tune(const RunConfig& c) {
  const WcrrModel m = load_checkpoint(required(c, "checkpoint"));
  const ProblemSpec p = problem_spec(c);
  const MeasurementOp H = build_operator(c, p);
  const auto val = simulate_pairs(H, load_validation(required(c, "validation"), p.size), p);
  TuneGrid g;
  g.lambda_lo = c.num("lambda_lo");
  g.lambda_hi = c.num("lambda_hi");
  g.sigma_lo = c.num("sigma_lo");
  g.sigma_hi = c.str("sigma_hi").empty() ? m.hyper().sigma_max : c.num("sigma_hi");
  g.points = int(c.integer("points"));
  g.rounds = int(c.integer("rounds"));
  const std::string dir = run_dir(c);
  const TuneResult r = tune_reconstruction(H, val, m, g, solve_options(c));
  std::ofstream out(dir + "/tune.csv");
  out.precision(12);
  out << "lambda,sigma,mean_psnr\n";
  for (const auto& e : r.evaluations) out << e.lambda << "," << e.sigma << "," << e.score << "\n";
  std::cout.precision(10);
  std::cout << "lambda " << r.best.lambda << " sigma " << r.best.sigma << " mean_psnr " << r.best.score << "\n";
  return 0;
}

int cmd_eval(const RunConfig& c) {
  const Image a = read_image(required(c, "reference"));
  const Image b = read_image(required(c, "candidate"));
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw UsageError("reference and candidate shapes differ");
  const double p = psnr(a, b), s = ssim_or_nan(a, b);
  const std::string dir = run_dir(c);
  write_metrics(dir + "/metrics.csv", p, s);
  std::cout.precision(10);
  std::cout << "psnr " << p << " ssim " << s << "\n";
  return 0;
}

int cmd_inspect(const RunConfig& c) {
  const WcrrModel m = load_checkpoint(required(c, "checkpoint"));
  const std::string dir = run_dir(c);
  const int samples = int(c.integer("samples"));
  write_profiles_csv(m, dir + "/profiles.csv", samples);
  write_alpha_csv(m, dir + "/alpha.csv");
  m.phi().write_csv(dir + "/phi_knots.csv");

  const auto E = equivalent_kernels(m.conv().kernels());
  const int n = int(std::lround(std::sqrt(double(E[0].size()))));
  const double inv = 1.0 / m.conv().norm();
  {
    std::ofstream out(dir + "/filters.csv");
    out.precision(12);
    out << "channel,row,col,value\n";
    for (std::size_t i = 0; i < E.size(); ++i)
      for (int r = 0; r < n; ++r)
        for (int q = 0; q < n; ++q) out << i << "," << r << "," << q << "," << inv * E[i][std::size_t(r) * n + q] << "\n";
  }
  // Filters side by side, each rescaled to [0, 1].
  Image tiles = Image::Zero(n, (n + 1) * Eigen::Index(E.size()) - 1);
  for (std::size_t i = 0; i < E.size(); ++i) {
    const auto [lo, hi] = std::minmax_element(E[i].begin(), E[i].end());
    const double span = *hi - *lo;
    for (int r = 0; r < n; ++r)
      for (int q = 0; q < n; ++q) tiles(r, Eigen::Index(i) * (n + 1) + q) = span > 0 ? (E[i][std::size_t(r) * n + q] - *lo) / span : 0.5;
  }
  write_pgm(dir + "/filters.pgm", tiles);

  const Image G = gram_kernel(E) * (inv * inv);
  write_matrix_csv(dir + "/gram_kernel.csv", G);
  const double centre = G(n - 1, n - 1);
  const double off = std::sqrt(std::max(0.0, G.squaredNorm() - centre * centre));
  const double wnorm = spectral_norm_power(m.conv().kernels(), m.conv().norm_height() > 0 ? m.conv().norm_height() : 64,
                                           m.conv().norm_width() > 0 ? m.conv().norm_width() : 64, 100) * inv;

  std::ofstream rep(dir + "/report.txt");
  for (std::ostream* os : {static_cast<std::ostream*>(&std::cout), static_cast<std::ostream*>(&rep)}) {
    os->precision(10);
    *os << "channels " << m.num_channels() << "\n"
        << "kernel_size " << m.params().conv.kernel_size() << "\n"
        << "mu " << m.mu() << "\n"
        << "s_inf " << m.weak_convexity_bound() << "\n"
        << "stored_norm " << m.conv().norm() << "\n"
        << "W_norm_power100 " << wnorm << "\n"
        << "parseval_centre " << centre << "\n"
        << "parseval_offcentre_rel " << (centre != 0.0 ? off / std::abs(centre) : std::nan("")) << "\n";
  }
  return 0;
}

struct Sub {
  CLI::App* app;
  RunConfig cfg;
  std::string config_file;
  std::map<std::string, std::string> flags;
  int (*run)(const RunConfig&);
};

void attach(Sub& s) {
  s.app->add_option("--config", s.config_file, "key = value config file");
  for (const auto& k : s.cfg.keys()) s.app->add_option("--" + k, s.flags[k], "default: " + (s.cfg.str(k).empty() ? "(none)" : s.cfg.str(k)));
}

std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly convex ridge regularizer toolkit"};
  app.require_subcommand(1);
  std::vector<Sub> subs;
  subs.reserve(6);
  subs.push_back({app.add_subcommand("train", "train a model on a directory of images"), train_keys(), {}, {}, cmd_train});
  subs.push_back({app.add_subcommand("denoise", "proximal denoising of one image"), denoise_keys(), {}, {}, cmd_denoise});
  subs.push_back({app.add_subcommand("reconstruct", "solve an mri, ct or dense inverse problem"), reconstruct_keys(), {}, {}, cmd_reconstruct});
  subs.push_back({app.add_subcommand("tune", "coarse-to-fine (lambda, sigma) search on validation images"), tune_keys(), {}, {}, cmd_tune});
  subs.push_back({app.add_subcommand("eval", "PSNR and SSIM of a candidate image"), eval_keys(), {}, {}, cmd_eval});
  subs.push_back({app.add_subcommand("inspect", "dump filters, profiles and norm diagnostics"), inspect_keys(), {}, {}, cmd_inspect});
  for (auto& s : subs) attach(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  }

  for (auto& s : subs) {
    if (!s.app->parsed()) continue;
    try {
      if (!s.config_file.empty()) s.cfg.load_file(s.config_file);
      for (const auto& [k, v] : s.flags)
        if (s.app->get_option("--" + k)->count() > 0) s.cfg.set(k, v);
      return s.run(s.cfg);
    } catch (const UsageError& e) {
      std::cerr << "error: " << s.app->get_name() << ": usage: " << one_line(e.what()) << "\n";
      return 2;
    } catch (const ConfigError& e) {
      std::cerr << "error: " << s.app->get_name() << ": config: " << one_line(e.what()) << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << s.app->get_name() << ": " << one_line(e.what()) << "\n";
      return 1;
    }
  }
  return 1;
}
