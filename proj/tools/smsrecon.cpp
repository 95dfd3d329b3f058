// smsrecon: pipeline front end — simulate, calibrate, recon-sgsp,
// train-score, recon-diffusion, metrics, plot.  Run files are flat JSON;
// unknown keys are rejected and every run echoes its resolved config.
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sms/calibration.hpp"
#include "sms/diffusion.hpp"
#include "sms/io.hpp"
#include "sms/metrics.hpp"
#include "sms/operators.hpp"
#include "sms/phantom.hpp"
#include "sms/png.hpp"
#include "sms/score_model.hpp"
#include "sms/sgsp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sms;

namespace {

// Exit codes, one per error category.
constexpr int kExitConfig = 2;    // bad run file / flags / missing seed
constexpr int kExitMissing = 3;   // referenced input file does not exist
constexpr int kExitFormat = 4;    // file exists but does not parse
constexpr int kExitGeometry = 5;  // dimension/domain mismatch
constexpr int kExitSolver = 6;    // numerical failure (solver, divergence)

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_existing(const std::string& path) {
  if (!fs::exists(path)) throw MissingFileError("no such file: " + path);
  return read_file_bytes(path);
}

Tensor4 load_tensor(const std::string& path) {
  return decode_tensor(read_existing(path));
}

json parse_json(const std::string& path) {
  try {
    return json::parse(read_existing(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

/// Flat run config: defaults overlaid by the run file, then by --set pairs.
json resolve_config(const json& defaults, const std::string& config_path,
                    const std::vector<std::string>& sets) {
  json cfg = defaults;
  if (!config_path.empty()) {
    const json file = parse_json(config_path);
    if (!file.is_object())
      throw ConfigError("run file must be a JSON object: " + config_path);
    for (const auto& [key, value] : file.items()) {
      if (!defaults.contains(key))
        throw ConfigError("unknown config key '" + key + "' in " + config_path);
      cfg[key] = value;
    }
  }
  for (const std::string& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    if (!defaults.contains(key))
      throw ConfigError("unknown config key '" + key + "'");
    json value = json::parse(raw, nullptr, false);
    cfg[key] = value.is_discarded() ? json(raw) : value;
  }
  return cfg;
}

std::string config_hash(const json& cfg) {
  // FNV-1a over the canonical (key-sorted) dump
  const std::string s = cfg.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::string out_path(const json& cfg, const std::string& name) {
  return (fs::path(cfg.at("out_dir").get<std::string>()) / name).string();
}

/// Writes the resolved config (re-usable as a run file) and echoes it.
void echo_config(const json& cfg, const std::string& cmd) {
  fs::create_directories(cfg.at("out_dir").get<std::string>());
  write_file_bytes(out_path(cfg, cmd + "_config.json"), cfg.dump(2) + "\n");
  std::cout << "[" << cmd << "] resolved config (hash " << config_hash(cfg)
            << ")\n"
            << cfg.dump(2) << "\n";
}

std::uint64_t require_seed(const json& cfg) {
  if (cfg.at("seed").is_null())
    throw ConfigError("'seed' is required (stochastic command)");
  return cfg.at("seed").get<std::uint64_t>();
}

CompositeH load_h(const json& cfg, const SamplingPlan& plan) {
  const std::string spirit_base = cfg.at("spirit").get<std::string>();
  const std::string sgrappa_base = cfg.at("sgrappa").get<std::string>();
  if (!fs::exists(spirit_base + ".json"))
    throw MissingFileError("no such file: " + spirit_base + ".json");
  if (!fs::exists(sgrappa_base + ".json"))
    throw MissingFileError("no such file: " + sgrappa_base + ".json");
  const SpiritKernelSet g = load_spirit(spirit_base);
  const SliceGrappaKernelSet k = load_slice_grappa(sgrappa_base);
  const Dims4 dims{static_cast<std::int64_t>(g.slices.size()),
                   g.slices.at(0).n_coil_out, plan.n_ky, plan.n_kx};
  return CompositeH(g, k, plan.caipi_increment, dims);
}

// ---- subcommands --------------------------------------------------------

int cmd_simulate(const json& cfg) {
  echo_config(cfg, "simulate");
  const std::uint64_t seed = require_seed(cfg);

  PhantomSpec spec;
  spec.n_slice = cfg.at("n_slice").get<std::int64_t>();
  spec.n_coil = cfg.at("n_coil").get<std::int64_t>();
  spec.n_ky = cfg.at("n_ky").get<std::int64_t>();
  spec.n_kx = cfg.at("n_kx").get<std::int64_t>();
  spec.seed = seed;
  const std::string family = cfg.at("shape_family").get<std::string>();
  if (family == "ellipses")
    spec.shape_family = ShapeFamily::ellipses;
  else if (family == "blobs")
    spec.shape_family = ShapeFamily::blobs;
  else
    throw ConfigError("shape_family must be 'ellipses' or 'blobs', got '" +
                      family + "'");

  const Phantom ph = make_phantom(spec);
  const Tensor4 coils = make_coils(spec.n_coil, spec.n_ky, spec.n_kx,
                                   mix_seed(seed, 0xc011));
  const Tensor4 truth = apply_coils(ph.slices, coils);
  const Tensor4 kspace = fft2c(truth);
  const SamplingPlan plan = make_mask(
      cfg.at("accel").get<std::int64_t>(),
      cfg.at("acs_lines").get<std::int64_t>(), spec.n_ky, spec.n_kx,
      cfg.at("caipi_increment").get<double>());

  Tensor4 y = apply_D(kspace, plan);
  const double noise = cfg.at("noise_sigma").get<double>();
  if (noise > 0) {
    Rng rng(mix_seed(seed, 0x9015e));
    for (std::int64_t c = 0; c < spec.n_coil; ++c)
      for (std::int64_t m = 0; m < spec.n_ky; ++m) {
        if (!plan.sampled(m)) continue;
        for (std::int64_t x = 0; x < spec.n_kx; ++x)
          y.at(0, c, m, x) += noise * rng.cnormal();
      }
  }

  write_tensor(ph.slices, out_path(cfg, "phantom.ct4f"));
  write_tensor(coils, out_path(cfg, "coils.ct4f"));
  write_tensor(truth, out_path(cfg, "truth.ct4f"));
  write_tensor(kspace, out_path(cfg, "kspace.ct4f"));
  write_tensor(y, out_path(cfg, "y.ct4f"));
  write_file_bytes(out_path(cfg, "plan.json"), plan_to_json(plan).dump(2) + "\n");
  return 0;
}

int cmd_calibrate(const json& cfg) {
  echo_config(cfg, "calibrate");
  const Tensor4 kspace = load_tensor(cfg.at("kspace").get<std::string>());
  const SamplingPlan plan =
      plan_from_json(parse_json(cfg.at("plan").get<std::string>()));
  if (kspace.dims().n_ky != plan.n_ky || kspace.dims().n_kx != plan.n_kx)
    throw std::invalid_argument("calibrate: kspace grid does not match plan");

  const AcsRegion region = AcsRegion::from_plan(plan);
  const std::int64_t kh = cfg.at("kh").get<std::int64_t>();
  const std::int64_t kw = cfg.at("kw").get<std::int64_t>();
  const double lambda_t = cfg.at("lambda_t").get<double>();

  const SpiritKernelSet g = fit_spirit(kspace, region, kh, kw, lambda_t);
  // calibration-time collapsed data: phase-modulated slice sum, all lines
  const SamplingPlan full =
      make_mask(1, 0, plan.n_ky, plan.n_kx, plan.caipi_increment);
  const Tensor4 modulated = caipi_modulate(kspace, plan.caipi_increment);
  const Tensor4 collapsed = sms_collapse(modulated, full);
  // targets are the phase-modulated slices: a k-space convolution can
  // separate those, but cannot synthesize the CAIPIRINHA modulation
  const SliceGrappaKernelSet k =
      fit_slice_grappa(modulated, collapsed, region, kh, kw, lambda_t);

  save_spirit(g, out_path(cfg, cfg.at("spirit_out").get<std::string>()));
  save_slice_grappa(k, out_path(cfg, cfg.at("sgrappa_out").get<std::string>()));
  const json log{{"spirit_residuals", g.fit_residual},
                 {"sgrappa_residuals", k.fit_residual},
                 {"lambda_t", lambda_t},
                 {"config_hash", config_hash(cfg)}};
  write_file_bytes(out_path(cfg, "calibrate_log.json"), log.dump(2) + "\n");
  return 0;
}

int cmd_recon_sgsp(const json& cfg) {
  echo_config(cfg, "recon-sgsp");
  const Tensor4 y = load_tensor(cfg.at("y").get<std::string>());
  const SamplingPlan plan =
      plan_from_json(parse_json(cfg.at("plan").get<std::string>()));
  const CompositeH H = load_h(cfg, plan);
  if (y.dims().n_coil != H.dims().n_coil || y.dims().n_ky != plan.n_ky ||
      y.dims().n_kx != plan.n_kx || y.dims().n_slice != 1)
    throw std::invalid_argument("recon-sgsp: y geometry does not match plan/kernels");

  SgspConfig sc;
  sc.lambda = cfg.at("lambda").get<double>();
  sc.max_iters = cfg.at("max_iters").get<int>();
  sc.tol = cfg.at("tol").get<double>();
  sc.step = cfg.at("step").get<double>();
  const std::string solver = cfg.at("solver").get<std::string>();
  if (solver == "cg")
    sc.solver = SgspSolver::cg;
  else if (solver == "gradient")
    sc.solver = SgspSolver::gradient;
  else
    throw ConfigError("solver must be 'cg' or 'gradient', got '" + solver + "'");

  SgspLog log;
  const Tensor4 x = sgsp_reconstruct(y, plan, H, sc, &log);
  write_tensor(x, out_path(cfg, cfg.at("recon_out").get<std::string>()));

  json j{{"objective", log.objective},
         {"iters", log.iters},
         {"converged", log.converged},
         {"config_hash", config_hash(cfg)}};
  const std::string truth_path = cfg.at("truth").get<std::string>();
  if (!truth_path.empty()) {
    const Tensor4 truth = load_tensor(truth_path);
    j["nmse"] = nmse(x, truth);
    const auto p = psnr(x, truth);
    j["psnr"] = p ? json(*p) : json(nullptr);
  }
  write_file_bytes(out_path(cfg, cfg.at("log_out").get<std::string>()),
                   j.dump(2) + "\n");
  return 0;
}

int cmd_train_score(const json& cfg) {
  echo_config(cfg, "train-score");
  const std::uint64_t seed = require_seed(cfg);

  std::vector<std::string> truth_paths;
  if (cfg.at("truth").is_array())
    truth_paths = cfg.at("truth").get<std::vector<std::string>>();
  else
    truth_paths.push_back(cfg.at("truth").get<std::string>());
  if (truth_paths.empty()) throw ConfigError("'truth' must name at least one file");
  std::vector<Tensor4> dataset;
  for (const auto& p : truth_paths) dataset.push_back(load_tensor(p));
  for (const Tensor4& t : dataset)
    if (!(t.dims() == dataset.front().dims()))
      throw std::invalid_argument("train-score: dataset dims differ");

  const SamplingPlan plan =
      plan_from_json(parse_json(cfg.at("plan").get<std::string>()));
  const CompositeH H = load_h(cfg, plan);
  if (!(H.dims() == dataset.front().dims()))
    throw std::invalid_argument("train-score: kernel grid does not match data");

  ScoreNetConfig arch;
  arch.n_slice = dataset.front().dims().n_slice;
  arch.n_coil = dataset.front().dims().n_coil;
  arch.width = cfg.at("width").get<int>();
  arch.emb_dim = cfg.at("emb_dim").get<int>();
  arch.n_hidden = cfg.at("n_hidden").get<int>();
  ScoreNet net(arch, seed);

  NoiseSchedule sched;
  sched.sigma_min = cfg.at("sigma_min").get<double>();
  sched.sigma_max = cfg.at("sigma_max").get<double>();
  sched.kappa = cfg.at("kappa").get<double>();
  sched.n_steps = cfg.at("n_steps").get<int>();
  sched.eps = cfg.at("eps").get<double>();
  ProjectionConfig proj;
  proj.mu = cfg.at("mu").get<double>();
  proj.max_iters = cfg.at("proj_iters").get<int>();
  proj.tol = cfg.at("proj_tol").get<double>();

  TrainConfig tc;
  tc.steps = cfg.at("steps").get<int>();
  tc.batch = cfg.at("batch").get<int>();
  tc.lr = cfg.at("lr").get<double>();
  tc.seed = seed;
  tc.checkpoint_every = cfg.at("checkpoint_every").get<int>();
  tc.checkpoint_base = out_path(cfg, cfg.at("model_out").get<std::string>());

  const TrainResult result = train(net, dataset, sched, H, proj, tc);
  save_scorenet(net, tc.checkpoint_base, sched, seed, tc.steps);
  const json j{{"loss", result.loss_curve},
               {"config_hash", config_hash(cfg)}};
  write_file_bytes(out_path(cfg, cfg.at("loss_out").get<std::string>()),
                   j.dump(2) + "\n");
  return 0;
}

int cmd_recon_diffusion(const json& cfg) {
  echo_config(cfg, "recon-diffusion");
  const std::uint64_t seed = require_seed(cfg);
  const Tensor4 y = load_tensor(cfg.at("y").get<std::string>());
  const SamplingPlan plan =
      plan_from_json(parse_json(cfg.at("plan").get<std::string>()));
  const CompositeH H = load_h(cfg, plan);

  const std::string model_base = cfg.at("model").get<std::string>();
  if (!fs::exists(model_base + ".json"))
    throw MissingFileError("no such file: " + model_base + ".json");
  NoiseSchedule sched;
  const ScoreNet net = load_scorenet(model_base, &sched);
  if (net.config().n_slice != H.dims().n_slice ||
      net.config().n_coil != H.dims().n_coil)
    throw std::invalid_argument(
        "recon-diffusion: score model slice/coil count does not match kernels");

  // schedule knobs default to the checkpoint values; non-null overrides win
  if (!cfg.at("n_steps").is_null()) sched.n_steps = cfg.at("n_steps").get<int>();
  if (!cfg.at("sigma_min").is_null())
    sched.sigma_min = cfg.at("sigma_min").get<double>();
  if (!cfg.at("sigma_max").is_null())
    sched.sigma_max = cfg.at("sigma_max").get<double>();
  if (!cfg.at("kappa").is_null()) sched.kappa = cfg.at("kappa").get<double>();

  SamplerConfig sc;
  sc.sched = sched;
  sc.proj.mu = cfg.at("mu").get<double>();
  sc.proj.max_iters = cfg.at("proj_iters").get<int>();
  sc.proj.tol = cfg.at("proj_tol").get<double>();
  sc.lambda_dc = cfg.at("lambda_dc").get<double>();
  sc.hard_dc = cfg.at("hard_dc").get<bool>();
  sc.corrector_steps = cfg.at("corrector_steps").get<int>();
  sc.corrector_snr = cfg.at("corrector_snr").get<double>();
  sc.seed = seed;
  const std::string init_path = cfg.at("init").get<std::string>();
  if (!init_path.empty()) {
    Tensor4 init = load_tensor(init_path);
    if (init.domain() != Domain::image || !(init.dims() == H.dims()))
      throw std::invalid_argument(
          "recon-diffusion: init must be an image-domain tensor on the "
          "kernel grid");
    sc.init_base = std::move(init);
  }

  SampleLog log;
  const Tensor4 x = reverse_sample(
      y, plan, H,
      [&net](const Tensor4& xi, double t) { return net.forward(xi, t); }, sc,
      &log);
  write_tensor(x, out_path(cfg, cfg.at("recon_out").get<std::string>()));

  json j{{"t", log.t},
         {"consistency", log.consistency},
         {"config_hash", config_hash(cfg)}};
  const std::string truth_path = cfg.at("truth").get<std::string>();
  if (!truth_path.empty()) {
    const Tensor4 truth = load_tensor(truth_path);
    j["nmse"] = nmse(x, truth);
    const auto p = psnr(x, truth);
    j["psnr"] = p ? json(*p) : json(nullptr);
  }
  write_file_bytes(out_path(cfg, cfg.at("log_out").get<std::string>()),
                   j.dump(2) + "\n");
  return 0;
}

int cmd_metrics(const json& cfg) {
  const Tensor4 recon = load_tensor(cfg.at("recon").get<std::string>());
  const Tensor4 truth = load_tensor(cfg.at("truth").get<std::string>());
  const auto p = psnr(recon, truth);
  const json j{{"nmse", nmse(recon, truth)},
               {"psnr", p ? json(*p) : json(nullptr)},
               {"config_hash", config_hash(cfg)}};
  std::cout << j.dump(2) << "\n";
  const std::string out = cfg.at("out").get<std::string>();
  if (!out.empty()) {
    fs::create_directories(cfg.at("out_dir").get<std::string>());
    write_file_bytes(out_path(cfg, out), j.dump(2) + "\n");
  }
  return 0;
}

int cmd_plot(const json& cfg) {
  const Tensor4 t = load_tensor(cfg.at("in").get<std::string>());
  fs::create_directories(cfg.at("out_dir").get<std::string>());
  write_magnitude_pngs(t, out_path(cfg, cfg.at("out_base").get<std::string>()));
  return 0;
}

struct Command {
  std::string name;
  json defaults;
  int (*run)(const json&);
};

const double kTwoPiOver3 = 2.0 * std::numbers::pi / 3.0;

const std::vector<Command> kCommands = {
    {"simulate",
     {{"n_slice", 3},
      {"n_coil", 8},
      {"n_ky", 64},
      {"n_kx", 64},
      {"accel", 3},
      {"acs_lines", 32},
      {"caipi_increment", kTwoPiOver3},
      {"shape_family", "ellipses"},
      {"noise_sigma", 0.0},
      {"seed", nullptr},
      {"out_dir", "."}},
     cmd_simulate},
    {"calibrate",
     {{"kspace", "kspace.ct4f"},
      {"plan", "plan.json"},
      {"kh", 5},
      {"kw", 5},
      {"lambda_t", kAutoLambda},
      {"spirit_out", "spirit"},
      {"sgrappa_out", "sgrappa"},
      {"out_dir", "."}},
     cmd_calibrate},
    {"recon-sgsp",
     {{"y", "y.ct4f"},
      {"plan", "plan.json"},
      {"spirit", "spirit"},
      {"sgrappa", "sgrappa"},
      {"truth", ""},
      {"lambda", 1.0},
      {"max_iters", 50},
      {"tol", 1e-10},
      {"step", SgspConfig::kAutoStep},
      {"solver", "cg"},
      {"recon_out", "recon_sgsp.ct4f"},
      {"log_out", "recon_sgsp_log.json"},
      {"out_dir", "."}},
     cmd_recon_sgsp},
    {"train-score",
     {{"truth", "truth.ct4f"},
      {"plan", "plan.json"},
      {"spirit", "spirit"},
      {"sgrappa", "sgrappa"},
      {"width", 32},
      {"emb_dim", 16},
      {"n_hidden", 3},
      {"sigma_min", 0.01},
      {"sigma_max", 10.0},
      {"kappa", 1.0},
      {"n_steps", 500},
      {"eps", 1e-3},
      {"mu", 1e-2},
      {"proj_iters", 10},
      {"proj_tol", 1e-6},
      {"steps", 200},
      {"batch", 4},
      {"lr", 1e-3},
      {"checkpoint_every", 0},
      {"model_out", "score"},
      {"loss_out", "train_loss.json"},
      {"seed", nullptr},
      {"out_dir", "."}},
     cmd_train_score},
    {"recon-diffusion",
     {{"y", "y.ct4f"},
      {"plan", "plan.json"},
      {"spirit", "spirit"},
      {"sgrappa", "sgrappa"},
      {"model", "score"},
      {"truth", ""},
      {"init", ""},
      {"n_steps", nullptr},
      {"sigma_min", nullptr},
      {"sigma_max", nullptr},
      {"kappa", nullptr},
      {"lambda_dc", 1.0},
      {"hard_dc", true},
      {"corrector_steps", 0},
      {"corrector_snr", 0.16},
      {"mu", 1e-2},
      {"proj_iters", 10},
      {"proj_tol", 1e-6},
      {"recon_out", "recon_diffusion.ct4f"},
      {"log_out", "recon_diffusion_log.json"},
      {"seed", nullptr},
      {"out_dir", "."}},
     cmd_recon_diffusion},
    {"metrics",
     {{"recon", ""}, {"truth", ""}, {"out", ""}, {"out_dir", "."}},
     cmd_metrics},
    {"plot", {{"in", ""}, {"out_base", "plot"}, {"out_dir", "."}}, cmd_plot},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SMS slice-diffusion reconstruction pipeline"};
  app.require_subcommand(1);

  struct Parsed {
    const Command* cmd = nullptr;
    std::string config_path;
    std::vector<std::string> sets;
    std::string seed;
    std::string out_dir;
  } parsed;

  for (const Command& c : kCommands) {
    CLI::App* sub = app.add_subcommand(c.name);
    sub->add_option("--config", parsed.config_path, "JSON run file");
    sub->add_option("--set", parsed.sets, "override: key=value (repeatable)");
    sub->add_option("--seed", parsed.seed, "seed override");
    sub->add_option("--out-dir", parsed.out_dir, "output directory override");
    sub->callback([&parsed, &c] { parsed.cmd = &c; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    json cfg = resolve_config(parsed.cmd->defaults, parsed.config_path,
                              parsed.sets);
    if (!parsed.seed.empty()) {
      if (!parsed.cmd->defaults.contains("seed"))
        throw ConfigError("--seed is not accepted by '" + parsed.cmd->name +
                          "'");
      cfg["seed"] = std::stoull(parsed.seed);
    }
    if (!parsed.out_dir.empty()) cfg["out_dir"] = parsed.out_dir;
    return parsed.cmd->run(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const MissingFileError& e) {
    std::cerr << "missing file: " << e.what() << "\n";
    return kExitMissing;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const json::exception& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const std::invalid_argument& e) {
    std::cerr << "geometry/argument error: " << e.what() << "\n";
    return kExitGeometry;
  } catch (const CalibrationError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return kExitSolver;
  } catch (const SolverError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return kExitSolver;
  } catch (const StepSizeError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return kExitSolver;
  } catch (const DivergenceError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return kExitSolver;
  } catch (const TrainingError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return kExitSolver;
  } catch (const OperatorDefectError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return kExitSolver;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
