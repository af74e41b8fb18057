#include <chrono>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <fftw3.h>
#include <spdlog/spdlog.h>

#include "saii/baselines.hpp"
#include "saii/config.hpp"
#include "saii/error.hpp"
#include "saii/evalkit.hpp"
#include "saii/experiments.hpp"
#include "saii/io.hpp"
#include "saii/sampler.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using saii::config::ExperimentConfig;

namespace {

struct GlobalOptions {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> overrides;
};

struct Provenance {
  std::string command;
  json checkpoints = json::object();
  json outputs = json::array();

  void checkpoint(const std::string& role, const fs::path& p) {
    checkpoints[role] = {{"path", p.string()}, {"sha256", saii::io::sha256_file(p)}};
  }
  void output(const fs::path& p) { outputs.push_back(p.string()); }
};

json versions() {
  return {{"saii", SAII_VERSION},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"fftw", std::string(fftw_version)},
          {"spdlog", std::to_string(SPDLOG_VER_MAJOR) + "." + std::to_string(SPDLOG_VER_MINOR) + "." +
                         std::to_string(SPDLOG_VER_PATCH)},
          {"compiler", __VERSION__},
          {"cxx", static_cast<long>(__cplusplus)}};
}

ExperimentConfig resolve(const GlobalOptions& g) {
  std::optional<fs::path> file;
  if (g.config) file = *g.config;
  auto cfg = saii::config::resolve(file, g.overrides, g.seed, g.out);
  spdlog::set_level(spdlog::level::from_str(cfg.log_level));
  return cfg;
}

fs::path out_dir(const ExperimentConfig& cfg) {
  fs::path p = cfg.paths.out;
  fs::create_directories(p);
  return p;
}

std::string require_path(const std::string& value, const char* key) {
  if (value.empty()) throw saii::ValidationError(std::string("paths.") + key + " must be set for this command");
  return value;
}

saii::Array2D read_grid(const ExperimentConfig& cfg, const std::string& path) {
  return saii::io::read_f32(path, static_cast<std::size_t>(cfg.test.depth), static_cast<std::size_t>(cfg.test.traces));
}

saii::ImpedanceGrid read_impedance(const ExperimentConfig& cfg, const std::string& path, const char* tag) {
  saii::ImpedanceGrid g{read_grid(cfg, path), cfg.dataset.training.dt, tag};
  g.validate();
  return g;
}

saii::seis::Wavelet test_wavelet(const ExperimentConfig& cfg) {
  return saii::seis::ricker(cfg.test.wavelet_freq_hz, cfg.dataset.training.dt, 0, cfg.test.phase_deg);
}

void write_estimate(const fs::path& path, const saii::ImpedanceGrid& x, const json& meta, Provenance& prov) {
  saii::io::write_f32(path, x.values);
  json side = meta;
  side["rows"] = x.values.rows();
  side["cols"] = x.values.cols();
  side["origin"] = x.origin_tag;
  saii::io::write_json(path.string() + ".json", side);
  prov.output(path);
}

// -- commands ---------------------------------------------------------------

void cmd_dataset_build(const ExperimentConfig& cfg, Provenance& prov) {
  const fs::path out = out_dir(cfg);
  const fs::path dir = cfg.paths.dataset.empty() ? out / "dataset" : fs::path(cfg.paths.dataset);
  if (fs::exists(dir / "manifest.json")) throw saii::ValidationError("dataset already exists at " + dir.string());
  const auto manifest = saii::exp::build_dataset(cfg, dir);
  prov.output(dir / "manifest.json");

  // One held-out test case to drive `invert`, `baseline` and `eval`.
  saii::exp::Condition cond;
  const auto tc = saii::exp::make_test_case(cfg, cond, 0, saii::io::mix_seed(cfg.seed, 0));
  const fs::path test = out / "test";
  fs::create_directories(test);
  saii::io::write_f32(test / "truth.f32", tc.truth.values);
  saii::io::write_f32(test / "lowfreq.f32", tc.lowfreq.values);
  saii::io::write_f32(test / "seismic.f32", tc.observed);
  saii::io::write_json(test / "test.json", {{"rows", tc.truth.values.rows()},
                                            {"cols", tc.truth.values.cols()},
                                            {"wavelet", tc.wavelet.to_json()},
                                            {"snr_db", cfg.test.snr_db},
                                            {"cutoff_hz", cfg.test.cutoff_hz}});
  for (const char* f : {"truth.f32", "lowfreq.f32", "seismic.f32"}) prov.output(test / f);
  spdlog::info("dataset: {} entries in {}", manifest.entries.size(), dir.string());
}

void cmd_train_codec(const ExperimentConfig& cfg, Provenance& prov) {
  const auto stack = saii::exp::ensure_stack(cfg, false);
  const fs::path dst = out_dir(cfg) / "codec.ckpt";
  if (fs::absolute(stack.codec_path) != fs::absolute(dst)) fs::copy_file(stack.codec_path, dst, fs::copy_options::overwrite_existing);
  prov.checkpoint("codec", dst);
}

void cmd_train_diffusion(const ExperimentConfig& cfg, Provenance& prov) {
  const auto stack = saii::exp::ensure_stack(cfg, true);
  const fs::path dst = out_dir(cfg) / "diffusion.ckpt";
  if (fs::absolute(stack.diffusion_path) != fs::absolute(dst))
    fs::copy_file(stack.diffusion_path, dst, fs::copy_options::overwrite_existing);
  prov.checkpoint("codec", stack.codec_path);
  prov.checkpoint("diffusion", dst);
}

void cmd_invert(const ExperimentConfig& cfg, Provenance& prov) {
  const auto d = read_grid(cfg, require_path(cfg.paths.seismic, "seismic"));
  const auto l = read_impedance(cfg, require_path(cfg.paths.lowfreq, "lowfreq"), "lowfreq");
  const auto stack = saii::exp::ensure_stack(cfg, true);
  prov.checkpoint("codec", stack.codec_path);
  prov.checkpoint("diffusion", stack.diffusion_path);
  const auto result = saii::sampling::invert(d, l, test_wavelet(cfg), *stack.model, *stack.codec, cfg.sampler);
  const fs::path dst = out_dir(cfg) / "impedance.f32";
  result.save(dst);
  prov.output(dst);
}

void cmd_baseline(const std::string& method, const ExperimentConfig& cfg, Provenance& prov) {
  const auto d = read_grid(cfg, require_path(cfg.paths.seismic, "seismic"));
  const auto l = read_impedance(cfg, require_path(cfg.paths.lowfreq, "lowfreq"), "lowfreq");
  const auto w = test_wavelet(cfg);
  const fs::path out = out_dir(cfg);
  json meta{{"format", saii::base::kBaselineFormat}, {"method", method}, {"wavelet", w.to_json()}};
  if (method == "tv") {
    const auto r = saii::base::tv_invert(d, l, w, cfg.tv);
    json log = json::array();
    for (const auto& e : r.log)
      log.push_back({{"iteration", e.iteration}, {"objective", e.objective}, {"data", e.data_term},
                     {"prior", e.prior_term}, {"tv", e.tv_term}, {"gap", e.gap}});
    meta["log"] = log;
    write_estimate(out / "tv.f32", r.impedance, meta, prov);
  } else if (method == "sdl") {
    const auto stack = saii::exp::ensure_stack(cfg, false);
    const auto model = saii::exp::ensure_sdl(cfg, stack);
    write_estimate(out / "sdl.f32", saii::base::sdl_infer(d, l, model), meta, prov);
  } else {
    const auto stack = saii::exp::ensure_stack(cfg, false);
    const auto r = saii::base::usdl_train({d}, {l}, w, stack.manifest.normalization, cfg.usdl);
    json terms = json::array();
    for (const auto& t : r.epoch_terms) terms.push_back({{"data", t.data}, {"prior", t.prior}, {"tv", t.tv}});
    meta["epoch_terms"] = terms;
    write_estimate(out / "usdl.f32", r.predictions.front(), meta, prov);
  }
}

void cmd_eval(const ExperimentConfig& cfg, Provenance& prov) {
  const auto truth = read_grid(cfg, require_path(cfg.paths.truth, "truth"));
  const auto est = read_grid(cfg, require_path(cfg.paths.estimate, "estimate"));
  std::optional<saii::Array2D> d;
  std::optional<saii::seis::Wavelet> w;
  if (!cfg.paths.seismic.empty()) {
    d = read_grid(cfg, cfg.paths.seismic);
    w = test_wavelet(cfg);
  }
  const auto report = saii::eval::evaluate(est, truth, cfg.test.well_traces, d ? &*d : nullptr, w ? &*w : nullptr);
  json j = report.to_json();
  j["format"] = saii::eval::kReportFormat;
  const fs::path dst = out_dir(cfg) / "report.json";
  saii::io::write_json(dst, j);
  prov.output(dst);
  std::cout << j.dump(2) << "\n";
}

void cmd_figures(const ExperimentConfig& cfg, Provenance& prov) {
  saii::eval::FigureSet set;
  set.truth = read_grid(cfg, require_path(cfg.paths.truth, "truth"));
  set.estimates.emplace_back(fs::path(require_path(cfg.paths.estimate, "estimate")).stem().string(),
                             read_grid(cfg, cfg.paths.estimate));
  if (!cfg.paths.lowfreq.empty()) set.estimates.emplace_back("lowfreq", read_grid(cfg, cfg.paths.lowfreq));
  set.well_traces = cfg.test.well_traces;
  const fs::path dst = out_dir(cfg) / "figures";
  saii::eval::emit_figures(set, dst);
  prov.output(dst / "figures.json");
}

void cmd_experiment(const std::string& name, const ExperimentConfig& cfg, Provenance& prov) {
  const auto results = saii::exp::run_experiment(name, cfg);
  const fs::path out = out_dir(cfg);
  prov.output(out / "results.json");
  prov.output(out / "report.json");
  if (results.contains("checks")) std::cout << results["checks"].dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Seismic impedance inversion with a conditional latent diffusion model"};
  app.require_subcommand(1);
  GlobalOptions g;
  auto add_common = [&g](CLI::App* sub) {
    sub->add_option("--config", g.config, "JSON or YAML configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", g.seed, "Global seed");
    sub->add_option("--out", g.out, "Output directory");
    sub->add_option("--override", g.overrides, "key.path=value (repeatable)");
  };

  std::string baseline_method, experiment_name;
  auto* dataset = app.add_subcommand("dataset", "Dataset operations")->require_subcommand(1);
  auto* dataset_build = dataset->add_subcommand("build", "Generate the synthetic training corpus and a test case");
  auto* train = app.add_subcommand("train", "Train a model")->require_subcommand(1);
  auto* train_codec = train->add_subcommand("codec", "Train the latent codec");
  auto* train_diffusion = train->add_subcommand("diffusion", "Train the conditional latent denoiser");
  auto* invert = app.add_subcommand("invert", "Invert paths.seismic with the diffusion model");
  auto* baseline = app.add_subcommand("baseline", "Run a comparison method");
  baseline->add_option("method", baseline_method, "tv | sdl | usdl")
      ->required()
      ->check(CLI::IsMember({"tv", "sdl", "usdl"}));
  auto* evalc = app.add_subcommand("eval", "Metrics of paths.estimate against paths.truth");
  auto* figures = app.add_subcommand("figures", "Section, residual and well-trace figures");
  auto* experiment = app.add_subcommand("experiment", "Canned experiments")->require_subcommand(1);
  auto* experiment_run = experiment->add_subcommand("run", "Run a named experiment");
  experiment_run->add_option("name", experiment_name, "Experiment name")
      ->required()
      ->check(CLI::IsMember(saii::exp::experiment_names()));
  for (auto* s : {dataset_build, train_codec, train_diffusion, invert, baseline, evalc, figures, experiment_run})
    add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const auto t0 = std::chrono::steady_clock::now();
  Provenance prov;
  try {
    const ExperimentConfig cfg = resolve(g);
    if (dataset_build->parsed()) {
      prov.command = "dataset build";
      cmd_dataset_build(cfg, prov);
    } else if (train_codec->parsed()) {
      prov.command = "train codec";
      cmd_train_codec(cfg, prov);
    } else if (train_diffusion->parsed()) {
      prov.command = "train diffusion";
      cmd_train_diffusion(cfg, prov);
    } else if (invert->parsed()) {
      prov.command = "invert";
      cmd_invert(cfg, prov);
    } else if (baseline->parsed()) {
      prov.command = "baseline " + baseline_method;
      cmd_baseline(baseline_method, cfg, prov);
    } else if (evalc->parsed()) {
      prov.command = "eval";
      cmd_eval(cfg, prov);
    } else if (figures->parsed()) {
      prov.command = "figures";
      cmd_figures(cfg, prov);
    } else {
      prov.command = "experiment run " + experiment_name;
      cmd_experiment(experiment_name, cfg, prov);
    }
    const json run{{"command", prov.command},
                   {"config_hash", cfg.hash()},
                   {"config", cfg.to_json()},
                   {"checkpoints", prov.checkpoints},
                   {"outputs", prov.outputs},
                   {"wallclock_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()},
                   {"versions", versions()}};
    saii::io::write_json(out_dir(cfg) / "run.json", run);
    return 0;
  } catch (const saii::ValidationError& e) {
    spdlog::error("invalid configuration: {}", e.what());
    return 2;
  } catch (const saii::ParameterError& e) {
    spdlog::error("invalid parameter: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
