#include "saii/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>

#include <spdlog/spdlog.h>

#include "saii/error.hpp"
#include "saii/io.hpp"

namespace saii::exp {

namespace {

std::string short_hash(const nlohmann::json& j) { return io::sha256_hex(j.dump()).substr(0, 16); }

std::string dataset_key(const ExperimentConfig& cfg) {
  if (!cfg.paths.dataset.empty()) return short_hash({{"dir", fs::absolute(cfg.paths.dataset).string()}});
  const auto j = cfg.to_json();
  return short_hash({{"format", data::kDatasetFormat}, {"dataset", j.at("dataset")}});
}

Condition snr_condition(double snr) {
  Condition c;
  c.snr_db = snr;
  return c;
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

data::DatasetManifest build_dataset(const ExperimentConfig& cfg, const fs::path& dir) {
  const auto& ds = cfg.dataset;
  std::vector<ImpedanceGrid> patches;
  for (int i = 0; i < ds.count; ++i) {
    const auto model = data::random_layered_model(static_cast<std::size_t>(ds.depth), static_cast<std::size_t>(ds.traces),
                                                  ds.stats, io::mix_seed(ds.model_seed, static_cast<std::uint64_t>(i)),
                                                  ds.training.dt);
    for (auto& p : data::extract_patches(model, ds.patch)) patches.push_back(std::move(p));
  }
  if (ds.augment) patches = data::augment(patches, ds.augmentation);
  spdlog::info("building dataset of {} patches in {}", patches.size(), dir.string());
  return data::build_training_set(patches, ds.training, dir);
}

fs::path ensure_dataset(const ExperimentConfig& cfg) {
  if (!cfg.paths.dataset.empty()) {
    data::load_manifest(cfg.paths.dataset);
    return cfg.paths.dataset;
  }
  const fs::path dir = cfg.cache_dir() / "datasets" / dataset_key(cfg);
  if (fs::exists(dir / "manifest.json")) {
    try {
      data::load_manifest(dir);
      return dir;
    } catch (const Error& e) {
      spdlog::warn("cached dataset {} unusable ({}); rebuilding", dir.string(), e.what());
      fs::remove_all(dir);
    }
  }
  const fs::path tmp = dir.string() + ".partial";
  fs::remove_all(tmp);
  build_dataset(cfg, tmp);
  fs::create_directories(dir.parent_path());
  fs::rename(tmp, dir);
  return dir;
}

Stack ensure_stack(const ExperimentConfig& cfg, bool need_diffusion) {
  Stack s;
  s.dataset_dir = ensure_dataset(cfg);
  s.manifest = data::load_manifest(s.dataset_dir);
  const auto j = cfg.to_json();
  const std::string codec_key = short_hash({{"dataset", dataset_key(cfg)}, {"codec", j.at("codec")}});

  if (!cfg.paths.codec_ckpt.empty()) {
    s.codec_path = cfg.paths.codec_ckpt;
  } else {
    s.codec_path = cfg.cache_dir() / ("codec-" + codec_key + ".ckpt");
    if (!fs::exists(s.codec_path)) {
      const auto t0 = std::chrono::steady_clock::now();
      fs::create_directories(s.codec_path.parent_path());
      auto r = codec::train_codec(s.manifest, s.dataset_dir, cfg.codec);
      r.codec.save(s.codec_path);
      io::write_json(s.codec_path.string() + ".history.json", r.history.to_json());
      spdlog::info("codec trained in {:.1f}s", elapsed(t0));
    }
  }
  s.codec = std::make_unique<codec::Codec>(codec::Codec::load(s.codec_path));
  if (!need_diffusion) return s;

  if (!cfg.paths.diffusion_ckpt.empty()) {
    s.diffusion_path = cfg.paths.diffusion_ckpt;
  } else {
    s.diffusion_path =
        cfg.cache_dir() / ("diffusion-" + short_hash({{"codec", s.codec->hash()}, {"diffusion", j.at("diffusion")}}) + ".ckpt");
    if (!fs::exists(s.diffusion_path)) {
      const auto t0 = std::chrono::steady_clock::now();
      diff::TrainOptions opts;
      const fs::path partial = s.diffusion_path.string() + ".partial";
      opts.checkpoint_path = partial;
      opts.checkpoint_every = 5;
      if (fs::exists(partial)) opts.resume_from = partial;
      diff::train_diffusion(s.manifest, s.dataset_dir, *s.codec, cfg.diffusion, opts);
      fs::rename(partial, s.diffusion_path);
      spdlog::info("diffusion trained in {:.1f}s", elapsed(t0));
    }
  }
  s.model = std::make_unique<diff::DiffusionModel>(diff::DiffusionModel::load(s.diffusion_path));
  s.model->require_codec(*s.codec);
  return s;
}

base::BaselineNet ensure_sdl(const ExperimentConfig& cfg, const Stack& stack) {
  if (!cfg.paths.sdl_ckpt.empty()) return base::BaselineNet::load(cfg.paths.sdl_ckpt);
  const auto j = cfg.to_json();
  const fs::path path = cfg.cache_dir() / ("sdl-" + short_hash({{"dataset", dataset_key(cfg)}, {"sdl", j.at("sdl")}}) + ".ckpt");
  if (!fs::exists(path)) {
    const auto t0 = std::chrono::steady_clock::now();
    auto r = base::sdl_train(stack.manifest, stack.dataset_dir, cfg.sdl);
    fs::create_directories(path.parent_path());
    r.model.save(path);
    spdlog::info("sdl trained in {:.1f}s", elapsed(t0));
  }
  return base::BaselineNet::load(path);
}

TestCase make_test_case(const ExperimentConfig& cfg, const Condition& cond, std::size_t index,
                        std::uint64_t noise_seed) {
  const auto& t = cfg.test;
  const double dt = cfg.dataset.training.dt;
  TestCase tc;
  tc.index = index;
  tc.truth = data::random_layered_model(static_cast<std::size_t>(t.depth), static_cast<std::size_t>(t.traces),
                                        cfg.dataset.stats, io::mix_seed(t.model_seed, index), dt);
  const double f = cond.wavelet_freq_hz.value_or(t.wavelet_freq_hz);
  tc.wavelet = seis::ricker(f, dt, 0, cond.phase_deg.value_or(t.phase_deg));
  tc.clean = seis::synthesize(tc.truth.values, tc.wavelet);
  const auto band = seis::default_noise_band(f, dt);
  tc.observed = seis::add_bandpass_noise(tc.clean, {cond.snr_db.value_or(t.snr_db), band.first, band.second, noise_seed}, dt);
  tc.lowfreq = data::lowpass_impedance(tc.truth, cond.cutoff_hz.value_or(t.cutoff_hz), dt);
  return tc;
}

std::vector<Outcome> run_condition(const ExperimentConfig& cfg, const Stack& stack, const Condition& cond,
                                   const std::vector<std::string>& arms, const std::vector<std::uint64_t>& seeds,
                                   const base::BaselineNet* sdl, const fs::path& figure_dir) {
  std::vector<Outcome> out;
  for (std::size_t si = 0; si < seeds.size(); ++si) {
    const std::uint64_t seed = seeds[si];
    for (std::size_t p = 0; p < static_cast<std::size_t>(cfg.test.count); ++p) {
      const TestCase tc = make_test_case(cfg, cond, p, io::mix_seed(seed, p));
      eval::FigureSet figs;
      const bool want_figs = !figure_dir.empty() && si == 0 && p == 0;
      for (const auto& arm : arms) {
        const auto t0 = std::chrono::steady_clock::now();
        ImpedanceGrid x;
        if (arm == "cldm" || arm == "ablation") {
          sampling::SamplerConfig sc = cfg.sampler;
          sc.seed = io::mix_seed(seed, p);
          if (arm == "ablation") sc.interval = sc.num_steps + 1;
          x = sampling::invert(tc.observed, tc.lowfreq, tc.wavelet, *stack.model, *stack.codec, sc).impedance;
        } else if (arm == "tv") {
          base::TvConfig tc_cfg = cfg.tv;
          tc_cfg.log_every = 0;
          x = base::tv_invert(tc.observed, tc.lowfreq, tc.wavelet, tc_cfg).impedance;
        } else if (arm == "sdl") {
          if (!sdl) throw ValidationError("run_condition: sdl arm requires a trained model");
          x = base::sdl_infer(tc.observed, tc.lowfreq, *sdl);
        } else if (arm == "usdl") {
          base::UsdlConfig uc = cfg.usdl;
          uc.net.seed = io::mix_seed(seed, p);
          x = base::usdl_train({tc.observed}, {tc.lowfreq}, tc.wavelet, stack.manifest.normalization, uc)
                  .predictions.front();
        } else {
          throw ValidationError("unknown arm '" + arm + "'");
        }
        Outcome o;
        o.arm = arm;
        o.patch = p;
        o.seed = seed;
        o.seconds = elapsed(t0);
        o.metrics = eval::evaluate(x.values, tc.truth.values, cfg.test.well_traces, &tc.observed, &tc.wavelet);
        o.residual = std::sqrt(seis::misfit(x.values, tc.observed, tc.wavelet));
        spdlog::info("seed {} patch {} {}: psnr {:.2f} ssim {:.4f} residual {:.4f} ({:.1f}s)", seed, p, arm,
                     o.metrics.psnr_db, o.metrics.ssim, o.residual, o.seconds);
        out.push_back(o);
        if (want_figs) figs.estimates.emplace_back(arm, x.values);
      }
      if (want_figs) {
        figs.truth = tc.truth.values;
        figs.estimates.emplace_back("lowfreq", tc.lowfreq.values);
        figs.well_traces = cfg.test.well_traces;
        eval::emit_figures(figs, figure_dir);
      }
    }
  }
  return out;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::map<std::string, ArmSummary> summarize(const std::vector<Outcome>& outcomes) {
  // arm -> seed -> sums
  std::map<std::string, std::map<std::uint64_t, std::pair<ArmSummary, int>>> acc;
  for (const auto& o : outcomes) {
    auto& [s, n] = acc[o.arm][o.seed];
    s.psnr += o.metrics.psnr_db;
    s.ssim += o.metrics.ssim;
    s.pcc += o.metrics.pcc;
    s.rre += o.metrics.rre;
    s.residual += o.residual;
    ++n;
  }
  std::map<std::string, ArmSummary> out;
  for (const auto& [arm, per_seed] : acc) {
    std::vector<double> psnr, ssim, pcc, rre, res;
    for (const auto& [seed, sn] : per_seed) {
      const double n = sn.second;
      psnr.push_back(sn.first.psnr / n);
      ssim.push_back(sn.first.ssim / n);
      pcc.push_back(sn.first.pcc / n);
      rre.push_back(sn.first.rre / n);
      res.push_back(sn.first.residual / n);
    }
    out[arm] = {median(psnr), median(ssim), median(pcc), median(rre), median(res)};
  }
  return out;
}

double residual_win_fraction(const std::vector<Outcome>& outcomes, const std::string& a, const std::string& b) {
  std::map<std::size_t, std::vector<double>> ra, rb;
  for (const auto& o : outcomes) {
    if (o.arm == a) ra[o.patch].push_back(o.residual);
    if (o.arm == b) rb[o.patch].push_back(o.residual);
  }
  std::size_t wins = 0, total = 0;
  for (const auto& [p, v] : ra) {
    const auto it = rb.find(p);
    if (it == rb.end()) continue;
    ++total;
    if (median(v) <= median(it->second)) ++wins;
  }
  return total ? static_cast<double>(wins) / static_cast<double>(total) : 0.0;
}

nlohmann::json outcomes_to_json(const std::vector<Outcome>& outcomes) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& o : outcomes)
    a.push_back({{"arm", o.arm}, {"patch", o.patch}, {"seed", o.seed}, {"metrics", o.metrics.to_json()},
                 {"residual", o.residual}, {"seconds", o.seconds}});
  return a;
}

std::vector<std::string> experiment_names() {
  return {"overthrust-noise15", "table1", "lowfreq-sweep", "wavelet-sweep"};
}

namespace {

nlohmann::json summary_json(const std::map<std::string, ArmSummary>& s) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [arm, m] : s)
    j[arm] = {{"psnr_db", m.psnr}, {"ssim", m.ssim}, {"pcc", m.pcc}, {"rre", m.rre}, {"residual", m.residual}};
  return j;
}

std::vector<std::string> learned_arms(const ExperimentConfig& cfg) {
  std::vector<std::string> arms;
  if (cfg.test.run_sdl) arms.push_back("sdl");
  if (cfg.test.run_usdl) arms.push_back("usdl");
  return arms;
}

nlohmann::json ordering_checks(const std::vector<Outcome>& outcomes) {
  const auto s = summarize(outcomes);
  const auto& c = s.at("cldm");
  const auto& a = s.at("ablation");
  nlohmann::json j{{"cldm_psnr_ge_ablation", c.psnr >= a.psnr}, {"cldm_ssim_ge_ablation", c.ssim >= a.ssim}};
  if (s.count("tv")) j["cldm_psnr_ge_tv"] = c.psnr >= s.at("tv").psnr;
  const double frac = residual_win_fraction(outcomes, "cldm", "ablation");
  j["residual_win_fraction"] = frac;
  j["residual_win_ge_80pct"] = frac >= 0.8;
  return j;
}

}  // namespace

nlohmann::json run_experiment(const std::string& name, const ExperimentConfig& cfg) {
  const auto names = experiment_names();
  if (std::find(names.begin(), names.end(), name) == names.end())
    throw ValidationError("unknown experiment '" + name + "'");
  const fs::path out_dir = cfg.paths.out;
  fs::create_directories(out_dir);
  const auto t0 = std::chrono::steady_clock::now();
  const Stack stack = ensure_stack(cfg);
  std::optional<base::BaselineNet> sdl;
  if (cfg.test.run_sdl && name != "wavelet-sweep") sdl = ensure_sdl(cfg, stack);
  const base::BaselineNet* sdl_ptr = sdl ? &*sdl : nullptr;

  nlohmann::json results{{"format", "saii-experiment/1"}, {"experiment", name}, {"config_hash", cfg.hash()},
                         {"codec_hash", stack.codec->hash()}, {"diffusion_checkpoint", stack.diffusion_path.string()}};
  nlohmann::json report{{"format", eval::kReportFormat}, {"experiment", name}};
  eval::FigureSet charts;

  if (name == "overthrust-noise15") {
    std::vector<std::string> arms{"cldm", "ablation", "tv"};
    for (auto& a : learned_arms(cfg)) arms.push_back(a);
    const auto outcomes = run_condition(cfg, stack, snr_condition(cfg.test.snr_db), arms, cfg.test.seeds, sdl_ptr,
                                        out_dir / "figures");
    results["snr_db"] = cfg.test.snr_db;
    results["summary"] = summary_json(summarize(outcomes));
    results["checks"] = ordering_checks(outcomes);
    results["outcomes"] = outcomes_to_json(outcomes);
    report["arms"] = results["summary"];
  } else if (name == "table1") {
    std::vector<std::string> arms{"cldm", "ablation", "tv"};
    for (auto& a : learned_arms(cfg)) arms.push_back(a);
    for (const auto& [label, snr] : {std::pair<std::string, double>{"noise-free", seis::kNoiseFree},
                                     {"noisy", cfg.test.snr_db}}) {
      const auto outcomes =
          run_condition(cfg, stack, snr_condition(snr), arms, cfg.test.seeds, sdl_ptr, out_dir / ("figures-" + label));
      results["conditions"][label] = {{"summary", summary_json(summarize(outcomes))},
                                      {"checks", ordering_checks(outcomes)},
                                      {"outcomes", outcomes_to_json(outcomes)}};
      report["conditions"][label] = summary_json(summarize(outcomes));
    }
    results["snr_db"] = cfg.test.snr_db;
  } else if (name == "lowfreq-sweep") {
    const std::vector<double> cutoffs{3, 5, 6, 9, 10, 12, 15, 18};
    std::vector<std::string> arms{"cldm", "ablation", "tv"};
    if (sdl_ptr) arms.push_back("sdl");
    std::map<std::string, std::vector<double>> psnr, ssim;
    nlohmann::json per = nlohmann::json::array();
    for (double fc : cutoffs) {
      Condition cond;
      cond.cutoff_hz = fc;
      const auto outcomes = run_condition(cfg, stack, cond, arms, cfg.test.seeds, sdl_ptr);
      const auto s = summarize(outcomes);
      for (const auto& a : arms) {
        psnr[a].push_back(s.at(a).psnr);
        ssim[a].push_back(s.at(a).ssim);
      }
      per.push_back({{"cutoff_hz", fc}, {"seen_in_training", std::find(cfg.dataset.training.cutoffs.begin(),
                                                                       cfg.dataset.training.cutoffs.end(), fc) !=
                                                                 cfg.dataset.training.cutoffs.end()},
                     {"summary", summary_json(s)}});
    }
    results["cutoffs"] = per;
    std::vector<double> trained;
    for (std::size_t i = 0; i < cutoffs.size(); ++i)
      if (cutoffs[i] == 3 || cutoffs[i] == 6 || cutoffs[i] == 12 || cutoffs[i] == 18) trained.push_back(psnr["cldm"][i]);
    results["checks"]["cldm_psnr_nondecreasing_3_6_12_18"] = std::is_sorted(trained.begin(), trained.end());
    for (const auto& [metric, table] : {std::pair{"psnr", &psnr}, std::pair{"ssim", &ssim}}) {
      eval::LineChart chart{std::string("lowfreq_") + metric, std::string(metric) + " vs low-frequency cutoff",
                            "cutoff (Hz)", metric, cutoffs, {}};
      for (const auto& a : arms) chart.series.push_back({a, table->at(a)});
      charts.charts.push_back(chart);
    }
    report["cutoffs"] = per;
  } else {  // wavelet-sweep
    const std::vector<double> freqs{20, 22, 25, 27, 30, 33, 35, 38, 40};
    const std::vector<double> phases{0, 10, 20, 30};
    const std::vector<std::uint64_t> seeds{cfg.test.seeds.front()};
    nlohmann::json per = nlohmann::json::array();
    std::map<double, std::vector<double>> psnr, ssim;
    for (double ph : phases)
      for (double f : freqs) {
        Condition cond;
        cond.wavelet_freq_hz = f;
        cond.phase_deg = ph;
        const auto outcomes = run_condition(cfg, stack, cond, {"cldm"}, seeds, nullptr);
        const auto s = summarize(outcomes).at("cldm");
        psnr[ph].push_back(s.psnr);
        ssim[ph].push_back(s.ssim);
        per.push_back({{"wavelet_freq_hz", f}, {"phase_deg", ph}, {"psnr_db", s.psnr}, {"ssim", s.ssim}});
      }
    results["conditions"] = per;
    for (const auto& [metric, table] : {std::pair{"psnr", &psnr}, std::pair{"ssim", &ssim}}) {
      eval::LineChart chart{std::string("wavelet_") + metric, std::string(metric) + " vs dominant frequency",
                            "dominant frequency (Hz)", metric, freqs, {}};
      for (double ph : phases) chart.series.push_back({"phase " + std::to_string(static_cast<int>(ph)), table->at(ph)});
      charts.charts.push_back(chart);
    }
    report["conditions"] = per;
  }

  if (!charts.charts.empty()) eval::emit_figures(charts, out_dir / "figures");
  results["wallclock_s"] = elapsed(t0);
  io::write_json(out_dir / "results.json", results);
  io::write_json(out_dir / "report.json", report);
  return results;
}

}  // namespace saii::exp
