#include "saii/config.hpp"

#include <cstdlib>
#include <fstream>

#include <yaml-cpp/yaml.h>

#include "saii/error.hpp"
#include "saii/io.hpp"

namespace saii::config {

json to_json(const data::PatchSpec& p) {
  return {{"patch_height", p.patch_height}, {"patch_width", p.patch_width}, {"stride_v", p.stride_v}, {"stride_h", p.stride_h}};
}

json to_json(const data::AugmentationConfig& a) {
  return {{"enable_hflip", a.enable_hflip},   {"enable_vflip", a.enable_vflip}, {"enable_elastic", a.enable_elastic},
          {"elastic_draws", a.elastic_draws}, {"elastic_alpha", a.elastic_alpha}, {"elastic_sigma", a.elastic_sigma},
          {"seed", a.seed}};
}

json to_json(const data::TrainingSetSpec& t) {
  json j{{"wavelet_freqs", t.wavelet_freqs}, {"cutoffs", t.cutoffs}, {"snr_db", t.snr_db},
         {"phase_deg", t.phase_deg},         {"dt", t.dt},           {"seed", t.seed}};
  j["noise_band"] = t.noise_band ? json::array({t.noise_band->first, t.noise_band->second}) : json(nullptr);
  return j;
}

namespace {

data::PatchSpec patch_from(const json& j) {
  return {j.at("patch_height").get<std::size_t>(), j.at("patch_width").get<std::size_t>(),
          j.at("stride_v").get<std::size_t>(), j.at("stride_h").get<std::size_t>()};
}

data::AugmentationConfig augment_from(const json& j) {
  data::AugmentationConfig a;
  a.enable_hflip = j.at("enable_hflip").get<bool>();
  a.enable_vflip = j.at("enable_vflip").get<bool>();
  a.enable_elastic = j.at("enable_elastic").get<bool>();
  a.elastic_draws = j.at("elastic_draws").get<int>();
  a.elastic_alpha = j.at("elastic_alpha").get<double>();
  a.elastic_sigma = j.at("elastic_sigma").get<double>();
  a.seed = j.at("seed").get<std::uint64_t>();
  return a;
}

data::TrainingSetSpec training_from(const json& j) {
  data::TrainingSetSpec t;
  t.wavelet_freqs = j.at("wavelet_freqs").get<std::vector<double>>();
  t.cutoffs = j.at("cutoffs").get<std::vector<double>>();
  t.snr_db = j.at("snr_db").get<double>();
  t.phase_deg = j.at("phase_deg").get<double>();
  t.dt = j.at("dt").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  const auto& nb = j.at("noise_band");
  if (!nb.is_null()) {
    if (!nb.is_array() || nb.size() != 2) throw ValidationError("dataset.training.noise_band must be [low, high] or null");
    t.noise_band = std::pair{nb[0].get<double>(), nb[1].get<double>()};
  }
  return t;
}

json paths_json(const PathsSection& p) {
  return {{"out", p.out},           {"cache", p.cache},     {"dataset", p.dataset},   {"codec_ckpt", p.codec_ckpt},
          {"diffusion_ckpt", p.diffusion_ckpt}, {"sdl_ckpt", p.sdl_ckpt}, {"seismic", p.seismic},
          {"lowfreq", p.lowfreq},   {"truth", p.truth},     {"estimate", p.estimate}};
}

const char* type_name(const json& j) { return j.type_name(); }

bool compatible(const json& schema, const json& user) {
  if (schema.is_null()) return true;
  if (schema.is_number()) {
    if (!user.is_number()) return false;
    if (schema.is_number_integer() && user.is_number_float()) return false;
    if (schema.is_number_unsigned() && user.is_number_integer() && user.get<std::int64_t>() < 0) return false;
    return true;
  }
  if (schema.is_boolean()) return user.is_boolean();
  if (schema.is_string()) return user.is_string();
  if (schema.is_array()) return user.is_array();
  if (schema.is_object()) return user.is_object();
  return false;
}

}  // namespace

json ExperimentConfig::to_json() const {
  return {{"format_version", format_version},
          {"seed", seed},
          {"log_level", log_level},
          {"paths", paths_json(paths)},
          {"dataset",
           {{"count", dataset.count},
            {"depth", dataset.depth},
            {"traces", dataset.traces},
            {"stats", dataset.stats.to_json()},
            {"patch", config::to_json(dataset.patch)},
            {"augment", dataset.augment},
            {"augmentation", config::to_json(dataset.augmentation)},
            {"training", config::to_json(dataset.training)},
            {"model_seed", dataset.model_seed}}},
          {"codec", codec.to_json()},
          {"diffusion", diffusion.to_json()},
          {"sampler", sampler.to_json()},
          {"tv", tv.to_json()},
          {"sdl", sdl.to_json()},
          {"usdl", usdl.to_json()},
          {"test",
           {{"count", test.count},
            {"depth", test.depth},
            {"traces", test.traces},
            {"cutoff_hz", test.cutoff_hz},
            {"snr_db", test.snr_db},
            {"wavelet_freq_hz", test.wavelet_freq_hz},
            {"phase_deg", test.phase_deg},
            {"seeds", test.seeds},
            {"model_seed", test.model_seed},
            {"well_traces", test.well_traces},
            {"run_sdl", test.run_sdl},
            {"run_usdl", test.run_usdl}}}};
}

json defaults() { return ExperimentConfig{}.to_json(); }

void check_keys(const json& schema, const json& user, const std::string& where) {
  if (!user.is_object()) throw ValidationError("config" + (where.empty() ? "" : " '" + where + "'") + " must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!schema.contains(key)) throw ValidationError("unknown config key '" + path + "'");
    const json& s = schema.at(key);
    if (!compatible(s, value))
      throw ValidationError("config key '" + path + "' expects " + type_name(s) + ", got " + type_name(value));
    if (s.is_object()) check_keys(s, value, path);
  }
}

json merge(json base, const json& over) {
  if (!base.is_object() || !over.is_object()) return over;
  for (const auto& [key, value] : over.items()) {
    if (base.contains(key) && base[key].is_object() && value.is_object()) {
      base[key] = merge(base[key], value);
    } else {
      base[key] = value;
    }
  }
  return base;
}

ExperimentConfig ExperimentConfig::from_json(const json& user) {
  const json schema = defaults();
  check_keys(schema, user);
  const json j = merge(schema, user);
  try {
    ExperimentConfig c;
    c.format_version = j.at("format_version").get<std::string>();
    if (c.format_version != kConfigFormat) throw ValidationError("unsupported config format '" + c.format_version + "'");
    c.seed = j.at("seed").get<std::uint64_t>();
    c.log_level = j.at("log_level").get<std::string>();
    const auto& p = j.at("paths");
    c.paths = {p.at("out").get<std::string>(),          p.at("cache").get<std::string>(),
               p.at("dataset").get<std::string>(),      p.at("codec_ckpt").get<std::string>(),
               p.at("diffusion_ckpt").get<std::string>(), p.at("sdl_ckpt").get<std::string>(),
               p.at("seismic").get<std::string>(),      p.at("lowfreq").get<std::string>(),
               p.at("truth").get<std::string>(),        p.at("estimate").get<std::string>()};
    const auto& d = j.at("dataset");
    c.dataset.count = d.at("count").get<int>();
    c.dataset.depth = d.at("depth").get<int>();
    c.dataset.traces = d.at("traces").get<int>();
    c.dataset.stats = data::LayerStats::from_json(d.at("stats"));
    c.dataset.patch = patch_from(d.at("patch"));
    c.dataset.augment = d.at("augment").get<bool>();
    c.dataset.augmentation = augment_from(d.at("augmentation"));
    c.dataset.training = training_from(d.at("training"));
    c.dataset.model_seed = d.at("model_seed").get<std::uint64_t>();
    c.codec = codec::CodecConfig::from_json(j.at("codec"));
    c.diffusion = diff::DiffusionConfig::from_json(j.at("diffusion"));
    c.sampler = sampling::SamplerConfig::from_json(j.at("sampler"));
    c.tv = base::TvConfig::from_json(j.at("tv"));
    c.sdl = base::NetTrainConfig::from_json(j.at("sdl"));
    c.usdl = base::UsdlConfig::from_json(j.at("usdl"));
    const auto& t = j.at("test");
    c.test.count = t.at("count").get<int>();
    c.test.depth = t.at("depth").get<int>();
    c.test.traces = t.at("traces").get<int>();
    c.test.cutoff_hz = t.at("cutoff_hz").get<double>();
    c.test.snr_db = t.at("snr_db").get<double>();
    c.test.wavelet_freq_hz = t.at("wavelet_freq_hz").get<double>();
    c.test.phase_deg = t.at("phase_deg").get<double>();
    c.test.seeds = t.at("seeds").get<std::vector<std::uint64_t>>();
    c.test.model_seed = t.at("model_seed").get<std::uint64_t>();
    c.test.well_traces = t.at("well_traces").get<std::vector<std::size_t>>();
    c.test.run_sdl = t.at("run_sdl").get<bool>();
    c.test.run_usdl = t.at("run_usdl").get<bool>();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
}

void ExperimentConfig::validate() const {
  if (paths.out.empty()) throw ValidationError("paths.out must not be empty");
  if (dataset.count < 1) throw ValidationError("dataset.count must be >= 1");
  if (dataset.depth < 32 || dataset.traces < 1) throw ValidationError("dataset.depth must be >= 32, traces >= 1");
  dataset.stats.validate();
  dataset.patch.validate();
  if (dataset.patch.patch_height > static_cast<std::size_t>(dataset.depth) ||
      dataset.patch.patch_width > static_cast<std::size_t>(dataset.traces))
    throw ValidationError("dataset.patch exceeds the model size");
  dataset.augmentation.validate();
  if (dataset.training.wavelet_freqs.empty() || dataset.training.cutoffs.empty())
    throw ValidationError("dataset.training needs wavelet_freqs and cutoffs");
  for (double f : dataset.training.wavelet_freqs)
    if (!(f > 0.0 && f < 0.5 / dataset.training.dt)) throw ValidationError("dataset.training.wavelet_freqs out of range");
  for (double f : dataset.training.cutoffs)
    if (!(f > 0.0 && f < 0.5 / dataset.training.dt)) throw ValidationError("dataset.training.cutoffs out of range");
  codec.validate();
  diffusion.validate();
  if (diffusion.net.latent_channels != codec.latent_channels)
    throw ValidationError("diffusion.net.latent_channels must equal codec.latent_channels");
  if ((1 << diffusion.net.shwt.levels) != codec.downsample_factor)
    throw ValidationError("diffusion.net.shwt.levels must equal log2(codec.downsample_factor)");
  sampler.validate(diffusion.T);
  tv.validate();
  sdl.validate();
  usdl.validate();
  if (test.count < 1 || test.seeds.empty()) throw ValidationError("test.count must be >= 1 and test.seeds non-empty");
  if (test.depth < 32 || test.traces < 1) throw ValidationError("test.depth must be >= 32, traces >= 1");
  if (!(test.cutoff_hz > 0.0) || !(test.wavelet_freq_hz > 0.0)) throw ValidationError("test frequencies must be > 0");
  for (std::size_t w : test.well_traces)
    if (w >= static_cast<std::size_t>(test.traces)) throw ValidationError("test.well_traces out of range");
  if (log_level != "debug" && log_level != "info" && log_level != "warn" && log_level != "error")
    throw ValidationError("log_level must be one of debug, info, warn, error");
}

std::string ExperimentConfig::hash() const { return io::sha256_hex(to_json().dump()); }

fs::path ExperimentConfig::cache_dir() const {
  if (!paths.cache.empty()) return paths.cache;
  if (const char* env = std::getenv("SAII_CACHE"); env && *env) return env;
  return fs::path(paths.out) / "cache";
}

namespace {

json yaml_to_json(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Sequence: {
      json a = json::array();
      for (const auto& e : n) a.push_back(yaml_to_json(e));
      return a;
    }
    case YAML::NodeType::Map: {
      json o = json::object();
      for (const auto& kv : n) o[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return o;
    }
    case YAML::NodeType::Scalar: {
      const std::string s = n.Scalar();
      if (n.Tag() == "!") return s;  // quoted
      if (s == "true" || s == "True") return true;
      if (s == "false" || s == "False") return false;
      if (s == "null" || s == "~") return nullptr;
      const json parsed = json::parse(s, nullptr, false);
      if (!parsed.is_discarded() && parsed.is_number()) return parsed;
      return s;
    }
  }
  return nullptr;
}

}  // namespace

json load_file(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("config file not found: " + path.string());
  const std::string ext = path.extension().string();
  try {
    if (ext == ".yaml" || ext == ".yml") return yaml_to_json(YAML::LoadFile(path.string()));
    return json::parse(io::read_file(path));
  } catch (const YAML::Exception& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  } catch (const json::exception& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
}

json parse_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + assignment + "' must be key=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    parts.push_back(key.substr(start, dot - start));
    if (parts.back().empty()) throw ValidationError("override key '" + key + "' has an empty component");
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json out = value;
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) out = json{{*it, out}};
  return out;
}

namespace {

bool has_path(const json& j, std::initializer_list<const char*> path) {
  const json* cur = &j;
  for (const char* k : path) {
    if (!cur->is_object() || !cur->contains(k)) return false;
    cur = &cur->at(k);
  }
  return true;
}

void set_path(json& j, std::initializer_list<const char*> path, const json& v) {
  json* cur = &j;
  for (const char* k : path) cur = &(*cur)[k];
  *cur = v;
}

}  // namespace

ExperimentConfig resolve(const std::optional<fs::path>& file, const std::vector<std::string>& overrides,
                         std::optional<std::uint64_t> seed, std::optional<std::string> out) {
  const json schema = defaults();
  json user = json::object();
  if (file) {
    user = load_file(*file);
    if (user.is_null()) user = json::object();
    check_keys(schema, user);
  }
  json over = json::object();
  for (const auto& o : overrides) {
    const json one = parse_override(o);
    check_keys(schema, one);
    over = merge(over, one);
  }
  json explicit_keys = merge(user, over);
  if (seed) set_path(user, {"seed"}, *seed);
  if (out) set_path(user, {"paths", "out"}, *out);
  json merged = merge(user, over);
  const std::uint64_t global = merged.contains("seed") ? merged.at("seed").get<std::uint64_t>() : 0;
  for (auto path : {std::initializer_list<const char*>{"codec", "seed"}, {"diffusion", "seed"}, {"sampler", "seed"},
                    {"sdl", "seed"}, {"usdl", "net", "seed"}, {"dataset", "training", "seed"},
                    {"dataset", "augmentation", "seed"}}) {
    if (!has_path(explicit_keys, path)) set_path(merged, path, global);
  }
  ExperimentConfig cfg = ExperimentConfig::from_json(merged);
  cfg.validate();
  return cfg;
}

}  // namespace saii::config
