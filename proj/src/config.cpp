#include "cfexplain/config.hpp"

#include "cfexplain/error.hpp"
#include "cfexplain/io.hpp"

namespace cfexplain {
namespace fs = std::filesystem;

fs::path RunConfig::classifier_path() const {
  return classifier_checkpoint.empty() ? fs::path(output_dir) / "classifier.cfxw" : fs::path(classifier_checkpoint);
}

fs::path RunConfig::bundle_path() const {
  return bundle_checkpoint.empty() ? fs::path(output_dir) / "explainer.cfxw" : fs::path(bundle_checkpoint);
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"output_dir", c.output_dir},
          {"data",
           {{"source", c.data.source},
            {"manifest", c.data.manifest},
            {"n_synthetic", c.data.n_synthetic},
            {"image_size", c.data.image_size},
            {"train_fraction", c.data.train_fraction},
            {"split_seed", c.data.split_seed},
            {"rescale", c.data.rescale}}},
          {"classifier", c.classifier},
          {"generator", c.generator},
          {"discriminator", c.discriminator},
          {"classifier_train", c.classifier_train},
          {"explainer_train", c.explainer_train},
          {"classifier_checkpoint", c.classifier_checkpoint},
          {"bundle_checkpoint", c.bundle_checkpoint},
          {"n_boot", c.n_boot},
          {"threshold", c.threshold},
          {"gain", c.gain ? nlohmann::json(*c.gain) : nlohmann::json("auto")}};
}

namespace {

// Every key of `given` must exist in `shape`, recursively through objects.
void check_keys(const nlohmann::json& given, const nlohmann::json& shape, const std::string& path) {
  if (!given.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!shape.contains(key)) throw ConfigError("unknown config field '" + here + "'");
    if (shape.at(key).is_object()) {
      if (!value.is_object()) throw ConfigError("config field '" + here + "' must be an object");
      check_keys(value, shape.at(key), here);
    }
  }
}

void merge(nlohmann::json& base, const nlohmann::json& patch) {
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object()) merge(base[key], value);
    else base[key] = value;
  }
}

// Types of leaves must match the defaults; numbers are interchangeable
// except that integer fields reject fractional values.
void check_types(const nlohmann::json& given, const nlohmann::json& shape, const std::string& path) {
  for (const auto& [key, value] : given.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    const auto& want = shape.at(key);
    if (key == "gain" && path.empty()) {
      if (!(value.is_number() || value == "auto")) throw ConfigError("config field 'gain' must be a number or \"auto\"");
      continue;
    }
    if (want.is_object()) {
      check_types(value, want, here);
    } else if (want.is_number_integer() || want.is_number_unsigned()) {
      if (!value.is_number_integer() && !value.is_number_unsigned()) {
        throw ConfigError("config field '" + here + "' must be an integer");
      }
      if (want.is_number_unsigned() && value.is_number_integer() && value.get<long long>() < 0) {
        throw ConfigError("config field '" + here + "' must be >= 0");
      }
    } else if (want.is_number()) {
      if (!value.is_number()) throw ConfigError("config field '" + here + "' must be a number");
    } else if (want.is_boolean()) {
      if (!value.is_boolean()) throw ConfigError("config field '" + here + "' must be true or false");
    } else if (want.is_string()) {
      if (!value.is_string()) throw ConfigError("config field '" + here + "' must be a string");
    } else if (want.is_array()) {
      if (!value.is_array()) throw ConfigError("config field '" + here + "' must be an array");
    }
  }
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  const nlohmann::json shape = to_json(RunConfig{});
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  check_keys(j, shape, "");
  check_types(j, shape, "");
  nlohmann::json full = shape;
  merge(full, j);
  RunConfig c;
  try {
    full.at("seed").get_to(c.seed);
    full.at("output_dir").get_to(c.output_dir);
    const auto& d = full.at("data");
    d.at("source").get_to(c.data.source);
    d.at("manifest").get_to(c.data.manifest);
    d.at("n_synthetic").get_to(c.data.n_synthetic);
    d.at("image_size").get_to(c.data.image_size);
    d.at("train_fraction").get_to(c.data.train_fraction);
    d.at("split_seed").get_to(c.data.split_seed);
    d.at("rescale").get_to(c.data.rescale);
    full.at("classifier").get_to(c.classifier);
    full.at("generator").get_to(c.generator);
    full.at("discriminator").get_to(c.discriminator);
    full.at("classifier_train").get_to(c.classifier_train);
    full.at("explainer_train").get_to(c.explainer_train);
    full.at("classifier_checkpoint").get_to(c.classifier_checkpoint);
    full.at("bundle_checkpoint").get_to(c.bundle_checkpoint);
    full.at("n_boot").get_to(c.n_boot);
    full.at("threshold").get_to(c.threshold);
    if (full.at("gain").is_number()) c.gain = full.at("gain").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

void validate(const RunConfig& c) {
  auto fail = [](const std::string& field, const std::string& rule) { throw ConfigError(field + " " + rule); };
  if (c.data.source != "synthetic" && c.data.source != "manifest") fail("data.source", "must be synthetic or manifest");
  if (c.data.source == "manifest" && c.data.manifest.empty()) fail("data.manifest", "is required when data.source is manifest");
  if (c.data.n_synthetic < 2) fail("data.n_synthetic", "must be >= 2");
  if (c.data.image_size < 16) fail("data.image_size", "must be >= 16");
  if (!(c.data.train_fraction > 0.0 && c.data.train_fraction < 1.0)) fail("data.train_fraction", "must be in (0,1)");
  if (c.output_dir.empty()) fail("output_dir", "must be nonempty");
  if (c.n_boot < 0) fail("n_boot", "must be >= 0");
  if (!(c.threshold >= 0.0 && c.threshold <= 1.0)) fail("threshold", "must be in [0,1]");
  if (c.gain && !(*c.gain > 0.0)) fail("gain", "must be > 0 or \"auto\"");
  try {
    validate(c.classifier_train, "classifier_train");
    validate(c.explainer_train, "explainer_train");
    validate(c.classifier, c.data.image_size);
    validate(c.generator, c.data.image_size);
    validate(c.discriminator, c.data.image_size);
    if (c.explainer_train.ssim.n_scales > 0 && min_image_size(c.explainer_train.ssim) > c.data.image_size) {
      fail("explainer_train.ssim.n_scales", "needs images of at least " +
                                                 std::to_string(min_image_size(c.explainer_train.ssim)) + " px");
    }
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
}

void apply_override(nlohmann::json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  const nlohmann::json shape = to_json(RunConfig{});
  const nlohmann::json* s = &shape;
  nlohmann::json* target = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!s->is_object() || !s->contains(key)) throw ConfigError("unknown config field '" + path + "'");
    s = &s->at(key);
    if (dot == std::string::npos) {
      // A string default keeps a numeric-looking override as text.
      if (s->is_string() && !value.is_string() && !(key == "gain" && value.is_number())) value = text;
      (*target)[key] = value;
      return;
    }
    if (!target->contains(key) || !(*target)[key].is_object()) (*target)[key] = nlohmann::json::object();
    target = &(*target)[key];
    start = dot + 1;
  }
}

RunConfig resolve_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (file) {
    try {
      j = io::read_json(*file);
    } catch (const Error& e) {
      throw ConfigError(std::string("cannot read config: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config file " + file->string() + " must hold a JSON object");
  }
  for (const auto& o : overrides) apply_override(j, o);
  RunConfig c = run_config_from_json(j);
  validate(c);
  return c;
}

std::vector<LabeledSample> load_dataset(const RunConfig& c) {
  if (c.data.source == "synthetic") {
    auto samples = generate_synthetic_dataset(c.data.n_synthetic, derive_seed(c.seed, 200), c.data.image_size);
    return stratified_split(std::move(samples), c.data.train_fraction, c.data.split_seed);
  }
  LoadOptions opt;
  opt.image_size = c.data.image_size;
  opt.rescale = c.data.rescale;
  opt.train_fraction = c.data.train_fraction;
  opt.split_seed = c.data.split_seed;
  return load_manifest(c.data.manifest, opt).samples;
}

}  // namespace cfexplain
