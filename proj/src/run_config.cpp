#include "deiqt/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace deiqt {

ModelConfig desk_model() {
  ModelConfig c;
  c.patch_size = 4;
  c.crop = 16;
  c.dim = 64;
  c.heads = 4;
  c.encoder_depth = 4;
  c.decoder_depth = 1;
  c.panel_size = 6;
  return c;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  N v{};
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw ConfigError("invalid value for " + key + ": '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "on") return true;
  if (t == "false" || t == "0" || t == "off") return false;
  throw ConfigError("invalid value for " + key + ": '" + text + "' (expected true or false)");
}

template <typename N>
ConfigKey number_key(std::string key, std::string doc, N RunConfig::*field) {
  return {key, std::move(doc),
          [field](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<N>) return format_double(c.*field);
            else return std::to_string(c.*field);
          },
          [field, key](RunConfig& c, const std::string& v) { c.*field = parse_number<N>(key, v); }};
}

template <typename N, typename S>
ConfigKey nested_key(std::string key, std::string doc, S RunConfig::*outer, N S::*field) {
  return {key, std::move(doc),
          [outer, field](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<N>) return format_double(c.*outer.*field);
            else return std::to_string(c.*outer.*field);
          },
          [outer, field, key](RunConfig& c, const std::string& v) { c.*outer.*field = parse_number<N>(key, v); }};
}

ConfigKey string_key(std::string key, std::string doc, std::string RunConfig::*field) {
  return {key, std::move(doc), [field](const RunConfig& c) { return c.*field; },
          [field](RunConfig& c, const std::string& v) { c.*field = trim(v); }};
}

std::vector<ConfigKey> build_keys() {
  using R = RunConfig;
  std::vector<ConfigKey> k;
  // Model.
  k.push_back(nested_key("patch_size", "patch side p in pixels", &R::model, &ModelConfig::patch_size));
  k.push_back(nested_key("dim", "token width D", &R::model, &ModelConfig::dim));
  k.push_back(nested_key("heads", "attention heads h (D divisible by h)", &R::model, &ModelConfig::heads));
  k.push_back(nested_key("encoder_depth", "encoder blocks", &R::model, &ModelConfig::encoder_depth));
  k.push_back(nested_key("decoder_depth", "chained cross-attention blocks", &R::model, &ModelConfig::decoder_depth));
  k.push_back(nested_key("panel_size", "attention-panel members L", &R::model, &ModelConfig::panel_size));
  k.push_back(nested_key("mlp_ratio", "MLP hidden width / D", &R::model, &ModelConfig::mlp_ratio));
  k.push_back(nested_key("channels", "image channels", &R::model, &ModelConfig::channels));
  k.push_back(nested_key("crop", "crop side in pixels (multiple of patch_size)", &R::model, &ModelConfig::crop));
  k.push_back({"variant", "deiqt | encoder-only | panel-no-decoder | decoder-random-queries | decoder-cls-queries",
               [](const R& c) { return variant_name(c.model.variant); },
               [](R& c, const std::string& v) { c.model.variant = parse_variant(trim(v)); }});
  k.push_back(nested_key("init_std", "truncated-normal init std", &R::model, &ModelConfig::init_std));
  k.push_back(nested_key("norm_eps", "layer-norm epsilon", &R::model, &ModelConfig::norm_eps));
  // Training.
  k.push_back(nested_key("epochs", "training epochs", &R::train, &TrainConfig::epochs));
  k.push_back(nested_key("base_lr", "learning rate of the first stage", &R::train, &TrainConfig::base_lr));
  k.push_back(nested_key("lr_decay_factor", "divisor applied at each decay", &R::train, &TrainConfig::lr_decay_factor));
  k.push_back(nested_key("decay_every", "epochs between decays", &R::train, &TrainConfig::decay_every_epochs));
  k.push_back(nested_key("batch_size", "crops per optimizer step", &R::train, &TrainConfig::batch_size));
  k.push_back(nested_key("crops_per_image", "training crops per image per epoch", &R::train, &TrainConfig::crops_per_image));
  k.push_back({"precision", "32 or 64",
               [](const R& c) { return std::to_string(static_cast<int>(c.train.precision)); },
               [](R& c, const std::string& v) { c.train.precision = parse_precision(trim(v)); }});
  k.push_back(nested_key("weight_decay", "decoupled weight decay", &R::train, &TrainConfig::weight_decay));
  k.push_back(nested_key("beta1", "first-moment decay", &R::train, &TrainConfig::beta1));
  k.push_back(nested_key("beta2", "second-moment decay", &R::train, &TrainConfig::beta2));
  k.push_back(nested_key("adam_eps", "optimizer epsilon", &R::train, &TrainConfig::adam_eps));
  k.push_back(nested_key("smooth_l1_beta", "smooth-L1 threshold", &R::train, &TrainConfig::smooth_l1_beta));
  k.push_back({"normalize_labels", "min-max scale training labels to [0, 1]",
               [](const R& c) { return std::string(c.train.normalize_labels ? "true" : "false"); },
               [](R& c, const std::string& v) { c.train.normalize_labels = parse_bool("normalize_labels", v); }});
  k.push_back(nested_key("max_steps", "stop after this many steps (0 = no limit)", &R::train, &TrainConfig::max_steps));
  // Run.
  k.push_back(number_key("seed", "master seed", &R::seed));
  k.push_back(string_key("out", "output directory", &R::out));
  k.push_back(string_key("manifest", "input manifest CSV", &R::manifest));
  k.push_back(string_key("test_manifest", "separate test manifest (empty = split manifest)", &R::test_manifest));
  k.push_back(string_key("checkpoint", "checkpoint to load", &R::checkpoint));
  k.push_back(string_key("image", "image for attn-map (empty = first manifest entry)", &R::image));
  k.push_back({"resume", "continue training from `checkpoint`",
               [](const R& c) { return std::string(c.resume ? "true" : "false"); },
               [](R& c, const std::string& v) { c.resume = parse_bool("resume", v); }});
  // Data generation.
  k.push_back(number_key("n_base", "pristine base images", &R::n_base));
  k.push_back(number_key("levels", "distortion levels per kind (>= 2)", &R::levels));
  k.push_back(string_key("kinds", "comma list of distortion kinds or `all`", &R::kinds));
  k.push_back(number_key("image_size", "generated image side in pixels", &R::image_size));
  // Evaluation and protocols.
  k.push_back(number_key("train_frac", "fraction of groups used for training", &R::train_frac));
  k.push_back(number_key("eval_crops", "crops averaged per image at evaluation", &R::eval_crops));
  k.push_back(string_key("mode", "repeats | data-efficiency | depth-ablation | component-ablation", &R::mode));
  k.push_back(number_key("repeats", "independent runs per protocol condition", &R::repeats));
  k.push_back(string_key("fractions", "data-efficiency train fractions", &R::fractions));
  k.push_back(string_key("depths", "depth-ablation decoder depths", &R::depths));
  k.push_back(number_key("grad_eps", "finite-difference step for gradcheck", &R::grad_eps));
  return k;
}

constexpr const char* kModelKeys[] = {"patch_size", "dim",     "heads", "encoder_depth", "decoder_depth", "panel_size",
                                      "mlp_ratio",  "channels", "crop",  "variant",       "init_std",      "norm_eps"};

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

namespace {

const ConfigKey& find_key(const std::string& key) {
  for (const auto& k : config_keys()) {
    if (k.key == key) return k;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const ConfigKey& k = find_key(key);
  try {
    k.set(cfg, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("invalid value for " + key + ": " + e.what());
  }
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) { return find_key(key).get(cfg); }

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
    }
    try {
      set_config_value(cfg, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << f.rdbuf();
  apply_config_text(cfg, buf.str(), path.string());
}

std::string config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += k.key + " = " + k.get(cfg) + "\n";
  return out;
}

void validate(const RunConfig& cfg) {
  cfg.model.validate();
  cfg.train.validate();
  if (cfg.n_base < 1) throw ConfigError("n_base must be positive");
  if (cfg.levels < 2) throw ConfigError("levels must be at least 2");
  if (cfg.image_size < 1) throw ConfigError("image_size must be positive");
  if (!(cfg.train_frac > 0.0 && cfg.train_frac < 1.0)) throw ConfigError("train_frac must lie in (0, 1)");
  if (cfg.eval_crops < 1) throw ConfigError("eval_crops must be positive");
  if (cfg.repeats < 1) throw ConfigError("repeats must be positive");
  if (!(cfg.grad_eps >= 1e-6 && cfg.grad_eps <= 1e-3)) throw ConfigError("grad_eps must lie in [1e-6, 1e-3]");
  parse_kinds(cfg.kinds);
  for (double f : parse_double_list(cfg.fractions, "fractions")) {
    if (!(f > 0.0 && f <= 0.8)) throw ConfigError("fractions must lie in (0, 0.8]");
  }
  for (int d : parse_int_list(cfg.depths, "depths")) {
    if (d < 1) throw ConfigError("depths must be positive");
  }
  if (cfg.mode != "repeats" && cfg.mode != "data-efficiency" && cfg.mode != "depth-ablation" &&
      cfg.mode != "component-ablation") {
    throw ConfigError("unknown protocol mode '" + cfg.mode + "'");
  }
}

std::string model_config_text(const ModelConfig& model) {
  RunConfig tmp;
  tmp.model = model;
  std::string out;
  for (const char* key : kModelKeys) out += std::string(key) + " = " + get_config_value(tmp, key) + "\n";
  return out;
}

ModelConfig parse_model_config(const std::string& text) {
  RunConfig tmp;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string key = eq == std::string::npos ? line : trim(line.substr(0, eq));
    bool known = false;
    for (const char* k : kModelKeys) known = known || key == k;
    if (!known || eq == std::string::npos) throw ConfigError("unexpected model config line '" + line + "'");
    set_config_value(tmp, key, line.substr(eq + 1));
  }
  tmp.model.validate();
  return tmp.model;
}

std::vector<DistortionKind> parse_kinds(const std::string& text) {
  if (trim(text) == "all") return all_kinds();
  std::vector<DistortionKind> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(parse_kind(trim(item)));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("kinds: ") + e.what());
    }
  }
  if (out.empty()) throw ConfigError("kinds: empty list");
  return out;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& key) {
  std::vector<double> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_number<double>(key, item));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

std::vector<int> parse_int_list(const std::string& text, const std::string& key) {
  std::vector<int> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_number<int>(key, item));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

}  // namespace deiqt
