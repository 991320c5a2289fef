#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "deiqt/model.hpp"
#include "deiqt/training.hpp"

namespace deiqt {

/// Desk-scale model used by the command-line defaults: p=4, crop 16,
/// D=64, h=4, encoder depth 4, decoder depth 1, L=6.
ModelConfig desk_model();

/// Every setting a command can read. Each field is reachable as a
/// `key = value` line in a config file and as a `--key` flag (underscores
/// become dashes).
struct RunConfig {
  ModelConfig model = desk_model();
  TrainConfig train;
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string manifest;
  std::string test_manifest;
  std::string checkpoint;
  std::string image;
  bool resume = false;

  int n_base = 100;
  int levels = 5;
  std::string kinds = "all";
  int image_size = 32;

  double train_frac = 0.8;
  int eval_crops = 10;

  std::string mode = "repeats";
  int repeats = 10;
  std::string fractions = "0.2,0.4,0.6";
  std::string depths = "1,2,4,8";

  double grad_eps = 1e-4;
};

struct ConfigKey {
  std::string key;
  std::string doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<ConfigKey>& config_keys();

/// Throws ConfigError for an unknown key or a malformed value.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

/// Parses `key = value` lines; `#` starts a comment. `origin` names the
/// source in error messages.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin);
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

/// All keys in table order, one `key = value` per line.
std::string config_text(const RunConfig& cfg);
/// Cross-field checks; throws ConfigError.
void validate(const RunConfig& cfg);

/// The model keys only, in the same line format.
std::string model_config_text(const ModelConfig& model);
ModelConfig parse_model_config(const std::string& text);

std::vector<DistortionKind> parse_kinds(const std::string& text);
std::vector<double> parse_double_list(const std::string& text, const std::string& key);
std::vector<int> parse_int_list(const std::string& text, const std::string& key);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace deiqt
