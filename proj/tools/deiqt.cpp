#include <iostream>
#include <map>
#include <string>
#include <typeinfo>

#include "CLI11.hpp"
#include "deiqt/commands.hpp"
#include "deiqt/errors.hpp"

namespace {

using deiqt::RunConfig;

struct Command {
  const char* name;
  const char* help;
  std::string (*run)(const RunConfig&);
};

const Command kCommands[] = {
    {"gen-data", "write a synthetic distortion dataset and its manifest", deiqt::cmd_gen_data},
    {"train", "train on a manifest and write a checkpoint", deiqt::cmd_train},
    {"eval", "score a manifest with a checkpoint", deiqt::cmd_eval},
    {"protocol", "repeated splits, data-efficiency sweep or ablations", deiqt::cmd_protocol},
    {"gradcheck", "finite-difference check of every model parameter", deiqt::cmd_gradcheck},
    {"panel-sim", "cosine similarity between the panel's quality embeddings", deiqt::cmd_panel_sim},
    {"attn-map", "cross-attention map of one image", deiqt::cmd_attn_map},
};

std::string dashed(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const deiqt::ConfigError*>(&e)) return "config";
  if (dynamic_cast<const deiqt::ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const deiqt::NonFiniteError*>(&e)) return "non_finite";
  if (dynamic_cast<const deiqt::ContractError*>(&e)) return "contract";
  if (dynamic_cast<const deiqt::IoError*>(&e)) return "io";
  if (dynamic_cast<const deiqt::CheckpointError*>(&e)) return "checkpoint";
  return "internal";
}

std::string one_line(std::string text) {
  for (char& c : text) {
    if (c == '\n' || c == '\r') c = ' ';
    if (c == '"') c = '\'';
  }
  return text;
}

int fail(const std::string& kind, const std::string& message) {
  std::cerr << "error kind=" << kind << " message=\"" << one_line(message) << "\"\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blind image quality assessment: ViT encoder with an attention-panel quality decoder"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string protocol_mode;
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> options;
  for (const Command& c : kCommands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_path, "config file of `key = value` lines; flags override it");
    if (std::string(c.name) == "protocol") {
      sub->add_option("MODE", protocol_mode, "repeats | data-efficiency | depth-ablation | component-ablation");
    }
    for (const auto& key : deiqt::config_keys()) {
      CLI::Option* opt = sub->add_option("--" + dashed(key.key), flags[key.key], key.doc);
      options.emplace(std::string(c.name) + "/" + key.key, opt);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  const CLI::App* chosen = app.get_subcommands().front();
  const Command* command = nullptr;
  for (const Command& c : kCommands) {
    if (chosen->get_name() == c.name) command = &c;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) deiqt::apply_config_file(cfg, config_path);
    for (const auto& key : deiqt::config_keys()) {
      if (options.at(chosen->get_name() + "/" + key.key)->count() > 0) {
        deiqt::set_config_value(cfg, key.key, flags[key.key]);
      }
    }
    if (!protocol_mode.empty()) cfg.mode = protocol_mode;
    deiqt::validate(cfg);
    std::cout << command->run(cfg);
    return 0;
  } catch (const std::exception& e) {
    return fail(error_kind(e), e.what());
  }
}
