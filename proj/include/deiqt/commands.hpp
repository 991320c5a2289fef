#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deiqt/data.hpp"
#include "deiqt/metrics.hpp"
#include "deiqt/run_config.hpp"

namespace deiqt {

// Each command validates the config, writes its files under `cfg.out`
// together with the effective `config.txt`, and returns the text it prints.

/// Writes images/*.ppm and manifest.csv. Generation draws from Rng(seed).
std::string cmd_gen_data(const RunConfig& cfg);

/// Trains on `manifest` (split by group unless `test_manifest` is given),
/// then writes the checkpoint, train_log.txt and the train/test reports.
/// With `resume`, continues from the step stored in `checkpoint`.
std::string cmd_train(const RunConfig& cfg);

/// Scores `manifest` with the model in `checkpoint`; writes eval_report.txt.
std::string cmd_eval(const RunConfig& cfg);

/// Finite-difference check of every parameter of a freshly initialised
/// model (64-bit) on one random crop.
std::string cmd_gradcheck(const RunConfig& cfg);

/// Panel cosine similarity over `manifest`; uses `checkpoint` when set and
/// an untrained model otherwise.
std::string cmd_panel_sim(const RunConfig& cfg);

/// Cross-attention map of the centre crop of `image`.
std::string cmd_attn_map(const RunConfig& cfg);

std::string cmd_protocol(const RunConfig& cfg);

// Protocols.

struct RunRecord {
  std::string group;
  int index = 0;
  std::uint64_t seed = 0;
  std::size_t train_n = 0;
  std::size_t test_n = 0;
  double srcc = 0.0;
  double plcc = 0.0;
};

struct GroupSummary {
  std::string group;
  std::size_t runs = 0;
  double median_srcc = 0.0;
  double median_plcc = 0.0;
  double std_srcc = 0.0;
  double std_plcc = 0.0;
};

struct ProtocolReport {
  std::string mode;
  std::vector<RunRecord> runs;
  std::vector<GroupSummary> summaries;
};

inline constexpr const char* kProtocolModes[] = {"repeats", "data-efficiency", "depth-ablation",
                                                 "component-ablation"};

/// Run r of every group uses the seed s = derive_seed(cfg.seed, r): the
/// split draws from derive_seed(s, 0), the initialisation from
/// derive_seed(s, 1) and training from derive_seed(s, 2). Groups therefore
/// share splits, and runs are independent. Every run starts from a fresh
/// initialisation.
///   repeats             one group, `repeats` runs
///   data-efficiency     one group per fraction; a fixed 20% of groups is
///                       held out and the train set is that fraction of all
///                       groups, drawn from the remaining pool
///   depth-ablation      one group per decoder depth
///   component-ablation  one group per model variant
ProtocolReport run_protocol(const RunConfig& cfg, const Manifest& data);

/// `run ...` lines in execution order, then one `summary ...` line per group.
std::string format_protocol(const ProtocolReport& report);

double median(std::vector<double> values);
/// Standard deviation with the n - 1 denominator; 0 for a single value.
double sample_std(std::span<const double> values);

}  // namespace deiqt
