#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "deiqt/data.hpp"
#include "deiqt/decoder.hpp"
#include "deiqt/model.hpp"
#include "deiqt/training.hpp"

namespace deiqt {

/// 1-based ranks; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

/// Spearman correlation: Pearson correlation of the average ranks.
/// Throws ContractError for n < 2, length mismatch or zero rank variance.
double srcc(std::span<const double> pred, std::span<const double> label);
/// Pearson correlation. Throws ContractError for n < 2 or zero variance.
double plcc(std::span<const double> pred, std::span<const double> label);

struct EvalReport {
  double srcc = 0.0;
  double plcc = 0.0;
  std::vector<std::string> refs;
  std::vector<double> predictions;
  std::vector<double> labels;
  std::size_t n = 0;
};

EvalReport make_report(std::vector<std::string> refs, std::vector<double> predictions, std::vector<double> labels);

/// Per-image score: mean over `crops_per_image` random crops. Crop
/// positions for image i come from derive_seed(seed, i).
template <typename T>
std::vector<double> predict_images(const DeiqtModel<T>& model, const Manifest& manifest, int crops_per_image,
                                   std::uint64_t seed);

template <typename T>
EvalReport evaluate(const DeiqtModel<T>& model, const Manifest& manifest, int crops_per_image = 10,
                    std::uint64_t seed = 0);

/// `pred=.. label=.. ref=..` per image, then `srcc=.. plcc=.. n=..`.
std::string format_report(const EvalReport& report);

struct PanelDiagnostics {
  /// L x L mean pairwise cosine similarity of the quality embeddings.
  Tensor<double> similarity;
  /// Per-image max - min of the panel scores.
  std::vector<double> spread;

  double mean_off_diagonal() const;
};

/// Pairwise cosine similarity of the rows of an [L x D] matrix.
Tensor<double> cosine_matrix(const Tensor<double>& rows);

/// Uses the centre crop of each image. Throws NonFiniteError on a
/// zero-norm embedding.
template <typename T>
PanelDiagnostics panel_cosine(const DeiqtModel<T>& model, const Manifest& manifest);

std::string format_panel(const PanelDiagnostics& diag);

struct GradHistogram {
  /// bins + 1 edges, symmetric about zero; zero is the centre of the middle bin.
  std::vector<double> edges;
  std::vector<long> steps;
  std::vector<std::vector<std::size_t>> counts;
  std::vector<double> variance;
};

/// Histograms of each step's CLS gradient snapshot over shared edges.
/// `bins` must be odd. Throws ContractError on an empty log.
GradHistogram cls_grad_stats(const TrainLog& log, int bins = 41);

/// First step index s where the mean variance over [s, s + window) falls
/// below `fraction` of the mean over the first window; -1 if never.
long variance_decay_step(std::span<const double> variance, double fraction = 0.1, std::size_t window = 5);

std::string format_histogram(const GradHistogram& hist);

/// Raw per-patch cross-attention of the last decoder layer, averaged over
/// heads and panel rows: a grid x grid tensor that sums to 1.
template <typename T>
Tensor<double> attention_grid(const Prediction<T>& prediction, const ModelConfig& config);

/// attention_grid upsampled (nearest neighbour) to the crop size and
/// rescaled to [0, 1]. A constant grid maps to all ones.
template <typename T>
Tensor<double> attention_map(const DeiqtModel<T>& model, const Tensor<T>& image);

// Plain SVG emitters.

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

std::string svg_scatter(std::span<const double> x, std::span<const double> y, const std::string& title,
                        const std::string& x_label, const std::string& y_label);
std::string svg_lines(std::span<const Series> series, const std::string& title, const std::string& x_label,
                      const std::string& y_label);
std::string svg_heatmap(const Tensor<double>& values, const std::string& title);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace deiqt
