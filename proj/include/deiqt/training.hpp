#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "deiqt/autograd.hpp"
#include "deiqt/data.hpp"
#include "deiqt/model.hpp"

namespace deiqt {

struct TrainConfig {
  int epochs = 9;
  double base_lr = 2e-4;
  double lr_decay_factor = 10.0;
  int decay_every_epochs = 3;
  int batch_size = 16;
  int crops_per_image = 10;
  std::uint64_t seed = 0;
  Precision precision = Precision::kFloat32;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double smooth_l1_beta = 1.0;
  /// Min-max rescale labels of the training set to [0, 1].
  bool normalize_labels = false;
  /// Stop after this many optimizer steps in total; 0 means no limit.
  long max_steps = 0;

  void validate() const;
};

/// 0.5 d^2 / beta when |d| < beta, else |d| - 0.5 beta, with d = pred - target.
double smooth_l1(double pred, double target, double beta = 1.0);

/// Tape op for smooth_l1 on a single-element prediction.
template <typename T>
Var<T> smooth_l1_loss(const Var<T>& pred, T target, T beta);

/// base_lr / decay_factor ^ floor(epoch / decay_every).
double lr_at(int epoch, const TrainConfig& cfg);

struct CropWindow {
  std::size_t top = 0;
  std::size_t left = 0;
  bool operator==(const CropWindow&) const = default;
};

/// `n` uniformly placed hw x hw windows inside an h x w image.
std::vector<CropWindow> crop_windows(std::size_t height, std::size_t width, int n, int hw, Rng& rng);
std::vector<Image> sample_crops(const Image& image, int n, int hw, Rng& rng);

/// Adaptive-moment state with decoupled weight decay; one moment pair per
/// parameter tensor, in the order of the parameter list it was built for.
template <typename T>
struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  long step = 0;
  std::vector<std::vector<T>> first;
  std::vector<std::vector<T>> second;
};

template <typename T>
OptimizerState<T> make_optimizer_state(std::span<const NamedTensor<T>> params, const TrainConfig& cfg);

/// One AdamW update from each tensor's `grad` (missing grads count as
/// zero), then clears the gradients. Throws NonFiniteError naming the first
/// parameter with a NaN/Inf gradient, before anything is modified.
template <typename T>
void optimizer_step(std::span<const NamedTensor<T>> params, OptimizerState<T>& state, double lr);

struct StepRecord {
  long step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  /// Gradient of the CLS-token parameter for this step (empty if disabled).
  std::vector<double> cls_grad;
  double cls_grad_mean = 0.0;
  double cls_grad_var = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
};

/// One line: `step=.. epoch=.. lr=.. loss=.. grad_norm=.. cls_grad_mean=.. cls_grad_var=..`.
std::string format_step(const StepRecord& record);

template <typename T>
struct FitHooks {
  std::function<void(const StepRecord&)> on_step;
  /// Called after each completed epoch with the current model.
  std::function<void(int epoch, const DeiqtModel<T>&)> on_epoch_end;
  /// Resume point: steps before it are skipped without touching the model.
  long start_step = 0;
  /// Optimizer state to continue from; a fresh one is made when null.
  OptimizerState<T>* optimizer = nullptr;
};

/// Label scaling applied by fit when normalize_labels is on.
struct LabelScale {
  double offset = 0.0;
  double scale = 1.0;
  double apply(double y) const { return (y - offset) * scale; }
};
LabelScale label_scale(const Manifest& train, bool normalize);

/// Mini-batch training over random crops. Each epoch draws
/// crops_per_image windows per image, shuffles them with a generator
/// derived from (seed, epoch), and takes one optimizer step per batch.
/// Every image must already be loaded.
template <typename T>
TrainLog fit(DeiqtModel<T>& model, const Manifest& train, const TrainConfig& cfg, const FitHooks<T>& hooks = {});

}  // namespace deiqt
