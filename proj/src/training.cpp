#include "deiqt/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "deiqt/decoder.hpp"

namespace deiqt {

void TrainConfig::validate() const {
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (!(lr_decay_factor > 0.0)) throw ConfigError("lr_decay_factor must be positive");
  if (decay_every_epochs <= 0) throw ConfigError("decay_every must be positive");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (crops_per_image <= 0) throw ConfigError("crops_per_image must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(smooth_l1_beta > 0.0)) throw ConfigError("smooth_l1_beta must be positive");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
}

double smooth_l1(double pred, double target, double beta) {
  if (!(beta > 0.0)) throw ContractError("smooth_l1: beta must be positive");
  const double d = std::abs(pred - target);
  return d < beta ? 0.5 * d * d / beta : d - 0.5 * beta;
}

template <typename T>
Var<T> smooth_l1_loss(const Var<T>& pred, T target, T beta) {
  if (pred.numel() != 1) throw ShapeError("smooth_l1_loss: expected a scalar prediction");
  if (!(beta > T(0))) throw ContractError("smooth_l1_loss: beta must be positive");
  const T d = pred.item() - target;
  const T ad = std::abs(d);
  const T value = ad < beta ? T(0.5) * d * d / beta : ad - T(0.5) * beta;
  const T slope = ad < beta ? d / beta : (d > T(0) ? T(1) : T(-1));
  const std::size_t ip = pred.id();
  return pred.tape().push(Tensor<T>({1}, {value}), {pred}, [ip, slope](Tape<T>& t, std::size_t self) {
    t.grad(ip)[0] += slope * t.grad(self)[0];
  });
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw ContractError("lr_at: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(cfg.epochs) + ")");
  }
  return cfg.base_lr / std::pow(cfg.lr_decay_factor, epoch / cfg.decay_every_epochs);
}

std::vector<CropWindow> crop_windows(std::size_t height, std::size_t width, int n, int hw, Rng& rng) {
  if (hw <= 0 || n <= 0) throw ContractError("crop_windows: crop size and count must be positive");
  const std::size_t s = hw;
  if (height < s || width < s) {
    throw ContractError("image " + std::to_string(height) + "x" + std::to_string(width) +
                        " is smaller than the " + std::to_string(hw) +
                        "-pixel crop; resize the image or configure a smaller crop");
  }
  std::vector<CropWindow> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const std::size_t top = rng.uniform_index(height - s + 1);
    const std::size_t left = rng.uniform_index(width - s + 1);
    out.push_back({top, left});
  }
  return out;
}

std::vector<Image> sample_crops(const Image& image, int n, int hw, Rng& rng) {
  if (image.rank() != 3) throw ShapeError("sample_crops: expected [C x H x W]");
  std::vector<Image> out;
  for (const auto& w : crop_windows(image.shape[1], image.shape[2], n, hw, rng)) {
    out.push_back(crop(image, w.top, w.left, hw));
  }
  return out;
}

template <typename T>
OptimizerState<T> make_optimizer_state(std::span<const NamedTensor<T>> params, const TrainConfig& cfg) {
  OptimizerState<T> s;
  s.beta1 = cfg.beta1;
  s.beta2 = cfg.beta2;
  s.eps = cfg.adam_eps;
  s.weight_decay = cfg.weight_decay;
  for (const auto& p : params) {
    s.first.emplace_back(p.tensor->numel(), T(0));
    s.second.emplace_back(p.tensor->numel(), T(0));
  }
  return s;
}

template <typename T>
void optimizer_step(std::span<const NamedTensor<T>> params, OptimizerState<T>& state, double lr) {
  if (state.first.size() != params.size()) throw ContractError("optimizer_step: state built for other parameters");
  for (const auto& p : params) {
    for (T g : p.tensor->grad) {
      if (!std::isfinite(g)) throw NonFiniteError("optimizer_step: non-finite gradient in " + p.name);
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& t = *params[k].tensor;
    auto& m = state.first[k];
    auto& v = state.second[k];
    if (m.size() != t.numel()) throw ContractError("optimizer_step: moment shape mismatch for " + params[k].name);
    const bool has_grad = t.grad.size() == t.numel();
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double g = has_grad ? static_cast<double>(t.grad[i]) : 0.0;
      const double mi = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      const double vi = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = (mi / bc1) / (std::sqrt(vi / bc2) + state.eps);
      const double theta = t.data[i];
      t.data[i] = static_cast<T>(theta - lr * (update + state.weight_decay * theta));
    }
    t.clear_grad();
  }
}

std::string format_step(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "step=%ld epoch=%d lr=%.6g loss=%.9g grad_norm=%.9g cls_grad_mean=%.9g cls_grad_var=%.9g",
                r.step, r.epoch, r.lr, r.loss, r.grad_norm, r.cls_grad_mean, r.cls_grad_var);
  return buf;
}

LabelScale label_scale(const Manifest& train, bool normalize) {
  LabelScale s;
  if (!normalize || train.empty()) return s;
  double lo = train.samples[0].score, hi = lo;
  for (const auto& x : train.samples) {
    lo = std::min(lo, x.score);
    hi = std::max(hi, x.score);
  }
  s.offset = lo;
  s.scale = hi > lo ? 1.0 / (hi - lo) : 1.0;
  return s;
}

namespace {

struct CropItem {
  std::size_t sample = 0;
  CropWindow window;
};

}  // namespace

template <typename T>
TrainLog fit(DeiqtModel<T>& model, const Manifest& train, const TrainConfig& cfg, const FitHooks<T>& hooks) {
  cfg.validate();
  if (train.empty()) throw ContractError("fit: empty training manifest");
  for (const auto& s : train.samples) {
    if (!s.image) throw ContractError("fit: image not loaded for " + s.image_ref);
  }
  const LabelScale labels = label_scale(train, cfg.normalize_labels);
  const int hw = model.config.crop;
  const T beta = static_cast<T>(cfg.smooth_l1_beta);

  std::vector<NamedTensor<T>> params = model.parameters();
  OptimizerState<T> local_state;
  OptimizerState<T>* state = hooks.optimizer;
  if (state == nullptr) {
    local_state = make_optimizer_state<T>(params, cfg);
    state = &local_state;
  }
  model.set_requires_grad(true);
  model.zero_grad();

  TrainLog log;
  long step = 0;
  Tape<T> tape;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::vector<CropItem> items;
    items.reserve(train.size() * cfg.crops_per_image);
    for (std::size_t i = 0; i < train.size(); ++i) {
      const Image& img = *train.samples[i].image;
      for (const auto& w : crop_windows(img.shape[1], img.shape[2], cfg.crops_per_image, hw, rng)) {
        items.push_back({i, w});
      }
    }
    rng.shuffle(items);

    for (std::size_t begin = 0; begin < items.size(); begin += cfg.batch_size) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
      if (step < hooks.start_step) {
        ++step;
        continue;
      }
      const std::size_t end = std::min(items.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      const T weight = T(1) / static_cast<T>(end - begin);
      double batch_loss = 0.0;
      for (std::size_t k = begin; k < end; ++k) {
        const Sample& s = train.samples[items[k].sample];
        const Tensor<T> input = to_model_input<T>(crop(*s.image, items[k].window.top, items[k].window.left, hw));
        const PredictionVars<T> pred = predict(tape, input, model);
        const Var<T> loss = smooth_l1_loss(pred.score, static_cast<T>(labels.apply(s.score)), beta);
        batch_loss += static_cast<double>(loss.item()) * static_cast<double>(weight);
        tape.backward(scale(loss, weight));
      }
      if (!std::isfinite(batch_loss)) {
        throw NonFiniteError("fit: non-finite loss at step " + std::to_string(step) + " (epoch " +
                             std::to_string(epoch) + ")");
      }

      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.loss = batch_loss;
      double sq = 0.0;
      for (const auto& p : params) {
        for (T g : p.tensor->grad) sq += static_cast<double>(g) * static_cast<double>(g);
      }
      rec.grad_norm = std::sqrt(sq);
      const auto& cls_grad = model.embed.cls_token.grad;
      rec.cls_grad.assign(cls_grad.begin(), cls_grad.end());
      if (rec.cls_grad.empty()) rec.cls_grad.assign(model.embed.cls_token.numel(), 0.0);
      double mu = 0.0;
      for (double g : rec.cls_grad) mu += g;
      mu /= static_cast<double>(rec.cls_grad.size());
      double var = 0.0;
      for (double g : rec.cls_grad) var += (g - mu) * (g - mu);
      rec.cls_grad_mean = mu;
      rec.cls_grad_var = var / static_cast<double>(rec.cls_grad.size());

      optimizer_step<T>(params, *state, lr);
      if (hooks.on_step) hooks.on_step(rec);
      log.steps.push_back(std::move(rec));
      ++step;
    }
    if (cfg.max_steps > 0 && step >= cfg.max_steps) {
      if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, model);
      break;
    }
    if (hooks.on_epoch_end && step > hooks.start_step) hooks.on_epoch_end(epoch, model);
  }
  return log;
}

#define DEIQT_INSTANTIATE_TRAINING(T)                                                                \
  template Var<T> smooth_l1_loss<T>(const Var<T>&, T, T);                                            \
  template OptimizerState<T> make_optimizer_state<T>(std::span<const NamedTensor<T>>, const TrainConfig&); \
  template void optimizer_step<T>(std::span<const NamedTensor<T>>, OptimizerState<T>&, double);      \
  template TrainLog fit<T>(DeiqtModel<T>&, const Manifest&, const TrainConfig&, const FitHooks<T>&);

DEIQT_INSTANTIATE_TRAINING(float)
DEIQT_INSTANTIATE_TRAINING(double)

}  // namespace deiqt
