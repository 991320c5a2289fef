#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "deiqt/errors.hpp"

namespace deiqt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Element precision of a run. Gradient checks and oracles use 64-bit.
enum class Precision { kFloat32 = 32, kFloat64 = 64 };

Precision parse_precision(const std::string& text);

/// Dense row-major array. `grad` is an accumulator written by Tape::backward;
/// it is mutable so that a const model can still receive gradients.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  mutable std::vector<T> grad;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not hold " +
                       std::to_string(data.size()) + " elements");
    }
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }
  std::size_t last_dim() const { return shape.empty() ? 1 : shape.back(); }

  T& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  T at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }
  T& operator[](std::size_t i) { return data[i]; }
  T operator[](std::size_t i) const { return data[i]; }

  std::span<T> row(std::size_t r) { return {data.data() + r * last_dim(), last_dim()}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * last_dim(), last_dim()}; }

  bool has_grad() const { return !grad.empty(); }
  void zero_grad() const { grad.assign(data.size(), T(0)); }
  void clear_grad() const { grad.clear(); }

  bool all_finite() const {
    // NaN and Inf are exactly the values with every exponent bit set.
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    constexpr Bits kExp = static_cast<Bits>(sizeof(T) == 4 ? 0x7f800000ull : 0x7ff0000000000000ull);
    Bits bad = 0;
    for (T v : data) {
      const Bits b = std::bit_cast<Bits>(v);
      bad |= static_cast<Bits>((b & kExp) == kExp);
    }
    return bad == 0;
  }

  /// Throws NonFiniteError naming `what` when any element is NaN or Inf.
  void check_finite(const char* what) const {
    if (!all_finite()) throw NonFiniteError(std::string(what) + ": non-finite element");
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    out.requires_grad = requires_grad;
    return out;
  }
};

/// Seeded generator with a platform-stable stream. The engine is
/// std::mt19937_64; the real-valued draws are built here rather than via
/// <random> distributions, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer on [0, n).
  std::size_t uniform_index(std::size_t n);

  double normal();
  /// Normal with standard deviation `std`, redrawn until within `bound` stds.
  double truncated_normal(double std, double bound = 2.0);

  template <typename V>
  void shuffle(std::vector<V>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Independent child seed for (seed, stream), via the splitmix64 finalizer.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

template <typename T>
Tensor<T> random_normal(Shape shape, Rng& rng, double std = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(std * rng.normal());
  return t;
}

template <typename T>
Tensor<T> truncated_normal(Shape shape, Rng& rng, double std) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.truncated_normal(std));
  return t;
}

}  // namespace deiqt
