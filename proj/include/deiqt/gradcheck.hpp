#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "deiqt/autograd.hpp"

namespace deiqt {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor = nullptr;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t elements_checked = 0;
};

/// Builds a scalar loss on the given tape from the current parameter values.
using LossFn = std::function<Var<double>(Tape<double>&)>;

/// Compares reverse-mode gradients of `loss` against central differences
/// (f(x+eps) - f(x-eps)) / 2eps for every element of every tensor in
/// `params`. The error per element is |a - n| / max(|a|, |n|, 1e-8).
/// Parameter values are restored on return; their `grad` is left holding
/// the analytic gradient.
GradCheckResult grad_check(const LossFn& loss, std::span<const NamedTensor<double>> params,
                           double eps = 1e-4);

}  // namespace deiqt
