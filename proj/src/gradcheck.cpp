#include "deiqt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace deiqt {

namespace {

double evaluate(const LossFn& loss, const std::string& param_name) {
  Tape<double> tape(false);
  const double v = loss(tape).item();
  if (!std::isfinite(v)) throw NonFiniteError("grad_check: non-finite loss while perturbing " + param_name);
  return v;
}

}  // namespace

GradCheckResult grad_check(const LossFn& loss, std::span<const NamedTensor<double>> params, double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw ContractError("grad_check: eps must lie in [1e-6, 1e-3]");

  std::vector<bool> saved_flags;
  for (const auto& p : params) {
    saved_flags.push_back(p.tensor->requires_grad);
    p.tensor->requires_grad = true;
    p.tensor->zero_grad();
  }
  {
    Tape<double> tape;
    Var<double> l = loss(tape);
    if (!std::isfinite(l.item())) throw NonFiniteError("grad_check: non-finite loss at the base point");
    tape.backward(l);
  }

  GradCheckResult result;
  for (const auto& p : params) {
    Tensor<double>& t = *p.tensor;
    const std::vector<double> analytic = t.grad;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double orig = t.data[i];
      t.data[i] = orig + eps;
      const double up = evaluate(loss, p.name);
      t.data[i] = orig - eps;
      const double down = evaluate(loss, p.name);
      t.data[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.elements_checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = p.name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k].tensor->requires_grad = saved_flags[k];
  return result;
}

}  // namespace deiqt
