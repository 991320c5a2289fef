#pragma once

#include <vector>

#include "deiqt/autograd.hpp"
#include "deiqt/model.hpp"

namespace deiqt {

template <typename T>
Var<T> linear(const Var<T>& x, const LinearParams<T>& p);

template <typename T>
Var<T> norm(const Var<T>& x, const NormParams<T>& p, T eps);

/// fc1 -> GELU -> fc2.
template <typename T>
Var<T> mlp(const Var<T>& x, const MlpParams<T>& p);

template <typename T>
struct AttentionOutput {
  Var<T> output;
  /// Per-head softmax weights, each [rows(query) x rows(context)].
  std::vector<Var<T>> weights;
};

/// Multi-head scaled dot-product attention. Queries are projected from
/// `query_src`, keys and values from `context`; heads are concatenated and
/// passed through the output projection. No residual.
template <typename T>
AttentionOutput<T> multi_head_attention(const Var<T>& query_src, const Var<T>& context,
                                        const AttentionParams<T>& p, int heads);

}  // namespace deiqt
