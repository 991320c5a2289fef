#include "deiqt/layers.hpp"

#include <cmath>

namespace deiqt {

template <typename T>
Var<T> linear(const Var<T>& x, const LinearParams<T>& p) {
  Tape<T>& tape = x.tape();
  return add_bias(matmul(x, tape.param(p.weight)), tape.param(p.bias));
}

template <typename T>
Var<T> norm(const Var<T>& x, const NormParams<T>& p, T eps) {
  Tape<T>& tape = x.tape();
  return layer_norm(x, tape.param(p.gain), tape.param(p.bias), eps);
}

template <typename T>
Var<T> mlp(const Var<T>& x, const MlpParams<T>& p) {
  return linear(gelu(linear(x, p.fc1)), p.fc2);
}

template <typename T>
AttentionOutput<T> multi_head_attention(const Var<T>& query_src, const Var<T>& context,
                                        const AttentionParams<T>& p, int heads) {
  const std::size_t width = query_src.shape().at(1);
  if (heads <= 0 || width % static_cast<std::size_t>(heads) != 0) {
    throw ShapeError("attention: width " + std::to_string(width) + " not divisible into " +
                     std::to_string(heads) + " heads");
  }
  if (context.shape().at(1) != width) throw ShapeError("attention: query/context width mismatch");
  const std::size_t d = width / heads;
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));

  const Var<T> q = linear(query_src, p.query);
  const Var<T> k = linear(context, p.key);
  const Var<T> v = linear(context, p.value);

  AttentionOutput<T> out;
  std::vector<Var<T>> head_outputs;
  for (int h = 0; h < heads; ++h) {
    const std::size_t c0 = h * d, c1 = c0 + d;
    const Var<T> qh = slice_cols(q, c0, c1);
    const Var<T> kh = slice_cols(k, c0, c1);
    const Var<T> vh = slice_cols(v, c0, c1);
    const Var<T> weights = softmax_lastdim(scale(matmul(qh, transpose(kh)), inv_sqrt_d));
    out.weights.push_back(weights);
    head_outputs.push_back(matmul(weights, vh));
  }
  const Var<T> merged = heads == 1 ? head_outputs[0] : concat_cols<T>(head_outputs);
  out.output = linear(merged, p.out);
  return out;
}

#define DEIQT_INSTANTIATE_LAYERS(T)                                                         \
  template Var<T> linear<T>(const Var<T>&, const LinearParams<T>&);                         \
  template Var<T> norm<T>(const Var<T>&, const NormParams<T>&, T);                          \
  template Var<T> mlp<T>(const Var<T>&, const MlpParams<T>&);                               \
  template AttentionOutput<T> multi_head_attention<T>(const Var<T>&, const Var<T>&,         \
                                                      const AttentionParams<T>&, int);

DEIQT_INSTANTIATE_LAYERS(float)
DEIQT_INSTANTIATE_LAYERS(double)

}  // namespace deiqt
