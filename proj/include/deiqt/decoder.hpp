#pragma once

#include <vector>

#include "deiqt/autograd.hpp"
#include "deiqt/layers.hpp"
#include "deiqt/model.hpp"

namespace deiqt {

/// Row l is t_cls + panel[l]: the CLS token expanded L times plus J.
template <typename T>
Var<T> panel_inputs(const Var<T>& t_cls, const Var<T>& panel);

/// Decoder queries MHSA(Norm(x)) + x. With x = L copies of the CLS token
/// this is the single-query form; with x = CLS + J it is the panel form.
template <typename T>
Var<T> make_queries(const Var<T>& x, const QueryParams<T>& params, const ModelConfig& config);

/// S = MLP(MHCA(Norm(q), K, V) + q), with keys and values projected from
/// the (unnormalized) patch features. `weights` holds one [L x N] map per
/// head.
template <typename T>
AttentionOutput<T> cross_attend(const Var<T>& queries, const Var<T>& patch_feats,
                                const DecoderBlockParams<T>& block, const ModelConfig& config);

/// Shared scoring MLP applied to every row: [L x D] -> [L x 1].
template <typename T>
Var<T> score_head(const Var<T>& embeddings, const HeadParams<T>& params);

template <typename T>
struct PredictionVars {
  Var<T> score;               // [1], mean of panel_scores
  Var<T> panel_scores;        // [L x 1]
  Var<T> quality_embeddings;  // [L x D], rows fed to the head
  Var<T> encoded;             // encoder output [(N+1) x D]
  /// attention[layer][head] = [L x N] cross-attention weights.
  std::vector<std::vector<Var<T>>> attention;
};

/// Full forward pass for one crop, recorded on `tape`.
template <typename T>
PredictionVars<T> predict(Tape<T>& tape, const Tensor<T>& image, const DeiqtModel<T>& model);

template <typename T>
struct Prediction {
  double score = 0.0;
  std::vector<double> panel_scores;
  Tensor<T> quality_embeddings;
  std::vector<std::vector<Tensor<T>>> attention;
};

/// Inference without gradient recording.
template <typename T>
Prediction<T> predict(const DeiqtModel<T>& model, const Tensor<T>& image);

}  // namespace deiqt
