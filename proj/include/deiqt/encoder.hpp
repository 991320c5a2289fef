#pragma once

#include "deiqt/autograd.hpp"
#include "deiqt/layers.hpp"
#include "deiqt/model.hpp"

namespace deiqt {

/// Splits a [C x H x W] image into non-overlapping p x p patches, one row
/// per patch in row-major grid order. Each row is flattened channel-major,
/// then row-major within the patch: index c*p*p + y*p + x.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, int patch_size);

/// Inverse of patchify.
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, int channels, int height, int width, int patch_size);

/// Token sequence [(N+1) x D]: row 0 is cls_token + pos[0], row i is
/// proj(patch_i) + pos[i].
template <typename T>
Var<T> embed(Tape<T>& tape, const Tensor<T>& image, const EmbeddingParams<T>& params,
             const ModelConfig& config);

/// Multi-head self-attention over the rows of `tokens`; the caller adds
/// the residual.
template <typename T>
AttentionOutput<T> mhsa(const Var<T>& tokens, const AttentionParams<T>& params, int heads);

/// Pre-norm block: Z = mhsa(Norm1(x)) + x; out = MLP(Norm2(Z)) + Z.
template <typename T>
Var<T> encoder_block(const Var<T>& tokens, const EncoderBlockParams<T>& block, const ModelConfig& config);

/// embed followed by every encoder block. Row 0 of the result is the CLS
/// output, rows 1..N are patch features.
template <typename T>
Var<T> encode(Tape<T>& tape, const Tensor<T>& image, const DeiqtModel<T>& model);

}  // namespace deiqt
