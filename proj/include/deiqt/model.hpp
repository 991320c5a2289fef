#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "deiqt/gradcheck.hpp"
#include "deiqt/tensor.hpp"

namespace deiqt {

/// Which head sits on top of the encoder. `kDeiqt` is the full model; the
/// others are the ablation rows used by the component-ablation protocol.
enum class Variant {
  kDeiqt,              // CLS + panel -> query MHSA -> cross-attention decoder -> head
  kEncoderOnly,        // CLS -> head (ViT-BIQA)
  kPanelNoDecoder,     // CLS + panel -> head, mean over members
  kDecoderRandomQuery, // learnable random queries -> decoder -> head, CLS unused
  kDecoderClsQuery,    // CLS -> query MHSA -> decoder -> head, single query, no panel
};

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
  int patch_size = 16;
  int dim = 384;
  int heads = 6;
  int encoder_depth = 12;
  int decoder_depth = 1;
  int panel_size = 6;
  double mlp_ratio = 4.0;
  int channels = 3;
  int crop = 224;
  Variant variant = Variant::kDeiqt;
  double init_std = 0.02;
  double norm_eps = 1e-6;

  /// Small configuration used by the gradient and oracle suites.
  static ModelConfig toy();

  /// Throws ConfigError when D is not divisible by h or the crop is not
  /// an exact patch grid.
  void validate() const;

  int head_dim() const { return dim / heads; }
  int grid() const { return crop / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int patch_elems() const { return patch_size * patch_size * channels; }
  int mlp_hidden() const;
  /// Number of query rows entering the decoder / head.
  int query_rows() const;
  bool has_panel() const;
  bool has_decoder() const;
};

template <typename T>
struct NamedConstTensor {
  std::string name;
  const Tensor<T>* tensor = nullptr;
};

/// Weight is stored [in x out]; the layer computes x . W + b.
template <typename T>
struct LinearParams {
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
struct NormParams {
  Tensor<T> gain;
  Tensor<T> bias;
};

template <typename T>
struct AttentionParams {
  LinearParams<T> query;
  LinearParams<T> key;
  LinearParams<T> value;
  LinearParams<T> out;
};

template <typename T>
struct MlpParams {
  LinearParams<T> fc1;
  LinearParams<T> fc2;
};

template <typename T>
struct EncoderBlockParams {
  NormParams<T> norm1;
  AttentionParams<T> attn;
  NormParams<T> norm2;
  MlpParams<T> mlp;
};

template <typename T>
struct EmbeddingParams {
  LinearParams<T> patch_proj;  // p*p*C -> D
  Tensor<T> cls_token;         // [1 x D]
  Tensor<T> pos_embed;         // [(N+1) x D]
};

template <typename T>
struct PanelParams {
  Tensor<T> embeddings;  // J, [L x D]
};

/// Self-attention sublayer that turns decoder inputs into queries.
template <typename T>
struct QueryParams {
  NormParams<T> norm;
  AttentionParams<T> attn;
};

/// One cross-attention layer: S = MLP(MHCA(Norm(q), K, V) + q).
template <typename T>
struct DecoderBlockParams {
  NormParams<T> norm;
  AttentionParams<T> cross;
  MlpParams<T> mlp;
};

/// Shared scoring MLP, D -> D/2 -> 1.
template <typename T>
struct HeadParams {
  LinearParams<T> fc1;
  LinearParams<T> fc2;
};

template <typename T>
struct DeiqtModel {
  ModelConfig config;
  EmbeddingParams<T> embed;
  std::vector<EncoderBlockParams<T>> encoder;
  PanelParams<T> panel;
  QueryParams<T> query;
  std::vector<DecoderBlockParams<T>> decoder;
  HeadParams<T> head;

  /// Every trainable tensor with its stable dotted name, in a fixed order.
  std::vector<NamedTensor<T>> parameters();
  std::vector<NamedConstTensor<T>> parameters() const;
  std::size_t parameter_count() const;

  void zero_grad();
  void set_requires_grad(bool on);
};

/// Truncated-normal (std = config.init_std) weights, zero biases, unit
/// norm gains. Deterministic in the generator state.
template <typename T>
DeiqtModel<T> init_model(const ModelConfig& config, Rng& rng);

template <typename T, typename U>
DeiqtModel<U> cast_model(const DeiqtModel<T>& model);

}  // namespace deiqt
