#include "deiqt/encoder.hpp"

#include <array>

namespace deiqt {

template <typename T>
Tensor<T> patchify(const Tensor<T>& image, int patch_size) {
  if (image.rank() != 3) throw ShapeError("patchify: expected [C x H x W], got " + shape_str(image.shape));
  if (patch_size <= 0) throw ShapeError("patchify: patch size must be positive");
  const std::size_t c = image.shape[0], h = image.shape[1], w = image.shape[2];
  const std::size_t p = patch_size;
  if (h % p != 0 || w % p != 0) {
    throw ShapeError("patchify: image " + shape_str(image.shape) + " is not divisible by patch size " +
                     std::to_string(p));
  }
  const std::size_t gh = h / p, gw = w / p;
  Tensor<T> out({gh * gw, c * p * p});
  for (std::size_t gy = 0; gy < gh; ++gy) {
    for (std::size_t gx = 0; gx < gw; ++gx) {
      T* row = out.data.data() + (gy * gw + gx) * c * p * p;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < p; ++y) {
          const T* src = image.data.data() + (ch * h + gy * p + y) * w + gx * p;
          std::copy_n(src, p, row + (ch * p + y) * p);
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, int channels, int height, int width, int patch_size) {
  const std::size_t c = channels, h = height, w = width, p = patch_size;
  if (p == 0 || h % p != 0 || w % p != 0 || patches.rank() != 2 || patches.rows() != (h / p) * (w / p) ||
      patches.cols() != c * p * p) {
    throw ShapeError("unpatchify: patches " + shape_str(patches.shape) + " do not tile the image");
  }
  const std::size_t gw = w / p;
  Tensor<T> image({c, h, w});
  for (std::size_t i = 0; i < patches.rows(); ++i) {
    const std::size_t gy = i / gw, gx = i % gw;
    const T* row = patches.data.data() + i * c * p * p;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < p; ++y) {
        std::copy_n(row + (ch * p + y) * p, p, image.data.data() + (ch * h + gy * p + y) * w + gx * p);
      }
    }
  }
  return image;
}

template <typename T>
Var<T> embed(Tape<T>& tape, const Tensor<T>& image, const EmbeddingParams<T>& params,
             const ModelConfig& config) {
  const Shape expected{static_cast<std::size_t>(config.channels), static_cast<std::size_t>(config.crop),
                       static_cast<std::size_t>(config.crop)};
  if (image.shape != expected) {
    throw ShapeError("embed: image " + shape_str(image.shape) + " does not match configured " +
                     shape_str(expected));
  }
  const Var<T> patches = tape.constant(patchify(image, config.patch_size));
  const Var<T> projected = linear(patches, params.patch_proj);
  const std::array<Var<T>, 2> parts{tape.param(params.cls_token), projected};
  const Var<T> tokens = concat_rows<T>(parts);
  const Var<T> pos = tape.param(params.pos_embed);
  if (pos.shape() != tokens.shape()) {
    throw ShapeError("embed: position embedding " + shape_str(pos.shape()) + " vs tokens " +
                     shape_str(tokens.shape()));
  }
  return add(tokens, pos);
}

template <typename T>
AttentionOutput<T> mhsa(const Var<T>& tokens, const AttentionParams<T>& params, int heads) {
  return multi_head_attention(tokens, tokens, params, heads);
}

template <typename T>
Var<T> encoder_block(const Var<T>& tokens, const EncoderBlockParams<T>& block, const ModelConfig& config) {
  const T eps = static_cast<T>(config.norm_eps);
  const Var<T> z = add(mhsa(norm(tokens, block.norm1, eps), block.attn, config.heads).output, tokens);
  return add(mlp(norm(z, block.norm2, eps), block.mlp), z);
}

template <typename T>
Var<T> encode(Tape<T>& tape, const Tensor<T>& image, const DeiqtModel<T>& model) {
  Var<T> x = embed(tape, image, model.embed, model.config);
  for (const auto& block : model.encoder) x = encoder_block(x, block, model.config);
  return x;
}

#define DEIQT_INSTANTIATE_ENCODER(T)                                                              \
  template Tensor<T> patchify<T>(const Tensor<T>&, int);                                          \
  template Tensor<T> unpatchify<T>(const Tensor<T>&, int, int, int, int);                         \
  template Var<T> embed<T>(Tape<T>&, const Tensor<T>&, const EmbeddingParams<T>&,                 \
                           const ModelConfig&);                                                   \
  template AttentionOutput<T> mhsa<T>(const Var<T>&, const AttentionParams<T>&, int);             \
  template Var<T> encoder_block<T>(const Var<T>&, const EncoderBlockParams<T>&,                   \
                                   const ModelConfig&);                                           \
  template Var<T> encode<T>(Tape<T>&, const Tensor<T>&, const DeiqtModel<T>&);

DEIQT_INSTANTIATE_ENCODER(float)
DEIQT_INSTANTIATE_ENCODER(double)

}  // namespace deiqt
