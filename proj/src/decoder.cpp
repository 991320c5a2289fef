#include "deiqt/decoder.hpp"

#include "deiqt/encoder.hpp"

namespace deiqt {

template <typename T>
Var<T> panel_inputs(const Var<T>& t_cls, const Var<T>& panel) {
  if (t_cls.shape().size() != 2 || t_cls.shape()[0] != 1) {
    throw ShapeError("panel_inputs: CLS token must be [1 x D], got " + shape_str(t_cls.shape()));
  }
  if (panel.shape().size() != 2 || panel.shape()[1] != t_cls.shape()[1]) {
    throw ShapeError("panel_inputs: panel " + shape_str(panel.shape()) + " does not match CLS width " +
                     std::to_string(t_cls.shape()[1]));
  }
  return add(repeat_rows(t_cls, panel.shape()[0]), panel);
}

template <typename T>
Var<T> make_queries(const Var<T>& x, const QueryParams<T>& params, const ModelConfig& config) {
  const T eps = static_cast<T>(config.norm_eps);
  return add(mhsa(norm(x, params.norm, eps), params.attn, config.heads).output, x);
}

template <typename T>
AttentionOutput<T> cross_attend(const Var<T>& queries, const Var<T>& patch_feats,
                                const DecoderBlockParams<T>& block, const ModelConfig& config) {
  if (patch_feats.shape().size() != 2 || patch_feats.shape()[0] == 0) {
    throw ContractError("cross_attend: at least one patch feature row is required");
  }
  const T eps = static_cast<T>(config.norm_eps);
  AttentionOutput<T> attn =
      multi_head_attention(norm(queries, block.norm, eps), patch_feats, block.cross, config.heads);
  attn.output = mlp(add(attn.output, queries), block.mlp);
  return attn;
}

template <typename T>
Var<T> score_head(const Var<T>& embeddings, const HeadParams<T>& params) {
  return linear(gelu(linear(embeddings, params.fc1)), params.fc2);
}

template <typename T>
PredictionVars<T> predict(Tape<T>& tape, const Tensor<T>& image, const DeiqtModel<T>& model) {
  const ModelConfig& cfg = model.config;
  PredictionVars<T> out;
  out.encoded = encode(tape, image, model);
  const std::size_t tokens = out.encoded.shape()[0];
  const Var<T> cls = slice_rows(out.encoded, 0, 1);

  Var<T> rows;
  switch (cfg.variant) {
    case Variant::kEncoderOnly:
      rows = cls;
      break;
    case Variant::kPanelNoDecoder:
      rows = panel_inputs(cls, tape.param(model.panel.embeddings));
      break;
    case Variant::kDeiqt:
    case Variant::kDecoderRandomQuery:
    case Variant::kDecoderClsQuery: {
      Var<T> inputs;
      if (cfg.variant == Variant::kDeiqt) {
        inputs = panel_inputs(cls, tape.param(model.panel.embeddings));
      } else if (cfg.variant == Variant::kDecoderRandomQuery) {
        inputs = tape.param(model.panel.embeddings);
      } else {
        inputs = cls;
      }
      if (tokens < 2) throw ContractError("predict: encoder produced no patch features");
      const Var<T> patch_feats = slice_rows(out.encoded, 1, tokens);
      rows = make_queries(inputs, model.query, cfg);
      for (const auto& block : model.decoder) {
        AttentionOutput<T> layer = cross_attend(rows, patch_feats, block, cfg);
        rows = layer.output;
        out.attention.push_back(std::move(layer.weights));
      }
      break;
    }
  }
  out.quality_embeddings = rows;
  out.panel_scores = score_head(rows, model.head);
  out.score = mean(out.panel_scores);
  return out;
}

template <typename T>
Prediction<T> predict(const DeiqtModel<T>& model, const Tensor<T>& image) {
  Tape<T> tape(false);
  const PredictionVars<T> vars = predict(tape, image, model);
  Prediction<T> out;
  out.score = static_cast<double>(vars.score.item());
  for (T v : vars.panel_scores.value().data) out.panel_scores.push_back(static_cast<double>(v));
  out.quality_embeddings = vars.quality_embeddings.value();
  for (const auto& layer : vars.attention) {
    std::vector<Tensor<T>> maps;
    for (const auto& w : layer) maps.push_back(w.value());
    out.attention.push_back(std::move(maps));
  }
  return out;
}

#define DEIQT_INSTANTIATE_DECODER(T)                                                             \
  template Var<T> panel_inputs<T>(const Var<T>&, const Var<T>&);                                 \
  template Var<T> make_queries<T>(const Var<T>&, const QueryParams<T>&, const ModelConfig&);     \
  template AttentionOutput<T> cross_attend<T>(const Var<T>&, const Var<T>&,                      \
                                              const DecoderBlockParams<T>&, const ModelConfig&); \
  template Var<T> score_head<T>(const Var<T>&, const HeadParams<T>&);                            \
  template PredictionVars<T> predict<T>(Tape<T>&, const Tensor<T>&, const DeiqtModel<T>&);       \
  template Prediction<T> predict<T>(const DeiqtModel<T>&, const Tensor<T>&);

DEIQT_INSTANTIATE_DECODER(float)
DEIQT_INSTANTIATE_DECODER(double)

}  // namespace deiqt
