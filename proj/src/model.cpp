#include "deiqt/model.hpp"

#include <cmath>

namespace deiqt {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kDeiqt: return "deiqt";
    case Variant::kEncoderOnly: return "encoder-only";
    case Variant::kPanelNoDecoder: return "panel-no-decoder";
    case Variant::kDecoderRandomQuery: return "decoder-random-queries";
    case Variant::kDecoderClsQuery: return "decoder-cls-queries";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::kDeiqt, Variant::kEncoderOnly, Variant::kPanelNoDecoder,
                    Variant::kDecoderRandomQuery, Variant::kDecoderClsQuery}) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown model variant '" + name + "'");
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.patch_size = 4;
  c.crop = 12;
  c.dim = 16;
  c.heads = 2;
  c.encoder_depth = 2;
  c.decoder_depth = 1;
  c.panel_size = 3;
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v <= 0) throw ConfigError(std::string(what) + " must be positive, got " + std::to_string(v));
  };
  positive(patch_size, "patch_size");
  positive(dim, "dim");
  positive(heads, "heads");
  positive(encoder_depth, "encoder_depth");
  positive(decoder_depth, "decoder_depth");
  positive(panel_size, "panel_size");
  positive(channels, "channels");
  positive(crop, "crop");
  if (!(mlp_ratio > 0.0)) throw ConfigError("mlp_ratio must be positive");
  if (!(init_std > 0.0)) throw ConfigError("init_std must be positive");
  if (!(norm_eps > 0.0)) throw ConfigError("norm_eps must be positive");
  if (dim % heads != 0) {
    throw ConfigError("dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
  }
  if (crop % patch_size != 0) {
    throw ConfigError("crop " + std::to_string(crop) + " is not a multiple of patch_size " +
                      std::to_string(patch_size));
  }
  if (dim < 2) throw ConfigError("dim must be at least 2 for the D -> D/2 -> 1 head");
}

int ModelConfig::mlp_hidden() const {
  return std::max(1, static_cast<int>(std::lround(mlp_ratio * dim)));
}

bool ModelConfig::has_panel() const {
  return variant == Variant::kDeiqt || variant == Variant::kPanelNoDecoder ||
         variant == Variant::kDecoderRandomQuery;
}

bool ModelConfig::has_decoder() const {
  return variant == Variant::kDeiqt || variant == Variant::kDecoderRandomQuery ||
         variant == Variant::kDecoderClsQuery;
}

int ModelConfig::query_rows() const {
  return has_panel() ? panel_size : 1;
}

namespace {

template <typename Model, typename F>
void visit_params(Model& m, F&& f) {
  auto linear = [&](const std::string& n, auto& p) {
    f(n + ".weight", p.weight);
    f(n + ".bias", p.bias);
  };
  auto norm = [&](const std::string& n, auto& p) {
    f(n + ".gain", p.gain);
    f(n + ".bias", p.bias);
  };
  auto attention = [&](const std::string& n, auto& p) {
    linear(n + ".query", p.query);
    linear(n + ".key", p.key);
    linear(n + ".value", p.value);
    linear(n + ".out", p.out);
  };
  auto mlp = [&](const std::string& n, auto& p) {
    linear(n + ".fc1", p.fc1);
    linear(n + ".fc2", p.fc2);
  };
  linear("embed.patch_proj", m.embed.patch_proj);
  f("embed.cls_token", m.embed.cls_token);
  f("embed.pos_embed", m.embed.pos_embed);
  for (std::size_t i = 0; i < m.encoder.size(); ++i) {
    const std::string n = "encoder." + std::to_string(i);
    norm(n + ".norm1", m.encoder[i].norm1);
    attention(n + ".attn", m.encoder[i].attn);
    norm(n + ".norm2", m.encoder[i].norm2);
    mlp(n + ".mlp", m.encoder[i].mlp);
  }
  if (m.config.has_panel()) f("panel.embeddings", m.panel.embeddings);
  if (m.config.has_decoder()) {
    norm("decoder.query.norm", m.query.norm);
    attention("decoder.query.attn", m.query.attn);
    for (std::size_t i = 0; i < m.decoder.size(); ++i) {
      const std::string n = "decoder." + std::to_string(i);
      norm(n + ".norm", m.decoder[i].norm);
      attention(n + ".cross", m.decoder[i].cross);
      mlp(n + ".mlp", m.decoder[i].mlp);
    }
  }
  linear("head.fc1", m.head.fc1);
  linear("head.fc2", m.head.fc2);
}

template <typename T>
class Initializer {
 public:
  Initializer(Rng& rng, double std) : rng_(rng), std_(std) {}

  LinearParams<T> linear(std::size_t in, std::size_t out) {
    return {truncated_normal<T>({in, out}, rng_, std_), Tensor<T>({out})};
  }
  NormParams<T> norm(std::size_t d) { return {Tensor<T>({d}, T(1)), Tensor<T>({d})}; }
  AttentionParams<T> attention(std::size_t d) {
    AttentionParams<T> a;
    a.query = linear(d, d);
    a.key = linear(d, d);
    a.value = linear(d, d);
    a.out = linear(d, d);
    return a;
  }
  MlpParams<T> mlp(std::size_t d, std::size_t hidden) { return {linear(d, hidden), linear(hidden, d)}; }
  Tensor<T> embedding(std::size_t rows, std::size_t d) { return truncated_normal<T>({rows, d}, rng_, std_); }

 private:
  Rng& rng_;
  double std_;
};

}  // namespace

template <typename T>
std::vector<NamedTensor<T>> DeiqtModel<T>::parameters() {
  std::vector<NamedTensor<T>> out;
  visit_params(*this, [&](const std::string& n, Tensor<T>& t) { out.push_back({n, &t}); });
  return out;
}

template <typename T>
std::vector<NamedConstTensor<T>> DeiqtModel<T>::parameters() const {
  std::vector<NamedConstTensor<T>> out;
  visit_params(*this, [&](const std::string& n, const Tensor<T>& t) { out.push_back({n, &t}); });
  return out;
}

template <typename T>
std::size_t DeiqtModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->numel();
  return n;
}

template <typename T>
void DeiqtModel<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor->zero_grad();
}

template <typename T>
void DeiqtModel<T>::set_requires_grad(bool on) {
  for (auto& p : parameters()) p.tensor->requires_grad = on;
}

template <typename T>
DeiqtModel<T> init_model(const ModelConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.dim;
  const std::size_t hidden = config.mlp_hidden();
  Initializer<T> init(rng, config.init_std);

  DeiqtModel<T> m;
  m.config = config;
  m.embed.patch_proj = init.linear(config.patch_elems(), d);
  m.embed.cls_token = init.embedding(1, d);
  m.embed.pos_embed = init.embedding(config.num_patches() + 1, d);
  for (int i = 0; i < config.encoder_depth; ++i) {
    EncoderBlockParams<T> b;
    b.norm1 = init.norm(d);
    b.attn = init.attention(d);
    b.norm2 = init.norm(d);
    b.mlp = init.mlp(d, hidden);
    m.encoder.push_back(std::move(b));
  }
  if (config.has_panel()) m.panel.embeddings = init.embedding(config.panel_size, d);
  if (config.has_decoder()) {
    m.query.norm = init.norm(d);
    m.query.attn = init.attention(d);
    for (int i = 0; i < config.decoder_depth; ++i) {
      DecoderBlockParams<T> b;
      b.norm = init.norm(d);
      b.cross = init.attention(d);
      b.mlp = init.mlp(d, hidden);
      m.decoder.push_back(std::move(b));
    }
  }
  m.head.fc1 = init.linear(d, d / 2);
  m.head.fc2 = init.linear(d / 2, 1);
  m.set_requires_grad(true);
  return m;
}

template <typename T, typename U>
DeiqtModel<U> cast_model(const DeiqtModel<T>& model) {
  Rng unused(0);
  DeiqtModel<U> out = init_model<U>(model.config, unused);
  auto src = model.parameters();
  auto dst = out.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i].tensor->data.assign(src[i].tensor->data.begin(), src[i].tensor->data.end());
    dst[i].tensor->requires_grad = src[i].tensor->requires_grad;
  }
  return out;
}

template struct DeiqtModel<float>;
template struct DeiqtModel<double>;
template DeiqtModel<float> init_model<float>(const ModelConfig&, Rng&);
template DeiqtModel<double> init_model<double>(const ModelConfig&, Rng&);
template DeiqtModel<double> cast_model<float, double>(const DeiqtModel<float>&);
template DeiqtModel<float> cast_model<double, float>(const DeiqtModel<double>&);
template DeiqtModel<float> cast_model<float, float>(const DeiqtModel<float>&);
template DeiqtModel<double> cast_model<double, double>(const DeiqtModel<double>&);

}  // namespace deiqt
