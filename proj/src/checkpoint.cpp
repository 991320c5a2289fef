#include "deiqt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "deiqt/run_config.hpp"

namespace deiqt {

namespace {

constexpr char kMagic[4] = {'D', 'E', 'I', 'Q'};

template <typename U>
void put_le(std::vector<unsigned char>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(value >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string get_string(const char* what) {
    const auto len = get<std::uint32_t>(what);
    need(len, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  std::vector<unsigned char> get_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::vector<unsigned char> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                   bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
  }

  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

std::size_t element_size(Precision p) { return p == Precision::kFloat32 ? 4 : 8; }

template <typename T>
TensorRecord encode(const std::string& name, const Shape& shape, std::span<const T> values) {
  TensorRecord r;
  r.name = name;
  r.shape = shape;
  r.dtype = sizeof(T) == 4 ? Precision::kFloat32 : Precision::kFloat64;
  r.bytes.reserve(values.size() * sizeof(T));
  for (T v : values) {
    if constexpr (sizeof(T) == 4) {
      std::uint32_t u;
      std::memcpy(&u, &v, 4);
      put_le(r.bytes, u);
    } else {
      std::uint64_t u;
      std::memcpy(&u, &v, 8);
      put_le(r.bytes, u);
    }
  }
  return r;
}

template <typename T>
std::vector<T> decode(const TensorRecord& r) {
  const std::size_t n = shape_numel(r.shape);
  std::vector<T> out(n);
  const unsigned char* b = r.bytes.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (r.dtype == Precision::kFloat32) {
      std::uint32_t u = 0;
      for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(b[4 * i + k]) << (8 * k);
      float f;
      std::memcpy(&f, &u, 4);
      out[i] = static_cast<T>(f);
    } else {
      std::uint64_t u = 0;
      for (int k = 0; k < 8; ++k) u |= static_cast<std::uint64_t>(b[8 * i + k]) << (8 * k);
      double d;
      std::memcpy(&d, &u, 8);
      out[i] = static_cast<T>(d);
    }
  }
  return out;
}

bool is_encoder_param(const std::string& name) {
  return name.rfind("embed.", 0) == 0 || name.rfind("encoder.", 0) == 0;
}

}  // namespace

ModelConfig Checkpoint::model_config() const {
  try {
    return parse_model_config(config_text);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config block invalid: ") + e.what());
  }
}

const TensorRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

bool Checkpoint::has_optimizer() const {
  for (const auto& t : tensors) {
    if (t.name.rfind("adam.", 0) == 0) return true;
  }
  return false;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, ck.version);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.config_text.size()));
  out.insert(out.end(), ck.config_text.begin(), ck.config_text.end());
  put_le<std::uint64_t>(out, ck.step);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    if (t.bytes.size() != shape_numel(t.shape) * element_size(t.dtype)) {
      throw CheckpointError("record " + t.name + " has " + std::to_string(t.bytes.size()) + " bytes for shape " +
                            shape_str(t.shape));
    }
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    out.push_back(t.dtype == Precision::kFloat32 ? 1 : 2);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) put_le<std::uint64_t>(out, d);
    out.insert(out.end(), t.bytes.begin(), t.bytes.end());
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError("not a checkpoint (bad magic): " + path.string());
  }
  Reader in(bytes);
  in.get_bytes(4, "magic");
  Checkpoint ck;
  ck.version = in.get<std::uint32_t>("version");
  if (ck.version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(ck.version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  ck.config_text = in.get_string("config block");
  ck.step = in.get<std::uint64_t>("step counter");
  const auto count = in.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord r;
    r.name = in.get_string("tensor name");
    const auto code = in.get<std::uint8_t>("dtype");
    if (code != 1 && code != 2) throw CheckpointError("unknown dtype code " + std::to_string(code) + " for " + r.name);
    r.dtype = code == 1 ? Precision::kFloat32 : Precision::kFloat64;
    const auto rank = in.get<std::uint32_t>("rank");
    for (std::uint32_t d = 0; d < rank; ++d) r.shape.push_back(static_cast<std::size_t>(in.get<std::uint64_t>("dims")));
    r.bytes = in.get_bytes(shape_numel(r.shape) * element_size(r.dtype), "tensor data");
    ck.tensors.push_back(std::move(r));
  }
  if (!in.done()) throw CheckpointError("trailing bytes after last tensor record in " + path.string());
  return ck;
}

template <typename T>
Checkpoint make_checkpoint(const DeiqtModel<T>& model, std::uint64_t step, const OptimizerState<T>* optimizer) {
  Checkpoint ck;
  ck.config_text = model_config_text(model.config);
  ck.step = step;
  const auto params = model.parameters();
  for (const auto& p : params) {
    ck.tensors.push_back(encode<T>(p.name, p.tensor->shape, p.tensor->data));
  }
  if (optimizer != nullptr) {
    if (optimizer->first.size() != params.size()) throw ContractError("make_checkpoint: optimizer/model mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) {
      ck.tensors.push_back(encode<T>("adam.m." + params[k].name, params[k].tensor->shape, optimizer->first[k]));
      ck.tensors.push_back(encode<T>("adam.v." + params[k].name, params[k].tensor->shape, optimizer->second[k]));
    }
  }
  return ck;
}

template <typename T>
void load_parameters(DeiqtModel<T>& model, const Checkpoint& ck, bool encoder_only) {
  auto params = model.parameters();
  std::vector<std::vector<T>> staged;
  for (const auto& p : params) {
    if (encoder_only && !is_encoder_param(p.name)) {
      staged.emplace_back();
      continue;
    }
    const TensorRecord* r = ck.find(p.name);
    if (r == nullptr) throw CheckpointError("checkpoint has no tensor " + p.name);
    if (r->shape != p.tensor->shape) {
      throw CheckpointError("shape mismatch for " + p.name + ": checkpoint " + shape_str(r->shape) + " vs model " +
                            shape_str(p.tensor->shape));
    }
    staged.push_back(decode<T>(*r));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (encoder_only && !is_encoder_param(params[k].name)) continue;
    params[k].tensor->data = std::move(staged[k]);
  }
}

template <typename T>
DeiqtModel<T> restore_model(const Checkpoint& ck) {
  Rng unused(0);
  DeiqtModel<T> model = init_model<T>(ck.model_config(), unused);
  load_parameters(model, ck);
  return model;
}

void check_config(const Checkpoint& ck, const ModelConfig& expected) {
  const std::string want = model_config_text(expected);
  if (ck.config_text != want) {
    throw CheckpointError("checkpoint config does not match requested model:\n--- checkpoint\n" + ck.config_text +
                          "--- requested\n" + want);
  }
}

template <typename T>
OptimizerState<T> restore_optimizer(const Checkpoint& ck, const DeiqtModel<T>& model, const TrainConfig& cfg) {
  const auto params = model.parameters();
  OptimizerState<T> s;
  s.beta1 = cfg.beta1;
  s.beta2 = cfg.beta2;
  s.eps = cfg.adam_eps;
  s.weight_decay = cfg.weight_decay;
  s.step = static_cast<long>(ck.step);
  for (const auto& p : params) {
    for (const char* which : {"adam.m.", "adam.v."}) {
      const TensorRecord* r = ck.find(which + p.name);
      if (r == nullptr) throw CheckpointError("checkpoint has no optimizer record for " + p.name);
      if (r->shape != p.tensor->shape) throw CheckpointError("optimizer shape mismatch for " + p.name);
      (which[5] == 'm' ? s.first : s.second).push_back(decode<T>(*r));
    }
  }
  return s;
}

#define DEIQT_INSTANTIATE_CHECKPOINT(T)                                                                     \
  template Checkpoint make_checkpoint<T>(const DeiqtModel<T>&, std::uint64_t, const OptimizerState<T>*);    \
  template void load_parameters<T>(DeiqtModel<T>&, const Checkpoint&, bool);                                \
  template DeiqtModel<T> restore_model<T>(const Checkpoint&);                                               \
  template OptimizerState<T> restore_optimizer<T>(const Checkpoint&, const DeiqtModel<T>&, const TrainConfig&);

DEIQT_INSTANTIATE_CHECKPOINT(float)
DEIQT_INSTANTIATE_CHECKPOINT(double)

}  // namespace deiqt
