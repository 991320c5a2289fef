#include "deiqt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace deiqt {

namespace fs = std::filesystem;

std::string kind_name(DistortionKind kind) {
  switch (kind) {
    case DistortionKind::kGaussianBlur: return "gaussian_blur";
    case DistortionKind::kWhiteNoise: return "white_noise";
    case DistortionKind::kContrastReduction: return "contrast_reduction";
    case DistortionKind::kBlockiness: return "blockiness";
  }
  return "unknown";
}

std::vector<DistortionKind> all_kinds() {
  return {DistortionKind::kGaussianBlur, DistortionKind::kWhiteNoise, DistortionKind::kContrastReduction,
          DistortionKind::kBlockiness};
}

DistortionKind parse_kind(const std::string& name) {
  for (DistortionKind k : all_kinds()) {
    if (kind_name(k) == name) return k;
  }
  throw ConfigError("unknown distortion kind '" + name + "'");
}

double DistortionSpec::strength() const {
  switch (kind) {
    case DistortionKind::kGaussianBlur: return 0.7 * level;
    case DistortionKind::kWhiteNoise: return 0.05 * level;
    case DistortionKind::kContrastReduction: return std::pow(0.7, level);
    case DistortionKind::kBlockiness: return level + 1.0;
  }
  return 0.0;
}

void Manifest::validate() const {
  std::unordered_set<std::string> refs;
  for (const auto& s : samples) {
    if (!std::isfinite(s.score)) throw ConfigError("manifest: non-finite score for " + s.image_ref);
    if (s.group_id.empty()) throw ConfigError("manifest: empty group for " + s.image_ref);
    if (!refs.insert(s.image_ref).second) throw ConfigError("manifest: duplicate image " + s.image_ref);
  }
}

// ------------------------------------------------------------ generation

std::vector<Image> gen_base_images(int count, int hw, Rng& rng) {
  if (count < 1) throw ContractError("gen_base_images: count must be at least 1");
  if (hw < 1) throw ContractError("gen_base_images: size must be positive");
  const std::size_t n = hw;
  std::vector<Image> images;
  images.reserve(count);
  for (int idx = 0; idx < count; ++idx) {
    Image img({3, n, n});
    // Gradient between two random colours along a random direction.
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double dx = std::cos(angle), dy = std::sin(angle);
    double c0[3], c1[3];
    for (int c = 0; c < 3; ++c) {
      c0[c] = rng.uniform();
      c1[c] = rng.uniform();
    }
    // Band-limited texture: a handful of sinusoids, each with its own tint.
    struct Wave {
      double fx, fy, phase, amp, tint[3];
    };
    std::vector<Wave> waves(6);
    for (auto& w : waves) {
      const double freq = rng.uniform(0.08, 0.4);
      const double dir = rng.uniform(0.0, std::numbers::pi);
      w.fx = freq * std::cos(dir);
      w.fy = freq * std::sin(dir);
      w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      w.amp = rng.uniform(0.3, 1.0);
      for (double& t : w.tint) t = rng.uniform(0.5, 1.0);
    }
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        const double t = ((x * dx + y * dy) / n + 1.0) * 0.5;
        for (int c = 0; c < 3; ++c) {
          double tex = 0.0;
          for (const auto& w : waves) {
            tex += w.amp * w.tint[c] * std::sin(2.0 * std::numbers::pi * (w.fx * x + w.fy * y) + w.phase);
          }
          img.data[(c * n + y) * n + x] = 0.6 * (c0[c] * (1.0 - t) + c1[c] * t) + 0.12 * tex;
        }
      }
    }
    // Hard-edged shapes.
    const int shapes = 3 + static_cast<int>(rng.uniform_index(3));
    for (int s = 0; s < shapes; ++s) {
      const bool disc = rng.uniform() < 0.5;
      const double cx = rng.uniform(0.0, n), cy = rng.uniform(0.0, n);
      const double r = rng.uniform(0.1, 0.3) * n;
      const double hw2 = rng.uniform(0.08, 0.3) * n, hh2 = rng.uniform(0.08, 0.3) * n;
      double col[3];
      for (double& c : col) c = rng.uniform();
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          const double ddx = x + 0.5 - cx, ddy = y + 0.5 - cy;
          const bool inside = disc ? (ddx * ddx + ddy * ddy <= r * r)
                                   : (std::abs(ddx) <= hw2 && std::abs(ddy) <= hh2);
          if (!inside) continue;
          for (int c = 0; c < 3; ++c) {
            double& v = img.data[(c * n + y) * n + x];
            v = 0.3 * v + 0.7 * col[c];
          }
        }
      }
    }
    // Stretch every image to the same range so severity is comparable.
    const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
    const double lo_v = *lo, span = std::max(*hi - *lo, 1e-9);
    for (double& v : img.data) v = std::clamp(0.05 + 0.9 * (v - lo_v) / span, 0.0, 1.0);
    images.push_back(std::move(img));
  }
  return images;
}

namespace {

// Half-sample symmetric extension (abc|cba), valid for any offset.
std::size_t reflect(long i, long n) {
  const long period = 2 * n;
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < n ? m : period - 1 - m);
}

Image gaussian_blur(const Image& img, double sigma) {
  const long radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (long k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    total += kernel[k + radius];
  }
  for (double& k : kernel) k /= total;
  const std::size_t c = img.shape[0], h = img.shape[1], w = img.shape[2];
  Image tmp(img.shape), out(img.shape);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * img.data[(ch * h + y) * w + reflect(static_cast<long>(x) + k, w)];
        }
        tmp.data[(ch * h + y) * w + x] = acc;
      }
    }
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (long k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * tmp.data[(ch * h + reflect(static_cast<long>(y) + k, h)) * w + x];
        }
        out.data[(ch * h + y) * w + x] = acc;
      }
    }
  }
  return out;
}

Image contrast_reduction(const Image& img, double factor) {
  const std::size_t c = img.shape[0], plane = img.shape[1] * img.shape[2];
  Image out(img.shape);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mu = 0.0;
    for (std::size_t i = 0; i < plane; ++i) mu += img.data[ch * plane + i];
    mu /= static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      out.data[ch * plane + i] = mu + factor * (img.data[ch * plane + i] - mu);
    }
  }
  return out;
}

Image blockiness(const Image& img, std::size_t block) {
  const std::size_t c = img.shape[0], h = img.shape[1], w = img.shape[2];
  Image out(img.shape);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t by = 0; by < h; by += block) {
      for (std::size_t bx = 0; bx < w; bx += block) {
        const std::size_t ey = std::min(by + block, h), ex = std::min(bx + block, w);
        double mu = 0.0;
        for (std::size_t y = by; y < ey; ++y) {
          for (std::size_t x = bx; x < ex; ++x) mu += img.data[(ch * h + y) * w + x];
        }
        mu /= static_cast<double>((ey - by) * (ex - bx));
        for (std::size_t y = by; y < ey; ++y) {
          for (std::size_t x = bx; x < ex; ++x) out.data[(ch * h + y) * w + x] = mu;
        }
      }
    }
  }
  return out;
}

}  // namespace

Image apply_distortion(const Image& image, const DistortionSpec& spec, Rng& rng) {
  if (image.rank() != 3) throw ShapeError("apply_distortion: expected [C x H x W], got " + shape_str(image.shape));
  if (spec.level < 0) throw ContractError("apply_distortion: negative level");
  if (spec.level == 0) return image;
  Image out;
  switch (spec.kind) {
    case DistortionKind::kGaussianBlur:
      out = gaussian_blur(image, spec.strength());
      break;
    case DistortionKind::kWhiteNoise:
      out = image;
      for (double& v : out.data) v += spec.strength() * rng.normal();
      break;
    case DistortionKind::kContrastReduction:
      out = contrast_reduction(image, spec.strength());
      break;
    case DistortionKind::kBlockiness:
      out = blockiness(image, static_cast<std::size_t>(spec.strength()));
      break;
    default:
      throw ConfigError("apply_distortion: unknown distortion kind");
  }
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Manifest gen_synthetic_dataset(int n_base, int levels, std::span<const DistortionKind> kinds, Rng& rng,
                               int hw) {
  if (levels < 2) throw ContractError("gen_synthetic_dataset: at least two levels are required");
  if (kinds.empty()) throw ContractError("gen_synthetic_dataset: no distortion kinds");
  const std::vector<Image> bases = gen_base_images(n_base, hw, rng);
  Manifest m;
  m.provenance = "synthetic n_base=" + std::to_string(n_base) + " levels=" + std::to_string(levels) +
                 " hw=" + std::to_string(hw) + " seed=" + std::to_string(rng.seed());
  char name[96];
  for (int b = 0; b < n_base; ++b) {
    for (DistortionKind kind : kinds) {
      for (int level = 0; level < levels; ++level) {
        const DistortionSpec spec{kind, level};
        Rng noise(rng.next_u64());
        Sample s;
        std::snprintf(name, sizeof(name), "b%04d_%s_%d.ppm", b, kind_name(kind).c_str(), level);
        s.image_ref = name;
        s.image = std::make_shared<const Image>(apply_distortion(bases[b], spec, noise));
        s.score = 1.0 - static_cast<double>(level) / (levels - 1);
        s.group_id = "base" + std::to_string(b);
        s.distortion = spec;
        m.samples.push_back(std::move(s));
      }
    }
  }
  return m;
}

// ------------------------------------------------------------------ split

std::vector<std::string> group_ids(const Manifest& manifest) {
  std::vector<std::string> ids;
  std::unordered_set<std::string> seen;
  for (const auto& s : manifest.samples) {
    if (seen.insert(s.group_id).second) ids.push_back(s.group_id);
  }
  return ids;
}

namespace {

Manifest filter_groups(const Manifest& manifest, const std::unordered_set<std::string>& keep, bool inside) {
  Manifest out;
  out.provenance = manifest.provenance;
  for (const auto& s : manifest.samples) {
    if (keep.contains(s.group_id) == inside) out.samples.push_back(s);
  }
  return out;
}

}  // namespace

SplitResult split(const Manifest& manifest, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ContractError("split: train_frac must lie in (0, 1)");
  std::vector<std::string> ids = group_ids(manifest);
  if (ids.size() < 2) throw ContractError("split: at least two groups are required");
  Rng rng(seed);
  rng.shuffle(ids);
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(ids.size()))), 1, ids.size() - 1);
  const std::unordered_set<std::string> train_ids(ids.begin(), ids.begin() + n_train);
  return {filter_groups(manifest, train_ids, true), filter_groups(manifest, train_ids, false)};
}

Manifest take_groups(const Manifest& manifest, std::size_t groups, std::uint64_t seed) {
  std::vector<std::string> ids = group_ids(manifest);
  if (groups == 0 || groups > ids.size()) {
    throw ContractError("take_groups: cannot take " + std::to_string(groups) + " of " +
                        std::to_string(ids.size()) + " groups");
  }
  Rng rng(seed);
  rng.shuffle(ids);
  return filter_groups(manifest, std::unordered_set<std::string>(ids.begin(), ids.begin() + groups), true);
}

// -------------------------------------------------------------------- I/O

void write_pnm(const fs::path& path, const Image& image) {
  if (image.rank() != 3 || (image.shape[0] != 3 && image.shape[0] != 1)) {
    throw ShapeError("write_pnm: expected 1 or 3 channels, got " + shape_str(image.shape));
  }
  const std::size_t c = image.shape[0], h = image.shape[1], w = image.shape[2];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << (c == 3 ? "P6" : "P5") << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> bytes(c * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = std::clamp(image.data[(ch * h + y) * w + x], 0.0, 1.0);
        bytes[(y * w + x) * c + ch] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

long read_header_int(std::istream& in, const fs::path& path) {
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (!std::isspace(static_cast<unsigned char>(ch))) {
      in.unget();
      break;
    }
  }
  long v = -1;
  if (!(in >> v) || v <= 0) throw IoError(path.string() + ": malformed PNM header");
  return v;
}

}  // namespace

Image read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6" && magic != "P5") throw IoError(path.string() + ": not a binary PPM/PGM file");
  const long w = read_header_int(in, path);
  const long h = read_header_int(in, path);
  const long maxval = read_header_int(in, path);
  if (maxval > 255) throw IoError(path.string() + ": only 8-bit PNM is supported");
  in.get();  // single whitespace before the raster
  const std::size_t src_c = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> bytes(src_c * w * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw IoError(path.string() + ": truncated raster");
  }
  const std::size_t uh = h, uw = w;
  Image img({3, uh, uw});
  for (std::size_t y = 0; y < uh; ++y) {
    for (std::size_t x = 0; x < uw; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const unsigned char b = bytes[(y * uw + x) * src_c + (src_c == 3 ? ch : 0)];
        img.data[(ch * uh + y) * uw + x] = b / 255.0;
      }
    }
  }
  return img;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  manifest.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "path,score,group\n";
  char buf[64];
  for (const auto& s : manifest.samples) {
    if (s.image_ref.find(',') != std::string::npos || s.group_id.find(',') != std::string::npos) {
      throw IoError("manifest fields may not contain commas: " + s.image_ref);
    }
    std::snprintf(buf, sizeof(buf), "%.17g", s.score);
    out << s.image_ref << "," << buf << "," << s.group_id << "\n";
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,score,group") throw IoError(path.string() + ": expected header 'path,score,group'");
  Manifest m;
  m.provenance = "manifest " + path.string();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (line.back() == ',') fields.emplace_back();
    if (fields.size() != 3) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 3 fields");
    }
    Sample s;
    s.image_ref = fields[0];
    try {
      std::size_t used = 0;
      s.score = std::stod(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad score '" + fields[1] + "'");
    }
    // Flat manifests without groups split per image.
    s.group_id = fields[2].empty() ? fields[0] : fields[2];
    m.samples.push_back(std::move(s));
  }
  m.validate();
  return m;
}

void load_images(Manifest& manifest, const fs::path& base_dir) {
  for (auto& s : manifest.samples) {
    if (s.image) continue;
    fs::path p(s.image_ref);
    if (p.is_relative()) p = base_dir / p;
    s.image = std::make_shared<const Image>(read_pnm(p));
  }
}

Image crop(const Image& image, std::size_t top, std::size_t left, std::size_t hw) {
  const std::size_t c = image.shape[0], h = image.shape[1], w = image.shape[2];
  if (top + hw > h || left + hw > w) throw ShapeError("crop: window outside image " + shape_str(image.shape));
  Image out({c, hw, hw});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < hw; ++y) {
      std::copy_n(image.data.data() + (ch * h + top + y) * w + left, hw, out.data.data() + (ch * hw + y) * hw);
    }
  }
  return out;
}

}  // namespace deiqt
