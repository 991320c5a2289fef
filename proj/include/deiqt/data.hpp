#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deiqt/tensor.hpp"

namespace deiqt {

/// [C x H x W], values in [0, 1].
using Image = Tensor<double>;

enum class DistortionKind { kGaussianBlur, kWhiteNoise, kContrastReduction, kBlockiness };

std::string kind_name(DistortionKind kind);
DistortionKind parse_kind(const std::string& name);
std::vector<DistortionKind> all_kinds();

/// A distortion type at an integer severity. Level 0 is the identity and
/// the strength grows strictly with level:
///   gaussian_blur       sigma = 0.7 * level            (pixels)
///   white_noise         std   = 0.05 * level
///   contrast_reduction  factor = 0.7 ^ level            (toward channel mean)
///   blockiness          block = level + 1               (pixels, mean per block)
struct DistortionSpec {
  DistortionKind kind = DistortionKind::kGaussianBlur;
  int level = 0;

  double strength() const;
};

struct Sample {
  std::string image_ref;
  std::shared_ptr<const Image> image;  // null until loaded
  double score = 0.0;
  std::string group_id;
  std::optional<DistortionSpec> distortion;
};

struct Manifest {
  std::vector<Sample> samples;
  std::string provenance;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  /// Finite scores, non-empty groups, unique image refs.
  void validate() const;
};

/// Procedural pristine images: a two-colour gradient, a band-limited
/// sinusoid texture, and hard-edged discs and rectangles, stretched to a
/// common luminance range.
std::vector<Image> gen_base_images(int count, int hw, Rng& rng);

/// Returns the input unchanged at level 0; otherwise the distorted image,
/// clamped to [0, 1]. Only white_noise draws from `rng`.
Image apply_distortion(const Image& image, const DistortionSpec& spec, Rng& rng);

/// Every base x kind x level combination, in that nesting order. The label
/// is 1 - level / (levels - 1) and the group is the base image.
Manifest gen_synthetic_dataset(int n_base, int levels, std::span<const DistortionKind> kinds, Rng& rng,
                               int hw = 32);

struct SplitResult {
  Manifest train;
  Manifest test;
};

/// Partition by group id: round(train_frac * groups) groups, chosen by a
/// seeded shuffle, go to train. Sample order is preserved on both sides.
SplitResult split(const Manifest& manifest, double train_frac, std::uint64_t seed);

/// Keeps the samples of `groups` randomly chosen groups.
Manifest take_groups(const Manifest& manifest, std::size_t groups, std::uint64_t seed);

std::vector<std::string> group_ids(const Manifest& manifest);

// File formats.

/// Binary P6, 8-bit. Single-channel images are written as P5.
void write_pnm(const std::filesystem::path& path, const Image& image);
/// Reads P6 or P5 (maxval <= 255); P5 is expanded to three channels.
Image read_pnm(const std::filesystem::path& path);

/// CSV with header `path,score,group`.
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);
/// Loads every image not already in memory; relative refs resolve against `base_dir`.
void load_images(Manifest& manifest, const std::filesystem::path& base_dir);

/// Crop of `hw` x `hw` pixels at (top, left).
Image crop(const Image& image, std::size_t top, std::size_t left, std::size_t hw);

/// Maps [0, 1] pixels to the [-1, 1] range the model consumes.
template <typename T>
Tensor<T> to_model_input(const Image& image) {
  Tensor<T> out(image.shape, T(0));
  for (std::size_t i = 0; i < image.numel(); ++i) out.data[i] = static_cast<T>(2.0 * image.data[i] - 1.0);
  return out;
}

}  // namespace deiqt
