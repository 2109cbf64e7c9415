#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "segattn/tensor.hpp"

namespace segattn {

inline constexpr std::uint8_t kIgnoreLabel = 255;

// H x W class indices, row-major.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }

  friend bool operator==(const Mask&, const Mask&) = default;
};

// image: C x H x W in [0, 1]; mask: H x W.
struct SegSample {
  Tensor image;
  Mask mask;
  std::string id;
};

// --- synthetic scenes --------------------------------------------------------

struct SyntheticOptions {
  std::size_t count = 200;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_classes = 3;
  std::uint64_t seed = 0;
  // Upper bound on shapes per scene; defaults to num_classes - 1. Zero
  // yields background-only scenes.
  std::optional<std::size_t> max_shapes;
  double noise_sigma = 0.05;
};

// Background class 0 plus 1..K-1 rectangles/discs, each painted with a
// distinct class and its class color. Every class appears in at least
// ceil(n/K) scenes (unless max_shapes forbids it).
std::vector<SegSample> gen_synthetic(const SyntheticOptions& opts);

// Class color used by gen_synthetic, channels in [0, 1].
std::array<double, 3> class_color(std::size_t cls);

// --- netpbm ----------------------------------------------------------------

// Binary P6 (maxval 255) -> 3 x H x W tensor in [0, 1].
Tensor read_ppm(std::istream& in);
// Binary P5 (maxval 255) -> mask of raw byte values.
Mask read_pgm(std::istream& in);
// Values are clamped to [0, 1] and rounded to the nearest byte.
void write_ppm(std::ostream& out, const Tensor& image);
void write_pgm(std::ostream& out, const Mask& mask);

// Raw P6 pixels as RGB triples, for palette masks.
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::array<std::uint8_t, 3>> pixels;
};
RgbImage read_ppm_rgb(std::istream& in);

// --- class maps --------------------------------------------------------------

// Source label id or RGB color -> target class in [0, K) or kIgnoreLabel.
class ClassMap {
 public:
  static ClassMap identity(std::size_t num_classes);
  // One "class_id R G B name" entry per line; '#' starts a comment.
  static ClassMap from_palette(std::istream& in);
  static ClassMap from_palette_file(const std::filesystem::path& path);

  void map_label(std::uint32_t source, std::uint8_t target);
  void map_color(std::array<std::uint8_t, 3> rgb, std::uint8_t target, std::string name = {});

  // Throws ConfigError for a source outside the map's domain.
  std::uint8_t resolve_label(std::uint32_t source) const;
  // Throws IoError listing the RGB triple when the color is unmapped.
  std::uint8_t resolve_color(std::array<std::uint8_t, 3> rgb) const;

  // Largest non-ignore target + 1.
  std::size_t num_classes() const;
  // Targets are dense in [0, K): every index below num_classes() is hit.
  bool targets_dense() const;
  std::size_t color_count() const { return colors_.size(); }
  const std::map<std::array<std::uint8_t, 3>, std::uint8_t>& colors() const { return colors_; }

 private:
  std::map<std::uint32_t, std::uint8_t> labels_;
  std::map<std::array<std::uint8_t, 3>, std::uint8_t> colors_;
  std::map<std::array<std::uint8_t, 3>, std::string> names_;
};

Mask remap_classes(const Mask& mask, const ClassMap& cm);

Tensor load_image(const std::filesystem::path& path);
// P5 masks are read as class indices. P6 masks are resolved through palette,
// which is then required.
Mask load_mask(const std::filesystem::path& path, const ClassMap* palette = nullptr);
void save_image(const std::filesystem::path& path, const Tensor& image);
void save_mask(const std::filesystem::path& path, const Mask& mask);

// --- manifests ---------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::filesystem::path image;
  std::filesystem::path mask;
};

// "id<TAB>image_path<TAB>mask_path" per line; relative paths are resolved
// against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// Writes <id>.ppm / <id>.pgm pairs plus manifest.txt into dir.
std::filesystem::path save_dataset(const std::filesystem::path& dir,
                                   const std::vector<SegSample>& samples);
std::vector<SegSample> load_dataset(const std::filesystem::path& manifest,
                                    const ClassMap* palette = nullptr);

// --- augmentation ------------------------------------------------------------

struct AugmentOptions {
  double hflip_prob = 0.5;
  double shear_range = 0.2;
  // 0 disables cropping.
  std::size_t crop_height = 0;
  std::size_t crop_width = 0;
};

SegSample hflip(const SegSample& s);
SegSample crop(const SegSample& s, std::size_t top, std::size_t left, std::size_t h, std::size_t w);
// (x', y') = (x + lambda (y - cy), y) about the image center. Image is
// sampled bilinearly (0 outside), the mask by nearest neighbour
// (kIgnoreLabel outside).
SegSample shear(const SegSample& s, double lambda);

// Flip with hflip_prob, shear with lambda ~ U(-range, range), then a random
// crop. The rng is advanced by the same number of draws whatever happens.
SegSample augment(const SegSample& s, const AugmentOptions& opts, std::mt19937_64& rng);

// --- batching ----------------------------------------------------------------

struct Batch {
  Tensor images;                     // N x C x H x W
  std::vector<std::uint8_t> labels;  // N x H x W
  std::vector<std::string> ids;
};

// Shuffled index batches (seeded); the final short batch is kept.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch,
                                                    std::uint64_t seed);
Batch make_batch(std::span<const SegSample> samples, std::span<const std::size_t> indices);
Batch make_batch(std::span<const SegSample> samples);
std::vector<Batch> batch_iter(std::span<const SegSample> samples, std::size_t batch,
                              std::uint64_t seed);

// Deterministic per-(seed, stream, index) generator.
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

}  // namespace segattn
