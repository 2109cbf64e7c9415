#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "segattn/attention.hpp"

namespace segattn {

enum class FusionMethod { kNone, kConcat };

struct ModelConfig {
  std::size_t in_channels = 3;
  std::size_t num_classes = 3;
  std::vector<std::size_t> stage_channels{8, 16};
  std::size_t blocks_per_stage = 1;
  std::size_t pooling_count = 2;
  std::size_t branches = 1;
  FusionMethod fusion = FusionMethod::kConcat;
  std::vector<std::size_t> dilation_schedule{1, 2};
  bool attention_post_encoder = true;
  bool attention_post_fusion = true;
  std::size_t decoder_kernel = 4;
  std::size_t decoder_stride = 4;
  std::size_t stem_padding = 1;
  // Nominal input extent used to validate the shape algebra at build time.
  std::size_t input_height = 32;
  std::size_t input_width = 32;

  // Throws ConfigError naming the offending field.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Canonical key/value form, keys in a fixed order.
std::vector<std::pair<std::string, std::string>> model_config_entries(const ModelConfig& cfg);
// Returns false when key is not a model key; throws ConfigError on a bad value.
bool apply_model_key(ModelConfig& cfg, const std::string& key, const std::string& value);
std::string model_config_text(const ModelConfig& cfg);
ModelConfig parse_model_config_text(const std::string& text);

std::string fusion_name(FusionMethod f);
std::string attention_points_name(const ModelConfig& cfg);

struct NamedParam {
  std::string name;
  Tensor value;
};

// One entry per emitted layer, with its output shape at the nominal input.
struct LayerInfo {
  std::string name;
  std::string kind;
  Shape output_shape;
};

struct ForwardResult {
  Var logits;
  std::vector<Var> params;  // leaves bound for each parameter, build order
};

class SegModel {
 public:
  SegModel(ModelConfig cfg, std::vector<NamedParam> params, std::vector<LayerInfo> layers);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<NamedParam>& params() const { return params_; }
  std::vector<NamedParam>& params() { return params_; }
  const std::vector<LayerInfo>& layers() const { return layers_; }

  // Input extents for which every pooling step sees an even extent, so the
  // decoder restores the stem resolution exactly.
  bool accepts(std::size_t height, std::size_t width) const;
  bool accepts_extent(std::size_t extent) const;
  // Closest accepted extents at or below / at or above extent (0 if none below).
  std::pair<std::size_t, std::size_t> nearest_valid_extent(std::size_t extent) const;

  // Records the forward pass on graph: N x C x H x W -> N x K x H x W logits.
  // With track_params false the parameter leaves do not require gradients.
  ForwardResult forward(Graph& graph, Var input, bool track_params = true) const;
  // Same pass with caller-supplied parameter variables (build order).
  Var forward_with(Var input, std::span<const Var> params) const;
  Tensor predict(const Tensor& input) const;

 private:
  void check_input(const Shape& shape) const;

  ModelConfig cfg_;
  std::vector<NamedParam> params_;
  std::vector<LayerInfo> layers_;
};

// Parameters are created and initialized in topology order; the i-th
// weight consumes init call index i. Biases and attention scales start at 0.
SegModel build_model(const ModelConfig& cfg, const InitSpec& init);

std::uint64_t count_params(const SegModel& m);
// Analytic count (multiply-accumulate = 2 FLOPs); input_shape is C x H x W
// or N x C x H x W.
std::uint64_t count_flops(const SegModel& m, const Shape& input_shape);

// Checkpoint: "SEGATTN1", u32 config length, config text, u32 parameter
// count, then per parameter u32 name length, name, u32 rank, u64 extents,
// raw f64 values. All integers and reals little-endian.
void save_checkpoint(const SegModel& m, std::ostream& out);
void save_checkpoint(const SegModel& m, const std::filesystem::path& path);
SegModel load_checkpoint(std::istream& in);
SegModel load_checkpoint(const std::filesystem::path& path);

}  // namespace segattn
