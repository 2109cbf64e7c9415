#include "segattn/network.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <fstream>
#include <sstream>

#include "segattn/error.hpp"

namespace segattn {

// ---------------------------------------------------------------------------
// Config

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t parse_count(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': expected a nonnegative integer, got '" + value + "'");
  }
  return out;
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_count(key, trim(item)));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

std::string join(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(values[i]);
  }
  return out;
}

}  // namespace

std::string fusion_name(FusionMethod f) { return f == FusionMethod::kConcat ? "concat" : "none"; }

std::string attention_points_name(const ModelConfig& cfg) {
  if (cfg.attention_post_encoder && cfg.attention_post_fusion) return "post-encoder,post-fusion";
  if (cfg.attention_post_encoder) return "post-encoder";
  if (cfg.attention_post_fusion) return "post-fusion";
  return "none";
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (in_channels == 0) fail("in_channels must be positive");
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (num_classes > 255) fail("num_classes must fit below the ignore label 255");
  if (stage_channels.empty()) fail("stage_channels must list at least one stage");
  for (auto c : stage_channels) {
    if (c == 0) fail("stage_channels entries must be positive");
  }
  if (blocks_per_stage == 0) fail("blocks_per_stage must be positive");
  if (pooling_count > stage_channels.size()) {
    fail("pooling_count " + std::to_string(pooling_count) + " exceeds the " +
         std::to_string(stage_channels.size()) + " configured stages");
  }
  if (branches != 1 && branches != 2) fail("branches must be 1 or 2");
  if (dilation_schedule.size() != stage_channels.size()) {
    fail("dilation_schedule needs one entry per stage");
  }
  for (auto d : dilation_schedule) {
    if (d == 0) fail("dilation_schedule entries must be positive");
  }
  if (decoder_kernel != decoder_stride) fail("decoder_kernel must equal decoder_stride");
  if (decoder_stride < 2 || !std::has_single_bit(decoder_stride)) {
    fail("decoder_stride must be a power of two >= 2");
  }
  if (stem_padding > 1) fail("stem_padding must be 0 or 1");
  if (input_height == 0 || input_width == 0) fail("input_size must be positive");
}

std::vector<std::pair<std::string, std::string>> model_config_entries(const ModelConfig& cfg) {
  return {
      {"in_channels", std::to_string(cfg.in_channels)},
      {"num_classes", std::to_string(cfg.num_classes)},
      {"stage_channels", join(cfg.stage_channels)},
      {"blocks_per_stage", std::to_string(cfg.blocks_per_stage)},
      {"pooling_count", std::to_string(cfg.pooling_count)},
      {"branches", std::to_string(cfg.branches)},
      {"fusion", fusion_name(cfg.fusion)},
      {"dilation_schedule", join(cfg.dilation_schedule)},
      {"attention_points", attention_points_name(cfg)},
      {"decoder_kernel", std::to_string(cfg.decoder_kernel)},
      {"decoder_stride", std::to_string(cfg.decoder_stride)},
      {"stem_padding", std::to_string(cfg.stem_padding)},
      {"input_size", std::to_string(cfg.input_height) + "x" + std::to_string(cfg.input_width)},
  };
}

bool apply_model_key(ModelConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "in_channels") {
    cfg.in_channels = parse_count(key, value);
  } else if (key == "num_classes") {
    cfg.num_classes = parse_count(key, value);
  } else if (key == "stage_channels") {
    cfg.stage_channels = parse_list(key, value);
  } else if (key == "blocks_per_stage") {
    cfg.blocks_per_stage = parse_count(key, value);
  } else if (key == "pooling_count") {
    cfg.pooling_count = parse_count(key, value);
  } else if (key == "branches") {
    cfg.branches = parse_count(key, value);
  } else if (key == "fusion") {
    if (value == "none") {
      cfg.fusion = FusionMethod::kNone;
    } else if (value == "concat") {
      cfg.fusion = FusionMethod::kConcat;
    } else {
      throw ConfigError("config key 'fusion': expected none or concat, got '" + value + "'");
    }
  } else if (key == "dilation_schedule") {
    cfg.dilation_schedule = parse_list(key, value);
  } else if (key == "attention_points") {
    cfg.attention_post_encoder = false;
    cfg.attention_post_fusion = false;
    if (value != "none") {
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item == "post-encoder") {
          cfg.attention_post_encoder = true;
        } else if (item == "post-fusion") {
          cfg.attention_post_fusion = true;
        } else {
          throw ConfigError("config key 'attention_points': unknown point '" + item + "'");
        }
      }
    }
  } else if (key == "decoder_kernel") {
    cfg.decoder_kernel = parse_count(key, value);
  } else if (key == "decoder_stride") {
    cfg.decoder_stride = parse_count(key, value);
  } else if (key == "stem_padding") {
    cfg.stem_padding = parse_count(key, value);
  } else if (key == "input_size") {
    const auto x = value.find('x');
    if (x == std::string::npos) {
      throw ConfigError("config key 'input_size': expected HxW, got '" + value + "'");
    }
    cfg.input_height = parse_count(key, value.substr(0, x));
    cfg.input_width = parse_count(key, value.substr(x + 1));
  } else {
    return false;
  }
  return true;
}

std::string model_config_text(const ModelConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : model_config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

ModelConfig parse_model_config_text(const std::string& text) {
  ModelConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("model config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (!apply_model_key(cfg, key, trim(line.substr(eq + 1)))) {
      throw ConfigError("model config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Topology
//
// The layer graph is written once and walked by three executors: one that
// creates parameters and traces shapes (build), one that counts FLOPs for an
// arbitrary input, and one that records the real forward pass on a Graph.

namespace {

std::size_t half_width(std::size_t c) { return std::max<std::size_t>(1, c / 2); }

template <typename Ex, typename V>
V encoder(const ModelConfig& cfg, Ex& ex, V x, const std::string& prefix,
          const std::vector<std::size_t>& widths) {
  for (std::size_t s = 0; s < widths.size(); ++s) {
    const std::size_t d = cfg.dilation_schedule[s];
    const Pair dil{d, d};
    for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
      const std::string name = prefix + "stage" + std::to_string(s) + ".block" + std::to_string(b);
      ex.begin_layer(name, "residual_block");
      const std::size_t cout = widths[s];
      auto phi = [&, name, cout](V u) {
        V h = ex.relu(ex.conv(u, name + ".conv1", cout, 3, dil, d));
        return ex.conv(h, name + ".conv2", cout, 3, dil, d);
      };
      if (ex.channels(x) == cout) {
        x = ex.relu(ex.residual(x, phi));
      } else {
        V skip = ex.conv(x, name + ".proj", cout, 1, Pair{1, 1}, 0);
        x = ex.relu(ex.add(skip, phi(x)));
      }
    }
    if (s < cfg.pooling_count) {
      ex.begin_layer(prefix + "stage" + std::to_string(s) + ".pool", "maxpool");
      x = ex.maxpool(x);
    }
  }
  return x;
}

template <typename Ex, typename V>
V run_topology(const ModelConfig& cfg, Ex& ex, V x) {
  const std::size_t in_h = ex.height(x), in_w = ex.width(x);
  const std::size_t base = cfg.stage_channels.front();

  ex.begin_layer("stem", "conv3x3");
  V stem = ex.relu(ex.conv(x, "stem", base, 3, Pair{1, 1}, cfg.stem_padding));

  V enc = encoder(cfg, ex, stem, "", cfg.stage_channels);
  if (cfg.branches == 2) {
    std::vector<std::size_t> narrow;
    for (auto c : cfg.stage_channels) narrow.push_back(half_width(c));
    V second = encoder(cfg, ex, stem, "branch2.", narrow);
    if (cfg.fusion == FusionMethod::kConcat) {
      ex.begin_layer("fuse", "concat_fuse");
      enc = ex.relu(ex.concat_fuse(enc, second, "fuse", cfg.stage_channels.back()));
    } else {
      ex.begin_layer("stack", "concat");
      enc = ex.concat(enc, second);
    }
  }
  if (cfg.attention_post_encoder) {
    ex.begin_layer("attention1", "channel_attention");
    enc = ex.attention(enc, "attention1");
  }

  V y = enc;
  std::size_t remaining = std::size_t{1} << cfg.pooling_count;
  for (std::size_t i = 0; remaining > 1; ++i) {
    const std::size_t f = std::min(cfg.decoder_stride, remaining);
    const std::string name = "decoder" + std::to_string(i);
    ex.begin_layer(name, "transposed_conv");
    y = ex.relu(ex.tconv(y, name, base, f));
    remaining /= f;
  }
  if (ex.height(y) != ex.height(stem) || ex.width(y) != ex.width(stem)) {
    ex.begin_layer("decoder_align", "align");
    y = ex.align(y, ex.height(stem), ex.width(stem));
  }
  if (cfg.fusion == FusionMethod::kConcat) {
    ex.begin_layer("skip_fuse", "concat_fuse");
    y = ex.relu(ex.concat_fuse(y, stem, "skip_fuse", base));
  }
  if (cfg.attention_post_fusion) {
    ex.begin_layer("attention2", "channel_attention");
    y = ex.attention(y, "attention2");
  }
  ex.begin_layer("classifier", "conv1x1");
  y = ex.conv(y, "classifier", cfg.num_classes, 1, Pair{1, 1}, 0);
  if (ex.height(y) != in_h || ex.width(y) != in_w) {
    ex.begin_layer("output_align", "align");
    y = ex.align(y, in_h, in_w);
  }
  return y;
}

// N x C x H x W shape tracer. Optionally creates parameters; always counts
// FLOPs.
class ShapeExec {
 public:
  explicit ShapeExec(const InitSpec* init) : init_(init) {}

  void begin_layer(std::string name, std::string kind) {
    layers_.push_back(LayerInfo{std::move(name), std::move(kind), {}});
  }
  std::size_t channels(const Shape& s) const { return s[1]; }
  std::size_t height(const Shape& s) const { return s[2]; }
  std::size_t width(const Shape& s) const { return s[3]; }

  Shape conv(const Shape& x, const std::string& name, std::size_t cout, std::size_t k, Pair dil,
             std::size_t pad) {
    weight(name + ".weight", {cout, x[1], k, k});
    zero(name + ".bias", {cout});
    const std::size_t oh = conv_output_extent(x[2], k, 1, dil[0], pad);
    const std::size_t ow = conv_output_extent(x[3], k, 1, dil[1], pad);
    flops_ += x[0] * (2 * cout * x[1] * k * k * oh * ow + cout * oh * ow);
    return out({x[0], cout, oh, ow});
  }
  Shape tconv(const Shape& x, const std::string& name, std::size_t cout, std::size_t k) {
    weight(name + ".weight", {x[1], cout, k, k});
    zero(name + ".bias", {cout});
    const std::size_t oh = transposed_output_extent(x[2], k, k);
    const std::size_t ow = transposed_output_extent(x[3], k, k);
    flops_ += x[0] * (2 * x[1] * cout * k * k * x[2] * x[3] + cout * oh * ow);
    return out({x[0], cout, oh, ow});
  }
  Shape relu(const Shape& x) {
    flops_ += shape_numel(x);
    return out(x);
  }
  Shape maxpool(const Shape& x) {
    if (x[2] < 2 || x[3] < 2) {
      throw ShapeError("maxpool on " + std::to_string(x[2]) + "x" + std::to_string(x[3]) +
                       " map would shrink below 1x1");
    }
    Shape y{x[0], x[1], x[2] / 2, x[3] / 2};
    flops_ += shape_numel(y);
    return out(y);
  }
  Shape add(const Shape& a, const Shape& b) {
    if (a != b) throw ShapeError("residual add of " + shape_str(a) + " and " + shape_str(b));
    flops_ += shape_numel(a);
    return out(a);
  }
  template <typename Phi>
  Shape residual(const Shape& x, Phi phi) {
    return add(x, phi(x));
  }
  Shape concat(const Shape& a, const Shape& b) {
    return out({a[0], a[1] + b[1], std::min(a[2], b[2]), std::min(a[3], b[3])});
  }
  Shape concat_fuse(const Shape& a, const Shape& b, const std::string& name, std::size_t cout) {
    const std::size_t c = a[1] + b[1];
    const std::size_t h = std::min(a[2], b[2]), w = std::min(a[3], b[3]);
    weight(name + ".depthwise", {c, 1, 3, 3});
    weight(name + ".pointwise", {cout, c, 1, 1});
    zero(name + ".bias", {cout});
    flops_ += a[0] * (2 * c * 9 * h * w + 2 * cout * c * h * w + cout * h * w);
    return out({a[0], cout, h, w});
  }
  Shape attention(const Shape& x, const std::string& name) {
    zero(name + ".alpha", {1});
    const std::size_t c = x[1], hw = x[2] * x[3];
    flops_ += x[0] * (2 * c * c * hw + 3 * c * c + 2 * c * c * hw);
    return out(x);
  }
  Shape align(const Shape& x, std::size_t h, std::size_t w) { return out({x[0], x[1], h, w}); }

  std::vector<NamedParam> take_params() { return std::move(params_); }
  std::vector<LayerInfo> take_layers() { return std::move(layers_); }
  const std::vector<LayerInfo>& layers() const { return layers_; }
  std::uint64_t flops() const { return flops_; }

 private:
  Shape out(Shape s) {
    if (!layers_.empty()) layers_.back().output_shape = s;
    return s;
  }
  void weight(const std::string& name, const Shape& shape) {
    if (init_ != nullptr) params_.push_back({name, init_params(*init_, shape, init_calls_)});
    ++init_calls_;
  }
  void zero(const std::string& name, const Shape& shape) {
    if (init_ != nullptr) params_.push_back({name, Tensor(shape, 0.0)});
  }

  const InitSpec* init_;
  std::vector<NamedParam> params_;
  std::vector<LayerInfo> layers_;
  std::uint64_t init_calls_ = 0;
  std::uint64_t flops_ = 0;
};

// Records the forward pass; parameters are consumed in build order.
class GraphExec {
 public:
  GraphExec(Graph& graph, const std::vector<NamedParam>& params, bool track_params)
      : params_(params) {
    for (const auto& p : params) bound_.push_back(graph.leaf(p.value, track_params));
  }
  GraphExec(const std::vector<NamedParam>& params, std::vector<Var> bound)
      : params_(params), bound_(std::move(bound)) {}

  void begin_layer(const std::string&, const std::string&) {}
  std::size_t channels(Var v) const { return v.value().dim(1); }
  std::size_t height(Var v) const { return v.value().dim(2); }
  std::size_t width(Var v) const { return v.value().dim(3); }

  Var conv(Var x, const std::string& name, std::size_t, std::size_t, Pair dil, std::size_t pad) {
    Var w = next(name + ".weight");
    Var b = next(name + ".bias");
    return conv2d(x, Conv2dParams{w, b, {1, 1}, dil, {pad, pad}});
  }
  Var tconv(Var x, const std::string& name, std::size_t, std::size_t k) {
    Var w = next(name + ".weight");
    Var b = next(name + ".bias");
    return transposed_conv2d(x, Conv2dParams{w, b, {k, k}});
  }
  Var relu(Var x) { return segattn::relu(x); }
  Var maxpool(Var x) { return maxpool2d(x); }
  Var add(Var a, Var b) { return segattn::add(a, b); }
  template <typename Phi>
  Var residual(Var x, Phi phi) {
    return substage_aggregate(AggregationConfig{}, x, std::nullopt, phi);
  }
  Var concat(Var a, Var b) {
    const std::size_t h = std::min(height(a), height(b)), w = std::min(width(a), width(b));
    return concat_channels(center_align(a, h, w), center_align(b, h, w));
  }
  Var concat_fuse(Var a, Var b, const std::string& name, std::size_t) {
    MergeParams merge{next(name + ".depthwise"), next(name + ".pointwise"), next(name + ".bias")};
    return segattn::concat_fuse(a, b, merge);
  }
  Var attention(Var x, const std::string& name) {
    Var alpha = next(name + ".alpha");
    return channel_attention_forward(ChannelAttention{alpha, channels(x)}, x);
  }
  Var align(Var x, std::size_t h, std::size_t w) { return center_align(x, h, w); }

  std::vector<Var> bound() const { return bound_; }

 private:
  Var next(const std::string& expected) {
    if (cursor_ >= params_.size() || params_[cursor_].name != expected) {
      throw ShapeError("model parameters out of sync: expected '" + expected + "'");
    }
    return bound_[cursor_++];
  }

  const std::vector<NamedParam>& params_;
  std::vector<Var> bound_;
  std::size_t cursor_ = 0;
};

}  // namespace

// ---------------------------------------------------------------------------
// SegModel

SegModel::SegModel(ModelConfig cfg, std::vector<NamedParam> params, std::vector<LayerInfo> layers)
    : cfg_(std::move(cfg)), params_(std::move(params)), layers_(std::move(layers)) {}

bool SegModel::accepts_extent(std::size_t extent) const {
  if (extent + 2 * cfg_.stem_padding < 3) return false;
  std::size_t e = extent + 2 * cfg_.stem_padding - 2;
  for (std::size_t i = 0; i < cfg_.pooling_count; ++i) {
    if (e < 2 || e % 2 != 0) return false;
    e /= 2;
  }
  return true;
}

bool SegModel::accepts(std::size_t height, std::size_t width) const {
  return accepts_extent(height) && accepts_extent(width);
}

std::pair<std::size_t, std::size_t> SegModel::nearest_valid_extent(std::size_t extent) const {
  std::size_t below = 0;
  for (std::size_t e = extent; e > 0; --e) {
    if (accepts_extent(e)) {
      below = e;
      break;
    }
  }
  std::size_t above = extent;
  while (!accepts_extent(above)) ++above;
  return {below, above};
}

void SegModel::check_input(const Shape& shape) const {
  if (shape.size() != 4 || shape[1] != cfg_.in_channels) {
    throw ShapeError("model input must be N x " + std::to_string(cfg_.in_channels) +
                     " x H x W, got " + shape_str(shape));
  }
  if (!accepts(shape[2], shape[3])) {
    const auto [hb, ha] = nearest_valid_extent(shape[2]);
    const auto [wb, wa] = nearest_valid_extent(shape[3]);
    throw ShapeError("input extent " + std::to_string(shape[2]) + "x" + std::to_string(shape[3]) +
                     " incompatible with pooling_count " + std::to_string(cfg_.pooling_count) +
                     "; nearest valid heights " + std::to_string(hb) + "/" + std::to_string(ha) +
                     ", widths " + std::to_string(wb) + "/" + std::to_string(wa));
  }
}

ForwardResult SegModel::forward(Graph& graph, Var input, bool track_params) const {
  check_input(input.shape());
  GraphExec ex(graph, params_, track_params);
  Var logits = run_topology(cfg_, ex, input);
  return ForwardResult{logits, ex.bound()};
}

Var SegModel::forward_with(Var input, std::span<const Var> params) const {
  check_input(input.shape());
  if (params.size() != params_.size()) {
    throw ShapeError("forward_with: expected " + std::to_string(params_.size()) +
                     " parameter variables, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != params_[i].value.shape()) {
      throw ShapeError("forward_with: parameter " + params_[i].name + " expects shape " +
                       shape_str(params_[i].value.shape()) + ", got " + shape_str(params[i].shape()));
    }
  }
  GraphExec ex(params_, std::vector<Var>(params.begin(), params.end()));
  return run_topology(cfg_, ex, input);
}

Tensor SegModel::predict(const Tensor& input) const {
  Graph graph;
  Var x = graph.leaf(input, false);
  return forward(graph, x, false).logits.value();
}

SegModel build_model(const ModelConfig& cfg, const InitSpec& init) {
  cfg.validate();
  ShapeExec ex(&init);
  try {
    run_topology(cfg, ex, Shape{1, cfg.in_channels, cfg.input_height, cfg.input_width});
  } catch (const ShapeError& e) {
    const auto& layers = ex.layers();
    const std::size_t idx = layers.empty() ? 0 : layers.size() - 1;
    const std::string name = layers.empty() ? "input" : layers.back().name;
    throw ConfigError("layer " + std::to_string(idx) + " (" + name + "): " + e.what());
  }
  return SegModel(cfg, ex.take_params(), ex.take_layers());
}

std::uint64_t count_params(const SegModel& m) {
  std::uint64_t total = 0;
  for (const auto& p : m.params()) total += p.value.size();
  return total;
}

std::uint64_t count_flops(const SegModel& m, const Shape& input_shape) {
  Shape shape = input_shape;
  if (shape.size() == 3) shape.insert(shape.begin(), 1);
  if (shape.size() != 4 || shape[1] != m.config().in_channels) {
    throw ShapeError("count_flops: input shape " + shape_str(input_shape) +
                     " does not match the model's " + std::to_string(m.config().in_channels) +
                     " input channels");
  }
  ShapeExec ex(nullptr);
  run_topology(m.config(), ex, shape);
  return ex.flops();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'S', 'E', 'G', 'A', 'T', 'T', 'N', '1'};

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw IoError(std::string("checkpoint truncated reading ") + what + " at byte offset " +
                    std::to_string(offset_ + static_cast<std::size_t>(in_.gcount())));
    }
    offset_ += n;
  }
  template <typename T>
  T le(const char* what) {
    unsigned char buf[sizeof(T)];
    bytes(reinterpret_cast<char*>(buf), sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
  }
  std::size_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::size_t offset_ = 0;
};

}  // namespace

void save_checkpoint(const SegModel& m, std::ostream& out) {
  out.write(kMagic, sizeof(kMagic));
  const std::string text = model_config_text(m.config());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.params().size()));
  for (const auto& p : m.params()) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
    for (auto e : p.value.shape()) put_le<std::uint64_t>(out, e);
    for (double v : p.value.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
}

void save_checkpoint(const SegModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  save_checkpoint(m, out);
  if (!out) throw IoError("failed writing " + path.string());
}

SegModel load_checkpoint(std::istream& in) {
  Reader r(in);
  char magic[8];
  r.bytes(magic, sizeof(magic), "magic");
  if (!std::equal(magic, magic + 8, kMagic)) throw IoError("bad checkpoint magic at byte offset 0");
  const auto text_len = r.le<std::uint32_t>("config length");
  std::string text(text_len, '\0');
  r.bytes(text.data(), text_len, "config");
  SegModel model = build_model(parse_model_config_text(text), InitSpec{});
  auto& params = model.params();
  const auto count = r.le<std::uint32_t>("parameter count");
  if (count != params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(count) + " parameters, config builds " +
                      std::to_string(params.size()));
  }
  for (auto& p : params) {
    const std::size_t at = r.offset();
    const auto name_len = r.le<std::uint32_t>("parameter name length");
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len, "parameter name");
    if (name != p.name) {
      throw ConfigError("checkpoint parameter '" + name + "' at byte offset " + std::to_string(at) +
                        " where '" + p.name + "' was expected");
    }
    const auto rank = r.le<std::uint32_t>("rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.le<std::uint64_t>("extent"));
    if (shape != p.value.shape()) {
      throw ConfigError("checkpoint parameter '" + name + "' has shape " + shape_str(shape) +
                        ", expected " + shape_str(p.value.shape()));
    }
    for (double& v : p.value.data()) v = std::bit_cast<double>(r.le<std::uint64_t>("values"));
  }
  return model;
}

SegModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace segattn
