#include "segattn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "segattn/error.hpp"

namespace segattn {

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

// ---------------------------------------------------------------------------
// Synthetic scenes

std::array<double, 3> class_color(std::size_t cls) {
  static constexpr std::array<std::array<double, 3>, 12> kTable{{
      {0.15, 0.15, 0.15},
      {0.90, 0.20, 0.20},
      {0.20, 0.80, 0.20},
      {0.20, 0.30, 0.90},
      {0.90, 0.90, 0.20},
      {0.80, 0.20, 0.80},
      {0.20, 0.80, 0.80},
      {0.95, 0.60, 0.20},
      {0.60, 0.40, 0.20},
      {0.60, 0.60, 0.95},
      {0.50, 0.95, 0.50},
      {0.95, 0.95, 0.95},
  }};
  if (cls < kTable.size()) return kTable[cls];
  // golden-ratio hue walk for larger class counts
  const double hue = std::fmod(static_cast<double>(cls) * 0.618033988749895, 1.0) * 6.0;
  const double f = hue - std::floor(hue);
  const double v = 0.9, lo = 0.25, up = lo + (v - lo) * f, down = v - (v - lo) * f;
  switch (static_cast<int>(hue)) {
    case 0: return {v, up, lo};
    case 1: return {down, v, lo};
    case 2: return {lo, v, up};
    case 3: return {lo, down, v};
    case 4: return {up, lo, v};
    default: return {v, lo, down};
  }
}

std::vector<SegSample> gen_synthetic(const SyntheticOptions& opts) {
  if (opts.num_classes < 2) throw ConfigError("gen_synthetic: need at least 2 classes");
  if (opts.num_classes > 255) throw ConfigError("gen_synthetic: at most 255 classes");
  if (opts.height < 16 || opts.width < 16) throw ConfigError("gen_synthetic: size must be >= 16x16");
  const std::size_t n = opts.count, k = opts.num_classes, fg = k - 1;
  const std::size_t max_shapes = std::min(opts.max_shapes.value_or(fg), fg);

  // Round-robin quota so each foreground class lands in ceil(n/K) scenes.
  std::vector<std::vector<std::uint8_t>> required(n);
  if (max_shapes > 0 && n > 0) {
    const std::size_t quota = (n + k - 1) / k;
    std::size_t cursor = 0;
    for (std::size_t cls = 1; cls < k; ++cls) {
      for (std::size_t j = 0; j < quota; ++j) {
        auto& slot = required[cursor++ % n];
        if (slot.size() < max_shapes) slot.push_back(static_cast<std::uint8_t>(cls));
      }
    }
  }

  const double h = static_cast<double>(opts.height), w = static_cast<double>(opts.width);
  const double smaller = std::min(h, w);
  const int r_lo = std::max(2, static_cast<int>(smaller / 10.0));
  const int r_hi = std::max(r_lo + 1, static_cast<int>(smaller / 5.0));

  std::vector<SegSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = make_rng(opts.seed, 0x5e9, i);
    std::vector<std::uint8_t> classes = required[i];
    if (max_shapes > 0) {
      std::uniform_int_distribution<std::size_t> count_dist(1, max_shapes);
      const std::size_t want = std::max(classes.size(), count_dist(rng));
      std::vector<std::uint8_t> pool;
      for (std::size_t c = 1; c < k; ++c) {
        if (std::find(classes.begin(), classes.end(), c) == classes.end()) {
          pool.push_back(static_cast<std::uint8_t>(c));
        }
      }
      std::shuffle(pool.begin(), pool.end(), rng);
      for (std::size_t j = 0; classes.size() < want && j < pool.size(); ++j) classes.push_back(pool[j]);
      std::shuffle(classes.begin(), classes.end(), rng);
    }

    Mask mask(opts.height, opts.width, 0);
    std::uniform_real_distribution<double> cy(0.0, h), cx(0.0, w), coin(0.0, 1.0);
    std::uniform_int_distribution<int> radius(r_lo, r_hi);
    for (std::uint8_t cls : classes) {
      const double y0 = cy(rng), x0 = cx(rng);
      const bool disc = coin(rng) < 0.5;
      const double ry = radius(rng), rx = radius(rng);
      for (std::size_t y = 0; y < opts.height; ++y) {
        for (std::size_t x = 0; x < opts.width; ++x) {
          const double dy = static_cast<double>(y) + 0.5 - y0;
          const double dx = static_cast<double>(x) + 0.5 - x0;
          const bool inside = disc ? dy * dy + dx * dx <= ry * ry
                                   : std::abs(dy) <= ry && std::abs(dx) <= rx;
          if (inside) mask.at(y, x) = cls;
        }
      }
    }

    Tensor image(Shape{3, opts.height, opts.width});
    std::normal_distribution<double> noise(0.0, opts.noise_sigma);
    const std::size_t plane = opts.height * opts.width;
    for (std::size_t p = 0; p < plane; ++p) {
      const auto color = class_color(mask.labels[p]);
      for (std::size_t c = 0; c < 3; ++c) {
        image[c * plane + p] = std::clamp(color[c] + noise(rng), 0.0, 1.0);
      }
    }
    out.push_back(SegSample{std::move(image), std::move(mask), "sample_" + std::to_string(i)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Netpbm

namespace {

struct Header {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t data_offset = 0;
};

std::string slurp(std::istream& in) {
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Header parse_header(const std::string& bytes, const char* magic) {
  if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1]) {
    throw IoError(std::string("expected netpbm magic ") + magic + " at byte offset 0");
  }
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      ++pos;
    }
    if (pos == start) {
      throw IoError(std::string("netpbm header: expected ") + what + " at byte offset " +
                    std::to_string(start));
    }
    return v;
  };
  Header h;
  h.width = number("width");
  h.height = number("height");
  const std::size_t maxval_at = pos;
  const std::size_t maxval = number("maxval");
  if (maxval != 255) {
    throw IoError("netpbm header: maxval " + std::to_string(maxval) + " at byte offset " +
                  std::to_string(maxval_at) + " (only 255 is supported)");
  }
  if (h.width == 0 || h.height == 0) throw IoError("netpbm header: zero image extent");
  if (pos >= bytes.size()) throw IoError("netpbm header truncated at byte offset " + std::to_string(pos));
  h.data_offset = pos + 1;  // single whitespace byte
  return h;
}

void require_payload(const std::string& bytes, const Header& h, std::size_t channels) {
  const std::size_t need = h.data_offset + h.width * h.height * channels;
  if (bytes.size() < need) {
    throw IoError("netpbm raster truncated at byte offset " + std::to_string(bytes.size()) +
                  ", expected " + std::to_string(need) + " bytes");
  }
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

RgbImage read_ppm_rgb(std::istream& in) {
  const std::string bytes = slurp(in);
  const Header h = parse_header(bytes, "P6");
  require_payload(bytes, h, 3);
  RgbImage img{h.height, h.width, {}};
  img.pixels.resize(h.width * h.height);
  for (std::size_t p = 0; p < img.pixels.size(); ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      img.pixels[p][c] = static_cast<std::uint8_t>(bytes[h.data_offset + 3 * p + c]);
    }
  }
  return img;
}

Tensor read_ppm(std::istream& in) {
  const RgbImage rgb = read_ppm_rgb(in);
  const std::size_t plane = rgb.height * rgb.width;
  Tensor out(Shape{3, rgb.height, rgb.width});
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) out[c * plane + p] = rgb.pixels[p][c] / 255.0;
  }
  return out;
}

Mask read_pgm(std::istream& in) {
  const std::string bytes = slurp(in);
  const Header h = parse_header(bytes, "P5");
  require_payload(bytes, h, 1);
  Mask m(h.height, h.width);
  for (std::size_t p = 0; p < m.labels.size(); ++p) {
    m.labels[p] = static_cast<std::uint8_t>(bytes[h.data_offset + p]);
  }
  return m;
}

void write_ppm(std::ostream& out, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("write_ppm: expected 3 x H x W image, got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
  out << "P6\n" << w << " " << h << "\n255\n";
  std::string raster(plane * 3, '\0');
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) raster[3 * p + c] = static_cast<char>(quantize(image[c * plane + p]));
  }
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
}

void write_pgm(std::ostream& out, const Mask& mask) {
  out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(mask.labels.data()),
            static_cast<std::streamsize>(mask.labels.size()));
}

// ---------------------------------------------------------------------------
// Class maps

ClassMap ClassMap::identity(std::size_t num_classes) {
  ClassMap cm;
  for (std::size_t c = 0; c < num_classes; ++c) cm.map_label(static_cast<std::uint32_t>(c), static_cast<std::uint8_t>(c));
  cm.map_label(kIgnoreLabel, kIgnoreLabel);
  return cm;
}

ClassMap ClassMap::from_palette(std::istream& in) {
  ClassMap cm;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = line.substr(0, line.find('#'));
    std::istringstream ss(line);
    long cls = 0, r = 0, g = 0, b = 0;
    if (!(ss >> cls)) continue;
    if (!(ss >> r >> g >> b)) {
      throw IoError("palette line " + std::to_string(lineno) + ": expected class_id R G B name");
    }
    std::string name;
    std::getline(ss >> std::ws, name);
    auto in_byte = [](long v) { return v >= 0 && v <= 255; };
    if (!in_byte(cls) || !in_byte(r) || !in_byte(g) || !in_byte(b)) {
      throw IoError("palette line " + std::to_string(lineno) + ": values must be in 0..255");
    }
    cm.map_color({static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)},
                 static_cast<std::uint8_t>(cls), name);
  }
  return cm;
}

ClassMap ClassMap::from_palette_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open palette " + path.string());
  return from_palette(in);
}

void ClassMap::map_label(std::uint32_t source, std::uint8_t target) { labels_[source] = target; }

void ClassMap::map_color(std::array<std::uint8_t, 3> rgb, std::uint8_t target, std::string name) {
  colors_[rgb] = target;
  names_[rgb] = std::move(name);
}

std::uint8_t ClassMap::resolve_label(std::uint32_t source) const {
  auto it = labels_.find(source);
  if (it == labels_.end()) {
    throw ConfigError("class map: source label " + std::to_string(source) + " is not mapped");
  }
  return it->second;
}

std::uint8_t ClassMap::resolve_color(std::array<std::uint8_t, 3> rgb) const {
  auto it = colors_.find(rgb);
  if (it == colors_.end()) {
    throw IoError("palette has no entry for RGB (" + std::to_string(rgb[0]) + ", " +
                  std::to_string(rgb[1]) + ", " + std::to_string(rgb[2]) + ")");
  }
  return it->second;
}

std::size_t ClassMap::num_classes() const {
  std::size_t k = 0;
  auto visit = [&](std::uint8_t t) {
    if (t != kIgnoreLabel) k = std::max<std::size_t>(k, t + 1u);
  };
  for (const auto& [src, t] : labels_) visit(t);
  for (const auto& [src, t] : colors_) visit(t);
  return k;
}

bool ClassMap::targets_dense() const {
  std::vector<bool> hit(num_classes(), false);
  for (const auto& [src, t] : labels_) {
    if (t != kIgnoreLabel) hit[t] = true;
  }
  for (const auto& [src, t] : colors_) {
    if (t != kIgnoreLabel) hit[t] = true;
  }
  return std::all_of(hit.begin(), hit.end(), [](bool b) { return b; });
}

Mask remap_classes(const Mask& mask, const ClassMap& cm) {
  Mask out = mask;
  for (auto& v : out.labels) v = cm.resolve_label(v);
  return out;
}

Tensor load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  return read_ppm(in);
}

Mask load_mask(const std::filesystem::path& path, const ClassMap* palette) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open mask " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  in.seekg(0);
  if (magic[0] == 'P' && magic[1] == '6') {
    if (palette == nullptr) throw IoError("color mask " + path.string() + " needs a palette");
    const RgbImage rgb = read_ppm_rgb(in);
    Mask m(rgb.height, rgb.width);
    for (std::size_t p = 0; p < rgb.pixels.size(); ++p) m.labels[p] = palette->resolve_color(rgb.pixels[p]);
    return m;
  }
  return read_pgm(in);
}

void save_image(const std::filesystem::path& path, const Tensor& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_ppm(out, image);
}

void save_mask(const std::filesystem::path& path, const Mask& mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_pgm(out, mask);
}

// ---------------------------------------------------------------------------
// Manifests

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw IoError("manifest line " + std::to_string(lineno) + ": expected id<TAB>image<TAB>mask");
    }
    auto resolve = [&](std::string p) {
      std::filesystem::path fp(p);
      return fp.is_absolute() ? fp : base / fp;
    };
    out.push_back({line.substr(0, t1), resolve(line.substr(t1 + 1, t2 - t1 - 1)),
                   resolve(line.substr(t2 + 1))});
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& e : entries) {
    out << e.id << '\t' << e.image.generic_string() << '\t' << e.mask.generic_string() << '\n';
  }
}

std::filesystem::path save_dataset(const std::filesystem::path& dir,
                                   const std::vector<SegSample>& samples) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (const auto& s : samples) {
    const std::string img = s.id + ".ppm", msk = s.id + ".pgm";
    save_image(dir / img, s.image);
    save_mask(dir / msk, s.mask);
    entries.push_back({s.id, img, msk});
  }
  const auto manifest = dir / "manifest.txt";
  write_manifest(manifest, entries);
  return manifest;
}

std::vector<SegSample> load_dataset(const std::filesystem::path& manifest, const ClassMap* palette) {
  std::vector<SegSample> out;
  for (const auto& e : read_manifest(manifest)) {
    SegSample s{load_image(e.image), load_mask(e.mask, palette), e.id};
    if (s.image.dim(1) != s.mask.height || s.image.dim(2) != s.mask.width) {
      throw IoError("sample " + e.id + ": image and mask extents differ");
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

SegSample hflip(const SegSample& s) {
  SegSample out = s;
  const std::size_t c = s.image.dim(0), h = s.image.dim(1), w = s.image.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        out.image[(ch * h + y) * w + x] = s.image[(ch * h + y) * w + (w - 1 - x)];
      }
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) out.mask.at(y, x) = s.mask.at(y, w - 1 - x);
  }
  return out;
}

SegSample crop(const SegSample& s, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  const std::size_t c = s.image.dim(0), ih = s.image.dim(1), iw = s.image.dim(2);
  if (h == 0 || w == 0 || top + h > ih || left + w > iw) {
    throw ShapeError("crop " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                     std::to_string(top) + "," + std::to_string(left) + ") exceeds image " +
                     std::to_string(ih) + "x" + std::to_string(iw));
  }
  SegSample out{Tensor(Shape{c, h, w}), Mask(h, w), s.id};
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        out.image[(ch * h + y) * w + x] = s.image[(ch * ih + top + y) * iw + left + x];
      }
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) out.mask.at(y, x) = s.mask.at(top + y, left + x);
  }
  return out;
}

SegSample shear(const SegSample& s, double lambda) {
  const std::size_t c = s.image.dim(0), h = s.image.dim(1), w = s.image.dim(2);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  SegSample out{Tensor(s.image.shape(), 0.0), Mask(h, w, kIgnoreLabel), s.id};
  for (std::size_t y = 0; y < h; ++y) {
    const double offset = lambda * (static_cast<double>(y) - cy);
    for (std::size_t x = 0; x < w; ++x) {
      const double sx = static_cast<double>(x) - offset;
      const double nearest = std::round(sx);
      if (nearest >= 0.0 && nearest < static_cast<double>(w)) {
        out.mask.at(y, x) = s.mask.at(y, static_cast<std::size_t>(nearest));
      }
      if (sx < 0.0 || sx > static_cast<double>(w - 1)) continue;
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double t = sx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double a = s.image[(ch * h + y) * w + x0];
        const double b = s.image[(ch * h + y) * w + x1];
        out.image[(ch * h + y) * w + x] = (1.0 - t) * a + t * b;
      }
    }
  }
  return out;
}

SegSample augment(const SegSample& s, const AugmentOptions& opts, std::mt19937_64& rng) {
  const std::size_t h = s.image.dim(1), w = s.image.dim(2);
  const bool cropping = opts.crop_height > 0 && opts.crop_width > 0;
  if (cropping && (opts.crop_height > h || opts.crop_width > w)) {
    throw ShapeError("augment: crop " + std::to_string(opts.crop_height) + "x" +
                     std::to_string(opts.crop_width) + " larger than image " + std::to_string(h) +
                     "x" + std::to_string(w));
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double flip_draw = unit(rng);
  const double shear_draw = unit(rng);
  const double top_draw = unit(rng);
  const double left_draw = unit(rng);

  SegSample out = flip_draw < opts.hflip_prob ? hflip(s) : s;
  if (opts.shear_range > 0.0) out = shear(out, (2.0 * shear_draw - 1.0) * opts.shear_range);
  if (cropping) {
    const auto top = static_cast<std::size_t>(top_draw * static_cast<double>(h - opts.crop_height + 1));
    const auto left = static_cast<std::size_t>(left_draw * static_cast<double>(w - opts.crop_width + 1));
    out = crop(out, std::min(top, h - opts.crop_height), std::min(left, w - opts.crop_width),
               opts.crop_height, opts.crop_width);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batching

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch,
                                                    std::uint64_t seed) {
  if (batch == 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng = make_rng(seed, 0xba7c, 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch)));
  }
  return out;
}

Batch make_batch(std::span<const SegSample> samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("make_batch: empty batch");
  const Tensor& first = samples[indices[0]].image;
  const std::size_t c = first.dim(0), h = first.dim(1), w = first.dim(2);
  Batch b{Tensor(Shape{indices.size(), c, h, w}), {}, {}};
  b.labels.reserve(indices.size() * h * w);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const SegSample& s = samples[indices[k]];
    if (s.image.shape() != first.shape() || s.mask.height != h || s.mask.width != w) {
      throw ShapeError("make_batch: sample " + s.id + " has shape " + shape_str(s.image.shape()) +
                       ", batch expects " + shape_str(first.shape()));
    }
    std::copy(s.image.data().begin(), s.image.data().end(),
              b.images.data().begin() + static_cast<std::ptrdiff_t>(k * c * h * w));
    b.labels.insert(b.labels.end(), s.mask.labels.begin(), s.mask.labels.end());
    b.ids.push_back(s.id);
  }
  return b;
}

Batch make_batch(std::span<const SegSample> samples) {
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_batch(samples, all);
}

std::vector<Batch> batch_iter(std::span<const SegSample> samples, std::size_t batch,
                              std::uint64_t seed) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(samples.size(), batch, seed)) out.push_back(make_batch(samples, idx));
  return out;
}

}  // namespace segattn
