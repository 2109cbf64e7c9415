#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "segattn/data.hpp"
#include "segattn/error.hpp"
#include "test_util.hpp"

using namespace segattn;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("segattn_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double px(const Tensor& img, std::size_t c, std::size_t y, std::size_t x) {
  return img[(c * img.dim(1) + y) * img.dim(2) + x];
}

SegSample blank_sample(std::size_t h, std::size_t w) {
  SegSample s{Tensor({3, h, w}), Mask(h, w, 0), "blank"};
  return s;
}

}  // namespace

TEST_SUITE("data.synthetic") {
  TEST_CASE("deterministic per seed") {
    SyntheticOptions o;
    o.count = 4;
    o.seed = 9;
    auto a = gen_synthetic(o), b = gen_synthetic(o);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(a[i].image == b[i].image);
      CHECK(a[i].mask == b[i].mask);
      CHECK(a[i].id == b[i].id);
    }
    o.seed = 10;
    auto c = gen_synthetic(o);
    CHECK_FALSE(a[0].image == c[0].image);
  }

  TEST_CASE("zero shapes gives background only") {
    SyntheticOptions o;
    o.count = 3;
    o.num_classes = 2;
    o.max_shapes = 0;
    for (const auto& s : gen_synthetic(o)) {
      CHECK(std::all_of(s.mask.labels.begin(), s.mask.labels.end(), [](auto v) { return v == 0; }));
    }
  }

  TEST_CASE("labels in range, images in [0,1], coverage and background mode") {
    for (std::size_t k : {2, 3, 5}) {
      SyntheticOptions o;
      o.count = 40;
      o.num_classes = k;
      o.seed = k;
      auto samples = gen_synthetic(o);
      std::vector<std::size_t> present(k, 0);
      std::size_t background_mode = 0;
      for (const auto& s : samples) {
        CHECK(s.image.shape() == Shape{3, 32, 32});
        for (double v : s.image.data()) {
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
        }
        std::vector<std::size_t> hist(k, 0);
        for (auto v : s.mask.labels) {
          REQUIRE(v < k);
          ++hist[v];
        }
        for (std::size_t c = 0; c < k; ++c) present[c] += hist[c] > 0;
        background_mode += std::max_element(hist.begin(), hist.end()) == hist.begin();
      }
      const std::size_t need = (o.count + k - 1) / k;
      for (std::size_t c = 0; c < k; ++c) CHECK(present[c] >= need);
      CHECK(background_mode * 10 >= o.count * 9);
    }
  }
}

TEST_SUITE("data.netpbm") {
  TEST_CASE("P5 bytes map to labels") {
    std::string pgm = "P5\n2 2\n255\n";
    pgm += std::string{'\x00', '\x01', '\x02', '\xff'};
    std::istringstream in(pgm);
    Mask m = read_pgm(in);
    CHECK(m.height == 2);
    CHECK(m.width == 2);
    CHECK(m.labels == std::vector<std::uint8_t>{0, 1, 2, kIgnoreLabel});
  }

  TEST_CASE("header comments are skipped") {
    std::string pgm = "P5\n# made by hand\n1 1\n255\n";
    pgm += '\x07';
    std::istringstream in(pgm);
    CHECK(read_pgm(in).labels == std::vector<std::uint8_t>{7});
  }

  TEST_CASE("round trips are bitwise identities") {
    SyntheticOptions o;
    o.count = 3;
    o.height = 17;
    o.width = 23;
    for (const auto& s : gen_synthetic(o)) {
      std::stringstream img, msk;
      write_ppm(img, s.image);
      write_pgm(msk, s.mask);
      const std::string img_bytes = img.str(), msk_bytes = msk.str();
      Tensor back = read_ppm(img);
      Mask mback = read_pgm(msk);
      CHECK(mback == s.mask);
      std::stringstream again;
      write_ppm(again, back);
      CHECK(again.str() == img_bytes);
      CHECK(read_ppm(again) == back);
      for (std::size_t i = 0; i < back.size(); ++i) CHECK(std::abs(back[i] - s.image[i]) <= 0.5 / 255.0 + 1e-12);
    }
  }

  TEST_CASE("malformed files report byte offsets") {
    std::istringstream bad_magic("P3\n1 1\n255\n\x01");
    try {
      read_pgm(bad_magic);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
    }
    std::istringstream truncated(std::string("P5\n2 2\n255\n\x01\x02", 13));
    try {
      read_pgm(truncated);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
    std::istringstream bad_max("P6\n1 1\n65535\n\x01\x02\x03\x04\x05\x06");
    CHECK_THROWS_AS(read_ppm(bad_max), IoError);
  }
}

TEST_SUITE("data.classmap") {
  TEST_CASE("identity and pointwise remap") {
    Mask m(2, 2);
    m.labels = {1, 2, 0, 2};
    CHECK(remap_classes(m, ClassMap::identity(3)) == m);
    ClassMap cm;
    cm.map_label(0, 0);
    cm.map_label(1, 0);
    cm.map_label(2, 1);
    Mask r = remap_classes(m, cm);
    CHECK(r.labels == std::vector<std::uint8_t>{0, 1, 0, 1});
    CHECK(r.labels.size() == m.labels.size());
    Mask bad(1, 1, 3);
    CHECK_THROWS_AS(remap_classes(bad, cm), ConfigError);
  }

  TEST_CASE("histogram mass is conserved") {
    SyntheticOptions o;
    o.count = 5;
    o.num_classes = 5;
    ClassMap cm;
    for (std::uint32_t s = 0; s < 5; ++s) cm.map_label(s, static_cast<std::uint8_t>(s / 2));
    for (const auto& s : gen_synthetic(o)) {
      std::vector<std::size_t> src(5, 0), dst(3, 0);
      for (auto v : s.mask.labels) ++src[v];
      for (auto v : remap_classes(s.mask, cm).labels) ++dst[v];
      CHECK(dst[0] == src[0] + src[1]);
      CHECK(dst[1] == src[2] + src[3]);
      CHECK(dst[2] == src[4]);
    }
  }

  TEST_CASE("shipped CamVid palette resolves all 32 colors into 12 classes") {
    ClassMap cm = ClassMap::from_palette_file(fs::path(SEGATTN_SOURCE_DIR) / "data" / "camvid32_palette.txt");
    CHECK(cm.color_count() == 32);
    CHECK(cm.num_classes() == 12);
    CHECK(cm.targets_dense());
    std::set<std::uint8_t> targets;
    for (const auto& [rgb, target] : cm.colors()) {
      CHECK(cm.resolve_color(rgb) == target);
      CHECK(target < 12);
      targets.insert(target);
    }
    CHECK(targets.size() == 12);
  }

  TEST_CASE("palette masks and unmapped colors") {
    std::istringstream pal("0 0 0 0 background\n1 255 0 0 red\n");
    ClassMap cm = ClassMap::from_palette(pal);
    fs::path dir = scratch_dir("palette");
    {
      std::ofstream out(dir / "mask.ppm", std::ios::binary);
      out << "P6\n2 1\n255\n";
      out.write("\x00\x00\x00\xff\x00\x00", 6);
    }
    Mask m = load_mask(dir / "mask.ppm", &cm);
    CHECK(m.labels == std::vector<std::uint8_t>{0, 1});
    CHECK_THROWS_AS(load_mask(dir / "mask.ppm"), IoError);
    {
      std::ofstream out(dir / "odd.ppm", std::ios::binary);
      out << "P6\n1 1\n255\n";
      out.write("\x01\x02\x03", 3);
    }
    try {
      load_mask(dir / "odd.ppm", &cm);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("(1, 2, 3)") != std::string::npos);
    }
  }
}

TEST_SUITE("data.files") {
  TEST_CASE("dataset save and load round trip") {
    SyntheticOptions o;
    o.count = 5;
    auto samples = gen_synthetic(o);
    fs::path dir = scratch_dir("dataset");
    fs::path manifest = save_dataset(dir, samples);
    auto entries = read_manifest(manifest);
    REQUIRE(entries.size() == 5);
    CHECK(entries[0].id == samples[0].id);
    auto loaded = load_dataset(manifest);
    REQUIRE(loaded.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(loaded[i].mask == samples[i].mask);
      CHECK(loaded[i].id == samples[i].id);
    }
    fs::path again = scratch_dir("dataset_again");
    save_dataset(again, loaded);
    for (const auto& e : entries) {
      CHECK(bytes_of(again / e.image.filename()) == bytes_of(e.image));
      CHECK(bytes_of(again / e.mask.filename()) == bytes_of(e.mask));
    }
  }
}

TEST_SUITE("data.augment") {
  TEST_CASE("double flip is the identity") {
    SyntheticOptions o;
    o.count = 3;
    o.width = 31;
    for (const auto& s : gen_synthetic(o)) {
      SegSample twice = hflip(hflip(s));
      CHECK(twice.image == s.image);
      CHECK(twice.mask == s.mask);
      SegSample once = hflip(s);
      CHECK(once.mask.at(3, 0) == s.mask.at(3, 30));
      CHECK(px(once.image, 2, 5, 1) == px(s.image, 2, 5, 29));
    }
  }

  TEST_CASE("crop index algebra") {
    SyntheticOptions o;
    o.count = 1;
    SegSample s = gen_synthetic(o)[0];
    SegSample c = crop(s, 2, 3, 16, 16);
    CHECK(c.mask.height == 16);
    CHECK(c.mask.at(0, 0) == s.mask.at(2, 3));
    CHECK(c.mask.at(15, 15) == s.mask.at(17, 18));
    CHECK(px(c.image, 1, 4, 5) == px(s.image, 1, 6, 8));
    CHECK_THROWS_AS(crop(s, 20, 0, 16, 16), ShapeError);
  }

  TEST_CASE("shear moves a one-pixel blob along its row") {
    const double lambda = 0.1;
    for (std::size_t y : {2, 10, 25}) {
      SegSample s = blank_sample(29, 29);
      const std::size_t x = 14;
      s.mask.at(y, x) = 1;
      SegSample out = shear(s, lambda);
      std::vector<std::pair<std::size_t, std::size_t>> hits;
      for (std::size_t r = 0; r < 29; ++r)
        for (std::size_t c = 0; c < 29; ++c)
          if (out.mask.at(r, c) == 1) hits.emplace_back(r, c);
      REQUIRE(hits.size() == 1);
      CHECK(hits[0].first == y);
      const double cy = (29.0 - 1.0) / 2.0;
      const double expected = static_cast<double>(x) + lambda * (static_cast<double>(y) - cy);
      CHECK(std::abs(static_cast<double>(hits[0].second) - expected) <= 1.0);
    }
  }

  TEST_CASE("shear keeps class area within 15 percent and fills with ignore") {
    SegSample s = blank_sample(64, 64);
    for (std::size_t r = 20; r < 44; ++r)
      for (std::size_t c = 18; c < 46; ++c) s.mask.at(r, c) = 1;
    for (double lambda : {-0.2, -0.1, 0.1, 0.2}) {
      SegSample out = shear(s, lambda);
      const auto area = std::count(out.mask.labels.begin(), out.mask.labels.end(), 1);
      CHECK(std::abs(static_cast<double>(area) - 24.0 * 28.0) < 0.15 * 24.0 * 28.0);
      CHECK(out.mask.at(0, lambda > 0 ? 63 : 0) == kIgnoreLabel);
    }
    CHECK(shear(s, 0.0).mask == s.mask);
  }

  TEST_CASE("augment is deterministic per rng and respects crop size") {
    SyntheticOptions o;
    o.count = 1;
    SegSample s = gen_synthetic(o)[0];
    AugmentOptions a;
    a.crop_height = 24;
    a.crop_width = 20;
    auto r1 = make_rng(1, 2, 3), r2 = make_rng(1, 2, 3);
    SegSample x = augment(s, a, r1), y = augment(s, a, r2);
    CHECK(x.image == y.image);
    CHECK(x.mask == y.mask);
    CHECK(x.mask.height == 24);
    CHECK(x.mask.width == 20);
    a.crop_height = 40;
    CHECK_THROWS_AS(augment(s, a, r1), ShapeError);
  }
}

TEST_SUITE("data.batching") {
  TEST_CASE("batch sizes, determinism and coverage") {
    auto b = batch_indices(20, 8, 4);
    REQUIRE(b.size() == 3);
    CHECK(b[0].size() == 8);
    CHECK(b[1].size() == 8);
    CHECK(b[2].size() == 4);
    CHECK(batch_indices(20, 8, 4) == b);
    CHECK_FALSE(batch_indices(20, 8, 5) == b);
    std::multiset<std::size_t> seen;
    for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
    CHECK(seen.size() == 20);
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 20);
  }

  TEST_CASE("batch tensors and mixed sizes") {
    SyntheticOptions o;
    o.count = 5;
    auto samples = gen_synthetic(o);
    auto batches = batch_iter(samples, 2, 1);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].images.shape() == Shape{2, 3, 32, 32});
    CHECK(batches[0].labels.size() == 2 * 32 * 32);
    std::multiset<std::string> ids;
    for (const auto& b : batches) ids.insert(b.ids.begin(), b.ids.end());
    CHECK(ids.size() == 5);
    samples.push_back(blank_sample(16, 16));
    CHECK_THROWS_AS(make_batch(samples), ShapeError);
  }
}
