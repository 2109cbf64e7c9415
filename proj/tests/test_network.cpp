#include <random>
#include <sstream>

#include "doctest.h"
#include "segattn/error.hpp"
#include "segattn/network.hpp"
#include "segattn/train.hpp"
#include "test_util.hpp"

using namespace segattn;
using testutil::random_tensor;

namespace {

std::vector<std::string> layer_names(const SegModel& m) {
  std::vector<std::string> out;
  for (const auto& l : m.layers()) out.push_back(l.name);
  return out;
}

// One stage, no pooling, single branch, no fusion, no attention.
ModelConfig ledger_a() {
  ModelConfig c;
  c.in_channels = 3;
  c.num_classes = 2;
  c.stage_channels = {4};
  c.dilation_schedule = {1};
  c.pooling_count = 0;
  c.branches = 1;
  c.fusion = FusionMethod::kNone;
  c.attention_post_encoder = false;
  c.attention_post_fusion = false;
  c.input_height = 8;
  c.input_width = 8;
  return c;
}

// Two branches stacked without fusion, one pooling, post-encoder attention.
ModelConfig ledger_c() {
  ModelConfig c;
  c.in_channels = 1;
  c.num_classes = 2;
  c.stage_channels = {4, 8};
  c.dilation_schedule = {1, 1};
  c.pooling_count = 1;
  c.branches = 2;
  c.fusion = FusionMethod::kNone;
  c.attention_post_encoder = true;
  c.attention_post_fusion = false;
  c.decoder_kernel = 2;
  c.decoder_stride = 2;
  c.input_height = 8;
  c.input_width = 8;
  return c;
}

}  // namespace

TEST_SUITE("network.config") {
  TEST_CASE("validation") {
    ModelConfig c;
    CHECK_NOTHROW(c.validate());
    c.pooling_count = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig{};
    c.branches = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig{};
    c.num_classes = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig{};
    c.dilation_schedule = {1};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = ModelConfig{};
    c.decoder_kernel = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("text round trip") {
    ModelConfig c = ledger_c();
    const std::string text = model_config_text(c);
    CHECK(parse_model_config_text(text) == c);
    CHECK(model_config_text(parse_model_config_text(text)) == text);
    CHECK_THROWS_AS(parse_model_config_text("bogus = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_model_config_text("branches = two\n"), ConfigError);
    ModelConfig commented = parse_model_config_text("# comment\n  num_classes = 5  # trailing\n\n");
    CHECK(commented.num_classes == 5);
  }
}

TEST_SUITE("network.build") {
  TEST_CASE("minimal config emits stem, block, classifier") {
    SegModel m = build_model(ledger_a(), InitSpec{});
    CHECK(layer_names(m) == std::vector<std::string>{"stem", "stage0.block0", "classifier"});
    Tensor y = m.predict(random_tensor({1, 3, 8, 8}, 1));
    CHECK(y.shape() == Shape{1, 2, 8, 8});
  }

  TEST_CASE("pooling twice emits one x4 decoder stage") {
    ModelConfig c;
    c.fusion = FusionMethod::kNone;
    SegModel m = build_model(c, InitSpec{});
    std::size_t decoders = 0;
    for (const auto& l : m.layers()) {
      if (l.kind == "transposed_conv") {
        ++decoders;
        CHECK(l.output_shape == Shape{1, 8, 32, 32});
      }
    }
    CHECK(decoders == 1);
    for (const auto& p : m.params()) {
      if (p.name == "decoder0.weight") CHECK(p.value.shape() == Shape{16, 8, 4, 4});
    }
  }

  TEST_CASE("decoder stages follow the pooling count") {
    for (std::size_t p = 0; p <= 5; ++p) {
      ModelConfig c;
      c.stage_channels = {4, 4, 4, 4, 4};
      c.dilation_schedule = {1, 1, 1, 1, 1};
      c.pooling_count = p;
      SegModel m = build_model(c, InitSpec{});
      std::size_t decoders = 0;
      for (const auto& l : m.layers()) decoders += l.kind == "transposed_conv";
      CHECK(decoders == (p + 1) / 2);
      CHECK(m.predict(random_tensor({1, 3, 32, 32}, p)).shape() == Shape{1, 3, 32, 32});
    }
  }

  TEST_CASE("same seed gives identical parameters, different seed differs") {
    SegModel a = build_model(ModelConfig{}, InitSpec{InitScheme::kFanInUniform, 3});
    SegModel b = build_model(ModelConfig{}, InitSpec{InitScheme::kFanInUniform, 3});
    SegModel c = build_model(ModelConfig{}, InitSpec{InitScheme::kFanInUniform, 4});
    REQUIRE(a.params().size() == b.params().size());
    bool differs = false;
    for (std::size_t i = 0; i < a.params().size(); ++i) {
      CHECK(a.params()[i].name == b.params()[i].name);
      CHECK(a.params()[i].value == b.params()[i].value);
      differs = differs || !(a.params()[i].value == c.params()[i].value);
    }
    CHECK(differs);
  }

  TEST_CASE("impossible shape algebra names the layer") {
    ModelConfig c;
    c.stage_channels = {4, 4, 4, 4, 4};
    c.dilation_schedule = {1, 1, 1, 1, 1};
    c.pooling_count = 5;
    c.input_height = 16;
    c.input_width = 16;
    try {
      build_model(c, InitSpec{});
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("layer") != std::string::npos);
      CHECK(msg.find("stage4") != std::string::npos);
    }
  }
}

TEST_SUITE("network.forward") {
  TEST_CASE("default config output shape and determinism") {
    SegModel m = build_model(ModelConfig{}, InitSpec{InitScheme::kFanInUniform, 1});
    Tensor x = random_tensor({1, 3, 32, 32}, 2, 0, 1);
    Tensor y1 = m.predict(x), y2 = m.predict(x);
    CHECK(y1.shape() == Shape{1, 3, 32, 32});
    CHECK(y1 == y2);
    CHECK(y1.all_finite());
  }

  TEST_CASE("zero input gives uniform class scores") {
    SegModel m = build_model(ModelConfig{}, InitSpec{});
    Tensor y = m.predict(Tensor({1, 3, 32, 32}));
    for (std::size_t p = 0; p < 1024; ++p) {
      CHECK(y[p] == y[1024 + p]);
      CHECK(y[p] == y[2048 + p]);
    }
  }

  TEST_CASE("incompatible size reports nearest valid sizes") {
    SegModel m = build_model(ModelConfig{}, InitSpec{});
    CHECK(m.accepts(32, 32));
    CHECK_FALSE(m.accepts(33, 32));
    CHECK(m.nearest_valid_extent(33) == std::pair<std::size_t, std::size_t>{32, 36});
    try {
      m.predict(Tensor({1, 3, 33, 34}));
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("32") != std::string::npos);
      CHECK(msg.find("36") != std::string::npos);
    }
    CHECK_THROWS_AS(m.predict(Tensor({1, 2, 32, 32})), ShapeError);
  }

  TEST_CASE("config grid builds and keeps the input resolution") {
    std::size_t built = 0;
    for (std::size_t p = 0; p <= 3; ++p)
      for (std::size_t br : {1, 2})
        for (FusionMethod f : {FusionMethod::kNone, FusionMethod::kConcat})
          for (int att = 0; att < 3; ++att) {
            ModelConfig c;
            c.stage_channels = {4, 8, 8};
            c.dilation_schedule = {1, 2, 2};
            c.pooling_count = p;
            c.branches = br;
            c.fusion = f;
            c.attention_post_encoder = att >= 1;
            c.attention_post_fusion = att >= 2;
            SegModel m = build_model(c, InitSpec{});
            CHECK(m.predict(random_tensor({2, 3, 32, 32}, built)).shape() == Shape{2, 3, 32, 32});
            ++built;
          }
    CHECK(built == 48);
  }

  TEST_CASE("parameter count is unchanged by forward passes") {
    SegModel m = build_model(ModelConfig{}, InitSpec{});
    const auto before = count_params(m);
    m.predict(random_tensor({1, 3, 32, 32}, 1));
    Graph g;
    m.forward(g, g.leaf(random_tensor({1, 3, 32, 32}, 2)));
    CHECK(count_params(m) == before);
  }
}

TEST_SUITE("network.accounting") {
  TEST_CASE("stem conv and attention unit counts") {
    ModelConfig c = ledger_a();
    c.in_channels = 2;
    SegModel m = build_model(c, InitSpec{});
    CHECK(m.params()[0].value.size() + m.params()[1].value.size() == 76);
    ModelConfig with_att = c;
    with_att.attention_post_encoder = true;
    CHECK(count_params(build_model(with_att, InitSpec{})) == count_params(m) + 1);
  }

  TEST_CASE("ledger: one stage, no pooling") {
    // stem 3*4*9+4 = 112; block 2 * (4*4*9+4) = 296; classifier 2*4+2 = 10.
    SegModel m = build_model(ledger_a(), InitSpec{});
    CHECK(count_params(m) == 418);
    // stem 14080 + relu 256; block 2*18688 + relu/add/relu 768;
    // classifier 1152.
    CHECK(count_flops(m, {3, 8, 8}) == 53632);
    CHECK(count_flops(m, {2, 3, 8, 8}) == 2 * 53632);
  }

  TEST_CASE("ledger: reference two-stage config") {
    SegModel m = build_model(ModelConfig{}, InitSpec{});
    // 224 + 1168 + 3632 + 1 + 2056 + 280 + 1 + 27
    CHECK(count_params(m) == 7389);
    // 458752 + 2400256 + 2048 + 1859584 + 1024 + 66304 + 278528 + 573440
    // + 262336 + 52224
    CHECK(count_flops(m, {3, 32, 32}) == 5954496);
  }

  TEST_CASE("ledger: two stacked branches") {
    SegModel m = build_model(ledger_c(), InitSpec{});
    // 40 + 296 + 920 + 122 + 236 + 1 + 196 + 10
    CHECK(count_params(m) == 1821);
    // 5120 + 38144 + 64 + 29440 + 15616 + 32 + 7552 + 9648 + 6656 + 1152
    CHECK(count_flops(m, {1, 8, 8}) == 113424);
  }

  TEST_CASE("flops scale with area for a conv-dominated config") {
    ModelConfig c = ledger_a();
    SegModel m = build_model(c, InitSpec{});
    CHECK(count_flops(m, {3, 16, 16}) == 4 * count_flops(m, {3, 8, 8}));
  }
}

TEST_SUITE("network.checkpoint") {
  TEST_CASE("save, load, save is bitwise stable") {
    SegModel m = build_model(ledger_c(), InitSpec{InitScheme::kFanInUniform, 9});
    std::stringstream first;
    save_checkpoint(m, first);
    const std::string bytes = first.str();
    CHECK(bytes.substr(0, 8) == "SEGATTN1");
    std::istringstream in(bytes);
    SegModel loaded = load_checkpoint(in);
    CHECK(loaded.config() == m.config());
    REQUIRE(loaded.params().size() == m.params().size());
    for (std::size_t i = 0; i < m.params().size(); ++i) CHECK(loaded.params()[i].value == m.params()[i].value);
    std::stringstream second;
    save_checkpoint(loaded, second);
    CHECK(second.str() == bytes);
  }

  TEST_CASE("corrupt checkpoints are rejected") {
    SegModel m = build_model(ledger_a(), InitSpec{});
    std::stringstream ss;
    save_checkpoint(m, ss);
    std::string bytes = ss.str();
    std::istringstream truncated(bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS(load_checkpoint(truncated));
    bytes[0] = 'X';
    std::istringstream bad_magic(bytes);
    CHECK_THROWS_AS(load_checkpoint(bad_magic), IoError);
  }
}

TEST_SUITE("network.gradients") {
  TEST_CASE("end-to-end loss gradient for a minimal config") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      CAPTURE(seed);
      ModelConfig c = ledger_c();
      c.in_channels = 2;
      c.num_classes = 3;
      c.stage_channels = {2, 4};
      c.dilation_schedule = {1, 2};
      c.fusion = FusionMethod::kConcat;
      c.attention_post_fusion = true;
      c.input_height = 4;
      c.input_width = 4;
      SegModel m = build_model(c, InitSpec{InitScheme::kFanInUniform, seed});
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> small(-0.1, 0.1);
      for (auto& p : m.params()) {
        if (p.name.ends_with(".alpha")) p.value[0] = 0.5;
        if (p.name.ends_with(".bias"))
          for (auto& v : p.value.storage()) v = small(rng);
      }
      const Tensor x = random_tensor({1, 2, 4, 4}, seed + 10, 0, 1);
      std::vector<std::uint8_t> t(16);
      for (auto& v : t) v = static_cast<std::uint8_t>(rng() % 3);
      std::vector<Tensor> inputs;
      for (const auto& p : m.params()) inputs.push_back(p.value);
      auto r = grad_check(
          [&](Graph& g, std::span<const Var> v) { return softmax_ce_loss(m.forward_with(g.leaf(x, false), v), t); },
          inputs, 1e-5, 1e-3, 1e-6);
      CHECK(r.pass);
    }
  }
}
