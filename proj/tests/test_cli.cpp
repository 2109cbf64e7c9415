#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "segattn/commands.hpp"
#include "segattn/data.hpp"
#include "segattn/error.hpp"
#include "segattn/network.hpp"
#include "segattn/run_config.hpp"
#include "segattn/train.hpp"

using namespace segattn;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("segattn_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, ',');) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Drops the wall-clock column so reports from separate runs compare equal.
std::string without_seconds(const std::string& csv) {
  std::string out;
  for (const auto& line : lines_of(csv)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

template <class Args, class Fn>
Run run(Fn fn, const Args& args) {
  std::ostringstream out, err;
  const int code = fn(args, out, err);
  return {code, out.str(), err.str()};
}

// 24 samples at 16x16 with three classes, shared by the slower cases.
const fs::path& small_dataset() {
  static const fs::path manifest = [] {
    const fs::path dir = scratch_dir("data");
    GenDataArgs g;
    g.out = dir;
    g.n = 24;
    g.height = 16;
    g.width = 16;
    g.seed = 5;
    REQUIRE(run(cmd_gen_data, g).code == kExitOk);
    return dir / "manifest.txt";
  }();
  return manifest;
}

fs::path quick_config(const fs::path& dir, std::size_t epochs) {
  RunConfig cfg;
  cfg.epochs = epochs;
  cfg.batch = 4;
  cfg.seed = 3;
  cfg.model.input_height = 16;
  cfg.model.input_width = 16;
  const fs::path path = dir / "run.cfg";
  std::ofstream(path, std::ios::binary) << run_config_text(cfg);
  return path;
}

}  // namespace

TEST_SUITE("cli.config") {
  TEST_CASE("canonical text round trips") {
    RunConfig cfg;
    cfg.adam.lr = 0.0025;
    cfg.epochs = 7;
    cfg.model.branches = 2;
    cfg.model.fusion = FusionMethod::kNone;
    cfg.augment = true;
    cfg.augmentation.shear_range = 0.15;
    const std::string text = run_config_text(cfg);
    const RunConfig back = parse_run_config_text(text);
    CHECK(back == cfg);
    CHECK(run_config_text(back) == text);
  }

  TEST_CASE("shipped default file parses to the built-in defaults") {
    const RunConfig cfg = load_run_config(fs::path(SEGATTN_SOURCE_DIR) / "configs" / "default.cfg");
    CHECK(cfg == RunConfig{});
  }

  TEST_CASE("unknown keys and bad values are rejected") {
    CHECK_THROWS_AS(parse_run_config_text("learning_rate = 0.1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config_text("epochs = many\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config_text("split_ratio = 1.5\n"), ConfigError);
    CHECK_NOTHROW(parse_run_config_text("# comment only\n\nepochs = 2\n"));
  }

  TEST_CASE("extent parsing") {
    CHECK(parse_extent("32x48") == std::pair<std::size_t, std::size_t>{32, 48});
    CHECK_THROWS_AS(parse_extent("32"), ConfigError);
    CHECK_THROWS_AS(parse_extent("0x4"), ConfigError);
  }
}

TEST_SUITE("cli.gen_data") {
  TEST_CASE("writes n samples and reruns byte for byte") {
    const fs::path a = scratch_dir("gen_a"), b = scratch_dir("gen_b");
    GenDataArgs g;
    g.n = 6;
    g.seed = 11;
    g.out = a;
    REQUIRE(run(cmd_gen_data, g).code == kExitOk);
    g.out = b;
    REQUIRE(run(cmd_gen_data, g).code == kExitOk);
    const auto entries = read_manifest(a / "manifest.txt");
    CHECK(entries.size() == 6);
    for (const auto& e : entries) {
      CHECK(slurp(e.image) == slurp(b / e.image.filename()));
      CHECK(slurp(e.mask) == slurp(b / e.mask.filename()));
    }
  }

  TEST_CASE("a single class is a usage error") {
    GenDataArgs g;
    g.out = scratch_dir("gen_bad");
    g.classes = 1;
    const Run r = run(cmd_gen_data, g);
    CHECK(r.code == kExitUsage);
    CHECK_FALSE(r.err.empty());
  }
}

TEST_SUITE("cli.train_eval") {
  TEST_CASE("train writes artifacts and is deterministic") {
    const fs::path base = scratch_dir("train");
    const fs::path cfg = quick_config(base, 3);
    TrainArgs t;
    t.config = cfg;
    t.data = small_dataset();
    t.out = base / "a";
    REQUIRE(run(cmd_train, t).code == kExitOk);
    t.out = base / "b";
    REQUIRE(run(cmd_train, t).code == kExitOk);

    for (const char* f : {"checkpoint.bin", "best.bin", "config.txt", "report.csv"}) {
      CAPTURE(f);
      CHECK(fs::exists(base / "a" / f));
    }
    const auto report = lines_of(slurp(base / "a" / "report.csv"));
    REQUIRE(report.size() == 4);
    CHECK(report[0] == "epoch,train_loss,train_pixel_acc,val_pixel_acc,val_miou,seconds");
    CHECK(slurp(base / "a" / "checkpoint.bin") == slurp(base / "b" / "checkpoint.bin"));
    CHECK(without_seconds(slurp(base / "a" / "report.csv")) == without_seconds(slurp(base / "b" / "report.csv")));
    CHECK(load_run_config(base / "a" / "config.txt").epochs == 3);
  }

  TEST_CASE("eval matches the library metrics and writes the csv schema") {
    const fs::path base = scratch_dir("eval");
    TrainArgs t;
    t.config = quick_config(base, 1);
    t.data = small_dataset();
    t.out = base;
    REQUIRE(run(cmd_train, t).code == kExitOk);

    EvalArgs e;
    e.checkpoint = base / "checkpoint.bin";
    e.data = small_dataset();
    const Run r = run(cmd_eval, e);
    REQUIRE(r.code == kExitOk);
    CHECK(r.out.find("Class\t1\t2\t3") != std::string::npos);
    CHECK(r.out.find("mean IoU ") != std::string::npos);

    const auto rows = lines_of(slurp(base / "metrics.csv"));
    REQUIRE(rows.size() == 6);
    CHECK(rows[0] == "class,iou,accuracy");
    CHECK(split_csv(rows[4])[0] == "mean");
    CHECK(split_csv(rows[5])[0] == "pixel");

    const SegMetrics m = evaluate(load_checkpoint(*e.checkpoint), load_dataset(small_dataset())).metrics;
    CHECK(std::stod(split_csv(rows[4])[1]) == doctest::Approx(m.mean_iou).epsilon(1e-6));
    CHECK(std::stod(split_csv(rows[4])[2]) == doctest::Approx(m.mean_class_accuracy).epsilon(1e-6));
    CHECK(std::stod(split_csv(rows[5])[2]) == doctest::Approx(m.pixel_accuracy).epsilon(1e-6));
    for (std::size_t c = 0; c < 3; ++c) {
      const auto f = split_csv(rows[1 + c]);
      CHECK(f[0] == std::to_string(c + 1));
      if (m.per_class_iou[c]) CHECK(std::stod(f[1]) == doctest::Approx(*m.per_class_iou[c]).epsilon(1e-6));
    }
  }

  TEST_CASE("oracle eval scores one") {
    const fs::path base = scratch_dir("oracle");
    EvalArgs e;
    e.oracle = true;
    e.data = small_dataset();
    e.out = base;
    const Run r = run(cmd_eval, e);
    REQUIRE(r.code == kExitOk);
    CHECK(r.out.find("mean IoU 1.000") != std::string::npos);
    CHECK(r.out.find("pixel accuracy 1.000") != std::string::npos);
  }

  TEST_CASE("a palette with the wrong class count is a usage error") {
    const fs::path base = scratch_dir("mismatch");
    TrainArgs t;
    t.config = quick_config(base, 1);
    t.data = small_dataset();
    t.out = base;
    REQUIRE(run(cmd_train, t).code == kExitOk);
    EvalArgs e;
    e.checkpoint = base / "checkpoint.bin";
    e.data = small_dataset();
    e.palette = fs::path(SEGATTN_SOURCE_DIR) / "data" / "camvid32_palette.txt";
    CHECK(run(cmd_eval, e).code == kExitUsage);
  }

  TEST_CASE("missing inputs are usage errors") {
    EvalArgs e;
    e.data = small_dataset();
    CHECK(run(cmd_eval, e).code == kExitUsage);
    TrainArgs t;
    t.config = "/nonexistent/run.cfg";
    t.data = small_dataset();
    t.out = scratch_dir("missing");
    CHECK(run(cmd_train, t).code == kExitUsage);
  }
}

TEST_SUITE("cli.profile") {
  TEST_CASE("one row with counts from the library") {
    ProfileArgs p;
    p.warmup = 1;
    p.iters = 2;
    const Run r = run(cmd_profile, p);
    REQUIRE(r.code == kExitOk);
    const auto rows = lines_of(r.out);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0] == "input_size,flops,params,ms,fps");
    const auto f = split_csv(rows[1]);
    REQUIRE(f.size() == 5);
    CHECK(f[0] == "32x32");
    const SegModel model = build_model(ModelConfig{}, InitSpec{});
    CHECK(std::stoull(f[1]) == count_flops(model, Shape{3, 32, 32}));
    CHECK(std::stoull(f[2]) == count_params(model));
    CHECK(std::stod(f[3]) > 0.0);

    p.input_size = "64x64";
    const auto big = split_csv(lines_of(run(cmd_profile, p).out)[1]);
    // Attention softmax cost does not grow with resolution, so the ratio is
    // slightly under four.
    const double ratio = static_cast<double>(std::stoull(big[1])) / static_cast<double>(std::stoull(f[1]));
    CHECK(ratio == doctest::Approx(4.0).epsilon(1e-3));
    CHECK(std::stoull(big[1]) == count_flops(model, Shape{3, 64, 64}));
    CHECK(big[2] == f[2]);
  }

  TEST_CASE("unsupported extent is a usage error") {
    ProfileArgs p;
    p.input_size = "33x33";
    const Run r = run(cmd_profile, p);
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("32 or 36") != std::string::npos);
  }
}

TEST_SUITE("cli.gradcheck") {
  TEST_CASE("passes on the minimal model and fails with a broken backward") {
    GradcheckArgs g;
    const Run ok = run(cmd_gradcheck, g);
    CHECK(ok.code == kExitOk);
    CHECK(ok.out.find("PASS") != std::string::npos);
    g.inject_fault = true;
    const Run bad = run(cmd_gradcheck, g);
    CHECK(bad.code == kExitFailure);
    CHECK(bad.out.find("FAIL") != std::string::npos);
  }
}

TEST_SUITE("cli.ablate") {
  TEST_CASE("csv shapes for both axes") {
    const fs::path base = scratch_dir("ablate");
    RunConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 4;
    cfg.model.input_height = 16;
    cfg.model.input_width = 16;
    std::ofstream(base / "run.cfg", std::ios::binary) << run_config_text(cfg);

    AblateArgs a;
    a.config = base / "run.cfg";
    a.data = small_dataset();
    a.axis = "branches";
    a.out = base / "branches";
    a.parallel = true;
    REQUIRE(run(cmd_ablate, a).code == kExitOk);
    auto rows = lines_of(slurp(a.out / "ablation.csv"));
    REQUIRE(rows.size() == 5);
    CHECK(rows[0] == "Number of branches,Fusion methods,mIoU");
    CHECK(rows[1].starts_with("1,None,"));
    CHECK(rows[2].starts_with("1,concat,"));
    CHECK(rows[3].starts_with("2,None,"));
    CHECK(rows[4].starts_with("2,concat,"));

    // Five pooling stages need at least 32x32 inputs.
    const fs::path wide = base / "wide";
    GenDataArgs g;
    g.out = wide;
    g.n = 8;
    g.seed = 2;
    REQUIRE(run(cmd_gen_data, g).code == kExitOk);
    cfg.model.input_height = 32;
    cfg.model.input_width = 32;
    std::ofstream(base / "run32.cfg", std::ios::binary) << run_config_text(cfg);
    a.config = base / "run32.cfg";
    a.data = wide / "manifest.txt";
    a.axis = "pooling";
    a.out = base / "pooling";
    REQUIRE(run(cmd_ablate, a).code == kExitOk);
    rows = lines_of(slurp(a.out / "ablation.csv"));
    REQUIRE(rows.size() == 7);
    CHECK(rows[0] == "Number of pooling,mIoU");
    for (std::size_t p = 0; p <= 5; ++p) CHECK(rows[1 + p].starts_with("Pooling x" + std::to_string(p) + ","));

    a.axis = "depth";
    CHECK(run(cmd_ablate, a).code == kExitUsage);
  }
}

TEST_SUITE("cli.binary") {
  TEST_CASE("executable parses arguments and returns exit codes") {
    const char* cli = std::getenv("SEGATTN_CLI");
    if (cli == nullptr) return;
    const std::string exe = std::string("\"") + cli + "\"";
    auto status = [](const std::string& cmd) {
      const int raw = std::system((cmd + " >/dev/null 2>&1").c_str());
      return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    };
    CHECK(status(exe + " --help") == 0);
    CHECK(status(exe + " frobnicate") == 2);
    CHECK(status(exe + " profile --input-size 33x33") == 2);
    CHECK(status(exe + " profile --input-size 16x16 --warmup 0 --iters 1") == 0);
    const fs::path out = scratch_dir("binary");
    CHECK(status(exe + " gen-data --out \"" + out.string() + "\" --n 2 --classes 1") == 2);
  }
}
