#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace segattn {

// Process exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

struct GenDataArgs {
  std::filesystem::path out;
  std::size_t n = 200;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t classes = 3;
  std::uint64_t seed = 0;
};

struct TrainArgs {
  std::filesystem::path config;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::filesystem::path> palette;
};

struct EvalArgs {
  // Required unless oracle is set.
  std::optional<std::filesystem::path> checkpoint;
  std::filesystem::path data;
  // Directory for metrics.csv; defaults to the checkpoint's directory, or
  // the working directory in oracle mode.
  std::optional<std::filesystem::path> out;
  std::optional<std::filesystem::path> palette;
  // Score the ground truth against itself instead of running a model.
  bool oracle = false;
  // Class count for oracle mode; inferred from the labels when unset.
  std::optional<std::size_t> classes;
};

struct AblateArgs {
  std::string axis;  // "pooling" or "branches"
  std::filesystem::path config;
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::filesystem::path> palette;
  bool parallel = false;
};

struct ProfileArgs {
  std::optional<std::filesystem::path> config;
  std::string input_size = "32x32";
  std::size_t batch = 1;
  std::size_t warmup = 5;
  std::size_t iters = 50;
};

struct GradcheckArgs {
  std::optional<std::filesystem::path> config;
  double tol = 1e-4;
  double step = 1e-5;
  double floor = 1e-6;
  std::uint64_t seed = 0;
  bool inject_fault = false;
};

// Each command writes results to out, diagnostics to err, and returns an
// exit code: 0 success, 1 check failed, 2 usage or config error, 3 numeric
// failure.
int cmd_gen_data(const GenDataArgs& args, std::ostream& out, std::ostream& err);
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);
int cmd_ablate(const AblateArgs& args, std::ostream& out, std::ostream& err);
int cmd_profile(const ProfileArgs& args, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err);

// "HxW" -> (H, W); throws ConfigError.
std::pair<std::size_t, std::size_t> parse_extent(const std::string& text);

}  // namespace segattn
