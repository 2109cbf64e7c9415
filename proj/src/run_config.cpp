#include "segattn/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "segattn/error.hpp"

namespace segattn {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_real(const std::string& key, const std::string& value) {
  double out = 0.0;
  const char* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(out)) {
    throw ConfigError("config key '" + key + "': expected a real number, got '" + value + "'");
  }
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const char* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + value + "'");
}

std::vector<std::pair<std::string, std::string>> run_entries(const RunConfig& c) {
  auto out = model_config_entries(c.model);
  out.emplace_back("lr", format_real(c.adam.lr));
  out.emplace_back("beta1", format_real(c.adam.beta1));
  out.emplace_back("beta2", format_real(c.adam.beta2));
  out.emplace_back("epsilon", format_real(c.adam.epsilon));
  out.emplace_back("weight_decay", format_real(c.adam.weight_decay));
  out.emplace_back("epochs", std::to_string(c.epochs));
  out.emplace_back("batch", std::to_string(c.batch));
  out.emplace_back("seed", std::to_string(c.seed));
  out.emplace_back("split_ratio", format_real(c.split_ratio));
  out.emplace_back("augment", c.augment ? "true" : "false");
  out.emplace_back("hflip_prob", format_real(c.augmentation.hflip_prob));
  out.emplace_back("shear_range", format_real(c.augmentation.shear_range));
  out.emplace_back("crop_height", std::to_string(c.augmentation.crop_height));
  out.emplace_back("crop_width", std::to_string(c.augmentation.crop_width));
  return out;
}

void apply_run_key(RunConfig& c, const std::string& key, const std::string& value) {
  if (apply_model_key(c.model, key, value)) return;
  if (key == "lr") c.adam.lr = parse_real(key, value);
  else if (key == "beta1") c.adam.beta1 = parse_real(key, value);
  else if (key == "beta2") c.adam.beta2 = parse_real(key, value);
  else if (key == "epsilon") c.adam.epsilon = parse_real(key, value);
  else if (key == "weight_decay") c.adam.weight_decay = parse_real(key, value);
  else if (key == "epochs") c.epochs = parse_uint(key, value);
  else if (key == "batch") c.batch = parse_uint(key, value);
  else if (key == "seed") c.seed = parse_uint(key, value);
  else if (key == "split_ratio") c.split_ratio = parse_real(key, value);
  else if (key == "augment") c.augment = parse_bool(key, value);
  else if (key == "hflip_prob") c.augmentation.hflip_prob = parse_real(key, value);
  else if (key == "shear_range") c.augmentation.shear_range = parse_real(key, value);
  else if (key == "crop_height") c.augmentation.crop_height = parse_uint(key, value);
  else if (key == "crop_width") c.augmentation.crop_width = parse_uint(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (!(adam.lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(adam.epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (!(adam.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch == 0) throw ConfigError("batch must be >= 1");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("split_ratio must lie in (0, 1)");
  if (!(augmentation.hflip_prob >= 0.0 && augmentation.hflip_prob <= 1.0)) {
    throw ConfigError("hflip_prob must lie in [0, 1]");
  }
  if (!(augmentation.shear_range >= 0.0)) throw ConfigError("shear_range must be >= 0");
  if ((augmentation.crop_height == 0) != (augmentation.crop_width == 0)) {
    throw ConfigError("crop_height and crop_width must both be set or both be 0");
  }
}

RunConfig parse_run_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    apply_run_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config_text(ss.str());
}

std::string run_config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : run_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

bool operator==(const RunConfig& a, const RunConfig& b) { return run_entries(a) == run_entries(b); }

}  // namespace segattn
