#pragma once

// Run configuration: a small TOML subset (tables, integers, floats, booleans,
// strings, arrays of integers) plus dotted `section.key=value` overrides.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <variant>

#include "uacanet/training.hpp"

namespace uacanet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ConfigValue = std::variant<bool, std::int64_t, double, std::string, std::vector<std::int64_t>>;

/// Flat map of "section.key" -> value.
using ConfigTable = std::map<std::string, ConfigValue>;

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

inline std::optional<std::int64_t> parse_int(const std::string& s) {
  std::string digits;
  for (char c : s)
    if (c != '_') digits += c;
  std::int64_t v = 0;
  const char* first = digits.data();
  if (!digits.empty() && digits[0] == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, digits.data() + digits.size(), v);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || first == ptr) return std::nullopt;
  return v;
}

inline std::optional<double> parse_float(const std::string& s) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline ConfigValue parse_value(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  if (s.empty()) throw ConfigError(where + ": missing value");
  if (s == "true") return true;
  if (s == "false") return false;
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"') throw ConfigError(where + ": unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
      if (s[i] == '\\' && i + 2 < s.size()) {
        const char n = s[++i];
        out += n == 'n' ? '\n' : n == 't' ? '\t' : n;
      } else {
        out += s[i];
      }
    }
    return out;
  }
  if (s.front() == '[') {
    if (s.back() != ']') throw ConfigError(where + ": unterminated array");
    std::vector<std::int64_t> items;
    std::string body = s.substr(1, s.size() - 2);
    std::size_t start = 0;
    while (start <= body.size()) {
      const auto comma = body.find(',', start);
      const std::string item = trim(body.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (!item.empty()) {
        auto v = parse_int(item);
        if (!v) throw ConfigError(where + ": arrays may only hold integers, got '" + item + "'");
        items.push_back(*v);
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return items;
  }
  if (auto i = parse_int(s)) return *i;
  if (auto f = parse_float(s)) return *f;
  throw ConfigError(where + ": cannot parse value '" + s + "'");
}

}  // namespace detail

inline ConfigTable parse_toml(std::string_view text, const std::string& origin = "<config>") {
  ConfigTable table;
  std::string section;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string line =
        detail::trim(detail::strip_comment(std::string(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos))));
    ++lineno;
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed table header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty table name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (table.count(full)) throw ConfigError(where + ": duplicate key '" + full + "'");
    table[full] = detail::parse_value(line.substr(eq + 1), where);
  }
  return table;
}

inline ConfigTable read_toml(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_toml(text, path.string());
}

/// Everything a CLI run needs.
struct RunConfig {
  ModelConfig model;
  std::string train_root;      // data.train
  std::string test_root;       // data.test
  std::int64_t epochs = 1;
  std::int64_t batch = 8;
  std::uint64_t seed = 0;
  double lr = 1e-4;
  ScheduleForm schedule = ScheduleForm::literal;
  BceReduction reduction = BceReduction::mean;
  bool augment = true;
  std::int64_t checkpoint_every = 0;  // iterations; 0 = once per epoch
  std::string out_dir = "runs/uacanet";

  /// Applies one "section.key" setting. Unknown keys are rejected.
  void set(const std::string& key, const ConfigValue& value) {
    auto as_int = [&]() -> std::int64_t {
      if (auto p = std::get_if<std::int64_t>(&value)) return *p;
      throw ConfigError("'" + key + "' expects an integer");
    };
    auto as_bool = [&]() -> bool {
      if (auto p = std::get_if<bool>(&value)) return *p;
      throw ConfigError("'" + key + "' expects true or false");
    };
    auto as_float = [&]() -> double {
      if (auto p = std::get_if<double>(&value)) return *p;
      if (auto p = std::get_if<std::int64_t>(&value)) return static_cast<double>(*p);
      throw ConfigError("'" + key + "' expects a number");
    };
    auto as_string = [&]() -> std::string {
      if (auto p = std::get_if<std::string>(&value)) return *p;
      throw ConfigError("'" + key + "' expects a string");
    };
    if (key == "model.width") model.width = as_int();
    else if (key == "model.side") model.side = as_int();
    else if (key == "model.reduction") model.reduction = as_int();
    else if (key == "model.disable_paa") model.disable_paa = as_bool();
    else if (key == "model.disable_uncertainty") model.disable_uncertainty = as_bool();
    else if (key == "model.backbone_widths") {
      auto p = std::get_if<std::vector<std::int64_t>>(&value);
      if (!p) throw ConfigError("'model.backbone_widths' expects an array of integers");
      model.backbone_widths = *p;
    } else if (key == "data.train") train_root = as_string();
    else if (key == "data.test") test_root = as_string();
    else if (key == "train.epochs") epochs = as_int();
    else if (key == "train.batch") batch = as_int();
    else if (key == "train.seed") seed = static_cast<std::uint64_t>(as_int());
    else if (key == "train.lr") lr = as_float();
    else if (key == "train.augment") augment = as_bool();
    else if (key == "train.checkpoint_every") checkpoint_every = as_int();
    else if (key == "train.schedule") {
      const auto s = as_string();
      if (s == "literal") schedule = ScheduleForm::literal;
      else if (s == "conventional") schedule = ScheduleForm::conventional;
      else throw ConfigError("'train.schedule' must be literal or conventional, got '" + s + "'");
    } else if (key == "train.bce") {
      const auto s = as_string();
      if (s == "mean") reduction = BceReduction::mean;
      else if (s == "sum") reduction = BceReduction::sum;
      else throw ConfigError("'train.bce' must be mean or sum, got '" + s + "'");
    } else if (key == "output.dir") out_dir = as_string();
    else throw ConfigError("unknown config key '" + key + "'");
  }

  void apply(const ConfigTable& table) {
    for (const auto& [k, v] : table) set(k, v);
  }

  /// Parses "section.key=value".
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' lacks '='");
    const std::string key = detail::trim(assignment.substr(0, eq));
    std::string raw = detail::trim(assignment.substr(eq + 1));
    // Bare words are taken as strings so `--train.schedule=conventional` works.
    ConfigValue value;
    try {
      value = detail::parse_value(raw, "override " + key);
    } catch (const ConfigError&) {
      value = raw;
    }
    set(key, value);
  }

  void validate() const {
    model.validate();
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch < 1) throw ConfigError("train.batch must be >= 1");
    if (!(lr > 0)) throw ConfigError("train.lr must be positive");
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  }

  nlohmann::json to_json() const {
    return {{"model", model.to_json()},
            {"data", {{"train", train_root}, {"test", test_root}}},
            {"train",
             {{"epochs", epochs},
              {"batch", batch},
              {"seed", seed},
              {"lr", lr},
              {"schedule", schedule == ScheduleForm::literal ? "literal" : "conventional"},
              {"bce", reduction == BceReduction::mean ? "mean" : "sum"},
              {"augment", augment},
              {"checkpoint_every", checkpoint_every}}},
            {"output", {{"dir", out_dir}}}};
  }
};

}  // namespace uacanet
