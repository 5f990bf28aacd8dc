#pragma once

// Plain-text key = value run configuration.
//
// A RunConfig is created from the full set of keys a command accepts, each
// with a default.  Files and overrides may only set known keys.  Lines are
// `key = value`; `#` starts a comment.

#include <charconv>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace wcrr {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RunConfig {
 public:
  RunConfig() = default;
  explicit RunConfig(std::vector<std::pair<std::string, std::string>> defaults) {
    for (auto& [k, v] : defaults) {
      order_.push_back(k);
      values_[k] = v;
    }
  }

  const std::vector<std::string>& keys() const { return order_; }
  bool knows(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) {
    if (!knows(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(t.substr(0, eq));
      if (!knows(key)) throw ConfigError(path + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
      values_[key] = trim(t.substr(eq + 1));
    }
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  double num(const std::string& key) const {
    const std::string& s = str(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("config key '" + key + "' expects a number, got '" + s + "'");
  }

  long integer(const std::string& key) const {
    const std::string& s = str(key);
    long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("config key '" + key + "' expects an integer, got '" + s + "'");
    return v;
  }

  bool flag(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "1" || s == "true" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "no") return false;
    throw ConfigError("config key '" + key + "' expects a boolean, got '" + s + "'");
  }

  /// Writes every key in declaration order, so the file reloads to the same config.
  void write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config '" + path + "'");
    for (const auto& k : order_) out << k << " = " << values_.at(k) << "\n";
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::vector<std::string> order_;
  std::map<std::string, std::string> values_;
};

}  // namespace wcrr
