#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ev4dgs/core/error.hpp"

namespace ev4dgs {

/// Flat `key = value` file. Blank lines and text after '#' are ignored.
class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text) {
    Config c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw DataError("config line " + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(t.substr(0, eq));
      if (key.empty()) throw DataError("config line " + std::to_string(lineno) + ": empty key");
      c.values_[key] = trim(t.substr(eq + 1));
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

  double get(const std::string& key, double fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing text");
      return v;
    } catch (const std::exception&) {
      throw DataError("config key '" + key + "' is not a number: " + it->second);
    }
  }

  long get(const std::string& key, long fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    long v = 0;
    const auto& s = it->second;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size())
      throw DataError("config key '" + key + "' is not an integer: " + s);
    return v;
  }

  int get(const std::string& key, int fallback) const { return static_cast<int>(get(key, static_cast<long>(fallback))); }

  bool get(const std::string& key, bool fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto& s = it->second;
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    throw DataError("config key '" + key + "' is not a boolean: " + s);
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string get(const std::string& key, const char* fallback) const { return get(key, std::string(fallback)); }

  std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    std::string item;
    std::istringstream in(it->second);
    while (std::getline(in, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      try {
        out.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw DataError("config key '" + key + "' has a non-numeric entry: " + item);
      }
    }
    return out;
  }

  /// Keys present in the file that no getter asked for.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

  std::string to_string() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace ev4dgs
