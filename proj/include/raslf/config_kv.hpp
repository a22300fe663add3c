#pragma once

// "key = value" text with '#' comments, used for configs, scene specs and
// reports.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "raslf/error.hpp"

namespace raslf {

class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(const std::string& text,
                         const std::string& source = "<text>") {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos)
        line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw DataError(source + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
      }
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) {
        throw DataError(source + ":" + std::to_string(lineno) + ": empty key");
      }
      kv.set(key, trim(line.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << to_string();
  }

  std::string to_string() const {
    std::string s;
    for (const auto& key : order_) s += key + " = " + values_.at(key) + "\n";
    return s;
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) order_.push_back(key);
    values_[key] = value;
  }
  template <class V>
  void set(const std::string& key, V value) {
    if constexpr (std::is_same_v<V, bool>) {
      set(key, std::string(value ? "true" : "false"));
    } else if constexpr (std::is_floating_point_v<V>) {
      std::ostringstream os;
      os.precision(17);
      os << value;
      set(key, os.str());
    } else {
      set(key, std::to_string(value));
    }
  }
  void set(const std::string& key, const char* value) {
    set(key, std::string(value));
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::vector<std::string>& keys() const { return order_; }

  const std::string& get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw DataError("missing key '" + key + "'");
    return it->second;
  }
  std::string get(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
  }

  template <class V>
  V get_as(const std::string& key) const {
    return convert<V>(key, get(key));
  }
  template <class V>
  V get_as(const std::string& key, V fallback) const {
    return has(key) ? get_as<V>(key) : fallback;
  }

  template <class V>
  static V convert(const std::string& key, const std::string& text) {
    if constexpr (std::is_same_v<V, bool>) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw DataError("key '" + key + "': expected true/false, got '" + text +
                      "'");
    } else if constexpr (std::is_floating_point_v<V>) {
      try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size()) return static_cast<V>(v);
      } catch (const std::exception&) {
      }
      throw DataError("key '" + key + "': expected a number, got '" + text +
                      "'");
    } else {
      V v{};
      const auto [ptr, ec] =
          std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw DataError("key '" + key + "': expected an integer, got '" +
                        text + "'");
      }
      return v;
    }
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

}  // namespace raslf
