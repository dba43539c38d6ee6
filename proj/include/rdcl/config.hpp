#pragma once

// Flat key=value configuration files. Lines are `key = value`, blank lines
// and `#` comments ignored. Every key can be overridden by an environment
// variable named RDCL_<KEY> with the key upper-cased and dots replaced by
// underscores (e.g. dse.gamma -> RDCL_DSE_GAMMA).

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

namespace rdcl {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using ConfigMap = std::map<std::string, std::string>;

namespace detail_config {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::string env_name(const std::string& key) {
  std::string out = "RDCL_";
  for (char c : key) {
    if (c == '.' || c == '-')
      out.push_back('_');
    else
      out.push_back(static_cast<char>(
          std::toupper(static_cast<unsigned char>(c))));
  }
  return out;
}

}  // namespace detail_config

inline ConfigMap parse_config_text(const std::string& text,
                                   const std::string& origin) {
  ConfigMap out;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string line = text.substr(
        pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail_config::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": expected key = value");
    const std::string key = detail_config::trim(line.substr(0, eq));
    const std::string value = detail_config::trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    out[key] = value;
  }
  return out;
}

inline ConfigMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_config_text(text, path);
}

// Environment overrides for a fixed set of known keys.
inline void apply_env_overrides(ConfigMap& cfg,
                                const std::set<std::string>& known_keys) {
  for (const auto& key : known_keys) {
    const char* v = std::getenv(detail_config::env_name(key).c_str());
    if (v != nullptr) cfg[key] = v;
  }
}

// Typed getters with defaulting; conversion failures name the key.
inline std::string cfg_str(const ConfigMap& m, const std::string& key,
                           const std::string& fallback) {
  auto it = m.find(key);
  return it == m.end() ? fallback : it->second;
}

inline double cfg_double(const ConfigMap& m, const std::string& key,
                         double fallback) {
  auto it = m.find(key);
  if (it == m.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not a number: " + it->second);
  }
}

inline long long cfg_int(const ConfigMap& m, const std::string& key,
                         long long fallback) {
  auto it = m.find(key);
  if (it == m.end()) return fallback;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key +
                      "': not an integer: " + it->second);
  }
}

inline bool cfg_bool(const ConfigMap& m, const std::string& key,
                     bool fallback) {
  auto it = m.find(key);
  if (it == m.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false/1/0");
}

}  // namespace rdcl
