#include "sobelkey/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "sobelkey/image.hpp"

namespace sobelkey {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KvConfig KvConfig::from_string(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ImageError("config: line " + std::to_string(lineno) + " is not key=value: " + t);
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ImageError("config: empty key on line " + std::to_string(lineno));
    cfg.values_[key] = trim(t.substr(eq + 1));
    cfg.consumed_[key] = false;
  }
  return cfg;
}

KvConfig KvConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ImageError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_[key] = true;
  return it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_[key] = true;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw ImageError("config: key '" + key + "' is not a number: " + it->second);
  }
}

int KvConfig::get_int(const std::string& key, int fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_[key] = true;
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw ImageError("config: key '" + key + "' is not an integer: " + it->second);
  }
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_[key] = true;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw ImageError("config: key '" + key + "' is not an integer: " + it->second);
  }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  consumed_[key] = true;
  if (it->second == "1" || it->second == "true" || it->second == "yes") return true;
  if (it->second == "0" || it->second == "false" || it->second == "no") return false;
  throw ImageError("config: key '" + key + "' is not a boolean: " + it->second);
}

void KvConfig::finish() const {
  for (const auto& [key, used] : consumed_) {
    if (!used) throw ImageError("config: unknown key '" + key + "'");
  }
}

std::string KvConfig::echo() const {
  std::string out;
  for (const auto& [key, value] : values_) {
    out += key + "=" + value + " ";
  }
  return out;
}

}  // namespace sobelkey
