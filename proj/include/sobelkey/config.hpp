#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace sobelkey {

// Flat key=value file ('#' comments). Consumers pull typed values; finish()
// rejects any key nobody consumed, naming it.
class KvConfig {
 public:
  KvConfig() = default;
  static KvConfig load(const std::filesystem::path& path);
  static KvConfig from_string(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  int get_int(const std::string& key, int fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);

  void finish() const;  // throws on unconsumed keys
  std::string echo() const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> consumed_;
};

}  // namespace sobelkey
