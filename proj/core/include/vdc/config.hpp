#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>

#include "vdc/error.hpp"

namespace vdc {

// Hierarchical key-value configuration: INI sections map to dotted keys
// ("datm.iterations"). Lookups of missing keys fall back to the supplied
// default; malformed values raise ConfigError naming the key.
class Config {
 public:
  Config() = default;
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

  // Raw text of one section as sorted "key = value" lines; used for hashing.
  std::string section_text(const std::string& section) const;
  void set(const std::string& key, const std::string& value);

 private:
  boost::property_tree::ptree tree_;
};

std::vector<std::string> split_list(const std::string& text, char sep = ',');

}  // namespace vdc
