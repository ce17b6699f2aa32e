#include "vdc/config.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>

namespace vdc {

namespace pt = boost::property_tree;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, sep)) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

Config Config::parse(const std::string& text) {
  // Strip trailing "# ..." comments, which the INI reader does not accept inline.
  std::stringstream in(text), cleaned;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    cleaned << line << "\n";
  }
  Config c;
  try {
    pt::read_ini(cleaned, c.tree_);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

bool Config::has(const std::string& key) const { return tree_.get_optional<std::string>(key).has_value(); }

std::string Config::get(const std::string& key, const std::string& fallback) const {
  const auto v = tree_.get_optional<std::string>(key);
  return v ? trim(*v) : fallback;
}

int Config::get_int(const std::string& key, int fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key, "");
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double Config::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key, "");
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  std::string v = get(key, "");
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<std::string> Config::get_list(const std::string& key, const std::vector<std::string>& fallback) const {
  if (!has(key)) return fallback;
  return split_list(get(key, ""));
}

std::vector<int> Config::get_int_list(const std::string& key, const std::vector<int>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<int> out;
  for (const auto& s : get_list(key, {})) {
    try {
      out.push_back(std::stoi(s));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' expects integers, got '" + s + "'");
    }
  }
  return out;
}

std::string Config::section_text(const std::string& section) const {
  std::map<std::string, std::string> sorted;
  const auto child = tree_.get_child_optional(section);
  if (child) {
    for (const auto& [k, v] : *child) sorted[k] = trim(v.data());
  }
  std::string out;
  for (const auto& [k, v] : sorted) out += k + " = " + v + "\n";
  return out;
}

void Config::set(const std::string& key, const std::string& value) { tree_.put(key, value); }

}  // namespace vdc
