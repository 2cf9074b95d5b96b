#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rdlab {

// Flat sectioned key-value configuration:
//   [section]
//   key = value          # comment
// Values are strings; typed accessors parse on demand.  Unknown keys are
// kept, so a resolved config can be echoed verbatim.
class Config {
 public:
  static Config parse_string(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw std::runtime_error("config line " + std::to_string(lineno) +
                                   ": unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        cfg.sections_[section];
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config line " + std::to_string(lineno) +
                                 ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw std::runtime_error("config line " + std::to_string(lineno) +
                                 ": empty key");
      cfg.sections_[section][key] = value;
    }
    return cfg;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str());
  }

  bool has(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
  }

  std::string get_str(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end() || !s->second.count(key))
      throw std::runtime_error("config: missing " + section + "." + key);
    return s->second.at(key);
  }

  std::string get_str(const std::string& section, const std::string& key,
                      const std::string& fallback) const {
    return has(section, key) ? get_str(section, key) : fallback;
  }

  double get_num(const std::string& section, const std::string& key) const {
    return parse_double(section, key, get_str(section, key));
  }

  double get_num(const std::string& section, const std::string& key,
                 double fallback) const {
    return has(section, key) ? get_num(section, key) : fallback;
  }

  long get_int(const std::string& section, const std::string& key) const {
    const double v = get_num(section, key);
    const long r = static_cast<long>(v);
    if (static_cast<double>(r) != v)
      throw std::runtime_error("config: " + section + "." + key +
                               " must be an integer");
    return r;
  }

  long get_int(const std::string& section, const std::string& key,
               long fallback) const {
    return has(section, key) ? get_int(section, key) : fallback;
  }

  std::vector<double> get_list(const std::string& section,
                               const std::string& key) const {
    std::vector<double> out;
    std::istringstream in(get_str(section, key));
    std::string item;
    while (std::getline(in, item, ','))
      out.push_back(parse_double(section, key, item));
    return out;
  }

  void set(const std::string& section, const std::string& key,
           const std::string& value) {
    sections_[section][key] = value;
  }

  // Deterministic textual form (sections and keys sorted), used to echo the
  // fully resolved configuration next to experiment outputs.
  std::string serialize() const {
    std::ostringstream out;
    for (const auto& [section, kv] : sections_) {
      out << "[" << section << "]\n";
      for (const auto& [key, value] : kv) out << key << " = " << value << "\n";
      out << "\n";
    }
    return out.str();
  }

 private:
  static double parse_double(const std::string& section,
                             const std::string& key, const std::string& raw) {
    try {
      std::size_t used = 0;
      const double v = std::stod(raw, &used);
      while (used < raw.size() &&
             (raw[used] == ' ' || raw[used] == '\t'))
        ++used;
      if (used != raw.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error("config: " + section + "." + key +
                               " is not a number: '" + raw + "'");
    }
  }

  std::map<std::string, std::map<std::string, std::string>> sections_;
};

}  // namespace rdlab
