#include "cli/config_file.hpp"

#include <fstream>
#include <sstream>

namespace csou::cli {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front()) {
    return v.substr(1, v.size() - 2);
  }
  return v;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = unquote(trim(line.substr(eq + 1)));
    if (key.empty() || key.find_first_of(" \t") != std::string::npos || key.front() == '-') {
      throw UsageError("config line " + std::to_string(lineno) + ": bad key '" + key + "'");
    }
    if (key == "config") {
      throw UsageError("config line " + std::to_string(lineno) + ": nested config files");
    }
    entries.emplace_back(std::move(key), std::move(value));
  }
  return entries;
}

std::vector<std::pair<std::string, std::string>> read_config_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str());
}

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::string config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a file");
      config = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    }
  }
  if (config.empty() || args.size() < 2) return args;
  std::vector<std::string> out(args.begin(), args.begin() + 2);  // program, subcommand
  for (const auto& [key, value] : read_config_file(config)) out.push_back("--" + key + "=" + value);
  out.insert(out.end(), args.begin() + 2, args.end());
  return out;
}

}  // namespace csou::cli
