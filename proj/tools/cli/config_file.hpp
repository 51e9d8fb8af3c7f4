#pragma once

// Plain-text run configs: one `key = value` per line, `#` starts a comment.
// Keys are long flag names without the dashes.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace csou::cli {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);
std::vector<std::pair<std::string, std::string>> read_config_file(
    const std::filesystem::path& path);

// Splices `--key=value` for every config entry in front of the flags that
// follow the subcommand, so explicit flags (parsed later, last one wins)
// override the file. `--config` itself is looked up in args.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

}  // namespace csou::cli
