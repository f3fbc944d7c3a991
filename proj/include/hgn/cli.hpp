#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "hgn/training.hpp"

namespace hgn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Environment variable naming the directory used to resolve relative
/// dataset paths that do not exist relative to the working directory.
inline constexpr const char* kDataDirEnv = "HGN_DATA_DIR";

/// Settings shared by every subcommand. Serialised as `key=value` lines.
struct RunConfig {
  TrainConfig train;
  std::vector<std::size_t> ks = {5, 10, 15, 20};
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only
  std::size_t validate_every = 0;    // 0 = no validation metrics
  std::string format = "csv";
  std::string filter = "single";
  std::string input;
  std::string bundle;
  std::string checkpoint;
  std::string out;

  /// Throws ContractError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  std::string to_text() const;
};

/// Parses `key=value` lines; `#` starts a comment.
std::map<std::string, std::string> parse_key_values(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace hgn::cli
