#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include "mftnet/model.hpp"
#include "mftnet/training.hpp"

namespace mftnet {

inline constexpr const char* kVersion = "0.1.0";

// Everything a run needs, loadable from a JSON file and overridable from the
// command line. The resolved form is echoed into every output directory.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string data_dir;
  std::string out_dir = "mftnet-out";
  std::string checkpoint;
  std::string montage;
  int precision = 32;
  std::optional<std::uint32_t> subject;
  std::optional<std::uint32_t> session;
};

std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);

// Exit codes: 0 success, 1 domain error, 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mftnet
