#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>

#include "mixwarp/inference.hpp"
#include "mixwarp/simulation.hpp"

namespace mixwarp {

/// Ordered key=value pairs. Blank lines and lines starting with '#' are
/// skipped; whitespace around keys and values is trimmed. Throws FormatError
/// on lines without '=' and on duplicate keys.
std::map<std::string, std::string> parse_key_values(std::istream& in);

/// "RxC" (also "R" for a square grid). Throws FormatError.
std::pair<int, int> parse_grid(const std::string& text);

/// Run configuration shared by all commands. Defaults:
///   warp_grid=4x4 outer_iters=5 inner_iters=3 init_tau2=1 init_gamma2=0.1
///   seed=1 output_dir=out n=20 sigma2=0.001 sigma2_tau2=0.1
///   sigma2_gamma2=0.01 repetitions=1 lattice=64x64 mask=full early_stop=0
/// mask_path and template_path are unset by default. mask is "full" or
/// "disk"; mask_path overrides it.
struct RunConfig {
  std::string warp_grid = "4x4";
  int outer_iters = 5;
  int inner_iters = 3;
  double init_tau2 = 1.0;
  double init_gamma2 = 0.1;
  std::uint64_t seed = 1;
  std::optional<std::filesystem::path> mask_path;
  std::filesystem::path output_dir = "out";
  int n = 20;
  double sigma2 = 0.001;
  double sigma2_tau2 = 0.1;
  double sigma2_gamma2 = 0.01;
  int repetitions = 1;
  std::optional<std::filesystem::path> template_path;
  std::string lattice = "64x64";
  std::string mask = "full";
  bool early_stop = false;

  FitConfig fit_config(int threads) const;
  SimScales scales() const;
  AnchorGrid anchor_grid() const;
  Lattice synthetic_lattice() const;
};

/// Unknown keys and malformed values throw FormatError. Relative paths are
/// kept as written.
RunConfig parse_run_config(std::istream& in);
RunConfig load_run_config(const std::filesystem::path& path);

/// Central disk of radius 0.33 matching the synthetic template.
Mask central_disk(const Lattice& lattice);

}  // namespace mixwarp
