#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "mixwarp/run_config.hpp"

namespace mixwarp::cli {

enum ExitCode { kOk = 0, kUsage = 1, kIo = 2, kNumerical = 3 };

/// Image files of the inputs: directories contribute their .pgm/.png files
/// in name order, files are taken as given.
std::vector<std::filesystem::path> collect_inputs(const std::vector<std::filesystem::path>& inputs);

/// Reads .f32 raw float fields or PGM/PNG images.
Image load_field(const std::filesystem::path& path);

int cmd_fit(const std::vector<std::filesystem::path>& inputs, const RunConfig& config, int threads,
            std::ostream& out, std::ostream& err);
int cmd_simulate(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_benchmark(const RunConfig& config, int threads, std::ostream& out, std::ostream& err);
int cmd_predict(const std::filesystem::path& template_path, const std::filesystem::path& params_path,
                const std::filesystem::path& image_path, const RunConfig& config, std::ostream& out,
                std::ostream& err);

/// Full command line: subcommand fit | simulate | benchmark | predict.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mixwarp::cli
