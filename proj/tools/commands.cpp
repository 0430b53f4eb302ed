#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include <CLI11.hpp>

#include "mixwarp/errors.hpp"
#include "mixwarp/image_io.hpp"
#include "mixwarp/inference.hpp"
#include "mixwarp/parallel.hpp"
#include "mixwarp/simulation.hpp"

namespace mixwarp::cli {
namespace fs = std::filesystem;
namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".pgm" || ext == ".png";
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

void close_output(std::ofstream& out, const fs::path& path) {
  out.close();
  if (!out) throw FormatError("error writing " + path.string());
}

// Maps library errors to exit codes and reports them on `err`.
template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const DimensionMismatch& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  }
}

Image template_for(const RunConfig& config) {
  if (config.template_path) return load_field(*config.template_path);
  return synthetic_template(config.synthetic_lattice());
}

std::optional<Mask> mask_for(const RunConfig& config, const Lattice& lattice) {
  if (config.mask_path) {
    Mask m = Mask::from_image(load_field(*config.mask_path));
    if (!(m.lattice() == lattice)) throw DimensionMismatch("mask size differs from the template");
    return m;
  }
  if (config.mask == "disk") return central_disk(lattice);
  return std::nullopt;
}

SimSpec sim_spec(const RunConfig& config) {
  SimSpec spec{template_for(config), config.n, config.scales(), config.anchor_grid(), std::nullopt, config.seed};
  spec.intensity_mask = mask_for(config, spec.template_image.lattice());
  return spec;
}

std::string sim_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sim_%03d", i);
  return buf;
}

}  // namespace

std::vector<fs::path> collect_inputs(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(in)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) found.push_back(entry.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(in)) {
      files.push_back(in);
    } else {
      throw FormatError("input not found: " + in.string());
    }
  }
  return files;
}

Image load_field(const fs::path& path) {
  if (path.extension() == ".f32") return read_raw_float(path);
  return read_image(path);
}

int cmd_fit(const std::vector<fs::path>& inputs, const RunConfig& config, int threads, std::ostream& out,
            std::ostream& err) {
  return guarded(err, [&] {
    const FitConfig fc = config.fit_config(threads);
    fc.validate();
    const auto files = collect_inputs(inputs);
    if (files.size() < 2) throw FormatError("fit needs at least two images");
    std::set<std::string> stems;
    std::vector<Image> data;
    for (const auto& f : files) {
      if (!stems.insert(f.stem().string()).second) throw InvalidArgument("duplicate image name " + f.stem().string());
      data.push_back(read_image(f));
    }
    check_stack(data, 2);

    const ModelFit result = fit(data, fc);

    const fs::path dir = config.output_dir;
    make_dir(dir / "warps");
    make_dir(dir / "intensity");
    make_dir(dir / "reconstructions");
    write_pgm(result.template_estimate, dir / "template.pgm");
    write_raw_float(result.template_estimate, dir / "template.f32");
    {
      const fs::path path = dir / "params.txt";
      auto os = open_output(path);
      const auto& p = result.params;
      os << "warp_grid=" << fc.warp_rows << 'x' << fc.warp_cols << '\n'
         << "sigma2=" << format_double(p.sigma2) << '\n'
         << "sigma2_tau2=" << format_double(p.sigma2 * p.tau2) << '\n'
         << "sigma2_gamma2=" << format_double(p.sigma2 * p.gamma2) << '\n'
         << "nll_final=" << format_double(result.nll_trace.empty() ? 0.0 : result.nll_trace.back()) << '\n';
      close_output(os, path);
    }
    {
      const fs::path path = dir / "trace.csv";
      auto os = open_output(path);
      os << "iteration,nll\n";
      for (std::size_t k = 0; k < result.nll_trace.size(); ++k) {
        os << k + 1 << ',' << format_double(result.nll_trace[k]) << '\n';
      }
      close_output(os, path);
    }
    for (std::size_t i = 0; i < files.size(); ++i) {
      const std::string stem = files[i].stem().string();
      write_displacements_csv(result.warps[i], dir / "warps" / (stem + ".csv"));
      write_raw_float(result.intensities[i], dir / "intensity" / (stem + ".f32"));
      write_pgm(reconstruct(result, static_cast<int>(i)), dir / "reconstructions" / (stem + ".pgm"));
    }
    if (result.diagnostics.degenerate) err << "warning: all residuals are zero; variances not estimated\n";
    out << "fitted " << files.size() << " images; nll_final="
        << format_double(result.nll_trace.empty() ? 0.0 : result.nll_trace.back()) << '\n';
    return static_cast<int>(kOk);
  });
}

int cmd_simulate(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const SimSpec spec = sim_spec(config);
    const SimDataset data = simulate_dataset(spec);
    const fs::path dir = config.output_dir;
    make_dir(dir);
    if (spec.n > 0) {
      make_dir(dir / "images");
      make_dir(dir / "true_warps");
      make_dir(dir / "true_intensity");
    }
    for (int i = 0; i < spec.n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const std::string name = sim_name(i);
      write_pgm(data.images[k], dir / "images" / (name + ".pgm"));
      write_displacements_csv(data.warps[k], dir / "true_warps" / (name + ".csv"));
      write_raw_float(data.intensities[k], dir / "true_intensity" / (name + ".f32"));
    }
    const fs::path path = dir / "manifest.txt";
    auto os = open_output(path);
    const Lattice& lat = spec.template_image.lattice();
    os << "seed=" << spec.seed << '\n'
       << "n=" << spec.n << '\n'
       << "lattice=" << lat.rows() << 'x' << lat.cols() << '\n'
       << "warp_grid=" << spec.warp_grid.rows() << 'x' << spec.warp_grid.cols() << '\n'
       << "sigma2=" << format_double(spec.scales.sigma2) << '\n'
       << "sigma2_tau2=" << format_double(spec.scales.sigma2_tau2) << '\n'
       << "sigma2_gamma2=" << format_double(spec.scales.sigma2_gamma2) << '\n'
       << "template=" << (config.template_path ? config.template_path->generic_string() : "synthetic") << '\n'
       << "mask=" << (config.mask_path ? config.mask_path->generic_string() : config.mask) << '\n';
    for (int i = 0; i < spec.n; ++i) os << "image=images/" << sim_name(i) << ".pgm\n";
    close_output(os, path);
    out << "simulated " << spec.n << " images\n";
    return static_cast<int>(kOk);
  });
}

int cmd_benchmark(const RunConfig& config, int threads, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const FitConfig fc = config.fit_config(threads);
    fc.validate();
    const SimSpec spec = sim_spec(config);
    const BenchResult result = benchmark(spec, config.repetitions, all_methods(), fc);
    make_dir(config.output_dir);
    const fs::path path = config.output_dir / "bench.csv";
    auto os = open_output(path);
    write_bench_csv(result, os);
    close_output(os, path);
    int failed = 0;
    for (const auto& row : result.rows) {
      if (row.failed) {
        ++failed;
        err << "rep " << row.rep << ' ' << row.method << ": " << row.error << '\n';
      }
    }
    out << "benchmark rows: " << result.rows.size() << ", failed: " << failed << '\n';
    return failed == static_cast<int>(result.rows.size()) ? static_cast<int>(kNumerical) : static_cast<int>(kOk);
  });
}

int cmd_predict(const fs::path& template_path, const fs::path& params_path, const fs::path& image_path,
                const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Image tmpl = load_field(template_path);
    std::ifstream in(params_path);
    if (!in) throw FormatError("cannot open params " + params_path.string());
    const auto kv = parse_key_values(in);
    auto number = [&](const std::string& key) {
      const auto it = kv.find(key);
      if (it == kv.end()) throw FormatError("params file lacks " + key);
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(it->second, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != it->second.size()) throw FormatError("invalid params value for " + key);
      return v;
    };
    const auto grid_it = kv.find("warp_grid");
    if (grid_it == kv.end()) throw FormatError("params file lacks warp_grid");
    const auto [rows, cols] = parse_grid(grid_it->second);
    const double sigma2 = number("sigma2");
    const double sigma2_tau2 = number("sigma2_tau2");
    const double sigma2_gamma2 = number("sigma2_gamma2");
    if (!(sigma2 > 0.0)) throw NumericalError("params describe a degenerate fit (sigma2 = 0)");
    const VarianceParams params = VarianceParams::from_scales(sigma2, sigma2_tau2, sigma2_gamma2);
    params.validate();
    const AnchorGrid grid(rows, cols);

    const Image y = read_image(image_path);
    if (!(y.lattice() == tmpl.lattice())) throw DimensionMismatch("image size differs from the template");
    const IntensityPrecision precision(y.lattice());
    const CholFactor f = precision.factor(params.tau2);
    const WarpPrediction warp = predict_warp(y, tmpl, params, f, DisplacementGrid(grid));
    const Image x = predict_intensity(y, tmpl, warp.warp, f);
    Image recon = resample(tmpl, warp.warp);
    recon.values() += x.values();
    const double residual = (y.values() - recon.values()).cwiseAbs().maxCoeff();

    const fs::path dir = config.output_dir;
    make_dir(dir);
    const std::string stem = image_path.stem().string();
    write_displacements_csv(warp.warp, dir / (stem + "_warp.csv"));
    write_raw_float(x, dir / (stem + "_intensity.f32"));
    write_pgm(recon, dir / (stem + "_reconstruction.pgm"));
    out << "max_abs_residual=" << format_double(residual) << '\n';
    return static_cast<int>(kOk);
  });
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Template estimation with joint warp and intensity random effects", "mixwarp"};
  app.require_subcommand(1);

  std::vector<std::string> inputs;
  std::string config_path;
  std::string output;
  int threads = 0;
  std::uint64_t seed = 0;
  std::string template_path;
  std::string params_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value configuration file");
    sub->add_option("--output", output, "output directory (overrides output_dir)");
    sub->add_option("--threads", threads, "worker threads (default: available cores)");
    sub->add_option("--seed", seed, "random seed (overrides seed)");
  };
  CLI::App* fit_cmd = app.add_subcommand("fit", "fit the model to a stack of images");
  fit_cmd->add_option("--input", inputs, "image files or directories")->required();
  add_common(fit_cmd);
  CLI::App* sim_cmd = app.add_subcommand("simulate", "simulate a dataset");
  sim_cmd->add_option("--input", template_path, "template image (default: template_path or synthetic)");
  add_common(sim_cmd);
  CLI::App* bench_cmd = app.add_subcommand("benchmark", "compare the proposed model with baselines");
  bench_cmd->add_option("--input", template_path, "template image (default: template_path or synthetic)");
  add_common(bench_cmd);
  CLI::App* pred_cmd = app.add_subcommand("predict", "predict warp and intensity for one image");
  pred_cmd->add_option("--input", inputs, "image file")->required()->expected(1);
  pred_cmd->add_option("--template", template_path, "fitted template (.f32 or image)")->required();
  pred_cmd->add_option("--params", params_path, "fitted params.txt")->required();
  add_common(pred_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? static_cast<int>(kOk) : static_cast<int>(kUsage);
  }

  RunConfig config;
  if (!config_path.empty()) {
    try {
      config = load_run_config(config_path);
    } catch (const Error& e) {
      err << "error: " << e.what() << '\n';
      return kIo;
    }
  }
  for (CLI::App* sub : {fit_cmd, sim_cmd, bench_cmd, pred_cmd}) {
    if (!sub->parsed()) continue;
    if (sub->count("--seed") > 0) config.seed = seed;
    if (sub->count("--output") > 0) config.output_dir = output;
  }
  if (threads < 0) {
    err << "error: --threads must be non-negative\n";
    return kUsage;
  }
  const int workers = resolve_threads(threads);

  if (fit_cmd->parsed()) {
    std::vector<fs::path> paths(inputs.begin(), inputs.end());
    return cmd_fit(paths, config, workers, out, err);
  }
  if (sim_cmd->parsed()) {
    if (!template_path.empty()) config.template_path = template_path;
    return cmd_simulate(config, out, err);
  }
  if (bench_cmd->parsed()) {
    if (!template_path.empty()) config.template_path = template_path;
    return cmd_benchmark(config, workers, out, err);
  }
  return cmd_predict(template_path, params_path, inputs.front(), config, out, err);
}

}  // namespace mixwarp::cli
