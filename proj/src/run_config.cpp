#include "mixwarp/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>

#include "mixwarp/errors.hpp"

namespace mixwarp {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw FormatError("invalid value for " + key + ": '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "yes") return true;
  if (text == "0" || text == "false" || text == "no") return false;
  throw FormatError("invalid value for " + key + ": '" + text + "'");
}

}  // namespace

std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw FormatError("line " + std::to_string(number) + ": expected key=value");
    const std::string key = trim(text.substr(0, eq));
    if (key.empty()) throw FormatError("line " + std::to_string(number) + ": empty key");
    if (!out.emplace(key, trim(text.substr(eq + 1))).second) throw FormatError("duplicate key: " + key);
  }
  return out;
}

std::pair<int, int> parse_grid(const std::string& text) {
  const auto x = text.find('x');
  const int rows = parse_number<int>("grid", text.substr(0, x));
  const int cols = x == std::string::npos ? rows : parse_number<int>("grid", text.substr(x + 1));
  if (rows < 1 || cols < 1) throw FormatError("grid dimensions must be positive: '" + text + "'");
  return {rows, cols};
}

FitConfig RunConfig::fit_config(int threads) const {
  FitConfig c;
  const auto [rows, cols] = parse_grid(warp_grid);
  c.warp_rows = rows;
  c.warp_cols = cols;
  c.outer_iterations = outer_iters;
  c.inner_iterations = inner_iters;
  c.init_tau2 = init_tau2;
  c.init_gamma2 = init_gamma2;
  c.early_stop = early_stop;
  c.threads = threads;
  return c;
}

SimScales RunConfig::scales() const { return {sigma2, sigma2_tau2, sigma2_gamma2}; }

AnchorGrid RunConfig::anchor_grid() const {
  const auto [rows, cols] = parse_grid(warp_grid);
  return {rows, cols};
}

Lattice RunConfig::synthetic_lattice() const {
  const auto [rows, cols] = parse_grid(lattice);
  return {rows, cols};
}

RunConfig parse_run_config(std::istream& in) {
  RunConfig c;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"warp_grid", [&](auto&, auto& v) {
         parse_grid(v);
         c.warp_grid = v;
       }},
      {"outer_iters", [&](auto& k, auto& v) { c.outer_iters = parse_number<int>(k, v); }},
      {"inner_iters", [&](auto& k, auto& v) { c.inner_iters = parse_number<int>(k, v); }},
      {"init_tau2", [&](auto& k, auto& v) { c.init_tau2 = parse_number<double>(k, v); }},
      {"init_gamma2", [&](auto& k, auto& v) { c.init_gamma2 = parse_number<double>(k, v); }},
      {"seed", [&](auto& k, auto& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
      {"mask_path", [&](auto&, auto& v) { c.mask_path = v; }},
      {"output_dir", [&](auto&, auto& v) { c.output_dir = v; }},
      {"n", [&](auto& k, auto& v) { c.n = parse_number<int>(k, v); }},
      {"sigma2", [&](auto& k, auto& v) { c.sigma2 = parse_number<double>(k, v); }},
      {"sigma2_tau2", [&](auto& k, auto& v) { c.sigma2_tau2 = parse_number<double>(k, v); }},
      {"sigma2_gamma2", [&](auto& k, auto& v) { c.sigma2_gamma2 = parse_number<double>(k, v); }},
      {"repetitions", [&](auto& k, auto& v) { c.repetitions = parse_number<int>(k, v); }},
      {"template_path", [&](auto&, auto& v) { c.template_path = v; }},
      {"lattice", [&](auto&, auto& v) {
         parse_grid(v);
         c.lattice = v;
       }},
      {"mask",
       [&](auto& k, auto& v) {
         if (v != "full" && v != "disk") throw FormatError("invalid value for " + k + ": '" + v + "'");
         c.mask = v;
       }},
      {"early_stop", [&](auto& k, auto& v) { c.early_stop = parse_bool(k, v); }},
  };
  for (const auto& [key, value] : parse_key_values(in)) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw FormatError("unknown config key: " + key);
    it->second(key, value);
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  return parse_run_config(in);
}

Mask central_disk(const Lattice& lattice) { return Mask::disk(lattice, {0.5, 0.5}, 0.33); }

}  // namespace mixwarp
