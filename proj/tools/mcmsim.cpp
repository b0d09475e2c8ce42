// mcmsim: run one scenario or sweep a parameter and write CSV files.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mcm/metrics.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

std::vector<double> parse_values(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw mcm::ConfigError("values", "not a number: '" + item + "'");
    }
    if (item.find_first_not_of(" \t", used) != std::string::npos) {
      throw mcm::ConfigError("values", "not a number: '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw mcm::ConfigError("values", "empty list");
  return out;
}

std::filesystem::path prepare_out(const std::string& dir) {
  std::filesystem::path p(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec || !std::filesystem::is_directory(p)) throw mcm::IoError("cannot create output directory " + dir);
  return p;
}

void print_table(const mcm::CsvTable& t) { std::cout << mcm::to_csv_text(t); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Maneuver coordination simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool stream_mcm = false;
  bool trace = false;

  auto* run = app.add_subcommand("run", "Run one scenario");
  auto* sw = app.add_subcommand("sweep", "Sweep one parameter");
  for (auto* sub : {run, sw}) {
    sub->add_option("--config", config_path, "Scenario file (key=value)")->required();
    sub->add_option("--out", out_dir, "Directory for CSV output");
    sub->add_option("--seed", seed, "Override the configured seed");
    sub->add_flag("--stream-mcm", stream_mcm, "Also stream Intention-sized messages at 10 Hz");
  }
  run->add_flag("--trace", trace, "Dump protocol transitions");

  std::string axis_name;
  std::string values_list;
  int reps = 1;
  unsigned threads = 0;
  sw->add_option("--axis", axis_name, "loss_rate | t_timeout | speed")->required();
  sw->add_option("--values", values_list, "Comma-separated values")->required();
  sw->add_option("--reps", reps, "Repetitions per value")->required();
  sw->add_option("--threads", threads, "Worker threads (0: all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    mcm::ScenarioConfig cfg = mcm::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (stream_mcm) cfg.stream_mcm = true;

    if (*run) {
      cfg.trace = trace;
      cfg.record_samples = true;
      const mcm::RunMetrics m = mcm::run_scenario(cfg);
      if (!out_dir.empty()) {
        const auto dir = prepare_out(out_dir);
        mcm::emit_csv(mcm::summary_table(m), dir / "summary.csv");
        mcm::emit_csv(mcm::bandwidth_table(m), dir / "bandwidth.csv");
        mcm::emit_csv(mcm::samples_table(m), dir / "samples.csv");
        if (trace) {
          std::ofstream tf(dir / "trace.log", std::ios::binary);
          if (!tf) throw mcm::IoError("cannot write trace.log");
          for (const auto& line : m.trace) tf << line << '\n';
        }
      }
      print_table(mcm::summary_table(m));
      if (trace && out_dir.empty()) {
        for (const auto& line : m.trace) std::cout << line << '\n';
      }
      return 0;
    }

    const auto axis = mcm::parse_axis(axis_name);
    const auto table = mcm::sweep(cfg, axis, parse_values(values_list), reps, threads);
    if (!out_dir.empty()) {
      const auto dir = prepare_out(out_dir);
      mcm::emit_csv(mcm::bucket_table(table), dir / "buckets.csv");
      mcm::emit_csv(mcm::sweep_summary_table(table), dir / "summary.csv");
      mcm::emit_csv(mcm::sweep_runs_table(table), dir / "runs.csv");
    }
    print_table(mcm::sweep_summary_table(table));
    return 0;
  } catch (const mcm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const mcm::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  }
}
