#include <cstdio>
#include <exception>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lnn/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Liquid neural network experiments: CSI prediction and online beamforming"};
  app.require_subcommand(1, 1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  lnn::PlotRequest plot;
  std::string plot_kind;

  const std::map<std::string, std::string> help = {
      {"gen", "write the prediction and beamforming CSI datasets"},
      {"train-predict", "train the configured cell on the prediction task"},
      {"eval-predict", "train LTC and GRU, evaluate them against AR and naive-hold per horizon"},
      {"run-bf", "run GLNN, WMMSE, MRT and ZF over the velocity schedule"},
      {"bench", "time cell steps and prediction training"},
      {"plot", "render result CSVs as SVG"},
  };
  for (const auto& name : lnn::commands()) {
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", config_path, "INI config file (omit for defaults)");
    sub->add_option("--seed", seed, "overrides [run] seed");
    sub->add_option("--out", out, "overrides [run] out");
    if (name == "plot") {
      sub->add_option("--csv", plot.csv, "CSV to plot (default: results in the output directory)");
      sub->add_option("--kind", plot_kind, "mse_vs_horizon or se_vs_time")
          ->check(CLI::IsMember({"mse_vs_horizon", "se_vs_time"}));
      sub->add_option("--svg", plot.svg, "output file");
    }
  }
  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    lnn::ExperimentConfig cfg = config_path.empty() ? lnn::ExperimentConfig{} : lnn::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out) cfg.out_dir = *out;
    if (!plot_kind.empty()) plot.kind = lnn::parse_plot_kind(plot_kind);
    std::cout << lnn::run_command(command, cfg, plot);
  } catch (const std::exception& e) {
    std::cerr << "lnn " << command << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
