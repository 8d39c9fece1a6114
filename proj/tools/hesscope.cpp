#include <CLI11.hpp>

#include <iostream>

#include "hesscope/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"hesscope: loss landscapes, Hessian spectra and generalization criteria for small networks"};
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> overrides;
  const std::vector<std::pair<const char*, const char*>> commands{
      {"train", "train the model on dataset a, writing checkpoints and history.csv"},
      {"landscape", "evaluate the 2-D loss grid around a checkpoint"},
      {"hesd", "estimate the Hessian eigenvalue spectral density"},
      {"criteria", "run the r_e / K_Hn stability protocol"},
      {"genexp", "track criteria on datasets a and b across checkpoints"},
      {"info", "print parameter counts and the resolved config"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "experiment config (JSON)")->required();
    sub->add_option("--set", overrides, "override a config value, e.g. --set train.epochs=5")->take_all();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return hesscope::run_cli(app.get_subcommands().front()->get_name(), config, overrides);
}
