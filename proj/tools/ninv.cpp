#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "ninv/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Network inversion experiments: classifiers, inversion, reconstruction and OOD cycles"};
  app.require_subcommand(1, 1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  for (const auto& name : ninv::command_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "flat key = value config file")->required();
    sub->add_option("--out", out_dir, "run directory")->required();
    sub->add_option("--seed", seed, "overrides the seed key");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ninv::kExitOk : ninv::kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  return ninv::run_command(command, config_path, out_dir, seed, std::cout, std::cerr);
}
