#include <iostream>

#include <CLI11.hpp>

#include "nvpf/harness/run.hpp"

using namespace nvpf;

int main(int argc, char** argv) {
  CLI::App app{"Group emotion fusion with non-volume preserving flows"};
  std::string mode_name, config_path, out_dir = ".";
  std::optional<std::uint64_t> seed;
  app.add_option("mode", mode_name, "gen-data | train-nvpf | train-tnvpf | eval | grad-check | inspect")
      ->required();
  app.add_option("--config", config_path, "run configuration (JSON); a run_manifest.json also works")->required();
  app.add_option("--seed", seed, "overrides the configured seed");
  app.add_option("--out", out_dir, "output directory");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const auto mode = harness::parse_mode(mode_name);
    auto cfg = harness::load_run_config(config_path, mode);
    if (seed) cfg.seed = *seed;
    const auto res = harness::execute(mode, cfg, out_dir);
    if (mode == harness::Mode::inspect) std::cout << res.summary.at("trace").get<std::string>();
    else std::cout << res.summary.dump(2) << '\n';
    if (mode == harness::Mode::grad_check && !res.summary.at("pass").get<bool>()) {
      std::cerr << "grad-check: error exceeds tolerance\n";
      return 1;
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "nvpf: " << e.what() << '\n';
    return harness::exit_code_for(e);
  }
}
