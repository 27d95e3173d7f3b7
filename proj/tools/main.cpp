// Configuration-driven experiment runner; see README for the config schema.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "proptrain/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"property-driven training engine"};

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool have_seed = false;
  bool dl2_table_literal = false;
  bool movingfast_literal = false;

  app.add_option("--config", config_path, "run configuration (JSON)")->required();
  app.add_option("--out", out_dir, "output directory override");
  app.add_option("--seed", seed, "master seed override")->each([&](const std::string&) {
    have_seed = true;
  });
  app.add_flag("--dl2-table-literal", dl2_table_literal,
               "use the transposed and/or pair for the dl2 logic");
  app.add_flag("--movingfast-literal", movingfast_literal,
               "use the v_x reading of the movingFast predicate");

  CLI11_PARSE(app, argc, argv);

  std::optional<std::string> out = out_dir.empty() ? std::nullopt : std::make_optional(out_dir);
  std::optional<std::uint64_t> seed_opt = have_seed ? std::make_optional(seed) : std::nullopt;
  return proptrain::run_experiment_main(config_path, out, seed_opt, dl2_table_literal,
                                        movingfast_literal, std::cerr);
}
