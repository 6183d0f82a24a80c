// Command-line driver for the process chain stages.
#include <smc/pipeline.hpp>

#include <CLI11.hpp>

#include <iostream>

namespace pl = smc::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Virtual process chain for sheet molding compound (desk scale)"};
  std::string config_path, stage, preset, out_dir = "vpc_out", plot_kind;
  std::int64_t seed_offset = 0;
  int workers = 1;
  bool print_config = false;
  app.add_option("--config", config_path, "JSON run configuration (units in key names)")->check(CLI::ExistingFile);
  auto* st = app.add_option("--stage", stage, "stage to run, or 'all'");
  app.add_option("--seed-offset", seed_offset, "shift applied to every seed");
  app.add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--preset", preset, "desk | paper-scale");
  app.add_option("--out-dir", out_dir, "artifact directory");
  app.add_option("--plot", plot_kind, "emit one kind of plot data instead of a stage");
  app.add_flag("--print-config", print_config, "print the resolved configuration and its hash");
  (void)st;
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    pl::RunConfig cfg;
    if (!config_path.empty())
      cfg = pl::load_config(config_path, preset);
    else
      cfg = pl::config_from_json(nlohmann::json::object(), preset);
    if (seed_offset != 0) {
      cfg.seed_offset = seed_offset;
      cfg.validate();
    }
    const auto ctx = pl::make_context(cfg, out_dir, workers, [](const std::string& m) { std::cerr << m << std::endl; });
    if (print_config) {
      std::cout << "config_hash " << ctx.hash << '\n' << pl::to_json(cfg).dump(2) << '\n';
      if (stage.empty() && plot_kind.empty()) return 0;
    }
    if (!plot_kind.empty()) {
      pl::emit_plot_data(ctx, plot_kind);
      return 0;
    }
    if (stage.empty()) {
      std::cerr << "nothing to do: pass --stage (";
      for (const auto& s : pl::stage_names()) std::cerr << s << ' ';
      std::cerr << "all)\n";
      return 2;
    }
    pl::run_stage(ctx, stage);
    return 0;
  } catch (const pl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const pl::ArtifactError& e) {
    std::cerr << "artifact error: " << e.what() << '\n';
    return 3;
  } catch (const pl::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
