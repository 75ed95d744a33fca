#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "volnet/trainer.hpp"

namespace {

int run(int argc, char** argv) {
  CLI::App app{"volnet: volumetric CT classification (3D ResNet-18 +/- multi-head attention)"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  int workers = 0;
  bool tiny = false;

  const std::pair<const char*, const char*> commands[] = {
      {"synth", "generate the synthetic phantom dataset"},
      {"preprocess", "materialize preprocessed volumes"},
      {"train", "train one model variant"},
      {"eval", "evaluate a checkpoint and report metrics"},
      {"predict", "per-record probability and decision"},
      {"gradcheck", "finite-difference checks for all registered kernels"},
      {"ablate", "train both variants and print the comparison table"},
  };
  for (const auto& [name, desc] : commands) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", config_path, "path to key=value config file")->required();
    sub->add_option("--seed", seed, "override config seed");
    sub->add_option("--workers", workers, "override data-loader worker count");
    sub->add_flag("--tiny", tiny, "tiny mode: reduced channels, 16x32x32 inputs");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    volnet::RunConfig cfg = volnet::parse_config(config_path);
    if (sub->count("--seed")) cfg.seed = seed;
    if (sub->count("--workers")) cfg.workers = workers;
    if (tiny) cfg.tiny = true;

    const std::string name = sub->get_name();
    if (name == "synth") {
      volnet::cmd_synth(cfg, std::cout);
    } else if (name == "preprocess") {
      volnet::cmd_preprocess(cfg, std::cout);
    } else if (name == "train") {
      const volnet::TrainResult result = volnet::cmd_train(cfg);
      std::cout << "trained " << result.epochs_run << " epoch(s); checkpoints in " << cfg.out_dir;
      if (result.best_macro_f1 >= 0) std::cout << "; best val macro F1 " << result.best_macro_f1;
      std::cout << "\n";
    } else if (name == "eval") {
      volnet::cmd_eval(cfg, std::cout);
    } else if (name == "predict") {
      volnet::cmd_predict(cfg, std::cout);
    } else if (name == "gradcheck") {
      return volnet::cmd_gradcheck(cfg, std::cout) == 0 ? 0 : 3;
    } else if (name == "ablate") {
      volnet::cmd_ablate(cfg, std::cout);
    }
    return 0;
  } catch (const volnet::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const volnet::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const volnet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
