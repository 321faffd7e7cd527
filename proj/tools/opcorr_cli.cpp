// opcorr command line: dataset generation, correction training, variational
// reconstruction and experiment evaluation, all through the shared-library
// C API.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "opcorr/opcorr.h"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string method;
  std::string scale;
  std::string out_dir;
  std::string selector = "all";
  int jobs = 0;
  uint64_t seed = 0;
  bool have_seed = false;
};

// load config file (if any) and fold the CLI overrides into the JSON that the
// C API receives
std::string build_config_json(const CommonOpts& opts) {
  nlohmann::json j;
  if (!opts.config_path.empty()) {
    std::ifstream in(opts.config_path);
    if (!in.good()) {
      std::cerr << "error: cannot open config " << opts.config_path << "\n";
      std::exit(1);
    }
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      std::cerr << "error: bad JSON in " << opts.config_path << ": " << e.what() << "\n";
      std::exit(1);
    }
  }
  if (!opts.scale.empty()) j["scale"] = opts.scale;
  if (!opts.out_dir.empty()) j["out_dir"] = opts.out_dir;
  if (opts.jobs > 0) j["jobs"] = opts.jobs;
  if (opts.have_seed) j["seed"] = opts.seed;
  return j.dump();
}

int finish(int rc) {
  if (rc != OPCORR_OK) {
    std::cerr << "error: " << opcorr_last_error() << "\n";
    return 1;
  }
  return 0;
}

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_method) {
  cmd->add_option("--config", opts.config_path, "JSON experiment config");
  cmd->add_option("--scale", opts.scale, "budget preset: full, ci or smoke")
      ->check(CLI::IsMember({"full", "ci", "smoke"}));
  cmd->add_option("--out", opts.out_dir, "output directory (overrides config)");
  cmd->add_option("--jobs", opts.jobs, "parallel workers for independent solves");
  cmd->add_option("--seed", opts.seed, "global seed (overrides config)")
      ->each([&](const std::string&) { opts.have_seed = true; });
  if (with_method)
    cmd->add_option("--method", opts.method, "correction method")
        ->check(CLI::IsMember({"none", "accurate", "aem", "forward", "forward_recursive",
                               "forward_adjoint", "forward_adjoint_recursive"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learned corrections for approximate forward operators in "
               "variational reconstruction"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(opcorr_version()));

  CommonOpts opts;

  CLI::App* gen = app.add_subcommand("generate", "build a phantom dataset");
  add_common(gen, opts, false);

  CLI::App* train = app.add_subcommand("train", "fit a correction (or AEM statistics)");
  add_common(train, opts, true);

  CLI::App* rec = app.add_subcommand("reconstruct",
                                     "variational reconstruction of test samples");
  add_common(rec, opts, true);
  rec->add_option("--samples", opts.selector, "sample selector: all, k, or i..j");

  CLI::App* eval = app.add_subcommand("evaluate", "aggregate traces into figure data");
  add_common(eval, opts, false);

  CLI::App* toy = app.add_subcommand("toy-demo", "downsampling toy-case demonstration");
  int toy_n = 64;
  std::string toy_out = "toy_demo";
  uint64_t toy_seed = 1;
  toy->add_option("--n", toy_n, "phantom side length");
  toy->add_option("--out", toy_out, "output directory");
  toy->add_option("--seed", toy_seed, "seed");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) return finish(opcorr_cmd_generate(build_config_json(opts).c_str()));
  if (train->parsed()) {
    if (opts.method.empty()) {
      std::cerr << "error: train requires --method\n";
      return 1;
    }
    return finish(opcorr_cmd_train(build_config_json(opts).c_str(), opts.method.c_str()));
  }
  if (rec->parsed()) {
    if (opts.method.empty()) {
      std::cerr << "error: reconstruct requires --method\n";
      return 1;
    }
    return finish(opcorr_cmd_reconstruct(build_config_json(opts).c_str(),
                                         opts.method.c_str(), opts.selector.c_str()));
  }
  if (eval->parsed()) return finish(opcorr_cmd_evaluate(build_config_json(opts).c_str()));
  if (toy->parsed()) {
    nlohmann::json j{{"n", toy_n}, {"out_dir", toy_out}, {"seed", toy_seed}};
    return finish(opcorr_cmd_toy_demo(j.dump().c_str()));
  }
  return 1;
}
