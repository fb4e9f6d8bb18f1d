#include <cstdio>
#include <cstdlib>
#include <string>

#include <CLI11.hpp>

#include "ifol/commands.hpp"

namespace {

int run(int argc, char** argv) {
  CLI::App app{"implicit finite operator learning"};
  app.require_subcommand(1);

  std::string config_path;
  ifol::CommandOptions opts;
  long long seed = -1;
  int threads = 0;

  auto add_common = [&](CLI::App* sub, bool needs_ckpt) {
    sub->add_option("--config", config_path, "run configuration (JSON)")->required();
    sub->add_option("--out", opts.out_dir, "output directory override");
    sub->add_option("--seed", seed, "seed override");
    sub->add_option("--threads", threads, "worker thread count (or IFOL_THREADS)");
    if (needs_ckpt)
      sub->add_option("--checkpoint", opts.checkpoint_path, "checkpoint path override");
  };

  CLI::App* sample = app.add_subcommand("sample", "generate a dataset");
  add_common(sample, false);
  CLI::App* train = app.add_subcommand("train", "meta-train the operator");
  add_common(train, false);
  CLI::App* infer = app.add_subcommand("infer", "predict solution fields");
  add_common(infer, true);
  infer->add_option("--eval-mesh", opts.eval_mesh_path, "evaluation mesh (JSON)");
  infer->add_option("--sample", opts.sample_index, "dataset sample index (default: all)");
  infer->add_flag("--no-oracle,!--oracle", opts.with_oracle,
                  "skip the FEM reference and metrics")->default_val(true);
  CLI::App* rollout = app.add_subcommand("rollout", "transient rollout");
  add_common(rollout, true);
  rollout->add_option("--steps", opts.steps, "number of rollout steps")->default_val(10);
  rollout->add_option("--sample", opts.sample_index, "initial-condition sample index");
  rollout->add_flag("--no-oracle,!--oracle", opts.with_oracle,
                    "skip the FEM reference rollout")->default_val(true);
  CLI::App* fem = app.add_subcommand("fem", "reference FEM Newton solve");
  add_common(fem, false);
  fem->add_option("--sample", opts.sample_index, "dataset sample index (default: all)");
  CLI::App* sens = app.add_subcommand("sensitivity", "AD vs adjoint sensitivity maps");
  add_common(sens, true);
  sens->add_option("--sample", opts.sample_index, "dataset sample index (default: all)");
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference suites");
  add_common(gradcheck, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  if (seed >= 0) opts.seed = static_cast<std::uint64_t>(seed);
  if (threads > 0) {
    opts.threads = threads;
  } else if (const char* env = std::getenv("IFOL_THREADS")) {
    const int t = std::atoi(env);
    if (t > 0) opts.threads = t;
  }

  ifol::RunConfig cfg = ifol::load_run_config(config_path);
  ifol::apply_overrides(cfg, opts);

  if (sample->parsed()) return ifol::cmd_sample(cfg);
  if (train->parsed()) return ifol::cmd_train(cfg);
  if (infer->parsed()) return ifol::cmd_infer(cfg, opts);
  if (rollout->parsed()) return ifol::cmd_rollout(cfg, opts);
  if (fem->parsed()) return ifol::cmd_fem(cfg, opts);
  if (sens->parsed()) return ifol::cmd_sensitivity(cfg, opts);
  if (gradcheck->parsed()) return ifol::cmd_gradcheck(cfg);
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ifol::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ifol::NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const ifol::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
