#pragma once

#include <optional>
#include <string>

#include "ifol/io.hpp"

namespace ifol {

/// Options shared by the CLI subcommands; unset fields fall back to the
/// run configuration.
struct CommandOptions {
  std::string checkpoint_path;
  std::string eval_mesh_path;
  int steps = 10;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  int sample_index = -1;  // -1 = all samples
  bool with_oracle = true;
};

void apply_overrides(RunConfig& cfg, const CommandOptions& opts);

int cmd_sample(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_infer(const RunConfig& cfg, const CommandOptions& opts);
int cmd_rollout(const RunConfig& cfg, const CommandOptions& opts);
int cmd_fem(const RunConfig& cfg, const CommandOptions& opts);
int cmd_sensitivity(const RunConfig& cfg, const CommandOptions& opts);
int cmd_gradcheck(const RunConfig& cfg);

}  // namespace ifol
