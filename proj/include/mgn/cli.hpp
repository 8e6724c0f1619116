#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "mgn/experiment.hpp"

namespace mgn::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Everything a command needs, assembled from a JSON config file plus flag
// overrides. Every field mirrors a JSON key of the same name.
struct RunConfig {
  std::filesystem::path data;
  std::filesystem::path out = "mgn_out";
  std::filesystem::path checkpoint;  // evaluate only
  PipelineConfig pipeline;
  TrainConfig train;
  Hyper hyper;
  std::size_t depth_max = 8;
  std::size_t n_synth_trials = 64;
  // Optional montage-pair overrides by channel name.
  std::vector<std::pair<std::string, std::string>> lr_pair_names;
  std::vector<std::pair<std::string, std::string>> fp_pair_names;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

RunConfig load_config_file(const std::filesystem::path& path);

// FNV-1a of the canonical config dump, as fixed-width hex.
std::string config_hash(const RunConfig& cfg);

// Writes the resolved config (plus tool version) beside a command's outputs.
void write_config_echo(const RunConfig& cfg);

// Commands; each returns the process exit code (0 ok, 1 data/validation
// error, 2 config error).
int run_validate(const RunConfig& cfg);
int run_build_adjacency(const RunConfig& cfg);
int run_train(const RunConfig& cfg);
int run_evaluate(const RunConfig& cfg);
int run_ablate(const RunConfig& cfg, const std::string& axis);
int run_report(const RunConfig& cfg);
int run_synth(const RunConfig& cfg);

}  // namespace mgn::cli
