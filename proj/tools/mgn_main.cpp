#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mgn/cli.hpp"

namespace {

using mgn::cli::RunConfig;

// Flag values land here; only flags the user actually passed override the
// config file.
struct FlagValues {
  std::string config_file, data, out, checkpoint;
  std::uint64_t seed = 0;
  double learning_rate = 0, flood_level = 0, dropout = 0, random_density = 0;
  double segment_seconds = 0, bandpass_lo = 0, bandpass_hi = 0;
  std::size_t batch_size = 0, epochs = 0, folds = 0, mi_bins = 0, knn_k = 0, ed_k = 0;
  std::size_t n_blocks = 0, cheb_order = 0, temporal_kernel = 0, depth_max = 0, n_trials = 0;
  std::vector<std::size_t> channels;
  std::string feature, adjacency, mi_source, attention_combine;
};

void add_common_flags(CLI::App* cmd, FlagValues& v) {
  cmd->add_option("--config", v.config_file, "JSON config file; flags override its values");
  cmd->add_option("--data", v.data, "dataset manifest path");
  cmd->add_option("--out", v.out, "output directory");
  cmd->add_option("--seed", v.seed, "master seed");
  cmd->add_option("--learning-rate", v.learning_rate, "Adam learning rate");
  cmd->add_option("--batch-size", v.batch_size, "minibatch size");
  cmd->add_option("--epochs", v.epochs, "training epochs");
  cmd->add_option("--flood-level", v.flood_level, "loss flooding level");
  cmd->add_option("--dropout", v.dropout, "dropout rate");
  cmd->add_option("--folds", v.folds, "cross-validation folds");
  cmd->add_option("--feature", v.feature, "feature kind (DE|PSD|DASM|RASM|ASM|DCAU)");
  cmd->add_option("--adjacency", v.adjacency,
                  "adjacency kind (MI|KNN|ED|RANDOM|MUL_KNN|MUL_ED)");
  cmd->add_option("--mi-bins", v.mi_bins, "histogram bins for mutual information");
  cmd->add_option("--mi-source", v.mi_source, "mutual information input (signals|features)");
  cmd->add_option("--knn-k", v.knn_k, "neighbours for KNN graphs");
  cmd->add_option("--ed-k", v.ed_k, "neighbours for electrode-distance graphs");
  cmd->add_option("--random-density", v.random_density, "edge density for random graphs");
  cmd->add_option("--segment-seconds", v.segment_seconds, "feature segment length");
  cmd->add_option("--bandpass-lo", v.bandpass_lo, "band-pass low edge (Hz)");
  cmd->add_option("--bandpass-hi", v.bandpass_hi, "band-pass high edge (Hz)");
  cmd->add_option("--n-blocks", v.n_blocks, "network depth");
  cmd->add_option("--channels", v.channels, "channel widths per block");
  cmd->add_option("--cheb-order", v.cheb_order, "Chebyshev filter order");
  cmd->add_option("--temporal-kernel", v.temporal_kernel, "temporal kernel width (odd)");
  cmd->add_option("--attention-combine", v.attention_combine,
                  "spatial attention use (product|substitute)");
  cmd->add_option("--depth-max", v.depth_max, "deepest setting of the depth sweep");
  cmd->add_option("--n-trials", v.n_trials, "synthetic trial count");
  cmd->add_option("--checkpoint", v.checkpoint, "model checkpoint path");
}

RunConfig assemble(const CLI::App* cmd, const FlagValues& v) {
  RunConfig cfg;
  if (cmd->count("--config")) cfg = mgn::cli::load_config_file(v.config_file);

  auto set = [&](const char* flag, auto fn) {
    if (cmd->count(flag)) fn();
  };
  set("--data", [&] { cfg.data = v.data; });
  set("--out", [&] { cfg.out = v.out; });
  set("--checkpoint", [&] { cfg.checkpoint = v.checkpoint; });
  set("--seed", [&] { cfg.train.seed = v.seed; });
  set("--learning-rate", [&] { cfg.train.learning_rate = v.learning_rate; });
  set("--batch-size", [&] { cfg.train.batch_size = v.batch_size; });
  set("--epochs", [&] { cfg.train.epochs = v.epochs; });
  set("--flood-level", [&] { cfg.train.flood_level = v.flood_level; });
  set("--dropout", [&] {
    cfg.train.dropout = v.dropout;
    cfg.hyper.dropout = v.dropout;
  });
  set("--folds", [&] { cfg.train.folds = v.folds; });
  set("--feature",
      [&] { cfg.pipeline.feature_kind = mgn::feature_kind_from_string(v.feature); });
  set("--adjacency",
      [&] { cfg.pipeline.adjacency_kind = mgn::adjacency_kind_from_string(v.adjacency); });
  set("--mi-bins", [&] { cfg.pipeline.mi_bins = v.mi_bins; });
  set("--mi-source", [&] {
    if (v.mi_source != "signals" && v.mi_source != "features")
      throw std::invalid_argument("--mi-source must be 'signals' or 'features'");
    cfg.pipeline.mi_source = v.mi_source;
  });
  set("--knn-k", [&] { cfg.pipeline.knn_k = v.knn_k; });
  set("--ed-k", [&] { cfg.pipeline.ed_k = v.ed_k; });
  set("--random-density", [&] { cfg.pipeline.random_density = v.random_density; });
  set("--segment-seconds", [&] { cfg.pipeline.segment_seconds = v.segment_seconds; });
  set("--bandpass-lo", [&] { cfg.pipeline.bandpass_lo = v.bandpass_lo; });
  set("--bandpass-hi", [&] { cfg.pipeline.bandpass_hi = v.bandpass_hi; });
  set("--n-blocks", [&] {
    cfg.hyper.n_blocks = v.n_blocks;
    cfg.hyper.channels.assign(v.n_blocks, cfg.hyper.channels.front());
  });
  set("--channels", [&] {
    cfg.hyper.channels = v.channels;
    cfg.hyper.n_blocks = v.channels.size();
  });
  set("--cheb-order", [&] { cfg.hyper.cheb_order = v.cheb_order; });
  set("--temporal-kernel", [&] { cfg.hyper.temporal_kernel = v.temporal_kernel; });
  set("--attention-combine", [&] {
    cfg.hyper.attention_combine = mgn::attention_combine_from_string(v.attention_combine);
  });
  set("--depth-max", [&] { cfg.depth_max = v.depth_max; });
  set("--n-trials", [&] { cfg.n_synth_trials = v.n_trials; });
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MutualGraphNet: mutual-information graph convolution for motor-imagery EEG"};
  app.require_subcommand(1);

  FlagValues vals[7];
  std::string ablate_axis;

  CLI::App* c_validate = app.add_subcommand("validate", "check a dataset manifest");
  add_common_flags(c_validate, vals[0]);
  CLI::App* c_build = app.add_subcommand("build-adjacency", "fit and save a graph");
  add_common_flags(c_build, vals[1]);
  CLI::App* c_train = app.add_subcommand("train", "cross-validated training");
  add_common_flags(c_train, vals[2]);
  CLI::App* c_eval = app.add_subcommand("evaluate", "score a dataset with a checkpoint");
  add_common_flags(c_eval, vals[3]);
  CLI::App* c_ablate = app.add_subcommand("ablate", "sweep one experiment axis");
  c_ablate->add_option("axis", ablate_axis, "adjacency | feature | depth")->required();
  add_common_flags(c_ablate, vals[4]);
  CLI::App* c_report = app.add_subcommand("report", "summarize a run directory");
  add_common_flags(c_report, vals[5]);
  CLI::App* c_synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common_flags(c_synth, vals[6]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) ? 2 : 0;
  }

  try {
    if (c_validate->parsed()) return mgn::cli::run_validate(assemble(c_validate, vals[0]));
    if (c_build->parsed()) return mgn::cli::run_build_adjacency(assemble(c_build, vals[1]));
    if (c_train->parsed()) return mgn::cli::run_train(assemble(c_train, vals[2]));
    if (c_eval->parsed()) return mgn::cli::run_evaluate(assemble(c_eval, vals[3]));
    if (c_ablate->parsed()) return mgn::cli::run_ablate(assemble(c_ablate, vals[4]), ablate_axis);
    if (c_report->parsed()) return mgn::cli::run_report(assemble(c_report, vals[5]));
    if (c_synth->parsed()) return mgn::cli::run_synth(assemble(c_synth, vals[6]));
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
