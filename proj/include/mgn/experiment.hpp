#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mgn/features.hpp"
#include "mgn/graph.hpp"
#include "mgn/ingest.hpp"
#include "mgn/training.hpp"

namespace mgn {

// Feature-extraction and graph-construction settings shared by the CLI
// commands and the cross-validation driver.
struct PipelineConfig {
  FeatureKind feature_kind = FeatureKind::DE;
  AdjacencyKind adjacency_kind = AdjacencyKind::MI;
  std::size_t mi_bins = 16;
  std::size_t knn_k = 4;
  std::size_t ed_k = 4;
  double random_density = 0.2;
  std::string mi_source = "signals";  // "signals" or "features"
  double segment_seconds = 0.5;
  double bandpass_lo = 4.0;
  double bandpass_hi = 40.0;
  std::vector<std::pair<double, double>> bands;  // empty -> 11 equal-width bands
  std::optional<MontagePairs> pairs;             // empty -> montage defaults
  std::optional<Montage2D> montage;              // empty -> built-in electrode table

  std::vector<std::pair<double, double>> resolved_bands() const;
};

// Per-trial feature tensors for the configured kind. `filtered` must already
// be band-passed. DE and PSD are folded to 2x11 feature channels; the
// asymmetry kinds stay at 11 and use electrode pairs as nodes.
std::vector<FeatureTensor> build_features(const TrialSet& filtered, const PipelineConfig& pc);

// Adjacency over the feature nodes, fitted on the training split only.
Adjacency build_adjacency(const PipelineConfig& pc, const TrialSet& filtered_train,
                          const std::vector<FeatureTensor>& train_features,
                          const std::vector<std::string>& channel_names, std::uint64_t seed);

struct FoldOutput {
  Metrics val_metrics;
  double train_accuracy = 0.0;  // final parameters, float32-quantized
  History history;
  ModelParams params;
  ModelParams best_params;
  std::size_t best_epoch = 0;
  Adjacency adjacency;
  ScalerState scaler;
};

struct CvResult {
  std::vector<FoldOutput> folds;
  Metrics mean;  // metric means; confusion summed over folds
};

// Full protocol: band-pass, per-trial features, k-fold split, per-fold
// scaler + adjacency fitted on the training split, training, evaluation.
CvResult run_cv(const TrialSet& raw, const PipelineConfig& pc, const TrainConfig& tc,
                const Hyper& hyper);

// Rounds every parameter through float32 (the checkpoint precision), so
// in-memory evaluation matches a saved-then-loaded model exactly.
void quantize_params_float32(ModelParams& params);

nlohmann::json metrics_to_json(const Metrics& m);
Metrics metrics_from_json(const nlohmann::json& j);

void write_history_csv(const std::filesystem::path& path, const History& h);

// metrics.json: per-fold metrics + mean + provenance. Deterministic bytes
// for a fixed result.
void write_metrics_json(const std::filesystem::path& path, const CvResult& cv,
                        const std::string& version, const std::string& config_hash);

// Pipeline state a checkpoint needs to score new data: feature/adjacency
// settings, fitted scaler, adjacency weights, channel names.
nlohmann::json pipeline_state_json(const PipelineConfig& pc, const ScalerState& scaler,
                                   const Adjacency& adjacency,
                                   const std::vector<std::string>& channel_names);

struct PipelineState {
  PipelineConfig config;
  ScalerState scaler;
  Adjacency adjacency;
  std::vector<std::string> channel_names;
};

PipelineState pipeline_state_from_json(const nlohmann::json& j);

}  // namespace mgn
