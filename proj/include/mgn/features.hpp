#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mgn/ingest.hpp"
#include "mgn/tensor.hpp"

namespace mgn {

// Floor for variances and ratio denominators.
inline constexpr double kEps = 1e-8;

enum class FeatureKind { DE, PSD, DASM, RASM, ASM, DCAU };

std::string to_string(FeatureKind k);
FeatureKind feature_kind_from_string(const std::string& s);
const std::vector<FeatureKind>& all_feature_kinds();

// Per-trial feature array: nodes x feature channels x time segments.
struct FeatureTensor {
  Tensor3 values;
  FeatureKind kind = FeatureKind::DE;
};

// Electrode pairings for the asymmetry features: left/right mirrored pairs
// and frontal/posterior pairs.
struct MontagePairs {
  std::vector<std::pair<std::size_t, std::size_t>> lr_pairs;
  std::vector<std::pair<std::size_t, std::size_t>> fp_pairs;
};

// Default pairings for the 22-channel motor-imagery montage, resolved
// against the dataset's channel names. Throws if a required name is absent.
MontagePairs default_montage_pairs(const std::vector<std::string>& channel_names);

// 11 equal-width bands partitioning [4, 40) Hz.
std::vector<std::pair<double, double>> default_bands();

// Gaussian differential entropy of a segment in nats:
// 0.5 * ln(2*pi*e * max(var, eps)) with the unbiased sample variance.
double differential_entropy(const std::vector<double>& segment);

// Band powers of one trial: channels x bands x segments. Each entry is the
// integrated periodogram power of that segment over the band.
Tensor3 band_powers(const Trial& trial, const std::vector<std::pair<double, double>>& bands,
                    double seg_seconds, double fs);

// Differential entropy of the per-band power, treating the band power as a
// variance: 0.5 * ln(2*pi*e * max(power, eps)).
FeatureTensor band_de_features(const Trial& trial,
                               const std::vector<std::pair<double, double>>& bands,
                               double seg_seconds, double fs);

FeatureTensor psd_features(const Trial& trial,
                           const std::vector<std::pair<double, double>>& bands,
                           double seg_seconds, double fs);

// Concatenates the feature axis with itself: N x F x T -> N x 2F x T.
FeatureTensor double_fold(const FeatureTensor& features);

// Asymmetry features from a differential-entropy tensor. Output nodes are
// the pairs: DASM = left - right, RASM = left / right (denominator floored),
// ASM = [DASM; RASM] along the feature axis, DCAU = frontal - posterior.
FeatureTensor asym_features(const FeatureTensor& de, const MontagePairs& pairs,
                            FeatureKind kind);

// Per-(node, feature) affine map fitted on a training set: mean 0, variance
// 1 with the population variance. Cells with variance below eps pass through
// unchanged.
struct ScalerState {
  Matrix mean;   // nodes x features
  Matrix scale;  // nodes x features, multiplicative
};

ScalerState fit_scaler(const std::vector<FeatureTensor>& training);
FeatureTensor apply_scaler(const ScalerState& state, const FeatureTensor& t);
std::vector<FeatureTensor> apply_scaler(const ScalerState& state,
                                        const std::vector<FeatureTensor>& ts);

// Feature tensors on disk follow the dataset convention: a JSON manifest
// (kind, dims, per-tensor file) beside headerless little-endian float32
// files, row-major over (node, feature, segment).
void save_features(const std::vector<FeatureTensor>& tensors,
                   const std::filesystem::path& manifest_path);
std::vector<FeatureTensor> load_features(const std::filesystem::path& manifest_path);

}  // namespace mgn
