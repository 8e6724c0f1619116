#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mgn/tensor.hpp"

namespace mgn {

// Trial window length in seconds (500 ms pre-cue + 4 s post-cue).
inline constexpr double kTrialSeconds = 4.5;
inline constexpr double kPreCueSeconds = 0.5;

struct Trial {
  Matrix samples;  // channels x time, microvolts
  int label = 0;   // class index in [0, n_classes)
  int subject_id = 0;
};

struct TrialSet {
  std::vector<Trial> trials;
  double fs = 0.0;
  std::vector<std::string> channel_names;
  std::vector<std::string> class_names;

  std::size_t n_channels() const { return channel_names.size(); }
  std::size_t n_samples() const { return trials.empty() ? 0 : trials[0].samples.cols(); }
};

struct ValidationIssue {
  int trial_index;  // -1 for manifest-level problems
  std::string message;
};

// Expected sample count of a cue-aligned trial window.
std::size_t trial_window_samples(double fs);

// Reads a dataset from a JSON manifest (fs, n_channels, channel_names,
// classes, trials[{path,label,subject}]) plus one raw little-endian float32
// file per trial, row-major channels x time. Throws std::runtime_error with
// the offending trial index on the first problem found.
TrialSet load_dataset(const std::filesystem::path& manifest_path);

// Same checks as load_dataset but collects every problem instead of
// throwing. Returns an empty list for a clean dataset.
std::vector<ValidationIssue> validate_dataset(const std::filesystem::path& manifest_path);

// Writes manifest + per-trial raw files under the manifest's directory.
// Samples are stored as float32; values already representable in float32
// round-trip bit-exactly through load_dataset.
void save_dataset(const TrialSet& set, const std::filesystem::path& manifest_path);

// Zero-phase 4th-order Butterworth band-pass applied per channel.
Trial bandpass_filter(const Trial& trial, double lo_hz, double hi_hz, double fs);
Matrix bandpass_filter(const Matrix& samples, double lo_hz, double hi_hz, double fs);
TrialSet bandpass_filter(const TrialSet& set, double lo_hz, double hi_hz);

// Cuts the cue-aligned window [cue - 0.5s, cue + 4.0s) from a continuous
// multichannel recording.
Matrix window_trial(const Matrix& continuous, std::size_t cue_sample, double fs);

// Rounds every sample to its nearest float32 value (the on-disk precision).
void quantize_to_float32(TrialSet& set);

}  // namespace mgn
