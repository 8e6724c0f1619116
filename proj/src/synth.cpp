#include "mgn/synth.hpp"

#include <cmath>

#include "mgn/rng.hpp"

namespace mgn {

const std::vector<std::string>& montage22_names() {
  static const std::vector<std::string> names = {
      "Fz",  "FC3", "FC1", "FCz", "FC2", "FC4", "C5",  "C3",  "C1",  "Cz",  "C2",
      "C4",  "C6",  "CP3", "CP1", "CPz", "CP2", "CP4", "P1",  "Pz",  "P2",  "POz"};
  return names;
}

TrialSet make_separable_trialset(std::size_t n_trials, std::uint64_t seed, double fs,
                                 double noise_std) {
  // Two carrier frequencies per class, each landing in a different slice of
  // the 4-40 Hz range.
  static const double carriers[4][2] = {{6.0, 24.0}, {10.0, 30.0}, {14.0, 36.0}, {18.0, 8.0}};

  Rng rng(seed);
  TrialSet set;
  set.fs = fs;
  set.channel_names = montage22_names();
  set.class_names = {"left_hand", "right_hand", "feet", "tongue"};

  const std::size_t n_ch = set.channel_names.size();
  const std::size_t t_len = trial_window_samples(fs);

  for (std::size_t i = 0; i < n_trials; ++i) {
    Trial trial;
    trial.label = static_cast<int>(i % 4);
    trial.subject_id = static_cast<int>(i % 9);
    trial.samples = Matrix(n_ch, t_len);

    const double* f = carriers[trial.label];
    const double phase0 = rng.uniform(0.0, 2.0 * M_PI);
    const double phase1 = rng.uniform(0.0, 2.0 * M_PI);
    const double amp = 2.0 + rng.uniform();

    for (std::size_t ch = 0; ch < n_ch; ++ch) {
      // Class-dependent spatial profile keeps channels informative but
      // distinct.
      const double w0 =
          0.5 + 0.5 * std::sin(0.7 * static_cast<double>(ch) + trial.label);
      const double w1 =
          0.5 + 0.5 * std::cos(0.4 * static_cast<double>(ch) + 2.0 * trial.label);
      for (std::size_t t = 0; t < t_len; ++t) {
        const double time = static_cast<double>(t) / fs;
        double v = amp * w0 * std::sin(2.0 * M_PI * f[0] * time + phase0) +
                   amp * w1 * std::sin(2.0 * M_PI * f[1] * time + phase1) +
                   noise_std * rng.normal();
        trial.samples(ch, t) = v;
      }
    }
    set.trials.push_back(std::move(trial));
  }
  quantize_to_float32(set);
  return set;
}

}  // namespace mgn
