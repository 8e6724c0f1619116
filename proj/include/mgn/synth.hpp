#pragma once

#include <cstdint>

#include "mgn/ingest.hpp"

namespace mgn {

// Synthetic 4-class motor-imagery-like dataset: every class drives a
// distinct pair of oscillation frequencies with a class-specific spatial
// amplitude profile over the 22-channel montage, plus broadband noise.
// Labels cycle 0..3 so classes stay balanced.
TrialSet make_separable_trialset(std::size_t n_trials, std::uint64_t seed, double fs = 250.0,
                                 double noise_std = 0.5);

// Channel names of the 22-electrode montage (the order used throughout).
const std::vector<std::string>& montage22_names();

}  // namespace mgn
