#pragma once

#include <utility>
#include <vector>

namespace mgn::dsp {

// IIR transfer function in b/a form, a[0] normalized to 1.
struct FilterCoeffs {
  std::vector<double> b;
  std::vector<double> a;
};

// Digital Butterworth band-pass of the given analog prototype order,
// designed via the bilinear transform. The resulting transfer function has
// order 2*order (2*order+1 coefficients per side).
FilterCoeffs butter_bandpass(int order, double lo_hz, double hi_hz, double fs_hz);

// Single-pass direct-form-II-transposed filter. Returns the output and the
// final state; zi (length max(len(b),len(a))-1) seeds the state when given.
std::pair<std::vector<double>, std::vector<double>> lfilter(
    const FilterCoeffs& f, const std::vector<double>& x,
    const std::vector<double>* zi = nullptr);

// Steady-state step-response initial conditions (removes startup transients
// when scaled by the first sample).
std::vector<double> lfilter_zi(const FilterCoeffs& f);

// Zero-phase forward-backward filtering. The input is extended on both ends
// by `pad` samples of point-reflected signal before filtering; pad < 0 picks
// the default of 3x the transfer-function order.
std::vector<double> filtfilt(const FilterCoeffs& f, const std::vector<double>& x,
                             int pad = -1);

// One-sided periodogram of x at sampling rate fs. Returns (freqs, power)
// where sum(power) equals mean(x^2); freqs[k] = k*fs/n for k in [0, n/2].
std::pair<std::vector<double>, std::vector<double>> periodogram(
    const std::vector<double>& x, double fs_hz);

// Integrated periodogram power over [lo, hi). Each bin is treated as a cell
// of width fs/n centered on its frequency and contributes the fractional
// overlap of its cell with the band, so disjoint bands covering [0, fs/2]
// partition the total power.
double band_power(const std::vector<double>& freqs, const std::vector<double>& power,
                  double lo_hz, double hi_hz, double fs_hz, std::size_t n_samples);

}  // namespace mgn::dsp
