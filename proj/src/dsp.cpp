#include "mgn/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>

namespace mgn::dsp {

namespace {

using cplx = std::complex<double>;

// Polynomial coefficients (descending degree) from roots.
std::vector<double> poly_from_roots(const std::vector<cplx>& roots) {
  std::vector<cplx> c(roots.size() + 1, cplx(0.0, 0.0));
  c[0] = 1.0;
  for (std::size_t i = 0; i < roots.size(); ++i)
    for (std::size_t j = i + 1; j > 0; --j) c[j] -= roots[i] * c[j - 1];
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i].real();
  return out;
}

// Gaussian elimination with partial pivoting; A row-major n*n.
std::vector<double> solve_linear(std::vector<double> A, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    double best = std::fabs(A[col * n + col]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double v = std::fabs(A[r * n + col]);
      if (v > best) { best = v; piv = r; }
    }
    if (best == 0.0) throw std::runtime_error("solve_linear: singular system");
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(A[col * n + c], A[piv * n + c]);
      std::swap(b[col], b[piv]);
    }
    const double inv = 1.0 / A[col * n + col];
    for (std::size_t c = col; c < n; ++c) A[col * n + c] *= inv;
    b[col] *= inv;
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = A[r * n + col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) A[r * n + c] -= f * A[col * n + c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t r = n; r-- > 0;) {
    double s = b[r];
    for (std::size_t c = r + 1; c < n; ++c) s -= A[r * n + c] * x[c];
    x[r] = s;
  }
  return x;
}

std::size_t tf_order(const FilterCoeffs& f) {
  return std::max(f.b.size(), f.a.size()) - 1;
}

}  // namespace

FilterCoeffs butter_bandpass(int order, double lo_hz, double hi_hz, double fs_hz) {
  if (order <= 0) throw std::invalid_argument("butter_bandpass: order must be positive");
  if (!(0.0 < lo_hz && lo_hz < hi_hz && hi_hz < 0.5 * fs_hz))
    throw std::invalid_argument("butter_bandpass: need 0 < lo < hi < fs/2");

  const double fs2 = 2.0 * fs_hz;
  const double w1 = fs2 * std::tan(M_PI * lo_hz / fs_hz);  // prewarped edges
  const double w2 = fs2 * std::tan(M_PI * hi_hz / fs_hz);
  const double w0 = std::sqrt(w1 * w2);
  const double bw = w2 - w1;

  // Analog low-pass prototype poles on the unit circle.
  std::vector<cplx> poles(order);
  for (int k = 0; k < order; ++k) {
    const double ang = M_PI * (2.0 * k + order + 1.0) / (2.0 * order);
    poles[k] = std::exp(cplx(0.0, ang));
  }

  // Low-pass -> band-pass: each pole splits into a conjugate pair; `order`
  // zeros appear at the origin.
  std::vector<cplx> bp_poles;
  bp_poles.reserve(2 * poles.size());
  for (const cplx& p : poles) {
    const cplx t = 0.5 * bw * p;
    const cplx r = std::sqrt(t * t - w0 * w0);
    bp_poles.push_back(t + r);
    bp_poles.push_back(t - r);
  }
  std::vector<cplx> bp_zeros(order, cplx(0.0, 0.0));

  // Bilinear transform; the band-pass zeros at infinity map to z = -1.
  std::vector<cplx> z, p;
  for (const cplx& s : bp_zeros) z.push_back((fs2 + s) / (fs2 - s));
  for (const cplx& s : bp_poles) p.push_back((fs2 + s) / (fs2 - s));
  for (int i = 0; i < order; ++i) z.push_back(cplx(-1.0, 0.0));

  FilterCoeffs f;
  f.b = poly_from_roots(z);
  f.a = poly_from_roots(p);

  const double a0 = f.a[0];
  if (a0 == 0.0) throw std::runtime_error("butter_bandpass: degenerate design");
  for (double& v : f.b) v /= a0;
  for (double& v : f.a) v /= a0;

  // Unit gain at the warped band center.
  const double wc = 2.0 * std::atan(w0 / fs2);
  cplx num(0.0, 0.0), den(0.0, 0.0);
  for (std::size_t k = 0; k < f.b.size(); ++k)
    num += f.b[k] * std::exp(cplx(0.0, -wc * static_cast<double>(k)));
  for (std::size_t k = 0; k < f.a.size(); ++k)
    den += f.a[k] * std::exp(cplx(0.0, -wc * static_cast<double>(k)));
  const double gain = std::abs(num / den);
  if (gain <= 0.0) throw std::runtime_error("butter_bandpass: zero center gain");
  for (double& v : f.b) v /= gain;
  return f;
}

std::pair<std::vector<double>, std::vector<double>> lfilter(
    const FilterCoeffs& f, const std::vector<double>& x, const std::vector<double>* zi) {
  const std::size_t order = tf_order(f);
  std::vector<double> b = f.b, a = f.a;
  b.resize(order + 1, 0.0);
  a.resize(order + 1, 0.0);

  std::vector<double> z(order, 0.0);
  if (zi) {
    if (zi->size() != order) throw std::invalid_argument("lfilter: zi size mismatch");
    z = *zi;
  }

  std::vector<double> y(x.size(), 0.0);
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double xi = x[k];
    const double yi = b[0] * xi + (order ? z[0] : 0.0);
    y[k] = yi;
    for (std::size_t i = 0; i + 1 < order; ++i)
      z[i] = z[i + 1] + b[i + 1] * xi - a[i + 1] * yi;
    if (order) z[order - 1] = b[order] * xi - a[order] * yi;
  }
  return {std::move(y), std::move(z)};
}

std::vector<double> lfilter_zi(const FilterCoeffs& f) {
  const std::size_t n = tf_order(f);
  if (n == 0) return {};
  std::vector<double> b = f.b, a = f.a;
  b.resize(n + 1, 0.0);
  a.resize(n + 1, 0.0);

  // Solve (I - A^T) zi = B with A the companion matrix of `a`.
  std::vector<double> IA(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    IA[i * n + i] += 1.0;
    IA[i * n + 0] += a[i + 1];
    if (i + 1 < n) IA[i * n + (i + 1)] -= 1.0;
  }
  std::vector<double> B(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) B[i] = b[i + 1] - a[i + 1] * b[0];
  return solve_linear(std::move(IA), std::move(B));
}

std::vector<double> filtfilt(const FilterCoeffs& f, const std::vector<double>& x, int pad) {
  if (x.empty()) return {};
  const std::size_t order = tf_order(f);
  const std::size_t edge = pad < 0 ? 3 * order : static_cast<std::size_t>(pad);
  if (edge > 0 && x.size() <= edge)
    throw std::invalid_argument("filtfilt: signal shorter than pad length");

  // Point-reflect about both endpoints.
  std::vector<double> ext;
  ext.reserve(x.size() + 2 * edge);
  for (std::size_t i = edge; i >= 1; --i) ext.push_back(2.0 * x.front() - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= edge; ++i) ext.push_back(2.0 * x.back() - x[x.size() - 1 - i]);

  const std::vector<double> zi = lfilter_zi(f);

  std::vector<double> zf = zi;
  for (double& v : zf) v *= ext.front();
  std::vector<double> y = lfilter(f, ext, zi.empty() ? nullptr : &zf).first;

  std::reverse(y.begin(), y.end());
  std::vector<double> zb = zi;
  for (double& v : zb) v *= y.front();
  std::vector<double> y2 = lfilter(f, y, zi.empty() ? nullptr : &zb).first;
  std::reverse(y2.begin(), y2.end());

  return std::vector<double>(y2.begin() + edge, y2.end() - edge);
}

std::pair<std::vector<double>, std::vector<double>> periodogram(
    const std::vector<double>& x, double fs_hz) {
  const std::size_t n = x.size();
  if (n == 0) throw std::invalid_argument("periodogram: empty input");
  const std::size_t nbins = n / 2 + 1;

  std::vector<double> freqs(nbins), power(nbins);
  for (std::size_t k = 0; k < nbins; ++k) {
    double re = 0.0, im = 0.0;
    const double w = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n);
    for (std::size_t t = 0; t < n; ++t) {
      const double ang = w * static_cast<double>(t);
      re += x[t] * std::cos(ang);
      im -= x[t] * std::sin(ang);
    }
    const double mag2 = (re * re + im * im) / (static_cast<double>(n) * static_cast<double>(n));
    const bool shared = (k == 0) || (2 * k == n);  // DC and Nyquist have no mirror
    power[k] = shared ? mag2 : 2.0 * mag2;
    freqs[k] = fs_hz * static_cast<double>(k) / static_cast<double>(n);
  }
  return {std::move(freqs), std::move(power)};
}

double band_power(const std::vector<double>& freqs, const std::vector<double>& power,
                  double lo_hz, double hi_hz, double fs_hz, std::size_t n_samples) {
  if (!(lo_hz < hi_hz)) throw std::invalid_argument("band_power: need lo < hi");
  const double df = fs_hz / static_cast<double>(n_samples);
  double total = 0.0;
  for (std::size_t k = 0; k < freqs.size(); ++k) {
    const double cell_lo = freqs[k] - 0.5 * df;
    const double cell_hi = freqs[k] + 0.5 * df;
    const double ov = std::min(cell_hi, hi_hz) - std::max(cell_lo, lo_hz);
    if (ov <= 0.0) continue;
    total += power[k] * (ov / df);
  }
  return total;
}

}  // namespace mgn::dsp
