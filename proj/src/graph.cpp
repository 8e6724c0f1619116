#include "mgn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "mgn/rng.hpp"

namespace mgn {

namespace {

std::vector<std::size_t> bin_indices(const std::vector<double>& x, std::size_t bins) {
  double lo = x[0], hi = x[0];
  for (double v : x) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<std::size_t> idx(x.size(), 0);
  if (hi == lo) return idx;  // all mass in bin 0
  const double scale = static_cast<double>(bins) / (hi - lo);
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto b = static_cast<std::size_t>((x[i] - lo) * scale);
    idx[i] = std::min(b, bins - 1);
  }
  return idx;
}

double entropy_of_counts(const std::vector<double>& counts, double total) {
  double h = 0.0;
  for (double c : counts) {
    if (c <= 0.0) continue;
    const double p = c / total;
    h -= p * std::log2(p);
  }
  return h;
}

// Deterministic k-nearest by (distance, index), self excluded.
Adjacency knn_from_distances(const Matrix& dist, std::size_t k, AdjacencyKind kind) {
  const std::size_t n = dist.rows();
  if (k >= n) throw std::invalid_argument("knn: need k < node count");
  Adjacency a;
  a.kind = kind;
  a.weights = Matrix(n, n);
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.emplace_back(dist(i, j), j);
    std::sort(order.begin(), order.end());
    for (std::size_t r = 0; r < k; ++r) {
      const std::size_t j = order[r].second;
      a.weights(i, j) = 1.0;
      a.weights(j, i) = 1.0;
    }
  }
  return a;
}

std::vector<double> node_series(const FeatureTensor& t, std::size_t node) {
  std::vector<double> v;
  v.reserve(t.values.dim1() * t.values.dim2());
  for (std::size_t f = 0; f < t.values.dim1(); ++f)
    for (std::size_t s = 0; s < t.values.dim2(); ++s) v.push_back(t.values(node, f, s));
  return v;
}

template <typename GetSeries>
Adjacency mean_mi_adjacency(std::size_t n_nodes, std::size_t n_trials, std::size_t bins,
                            GetSeries&& series) {
  if (n_trials == 0) throw std::invalid_argument("mi_adjacency: empty input");
  if (n_nodes < 2) throw std::invalid_argument("mi_adjacency: need at least 2 nodes");
  Adjacency a;
  a.kind = AdjacencyKind::MI;
  a.weights = Matrix(n_nodes, n_nodes);
  for (std::size_t tr = 0; tr < n_trials; ++tr) {
    std::vector<std::vector<double>> sigs(n_nodes);
    for (std::size_t i = 0; i < n_nodes; ++i) sigs[i] = series(tr, i);
    for (std::size_t i = 0; i < n_nodes; ++i)
      for (std::size_t j = i + 1; j < n_nodes; ++j) {
        const double mi = mutual_information(sigs[i], sigs[j], bins);
        a.weights(i, j) += mi;
        a.weights(j, i) += mi;
      }
  }
  for (double& w : a.weights.values()) w /= static_cast<double>(n_trials);
  return a;
}

}  // namespace

std::string to_string(AdjacencyKind k) {
  switch (k) {
    case AdjacencyKind::MI: return "MI";
    case AdjacencyKind::KNN: return "KNN";
    case AdjacencyKind::ED: return "ED";
    case AdjacencyKind::RANDOM: return "RANDOM";
    case AdjacencyKind::MUL_KNN: return "MUL_KNN";
    case AdjacencyKind::MUL_ED: return "MUL_ED";
  }
  return "?";
}

AdjacencyKind adjacency_kind_from_string(const std::string& s) {
  for (AdjacencyKind k : all_adjacency_kinds())
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown adjacency kind '" + s + "'");
}

const std::vector<AdjacencyKind>& all_adjacency_kinds() {
  static const std::vector<AdjacencyKind> kinds = {
      AdjacencyKind::MI,     AdjacencyKind::KNN,     AdjacencyKind::ED,
      AdjacencyKind::RANDOM, AdjacencyKind::MUL_KNN, AdjacencyKind::MUL_ED};
  return kinds;
}

void validate_adjacency(const Adjacency& a) {
  const Matrix& w = a.weights;
  if (w.rows() != w.cols()) throw std::invalid_argument("adjacency: not square");
  for (std::size_t i = 0; i < w.rows(); ++i) {
    if (w(i, i) != 0.0) throw std::invalid_argument("adjacency: nonzero diagonal");
    for (std::size_t j = 0; j < w.cols(); ++j) {
      if (w(i, j) < 0.0) throw std::invalid_argument("adjacency: negative weight");
      if (std::fabs(w(i, j) - w(j, i)) > 1e-12)
        throw std::invalid_argument("adjacency: not symmetric");
    }
  }
}

Montage2D builtin_montage(const std::vector<std::string>& channel_names) {
  // Schematic unit-disc layout of the 22-electrode grid, x to the right,
  // y to the front.
  static const std::vector<std::pair<std::string, std::pair<double, double>>> table = {
      {"Fz", {0.0, 0.6}},
      {"FC3", {-0.4, 0.3}}, {"FC1", {-0.2, 0.3}}, {"FCz", {0.0, 0.3}},
      {"FC2", {0.2, 0.3}},  {"FC4", {0.4, 0.3}},
      {"C5", {-0.6, 0.0}},  {"C3", {-0.4, 0.0}},  {"C1", {-0.2, 0.0}},
      {"Cz", {0.0, 0.0}},   {"C2", {0.2, 0.0}},   {"C4", {0.4, 0.0}},
      {"C6", {0.6, 0.0}},
      {"CP3", {-0.4, -0.3}}, {"CP1", {-0.2, -0.3}}, {"CPz", {0.0, -0.3}},
      {"CP2", {0.2, -0.3}},  {"CP4", {0.4, -0.3}},
      {"P1", {-0.2, -0.6}},  {"Pz", {0.0, -0.6}},  {"P2", {0.2, -0.6}},
      {"POz", {0.0, -0.8}}};

  Montage2D m;
  for (const std::string& name : channel_names) {
    auto it = std::find_if(table.begin(), table.end(),
                           [&](const auto& e) { return e.first == name; });
    if (it == table.end())
      throw std::invalid_argument("builtin_montage: no position for channel '" + name + "'");
    m.names.push_back(name);
    m.coords.push_back(it->second);
  }
  return m;
}

double histogram_entropy(const std::vector<double>& x, std::size_t bins) {
  if (x.empty()) throw std::invalid_argument("histogram_entropy: empty input");
  if (bins < 2) throw std::invalid_argument("histogram_entropy: need bins >= 2");
  std::vector<double> counts(bins, 0.0);
  for (std::size_t b : bin_indices(x, bins)) counts[b] += 1.0;
  return entropy_of_counts(counts, static_cast<double>(x.size()));
}

double mutual_information(const std::vector<double>& x, const std::vector<double>& y,
                          std::size_t bins) {
  if (x.size() != y.size()) throw std::invalid_argument("mutual_information: length mismatch");
  if (x.empty()) throw std::invalid_argument("mutual_information: empty input");
  if (bins < 2) throw std::invalid_argument("mutual_information: need bins >= 2");

  const std::vector<std::size_t> bx = bin_indices(x, bins);
  const std::vector<std::size_t> by = bin_indices(y, bins);

  std::vector<double> joint(bins * bins, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) joint[bx[i] * bins + by[i]] += 1.0;

  std::vector<double> mx(bins, 0.0), my(bins, 0.0);
  for (std::size_t i = 0; i < bins; ++i)
    for (std::size_t j = 0; j < bins; ++j) {
      mx[i] += joint[i * bins + j];
      my[j] += joint[i * bins + j];
    }

  const double total = static_cast<double>(x.size());
  const double hx = entropy_of_counts(mx, total);
  const double hy = entropy_of_counts(my, total);
  const double hxy = entropy_of_counts(joint, total);
  return std::max(0.0, hx + hy - hxy);
}

Adjacency mi_adjacency(const TrialSet& trials, std::size_t bins) {
  const std::size_t n = trials.n_channels();
  return mean_mi_adjacency(n, trials.trials.size(), bins,
                           [&](std::size_t tr, std::size_t ch) {
                             const Matrix& s = trials.trials[tr].samples;
                             std::vector<double> v(s.cols());
                             for (std::size_t t = 0; t < s.cols(); ++t) v[t] = s(ch, t);
                             return v;
                           });
}

Adjacency mi_adjacency(const std::vector<FeatureTensor>& features, std::size_t bins) {
  const std::size_t n = features.empty() ? 0 : features.front().values.dim0();
  return mean_mi_adjacency(n, features.size(), bins, [&](std::size_t tr, std::size_t node) {
    return node_series(features[tr], node);
  });
}

Matrix node_feature_vectors(const std::vector<FeatureTensor>& features) {
  if (features.empty()) throw std::invalid_argument("node_feature_vectors: empty input");
  const Tensor3& first = features.front().values;
  Matrix out(first.dim0(), first.dim1());
  const double count = static_cast<double>(features.size() * first.dim2());
  for (const auto& t : features) {
    check_shape(t.values.same_shape(first), "node_feature_vectors");
    for (std::size_t n = 0; n < first.dim0(); ++n)
      for (std::size_t f = 0; f < first.dim1(); ++f)
        for (std::size_t s = 0; s < first.dim2(); ++s) out(n, f) += t.values(n, f, s);
  }
  for (double& v : out.values()) v /= count;
  return out;
}

Adjacency knn_adjacency(const Matrix& node_vectors, std::size_t k) {
  const std::size_t n = node_vectors.rows();
  Matrix dist(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (std::size_t f = 0; f < node_vectors.cols(); ++f) {
        const double d = node_vectors(i, f) - node_vectors(j, f);
        d2 += d * d;
      }
      dist(i, j) = dist(j, i) = std::sqrt(d2);
    }
  return knn_from_distances(dist, k, AdjacencyKind::KNN);
}

Adjacency euclidean_adjacency(const Montage2D& montage, std::size_t k) {
  const std::size_t n = montage.coords.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto [x, y] = montage.coords[i];
    if (x * x + y * y > 1.0)
      throw std::invalid_argument("euclidean_adjacency: electrode outside the unit disc");
    for (std::size_t j = i + 1; j < n; ++j)
      if (montage.coords[i] == montage.coords[j])
        throw std::invalid_argument("euclidean_adjacency: coincident electrodes");
  }
  Matrix dist(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = montage.coords[i].first - montage.coords[j].first;
      const double dy = montage.coords[i].second - montage.coords[j].second;
      dist(i, j) = dist(j, i) = std::sqrt(dx * dx + dy * dy);
    }
  return knn_from_distances(dist, k, AdjacencyKind::ED);
}

Adjacency random_adjacency(std::size_t n, double density, std::uint64_t seed) {
  if (!(density > 0.0 && density <= 1.0))
    throw std::invalid_argument("random_adjacency: density must be in (0, 1]");
  Rng rng(seed);
  Adjacency a;
  a.kind = AdjacencyKind::RANDOM;
  a.weights = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng.bernoulli(density)) a.weights(i, j) = a.weights(j, i) = 1.0;
  return a;
}

Adjacency masked_mi(const Adjacency& base, const Adjacency& mi) {
  if (base.kind != AdjacencyKind::KNN && base.kind != AdjacencyKind::ED)
    throw std::invalid_argument("masked_mi: base must be KNN or ED");
  check_shape(base.weights.same_shape(mi.weights), "masked_mi");
  for (double w : base.weights.values())
    if (w != 0.0 && w != 1.0) throw std::invalid_argument("masked_mi: base must be binary");

  Adjacency out;
  out.kind = base.kind == AdjacencyKind::KNN ? AdjacencyKind::MUL_KNN : AdjacencyKind::MUL_ED;
  out.weights = Matrix(base.n(), base.n());
  for (std::size_t i = 0; i < base.weights.size(); ++i)
    out.weights.values()[i] = base.weights.values()[i] * mi.weights.values()[i];
  return out;
}

Matrix normalized_laplacian(const Adjacency& a) {
  validate_adjacency(a);
  const std::size_t n = a.n();
  std::vector<double> dinv_sqrt(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += a.weights(i, j);
    dinv_sqrt[i] = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  Matrix L = Matrix::identity(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      L(i, j) -= dinv_sqrt[i] * a.weights(i, j) * dinv_sqrt[j];
  return L;
}

double power_iteration_lambda_max(const Matrix& sym, double tol, std::size_t max_iters) {
  const std::size_t n = sym.rows();
  Rng rng(12345);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(0.5, 1.5);
  {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
  }

  double rayleigh = 0.0;
  double residual = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < max_iters; ++it) {
    std::vector<double> w(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) w[i] += sym(i, j) * v[j];
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;  // matrix annihilates the iterate

    rayleigh = 0.0;
    for (std::size_t i = 0; i < n; ++i) rayleigh += v[i] * w[i];
    residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = w[i] - rayleigh * v[i];
      residual += r * r;
    }
    residual = std::sqrt(residual);
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / norm;
    if (residual <= 1e-13 * std::max(1.0, std::fabs(rayleigh))) break;
  }

  if (residual > tol * std::max(1.0, std::fabs(rayleigh)))
    return 2.0;  // non-convergence: fall back to the spectral upper bound
  // Bias the estimate one tolerance step upward: an undershoot would push
  // the rescaled spectrum past 1, which the Chebyshev recurrence amplifies.
  return rayleigh * (1.0 + tol);
}

ChebBasis chebyshev_basis(const Matrix& laplacian, std::size_t order) {
  if (order < 1) throw std::invalid_argument("chebyshev_basis: need order >= 1");
  const std::size_t n = laplacian.rows();
  check_shape(laplacian.cols() == n, "chebyshev_basis: square input");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::fabs(laplacian(i, j) - laplacian(j, i)) > 1e-9)
        throw std::invalid_argument("chebyshev_basis: input not symmetric");

  ChebBasis basis;
  basis.lambda_max = power_iteration_lambda_max(laplacian);
  if (basis.lambda_max <= 0.0) basis.lambda_max = 2.0;

  Matrix scaled(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      scaled(i, j) = 2.0 * laplacian(i, j) / basis.lambda_max - (i == j ? 1.0 : 0.0);

  basis.terms.push_back(Matrix::identity(n));
  if (order >= 2) basis.terms.push_back(scaled);
  for (std::size_t p = 2; p < order; ++p) {
    Matrix next = matmul(scaled, basis.terms[p - 1]);
    for (std::size_t i = 0; i < next.size(); ++i)
      next.values()[i] = 2.0 * next.values()[i] - basis.terms[p - 2].values()[i];
    basis.terms.push_back(std::move(next));
  }
  return basis;
}

void save_adjacency(const Adjacency& a, const std::filesystem::path& path) {
  nlohmann::json j;
  j["n"] = a.n();
  j["kind"] = to_string(a.kind);
  j["weights"] = a.weights.values();
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

Adjacency load_adjacency(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  nlohmann::json j;
  f >> j;
  const std::size_t n = j.at("n").get<std::size_t>();
  Adjacency a;
  a.kind = adjacency_kind_from_string(j.at("kind").get<std::string>());
  a.weights = Matrix(n, n);
  const auto w = j.at("weights").get<std::vector<double>>();
  if (w.size() != n * n) throw std::runtime_error(path.string() + ": weight count mismatch");
  a.weights.values() = w;
  validate_adjacency(a);
  return a;
}

}  // namespace mgn
