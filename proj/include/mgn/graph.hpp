#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mgn/features.hpp"
#include "mgn/ingest.hpp"
#include "mgn/tensor.hpp"

namespace mgn {

enum class AdjacencyKind { MI, KNN, ED, RANDOM, MUL_KNN, MUL_ED };

std::string to_string(AdjacencyKind k);
AdjacencyKind adjacency_kind_from_string(const std::string& s);
const std::vector<AdjacencyKind>& all_adjacency_kinds();

// Nonnegative symmetric edge weights with a zero diagonal.
struct Adjacency {
  Matrix weights;
  AdjacencyKind kind = AdjacencyKind::MI;

  std::size_t n() const { return weights.rows(); }
};

// Throws unless weights are square, symmetric (1e-12), nonnegative, and
// zero-diagonal.
void validate_adjacency(const Adjacency& a);

// 2-D electrode positions on the unit disc.
struct Montage2D {
  std::vector<std::string> names;
  std::vector<std::pair<double, double>> coords;
};

// Standard positions for the 22-channel motor-imagery montage, reordered to
// match the dataset's channel names.
Montage2D builtin_montage(const std::vector<std::string>& channel_names);

// Plug-in entropy in bits over `bins` equal-width bins spanning
// [min(x), max(x)]. A constant vector occupies a single bin (0 bits).
double histogram_entropy(const std::vector<double>& x, std::size_t bins);

// Plug-in mutual information in bits from the bins x bins joint histogram,
// clamped below at 0.
double mutual_information(const std::vector<double>& x, const std::vector<double>& y,
                          std::size_t bins);

// Edge weight (i, j) = mean over trials of the mutual information between
// the two node signals. Diagonal zeroed.
Adjacency mi_adjacency(const TrialSet& trials, std::size_t bins);

// Same, computed on per-node feature vectors (feature channels x segments,
// flattened) instead of time-domain signals.
Adjacency mi_adjacency(const std::vector<FeatureTensor>& features, std::size_t bins);

// Mean feature vector per node over trials and segments; rows feed the
// k-nearest-neighbour builder.
Matrix node_feature_vectors(const std::vector<FeatureTensor>& features);

// Binary graph connecting each node to its k nearest rows in Euclidean
// distance, symmetrized by union.
Adjacency knn_adjacency(const Matrix& node_vectors, std::size_t k);

// Binary graph from physical electrode distance.
Adjacency euclidean_adjacency(const Montage2D& montage, std::size_t k);

// Seeded symmetric Bernoulli mask with the given edge density.
Adjacency random_adjacency(std::size_t n, double density, std::uint64_t seed);

// Elementwise product of a binary mask (KNN or ED) with MI weights.
Adjacency masked_mi(const Adjacency& base, const Adjacency& mi);

// L = I - D^{-1/2} A D^{-1/2}; rows of zero-degree nodes become the identity
// row.
Matrix normalized_laplacian(const Adjacency& a);

// Chebyshev polynomials of the rescaled Laplacian: terms[0] = I, terms[1] =
// Ls, terms[p] = 2*Ls*terms[p-1] - terms[p-2] where Ls = 2L/lambda_max - I.
struct ChebBasis {
  std::vector<Matrix> terms;
  double lambda_max = 0.0;
};

// lambda_max comes from power iteration (relative tolerance 1e-6, at most
// 1000 iterations); on non-convergence the spectral upper bound 2.0 is used.
ChebBasis chebyshev_basis(const Matrix& laplacian, std::size_t order);

double power_iteration_lambda_max(const Matrix& sym, double tol = 1e-6,
                                  std::size_t max_iters = 1000);

void save_adjacency(const Adjacency& a, const std::filesystem::path& path);
Adjacency load_adjacency(const std::filesystem::path& path);

}  // namespace mgn
