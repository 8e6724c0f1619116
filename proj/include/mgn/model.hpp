#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mgn/graph.hpp"
#include "mgn/rng.hpp"
#include "mgn/tensor.hpp"

namespace mgn {

// How the spatial attention map combines with the spectral filter: gating
// every Chebyshev term elementwise, or substituting for the rescaled
// Laplacian inside the recurrence.
enum class AttentionCombine { Product, Substitute };

std::string to_string(AttentionCombine c);
AttentionCombine attention_combine_from_string(const std::string& s);

struct Hyper {
  std::size_t n_blocks = 4;
  std::size_t cheb_order = 3;
  std::vector<std::size_t> channels = {64, 64, 64, 64};  // output width per block
  std::size_t temporal_kernel = 3;                       // odd
  double dropout = 0.5;
  std::size_t n_classes = 4;
  AttentionCombine attention_combine = AttentionCombine::Product;

  void validate() const;
};

// Input geometry the parameter shapes depend on.
struct ModelDims {
  std::size_t n_nodes = 0;
  std::size_t in_channels = 0;
  std::size_t t_len = 0;
};

// One attention + graph-convolution + temporal-convolution block.
//
// Index contracts, with X the block input (nodes n/m, channels c/i/j,
// time t/s):
//   spatial:  a1[n,c] = sum_t X[n,c,t] w1[t]
//             a2[n,t] = sum_c a1[n,c] w2[c,t]
//             a3[m,t] = sum_c w3[c] X[m,c,t]
//             S = v_p .* sigmoid(a2 a3^T + b_p), row-softmaxed
//   temporal: b1[t,c] = sum_n X[n,c,t] m1[n]
//             b2[t,n] = sum_c b1[t,c] m2[c,n]
//             b3[n,s] = sum_c m3[c] X[n,c,s]
//             E = v_e .* sigmoid(b2 b3 + b_q), row-softmaxed
//   graph:    y[n,j,t] = sum_p sum_i ((T_p .* S') X_hat[:,i,t])[n] theta[p](i,j)
//   time:     z[n,j,t] = sum_i sum_d phi(j,i,d) y[n,i,t+d-h], h = (K_t-1)/2
struct BlockParams {
  Matrix v_p, b_p;          // n_nodes x n_nodes
  std::vector<double> w1;   // t_len
  Matrix w2;                // c_in x t_len
  std::vector<double> w3;   // c_in
  Matrix v_e, b_q;          // t_len x t_len
  std::vector<double> m1;   // n_nodes
  Matrix m2;                // c_in x n_nodes
  std::vector<double> m3;   // c_in
  std::vector<Matrix> theta;  // cheb_order matrices, c_in x c_out
  Tensor3 phi;              // c_out x c_out x temporal_kernel
};

struct ModelParams {
  std::vector<BlockParams> blocks;
  Matrix head_w;               // n_classes x c_last
  std::vector<double> head_b;  // n_classes
};

// Visits every parameter tensor in a fixed order (the checkpoint and
// optimizer-state order).
void for_each_tensor(ModelParams& p,
                     const std::function<void(const std::string&, std::vector<double>&)>& fn);
void for_each_tensor(const ModelParams& p,
                     const std::function<void(const std::string&, const std::vector<double>&)>& fn);

std::size_t count_params(const ModelParams& p);

// Deterministic per seed: weights are uniform with fan-in scaling, biases
// start at zero.
ModelParams init_params(const Hyper& hyper, const ModelDims& dims, std::uint64_t seed);

// Zero-filled gradients shaped like `p`.
ModelParams zeros_like(const ModelParams& p);

// Forward-pass intermediates one block keeps for the backward pass.
struct BlockCache {
  Tensor3 x_in;
  Matrix b1, b2, b3, sig_q, e_soft;
  Tensor3 x_hat;
  Matrix a1, a2, a3, sig_p, s_soft;
  std::vector<Tensor3> xg;  // graph-propagated input per Chebyshev term
  Tensor3 y_pre, y, z_pre;
  std::vector<std::uint8_t> keep_mask;  // dropout, per element of the block output
};

struct Activation {
  std::vector<BlockCache> blocks;
  std::vector<double> pooled;  // global average over nodes and time
};

// Row-stochastic spatial attention over nodes.
Matrix spatial_attention(const Tensor3& x, const BlockParams& p);

// Row-stochastic temporal attention over time steps.
Matrix temporal_attention(const Tensor3& x, const BlockParams& p);

// Mixes time slices: out[:, :, t] = sum_s att[t, s] x[:, :, s].
Tensor3 apply_temporal_attention(const Tensor3& x, const Matrix& att);

// Chebyshev spectral filter with the attention map gating every term
// elementwise. Linear (no activation).
Tensor3 cheb_graph_conv(const Tensor3& x_hat, const ChebBasis& basis, const Matrix& s_att,
                        const std::vector<Matrix>& theta);

// Channel-mixing convolution along time with zero same-padding, then ReLU.
Tensor3 temporal_conv(const Tensor3& y, const Tensor3& phi);

// Full pass: per block, temporal attention -> spatial attention -> graph
// convolution -> ReLU -> temporal convolution -> dropout (train only), then
// global average pooling and the dense head. `rng` drives dropout and is
// required in train mode when dropout > 0; `cache` is filled when non-null.
std::vector<double> forward(const Tensor3& x, const ModelParams& params, const Hyper& hyper,
                            const ChebBasis& basis, bool train, Rng* rng,
                            Activation* cache);

// Exact reverse-mode gradients of sum(dlogits .* logits) with respect to
// every parameter.
ModelParams backward(const Activation& cache, const ModelParams& params, const Hyper& hyper,
                     const ChebBasis& basis, const std::vector<double>& dlogits);

void accumulate(ModelParams& into, const ModelParams& grads);
void scale_params(ModelParams& p, double factor);

// Checkpoint: little-endian u64 header length, JSON header (hyper, seed,
// dims, shapes, optional extra), then the float32 parameter blob in
// for_each_tensor order. Load then save reproduces the file byte-exactly.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const Hyper& hyper, const ModelDims& dims, std::uint64_t seed,
                     const nlohmann::json& extra = {});

struct Checkpoint {
  ModelParams params;
  Hyper hyper;
  ModelDims dims;
  std::uint64_t seed = 0;
  nlohmann::json extra;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mgn
