#include "mgn/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mgn {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Matrix row_softmax(const Matrix& s) {
  Matrix out(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double mx = s(i, 0);
    for (std::size_t j = 1; j < s.cols(); ++j) mx = std::max(mx, s(i, j));
    double denom = 0.0;
    for (std::size_t j = 0; j < s.cols(); ++j) denom += std::exp(s(i, j) - mx);
    for (std::size_t j = 0; j < s.cols(); ++j) out(i, j) = std::exp(s(i, j) - mx) / denom;
  }
  return out;
}

// dS from dS' for a row-wise softmax S' = softmax(S).
Matrix row_softmax_backward(const Matrix& soft, const Matrix& dsoft) {
  Matrix out(soft.rows(), soft.cols());
  for (std::size_t i = 0; i < soft.rows(); ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < soft.cols(); ++j) dot += dsoft(i, j) * soft(i, j);
    for (std::size_t j = 0; j < soft.cols(); ++j)
      out(i, j) = soft(i, j) * (dsoft(i, j) - dot);
  }
  return out;
}

struct SpatialCache {
  Matrix a1, a2, a3, sig_p, s_soft;
};

SpatialCache spatial_attention_full(const Tensor3& x, const BlockParams& p) {
  const std::size_t N = x.dim0(), C = x.dim1(), T = x.dim2();
  check_shape(p.w1.size() == T && p.w2.rows() == C && p.w2.cols() == T && p.w3.size() == C &&
                  p.v_p.rows() == N && p.v_p.cols() == N && p.b_p.same_shape(p.v_p),
              "spatial_attention");

  SpatialCache c;
  c.a1 = Matrix(N, C);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t ch = 0; ch < C; ++ch) {
      double s = 0.0;
      for (std::size_t t = 0; t < T; ++t) s += x(n, ch, t) * p.w1[t];
      c.a1(n, ch) = s;
    }

  c.a2 = matmul(c.a1, p.w2);  // N x T

  c.a3 = Matrix(N, T);
  for (std::size_t m = 0; m < N; ++m)
    for (std::size_t t = 0; t < T; ++t) {
      double s = 0.0;
      for (std::size_t ch = 0; ch < C; ++ch) s += p.w3[ch] * x(m, ch, t);
      c.a3(m, t) = s;
    }

  Matrix score(N, N);
  c.sig_p = Matrix(N, N);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t m = 0; m < N; ++m) {
      double s = 0.0;
      for (std::size_t t = 0; t < T; ++t) s += c.a2(n, t) * c.a3(m, t);
      c.sig_p(n, m) = sigmoid(s + p.b_p(n, m));
      score(n, m) = p.v_p(n, m) * c.sig_p(n, m);
    }
  c.s_soft = row_softmax(score);
  return c;
}

struct TemporalCache {
  Matrix b1, b2, b3, sig_q, e_soft;
};

TemporalCache temporal_attention_full(const Tensor3& x, const BlockParams& p) {
  const std::size_t N = x.dim0(), C = x.dim1(), T = x.dim2();
  check_shape(p.m1.size() == N && p.m2.rows() == C && p.m2.cols() == N && p.m3.size() == C &&
                  p.v_e.rows() == T && p.v_e.cols() == T && p.b_q.same_shape(p.v_e),
              "temporal_attention");

  TemporalCache c;
  c.b1 = Matrix(T, C);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t ch = 0; ch < C; ++ch) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) s += x(n, ch, t) * p.m1[n];
      c.b1(t, ch) = s;
    }

  c.b2 = matmul(c.b1, p.m2);  // T x N

  c.b3 = Matrix(N, T);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t s = 0; s < T; ++s) {
      double acc = 0.0;
      for (std::size_t ch = 0; ch < C; ++ch) acc += p.m3[ch] * x(n, ch, s);
      c.b3(n, s) = acc;
    }

  Matrix score(T, T);
  c.sig_q = Matrix(T, T);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t s = 0; s < T; ++s) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) acc += c.b2(t, n) * c.b3(n, s);
      c.sig_q(t, s) = sigmoid(acc + p.b_q(t, s));
      score(t, s) = p.v_e(t, s) * c.sig_q(t, s);
    }
  c.e_soft = row_softmax(score);
  return c;
}

void relu_inplace(Tensor3& t) {
  for (double& v : t.values())
    if (v < 0.0) v = 0.0;
}

}  // namespace

std::string to_string(AttentionCombine c) {
  return c == AttentionCombine::Product ? "product" : "substitute";
}

AttentionCombine attention_combine_from_string(const std::string& s) {
  if (s == "product") return AttentionCombine::Product;
  if (s == "substitute") return AttentionCombine::Substitute;
  throw std::invalid_argument("unknown attention combine mode '" + s + "'");
}

void Hyper::validate() const {
  if (n_blocks < 1) throw std::invalid_argument("hyper: need at least one block");
  if (cheb_order < 1) throw std::invalid_argument("hyper: need cheb_order >= 1");
  if (channels.size() != n_blocks)
    throw std::invalid_argument("hyper: channels must list one width per block");
  for (std::size_t c : channels)
    if (c == 0) throw std::invalid_argument("hyper: zero-width block");
  if (temporal_kernel % 2 == 0)
    throw std::invalid_argument("hyper: temporal kernel width must be odd");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("hyper: dropout must be in [0, 1)");
  if (n_classes < 2) throw std::invalid_argument("hyper: need at least 2 classes");
}

void for_each_tensor(ModelParams& p,
                     const std::function<void(const std::string&, std::vector<double>&)>& fn) {
  for (std::size_t r = 0; r < p.blocks.size(); ++r) {
    BlockParams& b = p.blocks[r];
    const std::string pre = "block" + std::to_string(r) + ".";
    fn(pre + "v_p", b.v_p.values());
    fn(pre + "b_p", b.b_p.values());
    fn(pre + "w1", b.w1);
    fn(pre + "w2", b.w2.values());
    fn(pre + "w3", b.w3);
    fn(pre + "v_e", b.v_e.values());
    fn(pre + "b_q", b.b_q.values());
    fn(pre + "m1", b.m1);
    fn(pre + "m2", b.m2.values());
    fn(pre + "m3", b.m3);
    for (std::size_t k = 0; k < b.theta.size(); ++k)
      fn(pre + "theta" + std::to_string(k), b.theta[k].values());
    fn(pre + "phi", b.phi.values());
  }
  fn("head_w", p.head_w.values());
  fn("head_b", p.head_b);
}

void for_each_tensor(const ModelParams& p,
                     const std::function<void(const std::string&, const std::vector<double>&)>& fn) {
  for_each_tensor(const_cast<ModelParams&>(p),
                  [&](const std::string& name, std::vector<double>& v) { fn(name, v); });
}

std::size_t count_params(const ModelParams& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&](const std::string&, const std::vector<double>& v) { n += v.size(); });
  return n;
}

ModelParams init_params(const Hyper& hyper, const ModelDims& dims, std::uint64_t seed) {
  hyper.validate();
  if (dims.n_nodes == 0 || dims.in_channels == 0 || dims.t_len == 0)
    throw std::invalid_argument("init_params: empty input dims");

  Rng rng(seed);
  auto fill_uniform = [&](std::vector<double>& v, std::size_t fan_in) {
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    for (double& x : v) x = rng.uniform(-bound, bound);
  };

  const std::size_t N = dims.n_nodes, T = dims.t_len;
  ModelParams p;
  std::size_t c_in = dims.in_channels;
  for (std::size_t r = 0; r < hyper.n_blocks; ++r) {
    const std::size_t c_out = hyper.channels[r];
    BlockParams b;
    b.v_p = Matrix(N, N);
    fill_uniform(b.v_p.values(), N);
    b.b_p = Matrix(N, N);
    b.w1.assign(T, 0.0);
    fill_uniform(b.w1, T);
    b.w2 = Matrix(c_in, T);
    fill_uniform(b.w2.values(), c_in);
    b.w3.assign(c_in, 0.0);
    fill_uniform(b.w3, c_in);
    b.v_e = Matrix(T, T);
    fill_uniform(b.v_e.values(), T);
    b.b_q = Matrix(T, T);
    b.m1.assign(N, 0.0);
    fill_uniform(b.m1, N);
    b.m2 = Matrix(c_in, N);
    fill_uniform(b.m2.values(), c_in);
    b.m3.assign(c_in, 0.0);
    fill_uniform(b.m3, c_in);
    b.theta.resize(hyper.cheb_order);
    for (auto& th : b.theta) {
      th = Matrix(c_in, c_out);
      fill_uniform(th.values(), hyper.cheb_order * c_in);
    }
    b.phi = Tensor3(c_out, c_out, hyper.temporal_kernel);
    fill_uniform(b.phi.values(), c_out * hyper.temporal_kernel);
    p.blocks.push_back(std::move(b));
    c_in = c_out;
  }
  p.head_w = Matrix(hyper.n_classes, c_in);
  fill_uniform(p.head_w.values(), c_in);
  p.head_b.assign(hyper.n_classes, 0.0);
  return p;
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  for_each_tensor(z, [](const std::string&, std::vector<double>& v) {
    std::fill(v.begin(), v.end(), 0.0);
  });
  return z;
}

Matrix spatial_attention(const Tensor3& x, const BlockParams& p) {
  return spatial_attention_full(x, p).s_soft;
}

Matrix temporal_attention(const Tensor3& x, const BlockParams& p) {
  return temporal_attention_full(x, p).e_soft;
}

Tensor3 apply_temporal_attention(const Tensor3& x, const Matrix& att) {
  const std::size_t N = x.dim0(), C = x.dim1(), T = x.dim2();
  check_shape(att.rows() == T && att.cols() == T, "apply_temporal_attention");
  Tensor3 out(N, C, T);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < T; ++t) {
        double s = 0.0;
        for (std::size_t u = 0; u < T; ++u) s += att(t, u) * x(n, c, u);
        out(n, c, t) = s;
      }
  return out;
}

Tensor3 cheb_graph_conv(const Tensor3& x_hat, const ChebBasis& basis, const Matrix& s_att,
                        const std::vector<Matrix>& theta) {
  const std::size_t N = x_hat.dim0(), C = x_hat.dim1(), T = x_hat.dim2();
  check_shape(basis.terms.size() == theta.size(), "cheb_graph_conv: basis order vs theta");
  check_shape(s_att.rows() == N && s_att.cols() == N, "cheb_graph_conv: attention");
  const std::size_t c_out = theta.empty() ? 0 : theta[0].cols();
  for (const Matrix& th : theta)
    check_shape(th.rows() == C && th.cols() == c_out, "cheb_graph_conv: theta");

  Tensor3 out(N, c_out, T);
  Tensor3 xg(N, C, T);
  for (std::size_t p = 0; p < theta.size(); ++p) {
    std::fill(xg.values().begin(), xg.values().end(), 0.0);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t m = 0; m < N; ++m) {
        const double g = basis.terms[p](n, m) * s_att(n, m);
        if (g == 0.0) continue;
        for (std::size_t i = 0; i < C; ++i)
          for (std::size_t t = 0; t < T; ++t) xg(n, i, t) += g * x_hat(m, i, t);
      }
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = 0; j < c_out; ++j) {
          const double coef = theta[p](i, j);
          if (coef == 0.0) continue;
          for (std::size_t t = 0; t < T; ++t) out(n, j, t) += coef * xg(n, i, t);
        }
  }
  return out;
}

Tensor3 temporal_conv(const Tensor3& y, const Tensor3& phi) {
  const std::size_t N = y.dim0(), C = y.dim1(), T = y.dim2();
  const std::size_t kt = phi.dim2();
  if (kt % 2 == 0) throw std::invalid_argument("temporal_conv: kernel width must be odd");
  check_shape(phi.dim1() == C, "temporal_conv: phi input channels");
  const std::size_t c_out = phi.dim0();
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(kt / 2);

  Tensor3 out(N, c_out, T);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t j = 0; j < c_out; ++j)
      for (std::size_t i = 0; i < C; ++i)
        for (std::size_t d = 0; d < kt; ++d) {
          const double coef = phi(j, i, d);
          if (coef == 0.0) continue;
          const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(d) - h;
          const std::size_t t_lo = off < 0 ? static_cast<std::size_t>(-off) : 0;
          const std::size_t t_hi = off > 0 ? T - static_cast<std::size_t>(off) : T;
          for (std::size_t t = t_lo; t < t_hi; ++t)
            out(n, j, t) += coef * y(n, i, static_cast<std::size_t>(
                                               static_cast<std::ptrdiff_t>(t) + off));
        }
  relu_inplace(out);
  return out;
}

std::vector<double> forward(const Tensor3& x, const ModelParams& params, const Hyper& hyper,
                            const ChebBasis& basis, bool train, Rng* rng, Activation* cache) {
  hyper.validate();
  check_shape(params.blocks.size() == hyper.n_blocks, "forward: block count");
  check_shape(basis.terms.size() == hyper.cheb_order, "forward: basis order");
  check_shape(basis.terms[0].rows() == x.dim0(), "forward: node count");
  if (train && hyper.dropout > 0.0 && rng == nullptr)
    throw std::invalid_argument("forward: train mode with dropout needs an rng");

  if (cache) {
    cache->blocks.clear();
    cache->pooled.clear();
  }

  const std::size_t N = x.dim0(), T = x.dim2();
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(hyper.temporal_kernel / 2);
  Tensor3 cur = x;

  for (std::size_t r = 0; r < hyper.n_blocks; ++r) {
    const BlockParams& bp = params.blocks[r];
    const std::size_t c_in = cur.dim1();
    const std::size_t c_out = hyper.channels[r];
    BlockCache bc;
    if (cache) bc.x_in = cur;

    TemporalCache tc = temporal_attention_full(cur, bp);
    Tensor3 x_hat = apply_temporal_attention(cur, tc.e_soft);

    SpatialCache sc = spatial_attention_full(x_hat, bp);

    // Graph convolution, keeping the per-term propagated inputs for the
    // backward pass.
    std::vector<Tensor3> xg(hyper.cheb_order);
    if (hyper.attention_combine == AttentionCombine::Product) {
      for (std::size_t p = 0; p < hyper.cheb_order; ++p) {
        xg[p] = Tensor3(N, c_in, T);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t m = 0; m < N; ++m) {
            const double g = basis.terms[p](n, m) * sc.s_soft(n, m);
            if (g == 0.0) continue;
            for (std::size_t i = 0; i < c_in; ++i)
              for (std::size_t t = 0; t < T; ++t) xg[p](n, i, t) += g * x_hat(m, i, t);
          }
      }
    } else {
      // The attention map replaces the rescaled Laplacian in the recurrence:
      // h_0 = x, h_1 = S' x, h_p = 2 S' h_{p-1} - h_{p-2}.
      xg[0] = x_hat;
      for (std::size_t p = 1; p < hyper.cheb_order; ++p) {
        xg[p] = Tensor3(N, c_in, T);
        const double scale = p == 1 ? 1.0 : 2.0;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t m = 0; m < N; ++m) {
            const double g = scale * sc.s_soft(n, m);
            for (std::size_t i = 0; i < c_in; ++i)
              for (std::size_t t = 0; t < T; ++t) xg[p](n, i, t) += g * xg[p - 1](m, i, t);
          }
        if (p >= 2)
          for (std::size_t k = 0; k < xg[p].size(); ++k)
            xg[p].values()[k] -= xg[p - 2].values()[k];
      }
    }
    Tensor3 y_pre(N, c_out, T);
    for (std::size_t p = 0; p < hyper.cheb_order; ++p)
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < c_in; ++i)
          for (std::size_t j = 0; j < c_out; ++j) {
            const double coef = bp.theta[p](i, j);
            if (coef == 0.0) continue;
            for (std::size_t t = 0; t < T; ++t) y_pre(n, j, t) += coef * xg[p](n, i, t);
          }
    Tensor3 y = y_pre;
    relu_inplace(y);

    Tensor3 z_pre(N, c_out, T);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < c_out; ++j)
        for (std::size_t i = 0; i < c_out; ++i)
          for (std::size_t d = 0; d < hyper.temporal_kernel; ++d) {
            const double coef = bp.phi(j, i, d);
            if (coef == 0.0) continue;
            const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(d) - h;
            const std::size_t t_lo = off < 0 ? static_cast<std::size_t>(-off) : 0;
            const std::size_t t_hi = off > 0 ? T - static_cast<std::size_t>(off) : T;
            for (std::size_t t = t_lo; t < t_hi; ++t)
              z_pre(n, j, t) += coef * y(n, i, static_cast<std::size_t>(
                                                   static_cast<std::ptrdiff_t>(t) + off));
          }
    Tensor3 z = z_pre;
    relu_inplace(z);

    std::vector<std::uint8_t> keep;
    if (train && hyper.dropout > 0.0) {
      keep.resize(z.size());
      const double scale = 1.0 / (1.0 - hyper.dropout);
      for (std::size_t i = 0; i < z.size(); ++i) {
        keep[i] = rng->bernoulli(hyper.dropout) ? 0 : 1;
        z.values()[i] = keep[i] ? z.values()[i] * scale : 0.0;
      }
    }

    if (cache) {
      bc.b1 = std::move(tc.b1);
      bc.b2 = std::move(tc.b2);
      bc.b3 = std::move(tc.b3);
      bc.sig_q = std::move(tc.sig_q);
      bc.e_soft = std::move(tc.e_soft);
      bc.x_hat = std::move(x_hat);
      bc.a1 = std::move(sc.a1);
      bc.a2 = std::move(sc.a2);
      bc.a3 = std::move(sc.a3);
      bc.sig_p = std::move(sc.sig_p);
      bc.s_soft = std::move(sc.s_soft);
      bc.xg = std::move(xg);
      bc.y_pre = std::move(y_pre);
      bc.y = std::move(y);
      bc.z_pre = std::move(z_pre);
      bc.keep_mask = std::move(keep);
      cache->blocks.push_back(std::move(bc));
    }
    cur = std::move(z);
  }

  // Global average pool over nodes and time, then the dense head.
  const std::size_t c_last = cur.dim1();
  std::vector<double> pooled(c_last, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < c_last; ++c)
      for (std::size_t t = 0; t < T; ++t) pooled[c] += cur(n, c, t);
  const double inv = 1.0 / static_cast<double>(N * T);
  for (double& v : pooled) v *= inv;

  std::vector<double> logits(hyper.n_classes, 0.0);
  for (std::size_t k = 0; k < hyper.n_classes; ++k) {
    double s = params.head_b[k];
    for (std::size_t c = 0; c < c_last; ++c) s += params.head_w(k, c) * pooled[c];
    logits[k] = s;
  }
  if (cache) cache->pooled = std::move(pooled);
  return logits;
}

ModelParams backward(const Activation& cache, const ModelParams& params, const Hyper& hyper,
                     const ChebBasis& basis, const std::vector<double>& dlogits) {
  if (cache.blocks.size() != hyper.n_blocks)
    throw std::invalid_argument("backward: cache missing or from a different model");
  check_shape(dlogits.size() == hyper.n_classes, "backward: dlogits");

  ModelParams grads = zeros_like(params);
  const std::size_t c_last = cache.pooled.size();
  const std::size_t N = cache.blocks.back().z_pre.dim0();
  const std::size_t T = cache.blocks.back().z_pre.dim2();
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(hyper.temporal_kernel / 2);

  // Head.
  std::vector<double> dpooled(c_last, 0.0);
  for (std::size_t k = 0; k < hyper.n_classes; ++k) {
    grads.head_b[k] += dlogits[k];
    for (std::size_t c = 0; c < c_last; ++c) {
      grads.head_w(k, c) += dlogits[k] * cache.pooled[c];
      dpooled[c] += params.head_w(k, c) * dlogits[k];
    }
  }
  const double inv_pool = 1.0 / static_cast<double>(N * T);
  Tensor3 dout(N, c_last, T);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < c_last; ++c)
      for (std::size_t t = 0; t < T; ++t) dout(n, c, t) = dpooled[c] * inv_pool;

  for (std::size_t r = hyper.n_blocks; r-- > 0;) {
    const BlockParams& bp = params.blocks[r];
    BlockParams& bg = grads.blocks[r];
    const BlockCache& bc = cache.blocks[r];
    const std::size_t c_in = bc.x_in.dim1();
    const std::size_t c_out = hyper.channels[r];

    // Dropout.
    Tensor3 dz = dout;
    if (!bc.keep_mask.empty()) {
      const double scale = 1.0 / (1.0 - hyper.dropout);
      for (std::size_t i = 0; i < dz.size(); ++i)
        dz.values()[i] = bc.keep_mask[i] ? dz.values()[i] * scale : 0.0;
    }

    // ReLU after the temporal convolution.
    for (std::size_t i = 0; i < dz.size(); ++i)
      if (bc.z_pre.values()[i] <= 0.0) dz.values()[i] = 0.0;

    // Temporal convolution: z_pre[n,j,t] = sum_{i,d} phi(j,i,d) y[n,i,t+d-h].
    Tensor3 dy(N, c_out, T);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < c_out; ++j)
        for (std::size_t i = 0; i < c_out; ++i)
          for (std::size_t d = 0; d < hyper.temporal_kernel; ++d) {
            const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(d) - h;
            const std::size_t t_lo = off < 0 ? static_cast<std::size_t>(-off) : 0;
            const std::size_t t_hi = off > 0 ? T - static_cast<std::size_t>(off) : T;
            double dphi = 0.0;
            const double coef = bp.phi(j, i, d);
            for (std::size_t t = t_lo; t < t_hi; ++t) {
              const std::size_t src =
                  static_cast<std::size_t>(static_cast<std::ptrdiff_t>(t) + off);
              dphi += dz(n, j, t) * bc.y(n, i, src);
              dy(n, i, src) += dz(n, j, t) * coef;
            }
            bg.phi(j, i, d) += dphi;
          }

    // ReLU after the graph convolution.
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (bc.y_pre.values()[i] <= 0.0) dy.values()[i] = 0.0;

    // Graph convolution. Shared first step: dtheta(i,j) = sum xg dy and
    // dxg[n,i,t] = sum_j dy[n,j,t] theta(i,j).
    Tensor3 dx_hat(N, c_in, T);
    Matrix ds_soft(N, N);
    std::vector<Tensor3> dxg(hyper.cheb_order);
    for (std::size_t p = 0; p < hyper.cheb_order; ++p) {
      dxg[p] = Tensor3(N, c_in, T);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < c_in; ++i)
          for (std::size_t j = 0; j < c_out; ++j) {
            const double coef = bp.theta[p](i, j);
            double dth = 0.0;
            for (std::size_t t = 0; t < T; ++t) {
              dth += bc.xg[p](n, i, t) * dy(n, j, t);
              dxg[p](n, i, t) += dy(n, j, t) * coef;
            }
            bg.theta[p](i, j) += dth;
          }
    }
    if (hyper.attention_combine == AttentionCombine::Product) {
      // xg[p][n,i,t] = sum_m (T_p .* S')(n,m) x_hat[m,i,t].
      for (std::size_t p = 0; p < hyper.cheb_order; ++p)
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t m = 0; m < N; ++m) {
            const double g = basis.terms[p](n, m) * bc.s_soft(n, m);
            double dg = 0.0;
            for (std::size_t i = 0; i < c_in; ++i)
              for (std::size_t t = 0; t < T; ++t) {
                dg += dxg[p](n, i, t) * bc.x_hat(m, i, t);
                dx_hat(m, i, t) += g * dxg[p](n, i, t);
              }
            ds_soft(n, m) += dg * basis.terms[p](n, m);
          }
    } else {
      // Reverse the recurrence h_p = 2 S' h_{p-1} - h_{p-2} (scale 1 at p=1),
      // accumulating into the lower levels.
      for (std::size_t p = hyper.cheb_order; p-- > 1;) {
        const double scale = p == 1 ? 1.0 : 2.0;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t m = 0; m < N; ++m) {
            const double g = scale * bc.s_soft(n, m);
            double dg = 0.0;
            for (std::size_t i = 0; i < c_in; ++i)
              for (std::size_t t = 0; t < T; ++t) {
                dg += dxg[p](n, i, t) * bc.xg[p - 1](m, i, t);
                dxg[p - 1](m, i, t) += g * dxg[p](n, i, t);
              }
            ds_soft(n, m) += dg * scale;
          }
        if (p >= 2)
          for (std::size_t k = 0; k < dxg[p].size(); ++k)
            dxg[p - 2].values()[k] -= dxg[p].values()[k];
      }
      for (std::size_t k = 0; k < dxg[0].size(); ++k)
        dx_hat.values()[k] += dxg[0].values()[k];
    }

    // Spatial attention.
    Matrix ds = row_softmax_backward(bc.s_soft, ds_soft);
    Matrix dp_pre(N, N);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t m = 0; m < N; ++m) {
        bg.v_p(n, m) += ds(n, m) * bc.sig_p(n, m);
        const double dsig = ds(n, m) * bp.v_p(n, m);
        dp_pre(n, m) = dsig * bc.sig_p(n, m) * (1.0 - bc.sig_p(n, m));
        bg.b_p(n, m) += dp_pre(n, m);
      }

    Matrix da2(N, T), da3(N, T);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t m = 0; m < N; ++m) {
        const double d = dp_pre(n, m);
        if (d == 0.0) continue;
        for (std::size_t t = 0; t < T; ++t) {
          da2(n, t) += d * bc.a3(m, t);
          da3(m, t) += d * bc.a2(n, t);
        }
      }

    // a3[m,t] = sum_c w3[c] x_hat[m,c,t].
    for (std::size_t m = 0; m < N; ++m)
      for (std::size_t c = 0; c < c_in; ++c) {
        double dw = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
          dw += da3(m, t) * bc.x_hat(m, c, t);
          dx_hat(m, c, t) += bp.w3[c] * da3(m, t);
        }
        bg.w3[c] += dw;
      }

    // a2 = a1 w2.
    Matrix da1(N, c_in);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < c_in; ++c) {
        double s = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
          s += da2(n, t) * bp.w2(c, t);
          bg.w2(c, t) += bc.a1(n, c) * da2(n, t);
        }
        da1(n, c) = s;
      }

    // a1[n,c] = sum_t x_hat[n,c,t] w1[t].
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < c_in; ++c) {
        const double d = da1(n, c);
        if (d == 0.0) continue;
        for (std::size_t t = 0; t < T; ++t) {
          bg.w1[t] += d * bc.x_hat(n, c, t);
          dx_hat(n, c, t) += d * bp.w1[t];
        }
      }

    // Temporal mixing: x_hat[n,c,t] = sum_s e_soft(t,s) x_in[n,c,s].
    Matrix de_soft(T, T);
    Tensor3 dx(N, c_in, T);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t s = 0; s < T; ++s) {
        double de = 0.0;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < c_in; ++c) de += dx_hat(n, c, t) * bc.x_in(n, c, s);
        de_soft(t, s) = de;
      }
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < c_in; ++c)
        for (std::size_t s = 0; s < T; ++s) {
          double acc = 0.0;
          for (std::size_t t = 0; t < T; ++t) acc += bc.e_soft(t, s) * dx_hat(n, c, t);
          dx(n, c, s) = acc;
        }

    // Temporal attention scores.
    Matrix de = row_softmax_backward(bc.e_soft, de_soft);
    Matrix dq_pre(T, T);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t s = 0; s < T; ++s) {
        bg.v_e(t, s) += de(t, s) * bc.sig_q(t, s);
        const double dsig = de(t, s) * bp.v_e(t, s);
        dq_pre(t, s) = dsig * bc.sig_q(t, s) * (1.0 - bc.sig_q(t, s));
        bg.b_q(t, s) += dq_pre(t, s);
      }

    Matrix db2(T, N), db3(N, T);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t s = 0; s < T; ++s) {
        const double d = dq_pre(t, s);
        if (d == 0.0) continue;
        for (std::size_t n = 0; n < N; ++n) {
          db2(t, n) += d * bc.b3(n, s);
          db3(n, s) += d * bc.b2(t, n);
        }
      }

    // b3[n,s] = sum_c m3[c] x_in[n,c,s].
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < c_in; ++c) {
        double dm = 0.0;
        for (std::size_t s = 0; s < T; ++s) {
          dm += db3(n, s) * bc.x_in(n, c, s);
          dx(n, c, s) += bp.m3[c] * db3(n, s);
        }
        bg.m3[c] += dm;
      }

    // b2 = b1 m2.
    Matrix db1(T, c_in);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < c_in; ++c) {
        double s = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          s += db2(t, n) * bp.m2(c, n);
          bg.m2(c, n) += bc.b1(t, c) * db2(t, n);
        }
        db1(t, c) = s;
      }

    // b1[t,c] = sum_n x_in[n,c,t] m1[n].
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < c_in; ++c) {
        const double d = db1(t, c);
        if (d == 0.0) continue;
        for (std::size_t n = 0; n < N; ++n) {
          bg.m1[n] += d * bc.x_in(n, c, t);
          dx(n, c, t) += d * bp.m1[n];
        }
      }

    dout = std::move(dx);
  }
  return grads;
}

void accumulate(ModelParams& into, const ModelParams& grads) {
  std::vector<const std::vector<double>*> src;
  for_each_tensor(grads,
                  [&](const std::string&, const std::vector<double>& v) { src.push_back(&v); });
  std::size_t idx = 0;
  for_each_tensor(into, [&](const std::string&, std::vector<double>& v) {
    if (idx >= src.size() || src[idx]->size() != v.size())
      throw std::invalid_argument("accumulate: shape mismatch");
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += (*src[idx])[i];
    ++idx;
  });
}

void scale_params(ModelParams& p, double factor) {
  for_each_tensor(p, [&](const std::string&, std::vector<double>& v) {
    for (double& x : v) x *= factor;
  });
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const Hyper& hyper, const ModelDims& dims, std::uint64_t seed,
                     const nlohmann::json& extra) {
  nlohmann::json header;
  header["hyper"] = {{"n_blocks", hyper.n_blocks},
                     {"cheb_order", hyper.cheb_order},
                     {"channels", hyper.channels},
                     {"temporal_kernel", hyper.temporal_kernel},
                     {"dropout", hyper.dropout},
                     {"n_classes", hyper.n_classes},
                     {"attention_combine", to_string(hyper.attention_combine)}};
  header["dims"] = {{"n_nodes", dims.n_nodes},
                    {"in_channels", dims.in_channels},
                    {"t_len", dims.t_len}};
  header["seed"] = seed;
  nlohmann::json shapes = nlohmann::json::array();
  std::size_t total = 0;
  for_each_tensor(params, [&](const std::string& name, const std::vector<double>& v) {
    shapes.push_back({{"name", name}, {"size", v.size()}});
    total += v.size();
  });
  header["shapes"] = shapes;
  header["n_params"] = total;
  if (!extra.is_null() && !extra.empty()) header["extra"] = extra;

  const std::string hs = header.dump();
  const std::uint64_t hlen = hs.size();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for_each_tensor(params, [&](const std::string&, const std::vector<double>& v) {
    std::vector<float> buf(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) buf[i] = static_cast<float>(v[i]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * 4));
  });
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::uint64_t hlen = 0;
  if (!f.read(reinterpret_cast<char*>(&hlen), 8))
    throw std::runtime_error(path.string() + ": truncated header");
  std::string hs(hlen, '\0');
  if (!f.read(hs.data(), static_cast<std::streamsize>(hlen)))
    throw std::runtime_error(path.string() + ": truncated header");
  const nlohmann::json header = nlohmann::json::parse(hs);

  Checkpoint ck;
  const auto& jh = header.at("hyper");
  ck.hyper.n_blocks = jh.at("n_blocks").get<std::size_t>();
  ck.hyper.cheb_order = jh.at("cheb_order").get<std::size_t>();
  ck.hyper.channels = jh.at("channels").get<std::vector<std::size_t>>();
  ck.hyper.temporal_kernel = jh.at("temporal_kernel").get<std::size_t>();
  ck.hyper.dropout = jh.at("dropout").get<double>();
  ck.hyper.n_classes = jh.at("n_classes").get<std::size_t>();
  ck.hyper.attention_combine =
      attention_combine_from_string(jh.value("attention_combine", std::string("product")));
  const auto& jd = header.at("dims");
  ck.dims = {jd.at("n_nodes").get<std::size_t>(), jd.at("in_channels").get<std::size_t>(),
             jd.at("t_len").get<std::size_t>()};
  ck.seed = header.at("seed").get<std::uint64_t>();
  if (header.contains("extra")) ck.extra = header.at("extra");

  ck.params = init_params(ck.hyper, ck.dims, ck.seed);  // allocates the right shapes
  std::size_t expected = header.at("n_params").get<std::size_t>();
  if (expected != count_params(ck.params))
    throw std::runtime_error(path.string() + ": parameter count mismatch");

  bool short_read = false;
  for_each_tensor(ck.params, [&](const std::string&, std::vector<double>& v) {
    std::vector<float> buf(v.size());
    if (!f.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * 4))) {
      short_read = true;
      return;
    }
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(buf[i]);
  });
  if (short_read) throw std::runtime_error(path.string() + ": truncated parameter blob");
  return ck;
}

}  // namespace mgn
