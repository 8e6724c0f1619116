#include "mgn/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mgn/rng.hpp"

namespace mgn {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("config: learning_rate must be > 0");
  if (batch_size == 0) throw std::invalid_argument("config: batch_size must be > 0");
  if (epochs == 0) throw std::invalid_argument("config: epochs must be > 0");
  if (!(flood_level >= 0.0)) throw std::invalid_argument("config: flood_level must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("config: dropout must be in [0, 1)");
  if (folds < 2) throw std::invalid_argument("config: need folds >= 2");
}

double cross_entropy(const std::vector<double>& logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw std::invalid_argument("cross_entropy: label out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double z : logits) denom += std::exp(z - mx);
  return std::log(denom) - (logits[static_cast<std::size_t>(label)] - mx);
}

std::vector<double> cross_entropy_grad(const std::vector<double>& logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw std::invalid_argument("cross_entropy_grad: label out of range");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double z : logits) denom += std::exp(z - mx);
  std::vector<double> g(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) g[k] = std::exp(logits[k] - mx) / denom;
  g[static_cast<std::size_t>(label)] -= 1.0;
  return g;
}

double flooded_loss(double raw, double flood_level) {
  return std::fabs(raw - flood_level) + flood_level;
}

double flooded_loss_sign(double raw, double flood_level) {
  return raw >= flood_level ? 1.0 : -1.0;
}

AdamState init_adam(const ModelParams& params) {
  AdamState st;
  for_each_tensor(params, [&](const std::string&, const std::vector<double>& v) {
    st.m.emplace_back(v.size(), 0.0);
    st.v.emplace_back(v.size(), 0.0);
  });
  return st;
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr) {
  std::vector<const std::vector<double>*> gs;
  for_each_tensor(grads,
                  [&](const std::string&, const std::vector<double>& v) { gs.push_back(&v); });

  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));

  std::size_t idx = 0;
  for_each_tensor(params, [&](const std::string&, std::vector<double>& v) {
    if (idx >= gs.size() || gs[idx]->size() != v.size())
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    std::vector<double>& m = state.m[idx];
    std::vector<double>& vv = state.v[idx];
    const std::vector<double>& g = *gs[idx];
    for (std::size_t i = 0; i < v.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      vv[i] = state.beta2 * vv[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = vv[i] / bc2;
      v[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    ++idx;
  });
}

std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> kfold_split(
    std::size_t n_trials, std::size_t folds, std::uint64_t seed) {
  if (folds < 2 || folds > n_trials)
    throw std::invalid_argument("kfold_split: need 2 <= folds <= n_trials");

  std::vector<std::size_t> order(n_trials);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> out;
  const std::size_t base = n_trials / folds;
  const std::size_t rem = n_trials % folds;
  std::size_t start = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t len = base + (f < rem ? 1 : 0);
    std::vector<std::size_t> val(order.begin() + start, order.begin() + start + len);
    std::vector<std::size_t> train;
    train.reserve(n_trials - len);
    train.insert(train.end(), order.begin(), order.begin() + start);
    train.insert(train.end(), order.begin() + start + len, order.end());
    out.emplace_back(std::move(train), std::move(val));
    start += len;
  }
  return out;
}

namespace {

double accuracy_on(const ModelParams& params, const SampleSet& set, const Hyper& hyper,
                   const ChebBasis& basis) {
  if (set.size() == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::vector<double> logits =
        forward(set.inputs[i], params, hyper, basis, /*train=*/false, nullptr, nullptr);
    const auto arg = static_cast<int>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (arg == set.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(set.size());
}

}  // namespace

TrainResult train_fold(const SampleSet& train, const SampleSet& val, const TrainConfig& config,
                       const Hyper& hyper, const ChebBasis& basis) {
  config.validate();
  if (train.size() == 0) throw std::invalid_argument("train_fold: empty training split");
  if (train.inputs.size() != train.labels.size() || val.inputs.size() != val.labels.size())
    throw std::invalid_argument("train_fold: inputs/labels length mismatch");

  Hyper hy = hyper;
  hy.dropout = config.dropout;

  const ModelDims dims{train.inputs[0].dim0(), train.inputs[0].dim1(), train.inputs[0].dim2()};
  TrainResult res;
  res.params = init_params(hy, dims, config.seed);
  AdamState adam = init_adam(res.params);
  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ull);  // shuffle + dropout stream

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  double best_val = -1.0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);

    double epoch_ce = 0.0;
    double epoch_flooded = 0.0;
    std::size_t n_batches = 0;

    for (std::size_t bstart = 0; bstart < order.size(); bstart += config.batch_size) {
      const std::size_t bend = std::min(bstart + config.batch_size, order.size());
      const std::size_t bsize = bend - bstart;

      std::vector<Activation> caches(bsize);
      std::vector<std::vector<double>> logits(bsize);
      double batch_ce = 0.0;
      for (std::size_t k = 0; k < bsize; ++k) {
        const std::size_t idx = order[bstart + k];
        logits[k] = forward(train.inputs[idx], res.params, hy, basis, /*train=*/true, &rng,
                            &caches[k]);
        batch_ce += cross_entropy(logits[k], train.labels[idx]);
      }
      batch_ce /= static_cast<double>(bsize);
      epoch_ce += batch_ce * static_cast<double>(bsize);
      epoch_flooded += flooded_loss(batch_ce, config.flood_level);
      ++n_batches;

      // d(flooded)/d(logits) = sign(raw - b) / batch * d(ce)/d(logits).
      const double outer = flooded_loss_sign(batch_ce, config.flood_level) /
                           static_cast<double>(bsize);
      ModelParams grads = zeros_like(res.params);
      for (std::size_t k = 0; k < bsize; ++k) {
        std::vector<double> dlogits =
            cross_entropy_grad(logits[k], train.labels[order[bstart + k]]);
        for (double& d : dlogits) d *= outer;
        accumulate(grads, backward(caches[k], res.params, hy, basis, dlogits));
      }
      adam_step(res.params, grads, adam, config.learning_rate);
    }

    res.history.raw_loss.push_back(epoch_ce / static_cast<double>(train.size()));
    res.history.flooded_loss.push_back(epoch_flooded / static_cast<double>(n_batches));
    res.history.train_accuracy.push_back(accuracy_on(res.params, train, hy, basis));
    const double vacc = val.size() ? accuracy_on(res.params, val, hy, basis) : 0.0;
    res.history.val_accuracy.push_back(vacc);

    if (vacc > best_val) {
      best_val = vacc;
      res.best_params = res.params;
      res.best_epoch = epoch;
    }
  }
  if (best_val < 0.0) res.best_params = res.params;
  return res;
}

Metrics evaluate(const ModelParams& params, const SampleSet& set, const Hyper& hyper,
                 const ChebBasis& basis) {
  if (set.size() == 0) throw std::invalid_argument("evaluate: empty set");
  Matrix confusion(hyper.n_classes, hyper.n_classes);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::vector<double> logits =
        forward(set.inputs[i], params, hyper, basis, /*train=*/false, nullptr, nullptr);
    const auto pred = static_cast<std::size_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    confusion(static_cast<std::size_t>(set.labels[i]), pred) += 1.0;
  }
  return metrics_from_confusion(confusion);
}

Metrics metrics_from_confusion(const Matrix& confusion) {
  const std::size_t n = confusion.rows();
  check_shape(confusion.cols() == n, "metrics_from_confusion");

  double total = 0.0, diag = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      total += confusion(i, j);
      if (i == j) diag += confusion(i, j);
    }
  if (total <= 0.0) throw std::invalid_argument("metrics_from_confusion: empty matrix");

  Metrics m;
  m.confusion = confusion;
  m.accuracy = diag / total;
  double prec_sum = 0.0, f1_sum = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    const double tp = confusion(c, c);
    double col = 0.0, row = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      col += confusion(i, c);
      row += confusion(c, i);
    }
    const double precision = col > 0.0 ? tp / col : 0.0;
    const double recall = row > 0.0 ? tp / row : 0.0;
    prec_sum += precision;
    f1_sum += (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  m.macro_precision = prec_sum / static_cast<double>(n);
  m.macro_f1 = f1_sum / static_cast<double>(n);
  return m;
}

}  // namespace mgn
