#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mgn/model.hpp"
#include "mgn/tensor.hpp"

namespace mgn {

struct TrainConfig {
  double learning_rate = 7.6e-4;
  std::size_t batch_size = 32;
  std::size_t epochs = 500;
  double flood_level = 0.5;
  double dropout = 0.5;
  std::size_t folds = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double macro_precision = 0.0;
  Matrix confusion;  // rows = actual class, cols = predicted class
};

struct History {
  std::vector<double> raw_loss;      // mean cross-entropy per epoch
  std::vector<double> flooded_loss;  // mean flooded batch loss per epoch
  std::vector<double> train_accuracy;
  std::vector<double> val_accuracy;
};

// Inputs paired with labels; the unit the trainer and evaluator consume.
struct SampleSet {
  std::vector<Tensor3> inputs;
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
};

// -log softmax(logits)[label], max-subtracted for stability.
double cross_entropy(const std::vector<double>& logits, int label);

// softmax(logits) - onehot(label); gradient of cross_entropy w.r.t. logits.
std::vector<double> cross_entropy_grad(const std::vector<double>& logits, int label);

// |raw - b| + b.
double flooded_loss(double raw, double flood_level);

// d(flooded)/d(raw); +1 at the flood level itself.
double flooded_loss_sign(double raw, double flood_level);

// Adam first/second moment estimates, one pair per parameter tensor in
// for_each_tensor order.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::size_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState init_adam(const ModelParams& params);
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr);

// Seeded shuffle, then contiguous partition; the first n % folds validation
// folds take the extra element. Returns (train, validation) index pairs.
std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> kfold_split(
    std::size_t n_trials, std::size_t folds, std::uint64_t seed);

struct TrainResult {
  ModelParams params;       // after the final epoch
  ModelParams best_params;  // at the best validation accuracy
  std::size_t best_epoch = 0;
  History history;
};

// Epoch loop: shuffled minibatches, mean cross-entropy, loss flooding,
// exact backward, Adam. Deterministic given the config seed.
TrainResult train_fold(const SampleSet& train, const SampleSet& val, const TrainConfig& config,
                       const Hyper& hyper, const ChebBasis& basis);

Metrics evaluate(const ModelParams& params, const SampleSet& set, const Hyper& hyper,
                 const ChebBasis& basis);

// Metric triple from a stored confusion matrix alone. Empty-class
// convention: precision, recall, and F1 count as 0 for classes with no
// predictions / no samples.
Metrics metrics_from_confusion(const Matrix& confusion);

}  // namespace mgn
