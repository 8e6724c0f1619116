#include "mgn/experiment.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace mgn {

namespace {

SampleSet gather(const std::vector<FeatureTensor>& features, const std::vector<int>& labels,
                 const std::vector<std::size_t>& idx) {
  SampleSet out;
  out.inputs.reserve(idx.size());
  out.labels.reserve(idx.size());
  for (std::size_t i : idx) {
    out.inputs.push_back(features[i].values);
    out.labels.push_back(labels[i]);
  }
  return out;
}

}  // namespace

std::vector<std::pair<double, double>> PipelineConfig::resolved_bands() const {
  if (!bands.empty()) return bands;
  std::vector<std::pair<double, double>> out;
  const int n = 11;
  for (int i = 0; i < n; ++i)
    out.emplace_back(bandpass_lo + (bandpass_hi - bandpass_lo) * i / n,
                     bandpass_lo + (bandpass_hi - bandpass_lo) * (i + 1) / n);
  return out;
}

std::vector<FeatureTensor> build_features(const TrialSet& filtered, const PipelineConfig& pc) {
  const auto bands = pc.resolved_bands();
  std::vector<FeatureTensor> out;
  out.reserve(filtered.trials.size());

  const MontagePairs pairs =
      pc.pairs ? *pc.pairs : default_montage_pairs(filtered.channel_names);

  for (const Trial& trial : filtered.trials) {
    switch (pc.feature_kind) {
      case FeatureKind::DE:
        out.push_back(double_fold(band_de_features(trial, bands, pc.segment_seconds, filtered.fs)));
        break;
      case FeatureKind::PSD:
        out.push_back(double_fold(psd_features(trial, bands, pc.segment_seconds, filtered.fs)));
        break;
      default: {
        const FeatureTensor de = band_de_features(trial, bands, pc.segment_seconds, filtered.fs);
        out.push_back(asym_features(de, pairs, pc.feature_kind));
        break;
      }
    }
  }
  return out;
}

Adjacency build_adjacency(const PipelineConfig& pc, const TrialSet& filtered_train,
                          const std::vector<FeatureTensor>& train_features,
                          const std::vector<std::string>& channel_names, std::uint64_t seed) {
  if (train_features.empty()) throw std::invalid_argument("build_adjacency: no training data");
  const std::size_t n_nodes = train_features.front().values.dim0();
  const bool nodes_are_channels = n_nodes == channel_names.size();

  auto mi = [&]() {
    if (pc.mi_source == "signals" && nodes_are_channels)
      return mi_adjacency(filtered_train, pc.mi_bins);
    return mi_adjacency(train_features, pc.mi_bins);
  };
  auto montage = [&]() { return pc.montage ? *pc.montage : builtin_montage(channel_names); };

  switch (pc.adjacency_kind) {
    case AdjacencyKind::MI:
      return mi();
    case AdjacencyKind::KNN:
      return knn_adjacency(node_feature_vectors(train_features), pc.knn_k);
    case AdjacencyKind::ED:
      if (!nodes_are_channels)
        throw std::invalid_argument(
            "build_adjacency: ED needs channel nodes, not electrode pairs");
      return euclidean_adjacency(montage(), pc.ed_k);
    case AdjacencyKind::RANDOM:
      return random_adjacency(n_nodes, pc.random_density, seed);
    case AdjacencyKind::MUL_KNN:
      return masked_mi(knn_adjacency(node_feature_vectors(train_features), pc.knn_k), mi());
    case AdjacencyKind::MUL_ED:
      if (!nodes_are_channels)
        throw std::invalid_argument(
            "build_adjacency: MUL_ED needs channel nodes, not electrode pairs");
      return masked_mi(euclidean_adjacency(montage(), pc.ed_k), mi());
  }
  throw std::invalid_argument("build_adjacency: unknown kind");
}

CvResult run_cv(const TrialSet& raw, const PipelineConfig& pc, const TrainConfig& tc,
                const Hyper& hyper) {
  tc.validate();
  if (raw.trials.size() < tc.folds)
    throw std::invalid_argument("run_cv: fewer trials than folds");

  const TrialSet filtered = bandpass_filter(raw, pc.bandpass_lo, pc.bandpass_hi);
  const std::vector<FeatureTensor> features = build_features(filtered, pc);
  std::vector<int> labels;
  labels.reserve(raw.trials.size());
  for (const Trial& t : raw.trials) labels.push_back(t.label);

  const auto splits = kfold_split(raw.trials.size(), tc.folds, tc.seed);

  CvResult cv;
  Matrix conf_sum;
  for (std::size_t f = 0; f < splits.size(); ++f) {
    const auto& [train_idx, val_idx] = splits[f];

    std::vector<FeatureTensor> train_feats;
    train_feats.reserve(train_idx.size());
    for (std::size_t i : train_idx) train_feats.push_back(features[i]);

    FoldOutput fold;
    fold.scaler = fit_scaler(train_feats);

    TrialSet filtered_train;
    filtered_train.fs = filtered.fs;
    filtered_train.channel_names = filtered.channel_names;
    filtered_train.class_names = filtered.class_names;
    for (std::size_t i : train_idx) filtered_train.trials.push_back(filtered.trials[i]);

    fold.adjacency =
        build_adjacency(pc, filtered_train, train_feats, filtered.channel_names, tc.seed + f);
    const Matrix laplacian = normalized_laplacian(fold.adjacency);
    const ChebBasis basis = chebyshev_basis(laplacian, hyper.cheb_order);

    const std::vector<FeatureTensor> scaled = apply_scaler(fold.scaler, features);
    const SampleSet train_set = gather(scaled, labels, train_idx);
    const SampleSet val_set = gather(scaled, labels, val_idx);

    TrainConfig fold_tc = tc;
    fold_tc.seed = tc.seed + f;
    TrainResult tr = train_fold(train_set, val_set, fold_tc, hyper, basis);

    fold.params = std::move(tr.params);
    fold.best_params = std::move(tr.best_params);
    fold.best_epoch = tr.best_epoch;
    fold.history = std::move(tr.history);

    quantize_params_float32(fold.params);
    quantize_params_float32(fold.best_params);

    Hyper hy = hyper;
    hy.dropout = fold_tc.dropout;
    fold.val_metrics = evaluate(fold.params, val_set, hy, basis);
    fold.train_accuracy = evaluate(fold.params, train_set, hy, basis).accuracy;

    if (f == 0)
      conf_sum = fold.val_metrics.confusion;
    else
      for (std::size_t i = 0; i < conf_sum.size(); ++i)
        conf_sum.values()[i] += fold.val_metrics.confusion.values()[i];

    cv.folds.push_back(std::move(fold));
  }

  cv.mean.confusion = conf_sum;
  for (const FoldOutput& f : cv.folds) {
    cv.mean.accuracy += f.val_metrics.accuracy;
    cv.mean.macro_f1 += f.val_metrics.macro_f1;
    cv.mean.macro_precision += f.val_metrics.macro_precision;
  }
  const double nf = static_cast<double>(cv.folds.size());
  cv.mean.accuracy /= nf;
  cv.mean.macro_f1 /= nf;
  cv.mean.macro_precision /= nf;
  return cv;
}

void quantize_params_float32(ModelParams& params) {
  for_each_tensor(params, [](const std::string&, std::vector<double>& v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  });
}

nlohmann::json metrics_to_json(const Metrics& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.confusion.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < m.confusion.cols(); ++j)
      row.push_back(static_cast<long long>(m.confusion(i, j)));
    rows.push_back(row);
  }
  return {{"accuracy", m.accuracy},
          {"macro_f1", m.macro_f1},
          {"macro_precision", m.macro_precision},
          {"confusion", rows}};
}

Metrics metrics_from_json(const nlohmann::json& j) {
  Metrics m;
  m.accuracy = j.at("accuracy").get<double>();
  m.macro_f1 = j.at("macro_f1").get<double>();
  m.macro_precision = j.at("macro_precision").get<double>();
  const auto& rows = j.at("confusion");
  m.confusion = Matrix(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k)
      m.confusion(i, k) = rows[i][k].get<double>();
  return m;
}

void write_history_csv(const std::filesystem::path& path, const History& h) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "epoch,raw_loss,flooded_loss,train_accuracy,val_accuracy\n";
  f.precision(17);
  for (std::size_t e = 0; e < h.raw_loss.size(); ++e)
    f << e << ',' << h.raw_loss[e] << ',' << h.flooded_loss[e] << ',' << h.train_accuracy[e]
      << ',' << h.val_accuracy[e] << '\n';
}

void write_metrics_json(const std::filesystem::path& path, const CvResult& cv,
                        const std::string& version, const std::string& config_hash) {
  nlohmann::json j;
  j["version"] = version;
  j["config_hash"] = config_hash;
  j["folds"] = nlohmann::json::array();
  for (const FoldOutput& f : cv.folds) {
    nlohmann::json jf = metrics_to_json(f.val_metrics);
    jf["train_accuracy"] = f.train_accuracy;
    jf["best_epoch"] = f.best_epoch;
    j["folds"].push_back(jf);
  }
  j["mean"] = metrics_to_json(cv.mean);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

nlohmann::json pipeline_state_json(const PipelineConfig& pc, const ScalerState& scaler,
                                   const Adjacency& adjacency,
                                   const std::vector<std::string>& channel_names) {
  nlohmann::json j;
  j["feature_kind"] = to_string(pc.feature_kind);
  j["adjacency_kind"] = to_string(pc.adjacency_kind);
  j["mi_bins"] = pc.mi_bins;
  j["mi_source"] = pc.mi_source;
  j["segment_seconds"] = pc.segment_seconds;
  j["bandpass_lo"] = pc.bandpass_lo;
  j["bandpass_hi"] = pc.bandpass_hi;
  nlohmann::json bands = nlohmann::json::array();
  for (const auto& [lo, hi] : pc.resolved_bands()) bands.push_back({lo, hi});
  j["bands"] = bands;
  j["scaler_rows"] = scaler.mean.rows();
  j["scaler_cols"] = scaler.mean.cols();
  j["scaler_mean"] = scaler.mean.values();
  j["scaler_scale"] = scaler.scale.values();
  j["adjacency_n"] = adjacency.n();
  j["adjacency_weights"] = adjacency.weights.values();
  j["channel_names"] = channel_names;
  return j;
}

PipelineState pipeline_state_from_json(const nlohmann::json& j) {
  PipelineState st;
  st.config.feature_kind = feature_kind_from_string(j.at("feature_kind").get<std::string>());
  st.config.adjacency_kind =
      adjacency_kind_from_string(j.at("adjacency_kind").get<std::string>());
  st.config.mi_bins = j.at("mi_bins").get<std::size_t>();
  st.config.mi_source = j.at("mi_source").get<std::string>();
  st.config.segment_seconds = j.at("segment_seconds").get<double>();
  st.config.bandpass_lo = j.at("bandpass_lo").get<double>();
  st.config.bandpass_hi = j.at("bandpass_hi").get<double>();
  for (const auto& b : j.at("bands"))
    st.config.bands.emplace_back(b[0].get<double>(), b[1].get<double>());

  const std::size_t rows = j.at("scaler_rows").get<std::size_t>();
  const std::size_t cols = j.at("scaler_cols").get<std::size_t>();
  st.scaler.mean = Matrix(rows, cols);
  st.scaler.scale = Matrix(rows, cols);
  st.scaler.mean.values() = j.at("scaler_mean").get<std::vector<double>>();
  st.scaler.scale.values() = j.at("scaler_scale").get<std::vector<double>>();

  const std::size_t n = j.at("adjacency_n").get<std::size_t>();
  st.adjacency.kind = st.config.adjacency_kind;
  st.adjacency.weights = Matrix(n, n);
  st.adjacency.weights.values() = j.at("adjacency_weights").get<std::vector<double>>();

  st.channel_names = j.at("channel_names").get<std::vector<std::string>>();
  return st;
}

}  // namespace mgn
