#include "mgn/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include "mgn/synth.hpp"

namespace mgn::cli {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<std::pair<std::string, std::string>> name_pairs_from_json(const nlohmann::json& j) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& p : j) out.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
  return out;
}

MontagePairs resolve_pairs(const RunConfig& cfg, const std::vector<std::string>& names) {
  MontagePairs defaults = default_montage_pairs(names);
  auto find = [&](const std::string& want) -> std::size_t {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == want) return i;
    throw std::invalid_argument("montage pairs: channel '" + want + "' not in dataset");
  };
  MontagePairs pairs;
  if (cfg.lr_pair_names.empty())
    pairs.lr_pairs = defaults.lr_pairs;
  else
    for (const auto& [a, b] : cfg.lr_pair_names) pairs.lr_pairs.emplace_back(find(a), find(b));
  if (cfg.fp_pair_names.empty())
    pairs.fp_pairs = defaults.fp_pairs;
  else
    for (const auto& [a, b] : cfg.fp_pair_names) pairs.fp_pairs.emplace_back(find(a), find(b));
  return pairs;
}

// Resolve name-based pair overrides against the dataset before running.
PipelineConfig pipeline_for(const RunConfig& cfg, const TrialSet& set) {
  PipelineConfig pc = cfg.pipeline;
  if (!cfg.lr_pair_names.empty() || !cfg.fp_pair_names.empty())
    pc.pairs = resolve_pairs(cfg, set.channel_names);
  return pc;
}

void print_metrics(const std::string& label, const Metrics& m) {
  std::printf("%s: accuracy %.4f, macro_f1 %.4f, macro_precision %.4f\n", label.c_str(),
              m.accuracy, m.macro_f1, m.macro_precision);
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["data"] = data.string();
  j["out"] = out.string();
  j["checkpoint"] = checkpoint.string();
  j["seed"] = train.seed;
  j["learning_rate"] = train.learning_rate;
  j["batch_size"] = train.batch_size;
  j["epochs"] = train.epochs;
  j["flood_level"] = train.flood_level;
  j["dropout"] = train.dropout;
  j["folds"] = train.folds;
  j["feature_kind"] = to_string(pipeline.feature_kind);
  j["adjacency_kind"] = to_string(pipeline.adjacency_kind);
  j["mi_bins"] = pipeline.mi_bins;
  j["mi_source"] = pipeline.mi_source;
  j["knn_k"] = pipeline.knn_k;
  j["ed_k"] = pipeline.ed_k;
  j["random_density"] = pipeline.random_density;
  j["segment_seconds"] = pipeline.segment_seconds;
  j["bandpass_lo"] = pipeline.bandpass_lo;
  j["bandpass_hi"] = pipeline.bandpass_hi;
  nlohmann::json bands = nlohmann::json::array();
  for (const auto& [lo, hi] : pipeline.resolved_bands()) bands.push_back({lo, hi});
  j["bands"] = bands;
  j["n_blocks"] = hyper.n_blocks;
  j["channels"] = hyper.channels;
  j["cheb_order"] = hyper.cheb_order;
  j["temporal_kernel"] = hyper.temporal_kernel;
  j["n_classes"] = hyper.n_classes;
  j["attention_combine"] = to_string(hyper.attention_combine);
  j["depth_max"] = depth_max;
  j["n_synth_trials"] = n_synth_trials;
  nlohmann::json lr = nlohmann::json::array(), fp = nlohmann::json::array();
  for (const auto& [a, b] : lr_pair_names) lr.push_back({a, b});
  for (const auto& [a, b] : fp_pair_names) fp.push_back({a, b});
  j["lr_pairs"] = lr;
  j["fp_pairs"] = fp;
  if (pipeline.montage) {
    nlohmann::json mont = nlohmann::json::array();
    for (std::size_t i = 0; i < pipeline.montage->names.size(); ++i)
      mont.push_back({{"name", pipeline.montage->names[i]},
                      {"x", pipeline.montage->coords[i].first},
                      {"y", pipeline.montage->coords[i].second}});
    j["montage"] = mont;
  }
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  c.data = j.value("data", std::string());
  c.out = j.value("out", std::string("mgn_out"));
  c.checkpoint = j.value("checkpoint", std::string());
  c.train.seed = j.value("seed", std::uint64_t{0});
  c.train.learning_rate = j.value("learning_rate", 7.6e-4);
  c.train.batch_size = j.value("batch_size", std::size_t{32});
  c.train.epochs = j.value("epochs", std::size_t{500});
  c.train.flood_level = j.value("flood_level", 0.5);
  c.train.dropout = j.value("dropout", 0.5);
  c.train.folds = j.value("folds", std::size_t{4});
  c.pipeline.feature_kind = feature_kind_from_string(j.value("feature_kind", std::string("DE")));
  c.pipeline.adjacency_kind =
      adjacency_kind_from_string(j.value("adjacency_kind", std::string("MI")));
  c.pipeline.mi_bins = j.value("mi_bins", std::size_t{16});
  c.pipeline.mi_source = j.value("mi_source", std::string("signals"));
  if (c.pipeline.mi_source != "signals" && c.pipeline.mi_source != "features")
    throw std::invalid_argument("config: mi_source must be 'signals' or 'features'");
  c.pipeline.knn_k = j.value("knn_k", std::size_t{4});
  c.pipeline.ed_k = j.value("ed_k", std::size_t{4});
  c.pipeline.random_density = j.value("random_density", 0.2);
  c.pipeline.segment_seconds = j.value("segment_seconds", 0.5);
  c.pipeline.bandpass_lo = j.value("bandpass_lo", 4.0);
  c.pipeline.bandpass_hi = j.value("bandpass_hi", 40.0);
  if (j.contains("bands"))
    for (const auto& b : j.at("bands"))
      c.pipeline.bands.emplace_back(b[0].get<double>(), b[1].get<double>());
  c.hyper.n_blocks = j.value("n_blocks", std::size_t{4});
  if (j.contains("channels"))
    c.hyper.channels = j.at("channels").get<std::vector<std::size_t>>();
  else
    c.hyper.channels.assign(c.hyper.n_blocks, 64);
  if (c.hyper.channels.size() == 1 && c.hyper.n_blocks > 1)
    c.hyper.channels.assign(c.hyper.n_blocks, c.hyper.channels[0]);
  c.hyper.cheb_order = j.value("cheb_order", std::size_t{3});
  c.hyper.temporal_kernel = j.value("temporal_kernel", std::size_t{3});
  c.hyper.n_classes = j.value("n_classes", std::size_t{4});
  c.hyper.attention_combine =
      attention_combine_from_string(j.value("attention_combine", std::string("product")));
  c.hyper.dropout = c.train.dropout;
  c.depth_max = j.value("depth_max", std::size_t{8});
  c.n_synth_trials = j.value("n_synth_trials", std::size_t{64});
  if (j.contains("lr_pairs")) c.lr_pair_names = name_pairs_from_json(j.at("lr_pairs"));
  if (j.contains("fp_pairs")) c.fp_pair_names = name_pairs_from_json(j.at("fp_pairs"));
  if (j.contains("montage")) {
    Montage2D m;
    for (const auto& e : j.at("montage")) {
      m.names.push_back(e.at("name").get<std::string>());
      m.coords.emplace_back(e.at("x").get<double>(), e.at("y").get<double>());
    }
    c.pipeline.montage = std::move(m);
  }
  return c;
}

RunConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config parse error in " + path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

std::string config_hash(const RunConfig& cfg) {
  // The output directory does not define the experiment; dropping it keeps
  // reruns into different directories byte-identical.
  nlohmann::json j = cfg.to_json();
  j.erase("out");
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

void write_config_echo(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out);
  nlohmann::json j = cfg.to_json();
  j["version"] = kToolVersion;
  std::ofstream f(cfg.out / "config.json");
  if (!f) throw std::runtime_error("cannot write config echo");
  f << j.dump(2) << "\n";
}

int run_validate(const RunConfig& cfg) {
  write_config_echo(cfg);
  const auto issues = validate_dataset(cfg.data);

  TrialSet set;
  bool loaded = false;
  if (issues.empty()) {
    set = load_dataset(cfg.data);
    loaded = true;
  }
  for (const auto& issue : issues) {
    if (issue.trial_index >= 0)
      std::cout << "trial " << issue.trial_index << ": " << issue.message << "\n";
    else
      std::cout << issue.message << "\n";
  }
  std::cout << issues.size() << " issues\n";
  if (loaded && set.trials.empty())
    std::cout << "warning: manifest lists no trials\n";
  return issues.empty() ? 0 : 1;
}

int run_build_adjacency(const RunConfig& cfg) {
  write_config_echo(cfg);
  const TrialSet raw = load_dataset(cfg.data);
  if (raw.trials.empty()) throw std::runtime_error("dataset has no trials");
  const PipelineConfig pc = pipeline_for(cfg, raw);

  const TrialSet filtered = bandpass_filter(raw, pc.bandpass_lo, pc.bandpass_hi);
  const std::vector<FeatureTensor> features = build_features(filtered, pc);
  const Adjacency adj =
      build_adjacency(pc, filtered, features, filtered.channel_names, cfg.train.seed);

  const std::filesystem::path out_path = cfg.out / "adjacency.json";
  save_adjacency(adj, out_path);

  double wmin = 0.0, wmax = 0.0;
  std::size_t nonzero = 0;
  const std::size_t n = adj.n();
  bool first = true;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double w = adj.weights(i, j);
      if (w != 0.0) ++nonzero;
      if (first || w < wmin) wmin = w;
      if (first || w > wmax) wmax = w;
      first = false;
    }
  const double density =
      n > 1 ? static_cast<double>(nonzero) / static_cast<double>(n * (n - 1)) : 0.0;
  std::printf("%s adjacency over %zu nodes: density %.3f, weights [%.4f, %.4f]\n",
              to_string(adj.kind).c_str(), n, density, wmin, wmax);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int run_train(const RunConfig& cfg) {
  write_config_echo(cfg);
  const TrialSet raw = load_dataset(cfg.data);
  if (raw.trials.empty()) throw std::runtime_error("dataset has no trials");
  const PipelineConfig pc = pipeline_for(cfg, raw);

  const CvResult cv = run_cv(raw, pc, cfg.train, cfg.hyper);

  const std::string hash = config_hash(cfg);
  for (std::size_t f = 0; f < cv.folds.size(); ++f) {
    const FoldOutput& fold = cv.folds[f];
    write_history_csv(cfg.out / ("history_fold" + std::to_string(f) + ".csv"), fold.history);

    const nlohmann::json extra =
        pipeline_state_json(pc, fold.scaler, fold.adjacency, raw.channel_names);
    const std::size_t t_len = static_cast<std::size_t>(
        std::llround(kTrialSeconds / pc.segment_seconds));
    const ModelDims real_dims{fold.adjacency.n(), fold.scaler.mean.cols(), t_len};
    save_checkpoint(cfg.out / ("checkpoint_fold" + std::to_string(f) + ".bin"), fold.params,
                    cfg.hyper, real_dims, cfg.train.seed + f, extra);
    save_checkpoint(cfg.out / ("checkpoint_fold" + std::to_string(f) + "_best.bin"),
                    fold.best_params, cfg.hyper, real_dims, cfg.train.seed + f, extra);
    print_metrics("fold " + std::to_string(f), fold.val_metrics);
  }
  save_adjacency(cv.folds[0].adjacency, cfg.out / "adjacency.json");
  write_metrics_json(cfg.out / "metrics.json", cv, kToolVersion, hash);
  print_metrics("mean", cv.mean);
  return 0;
}

int run_evaluate(const RunConfig& cfg) {
  write_config_echo(cfg);
  if (cfg.checkpoint.empty()) throw std::invalid_argument("evaluate: no checkpoint given");
  const Checkpoint ck = load_checkpoint(cfg.checkpoint);
  if (ck.extra.is_null()) throw std::runtime_error("checkpoint has no pipeline state");
  const PipelineState st = pipeline_state_from_json(ck.extra);

  const TrialSet raw = load_dataset(cfg.data);
  if (raw.trials.empty()) throw std::runtime_error("dataset has no trials");
  if (raw.channel_names != st.channel_names)
    throw std::runtime_error("dataset channels differ from the checkpoint's");

  const TrialSet filtered =
      bandpass_filter(raw, st.config.bandpass_lo, st.config.bandpass_hi);
  const std::vector<FeatureTensor> features =
      apply_scaler(st.scaler, build_features(filtered, st.config));

  SampleSet set;
  for (std::size_t i = 0; i < features.size(); ++i) {
    set.inputs.push_back(features[i].values);
    set.labels.push_back(raw.trials[i].label);
  }

  const Matrix laplacian = normalized_laplacian(st.adjacency);
  const ChebBasis basis = chebyshev_basis(laplacian, ck.hyper.cheb_order);
  const Metrics m = evaluate(ck.params, set, ck.hyper, basis);

  nlohmann::json j = metrics_to_json(m);
  j["version"] = kToolVersion;
  j["config_hash"] = config_hash(cfg);
  std::ofstream f(cfg.out / "metrics.json");
  f << j.dump(2) << "\n";
  print_metrics("evaluate", m);
  return 0;
}

int run_ablate(const RunConfig& cfg, const std::string& axis) {
  write_config_echo(cfg);
  const TrialSet raw = load_dataset(cfg.data);
  if (raw.trials.empty()) throw std::runtime_error("dataset has no trials");
  const PipelineConfig base_pc = pipeline_for(cfg, raw);

  struct Row {
    std::string setting;
    Metrics metrics;
    double seconds;
  };
  std::vector<Row> rows;

  auto timed_cv = [&](const PipelineConfig& pc, const Hyper& hy, const std::string& name) {
    const auto start = std::chrono::steady_clock::now();
    const CvResult cv = run_cv(raw, pc, cfg.train, hy);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rows.push_back({name, cv.mean, secs});
    std::printf("%-10s accuracy %.4f  macro_f1 %.4f  macro_precision %.4f  (%.2fs)\n",
                name.c_str(), cv.mean.accuracy, cv.mean.macro_f1, cv.mean.macro_precision,
                secs);
  };

  if (axis == "adjacency") {
    for (AdjacencyKind k : all_adjacency_kinds()) {
      PipelineConfig pc = base_pc;
      pc.adjacency_kind = k;
      timed_cv(pc, cfg.hyper, to_string(k));
    }
  } else if (axis == "feature") {
    for (FeatureKind k : all_feature_kinds()) {
      PipelineConfig pc = base_pc;
      pc.feature_kind = k;
      timed_cv(pc, cfg.hyper, to_string(k));
    }
  } else if (axis == "depth") {
    for (std::size_t depth = 1; depth <= cfg.depth_max; ++depth) {
      Hyper hy = cfg.hyper;
      hy.n_blocks = depth;
      hy.channels.assign(depth, cfg.hyper.channels.front());
      timed_cv(base_pc, hy, std::to_string(depth));
    }
  } else {
    throw std::invalid_argument("ablate: axis must be adjacency, feature, or depth");
  }

  const std::filesystem::path out_path = cfg.out / ("ablation_" + axis + ".csv");
  std::ofstream f(out_path);
  if (!f) throw std::runtime_error("cannot write " + out_path.string());
  f << "setting,accuracy,macro_f1,macro_precision,wall_time_s\n";
  f.precision(17);
  for (const Row& r : rows)
    f << r.setting << ',' << r.metrics.accuracy << ',' << r.metrics.macro_f1 << ','
      << r.metrics.macro_precision << ',' << r.seconds << '\n';
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int run_report(const RunConfig& cfg) {
  nlohmann::json report;
  report["version"] = kToolVersion;

  const std::filesystem::path cfg_path = cfg.out / "config.json";
  if (std::filesystem::exists(cfg_path)) {
    std::ifstream f(cfg_path);
    nlohmann::json j;
    f >> j;
    report["config"] = j;
  }

  const std::filesystem::path metrics_path = cfg.out / "metrics.json";
  if (std::filesystem::exists(metrics_path)) {
    std::ifstream f(metrics_path);
    nlohmann::json j;
    f >> j;
    report["metrics"] = j;
    if (j.contains("mean")) print_metrics("mean", metrics_from_json(j.at("mean")));
  }

  for (const char* axis : {"adjacency", "feature", "depth"}) {
    const std::filesystem::path p = cfg.out / (std::string("ablation_") + axis + ".csv");
    if (!std::filesystem::exists(p)) continue;
    std::ifstream f(p);
    std::string line;
    nlohmann::json rows = nlohmann::json::array();
    std::getline(f, line);  // header
    std::cout << "ablation over " << axis << ":\n";
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      rows.push_back(line);
      std::cout << "  " << line << "\n";
    }
    report[std::string("ablation_") + axis] = rows;
  }

  std::ofstream f(cfg.out / "report.json");
  if (!f) throw std::runtime_error("cannot write report.json");
  f << report.dump(2) << "\n";
  std::cout << "wrote " << (cfg.out / "report.json") << "\n";
  return 0;
}

int run_synth(const RunConfig& cfg) {
  write_config_echo(cfg);
  const TrialSet set = make_separable_trialset(cfg.n_synth_trials, cfg.train.seed);
  const std::filesystem::path manifest = cfg.out / "manifest.json";
  save_dataset(set, manifest);
  std::cout << "wrote " << set.trials.size() << " trials to " << manifest << "\n";
  return 0;
}

}  // namespace mgn::cli
