#include "mgn/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "mgn/dsp.hpp"

namespace mgn {

namespace {

constexpr double kTwoPiE = 2.0 * M_PI * M_E;

std::size_t find_channel(const std::vector<std::string>& names, const std::string& want) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == want) return i;
  throw std::invalid_argument("montage pairs: channel '" + want + "' not in dataset");
}

}  // namespace

std::string to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::DE: return "DE";
    case FeatureKind::PSD: return "PSD";
    case FeatureKind::DASM: return "DASM";
    case FeatureKind::RASM: return "RASM";
    case FeatureKind::ASM: return "ASM";
    case FeatureKind::DCAU: return "DCAU";
  }
  return "?";
}

FeatureKind feature_kind_from_string(const std::string& s) {
  for (FeatureKind k : all_feature_kinds())
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown feature kind '" + s + "'");
}

const std::vector<FeatureKind>& all_feature_kinds() {
  static const std::vector<FeatureKind> kinds = {FeatureKind::DE,   FeatureKind::PSD,
                                                 FeatureKind::DASM, FeatureKind::RASM,
                                                 FeatureKind::ASM,  FeatureKind::DCAU};
  return kinds;
}

MontagePairs default_montage_pairs(const std::vector<std::string>& channel_names) {
  static const std::vector<std::pair<const char*, const char*>> lr = {
      {"FC3", "FC4"}, {"FC1", "FC2"}, {"C5", "C6"},   {"C3", "C4"},
      {"C1", "C2"},   {"CP3", "CP4"}, {"CP1", "CP2"}, {"P1", "P2"}};
  static const std::vector<std::pair<const char*, const char*>> fp = {
      {"FC3", "CP3"}, {"FC1", "CP1"}, {"FCz", "CPz"}, {"FC2", "CP2"}, {"FC4", "CP4"}};

  MontagePairs pairs;
  for (const auto& [a, b] : lr)
    pairs.lr_pairs.emplace_back(find_channel(channel_names, a), find_channel(channel_names, b));
  for (const auto& [a, b] : fp)
    pairs.fp_pairs.emplace_back(find_channel(channel_names, a), find_channel(channel_names, b));
  return pairs;
}

std::vector<std::pair<double, double>> default_bands() {
  std::vector<std::pair<double, double>> bands;
  const double lo = 4.0, hi = 40.0;
  const int n = 11;
  for (int i = 0; i < n; ++i)
    bands.emplace_back(lo + (hi - lo) * i / n, lo + (hi - lo) * (i + 1) / n);
  return bands;
}

double differential_entropy(const std::vector<double>& segment) {
  if (segment.size() < 2)
    throw std::invalid_argument("differential_entropy: need at least 2 samples");
  double mean = 0.0;
  for (double v : segment) mean += v;
  mean /= static_cast<double>(segment.size());
  double ss = 0.0;
  for (double v : segment) ss += (v - mean) * (v - mean);
  const double var = ss / static_cast<double>(segment.size() - 1);
  return 0.5 * std::log(kTwoPiE * std::max(var, kEps));
}

Tensor3 band_powers(const Trial& trial, const std::vector<std::pair<double, double>>& bands,
                    double seg_seconds, double fs) {
  if (bands.empty()) throw std::invalid_argument("band_powers: no bands");
  for (const auto& [lo, hi] : bands)
    if (!(0.0 < lo && lo < hi && hi <= 0.5 * fs))
      throw std::invalid_argument("band_powers: band outside (0, fs/2]");

  const std::size_t seg_len = static_cast<std::size_t>(std::llround(seg_seconds * fs));
  const std::size_t t_total = trial.samples.cols();
  if (seg_len < 2 || t_total % seg_len != 0)
    throw std::invalid_argument("band_powers: segment length must evenly divide the trial");
  const std::size_t n_seg = t_total / seg_len;
  const std::size_t n_ch = trial.samples.rows();

  Tensor3 out(n_ch, bands.size(), n_seg);
  std::vector<double> seg(seg_len);
  for (std::size_t ch = 0; ch < n_ch; ++ch) {
    for (std::size_t s = 0; s < n_seg; ++s) {
      for (std::size_t t = 0; t < seg_len; ++t) seg[t] = trial.samples(ch, s * seg_len + t);
      const auto [freqs, power] = dsp::periodogram(seg, fs);
      for (std::size_t b = 0; b < bands.size(); ++b)
        out(ch, b, s) = dsp::band_power(freqs, power, bands[b].first, bands[b].second, fs, seg_len);
    }
  }
  return out;
}

FeatureTensor band_de_features(const Trial& trial,
                               const std::vector<std::pair<double, double>>& bands,
                               double seg_seconds, double fs) {
  FeatureTensor out;
  out.kind = FeatureKind::DE;
  out.values = band_powers(trial, bands, seg_seconds, fs);
  for (double& v : out.values.values()) v = 0.5 * std::log(kTwoPiE * std::max(v, kEps));
  return out;
}

FeatureTensor psd_features(const Trial& trial,
                           const std::vector<std::pair<double, double>>& bands,
                           double seg_seconds, double fs) {
  FeatureTensor out;
  out.kind = FeatureKind::PSD;
  out.values = band_powers(trial, bands, seg_seconds, fs);
  return out;
}

FeatureTensor double_fold(const FeatureTensor& features) {
  const Tensor3& in = features.values;
  FeatureTensor out;
  out.kind = features.kind;
  out.values = Tensor3(in.dim0(), 2 * in.dim1(), in.dim2());
  for (std::size_t n = 0; n < in.dim0(); ++n)
    for (std::size_t f = 0; f < in.dim1(); ++f)
      for (std::size_t t = 0; t < in.dim2(); ++t) {
        out.values(n, f, t) = in(n, f, t);
        out.values(n, f + in.dim1(), t) = in(n, f, t);
      }
  return out;
}

FeatureTensor asym_features(const FeatureTensor& de, const MontagePairs& pairs,
                            FeatureKind kind) {
  const Tensor3& in = de.values;
  const auto& pair_list =
      (kind == FeatureKind::DCAU) ? pairs.fp_pairs : pairs.lr_pairs;
  if (pair_list.empty()) throw std::invalid_argument("asym_features: empty pair list");
  for (const auto& [a, b] : pair_list)
    if (a >= in.dim0() || b >= in.dim0() || a == b)
      throw std::invalid_argument("asym_features: pair index out of range");

  const std::size_t P = pair_list.size();
  const std::size_t F = in.dim1();
  const std::size_t T = in.dim2();

  FeatureTensor out;
  out.kind = kind;
  const bool asm_concat = (kind == FeatureKind::ASM);
  out.values = Tensor3(P, asm_concat ? 2 * F : F, T);

  for (std::size_t p = 0; p < P; ++p) {
    const auto [a, b] = pair_list[p];
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t t = 0; t < T; ++t) {
        const double left = in(a, f, t);
        const double right = in(b, f, t);
        const double diff = left - right;
        const double denom = (std::fabs(right) < kEps) ? (right < 0.0 ? -kEps : kEps) : right;
        const double ratio = left / denom;
        switch (kind) {
          case FeatureKind::DASM:
          case FeatureKind::DCAU:
            out.values(p, f, t) = diff;
            break;
          case FeatureKind::RASM:
            out.values(p, f, t) = ratio;
            break;
          case FeatureKind::ASM:
            out.values(p, f, t) = diff;
            out.values(p, f + F, t) = ratio;
            break;
          default:
            throw std::invalid_argument("asym_features: kind must be DASM/RASM/ASM/DCAU");
        }
      }
  }
  return out;
}

ScalerState fit_scaler(const std::vector<FeatureTensor>& training) {
  if (training.empty()) throw std::invalid_argument("fit_scaler: empty training set");
  const Tensor3& first = training.front().values;
  const std::size_t N = first.dim0(), F = first.dim1(), T = first.dim2();
  for (const auto& t : training)
    check_shape(t.values.same_shape(first), "fit_scaler: inconsistent tensors");

  ScalerState st;
  st.mean = Matrix(N, F);
  st.scale = Matrix(N, F, 1.0);
  const double count = static_cast<double>(training.size() * T);

  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f) {
      double sum = 0.0;
      for (const auto& tr : training)
        for (std::size_t t = 0; t < T; ++t) sum += tr.values(n, f, t);
      const double mean = sum / count;
      double ss = 0.0;
      for (const auto& tr : training)
        for (std::size_t t = 0; t < T; ++t) {
          const double d = tr.values(n, f, t) - mean;
          ss += d * d;
        }
      const double var = ss / count;
      if (var < kEps) continue;  // constant cell: identity map
      st.mean(n, f) = mean;
      st.scale(n, f) = 1.0 / std::sqrt(var);
    }
  return st;
}

FeatureTensor apply_scaler(const ScalerState& state, const FeatureTensor& t) {
  check_shape(t.values.dim0() == state.mean.rows() && t.values.dim1() == state.mean.cols(),
              "apply_scaler");
  FeatureTensor out = t;
  for (std::size_t n = 0; n < t.values.dim0(); ++n)
    for (std::size_t f = 0; f < t.values.dim1(); ++f)
      for (std::size_t s = 0; s < t.values.dim2(); ++s)
        out.values(n, f, s) = (t.values(n, f, s) - state.mean(n, f)) * state.scale(n, f);
  return out;
}

std::vector<FeatureTensor> apply_scaler(const ScalerState& state,
                                        const std::vector<FeatureTensor>& ts) {
  std::vector<FeatureTensor> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.push_back(apply_scaler(state, t));
  return out;
}

void save_features(const std::vector<FeatureTensor>& tensors,
                   const std::filesystem::path& manifest_path) {
  if (tensors.empty()) throw std::invalid_argument("save_features: nothing to write");
  const Tensor3& first = tensors.front().values;
  for (const auto& t : tensors) {
    check_shape(t.values.same_shape(first), "save_features");
    if (t.kind != tensors.front().kind)
      throw std::invalid_argument("save_features: mixed feature kinds");
  }

  const std::filesystem::path base = manifest_path.parent_path();
  if (!base.empty()) std::filesystem::create_directories(base);

  nlohmann::json m;
  m["feature_kind"] = to_string(tensors.front().kind);
  m["n_nodes"] = first.dim0();
  m["n_features"] = first.dim1();
  m["n_segments"] = first.dim2();
  m["tensors"] = nlohmann::json::array();

  for (std::size_t i = 0; i < tensors.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "features_%04zu.f32", i);
    std::ofstream f(base / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (base / name).string());
    std::vector<float> raw(tensors[i].values.size());
    for (std::size_t k = 0; k < raw.size(); ++k)
      raw[k] = static_cast<float>(tensors[i].values.values()[k]);
    f.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * 4));
    m["tensors"].push_back(name);
  }

  std::ofstream f(manifest_path);
  if (!f) throw std::runtime_error("cannot write manifest " + manifest_path.string());
  f << m.dump(2) << "\n";
}

std::vector<FeatureTensor> load_features(const std::filesystem::path& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw std::runtime_error("cannot open manifest " + manifest_path.string());
  nlohmann::json m;
  mf >> m;

  const FeatureKind kind = feature_kind_from_string(m.at("feature_kind").get<std::string>());
  const std::size_t d0 = m.at("n_nodes").get<std::size_t>();
  const std::size_t d1 = m.at("n_features").get<std::size_t>();
  const std::size_t d2 = m.at("n_segments").get<std::size_t>();
  const std::filesystem::path base = manifest_path.parent_path();

  std::vector<FeatureTensor> out;
  for (const auto& entry : m.at("tensors")) {
    const std::filesystem::path path = base / entry.get<std::string>();
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    const std::streamsize bytes = f.tellg();
    if (static_cast<std::size_t>(bytes) != d0 * d1 * d2 * 4)
      throw std::runtime_error(path.string() + ": size differs from manifest dims");
    f.seekg(0);
    std::vector<float> raw(d0 * d1 * d2);
    if (!f.read(reinterpret_cast<char*>(raw.data()), bytes))
      throw std::runtime_error("short read on " + path.string());

    FeatureTensor t;
    t.kind = kind;
    t.values = Tensor3(d0, d1, d2);
    for (std::size_t k = 0; k < raw.size(); ++k) {
      if (!std::isfinite(raw[k]))
        throw std::runtime_error(path.string() + ": non-finite value");
      t.values.values()[k] = static_cast<double>(raw[k]);
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace mgn
