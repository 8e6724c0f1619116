#include "mgn/ingest.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

#include "mgn/dsp.hpp"

namespace mgn {

namespace {

using nlohmann::json;

std::vector<float> read_raw_f32(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  const std::streamsize bytes = f.tellg();
  if (bytes % 4 != 0)
    throw std::runtime_error(path.string() + ": size not a multiple of 4 bytes");
  f.seekg(0);
  std::vector<float> out(static_cast<std::size_t>(bytes) / 4);
  if (!out.empty() && !f.read(reinterpret_cast<char*>(out.data()), bytes))
    throw std::runtime_error("short read on " + path.string());
  return out;
}

json read_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw std::runtime_error("cannot open manifest " + manifest_path.string());
  json m;
  f >> m;
  for (const char* key : {"fs", "n_channels", "channel_names", "classes", "trials"})
    if (!m.contains(key))
      throw std::runtime_error("manifest missing key '" + std::string(key) + "'");
  return m;
}

// Shared loader; `issues` null means throw on the first problem.
TrialSet load_impl(const std::filesystem::path& manifest_path,
                   std::vector<ValidationIssue>* issues) {
  auto report = [&](int idx, const std::string& msg) {
    if (issues)
      issues->push_back({idx, msg});
    else
      throw std::runtime_error((idx >= 0 ? "trial " + std::to_string(idx) + ": " : "") + msg);
  };

  const json m = read_manifest(manifest_path);
  TrialSet set;
  set.fs = m.at("fs").get<double>();
  if (!(set.fs > 0.0)) throw std::runtime_error("manifest: fs must be positive");
  const std::size_t n_channels = m.at("n_channels").get<std::size_t>();
  set.channel_names = m.at("channel_names").get<std::vector<std::string>>();
  set.class_names = m.at("classes").get<std::vector<std::string>>();
  if (set.channel_names.size() != n_channels)
    throw std::runtime_error("manifest: channel_names length differs from n_channels");

  const auto& trials = m.at("trials");
  const std::filesystem::path base = manifest_path.parent_path();
  const int n_classes = static_cast<int>(set.class_names.size());

  std::size_t t_len = 0;  // fixed by the first readable trial
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const int idx = static_cast<int>(i);
    const auto& entry = trials[i];
    Trial trial;
    trial.label = entry.at("label").get<int>();
    trial.subject_id = entry.value("subject", 0);
    if (trial.label < 0 || trial.label >= n_classes) {
      report(idx, "label " + std::to_string(trial.label) + " outside [0, " +
                      std::to_string(n_classes) + ")");
      continue;
    }

    const std::filesystem::path path = base / entry.at("path").get<std::string>();
    std::vector<float> raw;
    try {
      raw = read_raw_f32(path);
    } catch (const std::exception& e) {
      report(idx, e.what());
      continue;
    }

    if (raw.size() % n_channels != 0) {
      report(idx, path.filename().string() + ": " + std::to_string(raw.size()) +
                      " samples not divisible by " + std::to_string(n_channels) +
                      " channels");
      continue;
    }
    const std::size_t cols = raw.size() / n_channels;
    if (t_len == 0) t_len = cols;
    if (cols != t_len) {
      report(idx, path.filename().string() + ": " + std::to_string(cols) +
                      " samples/channel, expected " + std::to_string(t_len));
      continue;
    }

    trial.samples = Matrix(n_channels, cols);
    bool finite = true;
    for (std::size_t k = 0; k < raw.size(); ++k) {
      if (!std::isfinite(raw[k])) {
        report(idx, path.filename().string() + ": non-finite sample at offset " +
                        std::to_string(k));
        finite = false;
        break;
      }
      trial.samples.values()[k] = static_cast<double>(raw[k]);
    }
    if (!finite) continue;

    set.trials.push_back(std::move(trial));
  }
  return set;
}

}  // namespace

std::size_t trial_window_samples(double fs) {
  return static_cast<std::size_t>(std::llround(kTrialSeconds * fs));
}

TrialSet load_dataset(const std::filesystem::path& manifest_path) {
  return load_impl(manifest_path, nullptr);
}

std::vector<ValidationIssue> validate_dataset(const std::filesystem::path& manifest_path) {
  std::vector<ValidationIssue> issues;
  try {
    load_impl(manifest_path, &issues);
  } catch (const std::exception& e) {
    issues.push_back({-1, e.what()});
  }
  return issues;
}

void save_dataset(const TrialSet& set, const std::filesystem::path& manifest_path) {
  const std::filesystem::path base = manifest_path.parent_path();
  if (!base.empty()) std::filesystem::create_directories(base);

  json m;
  m["fs"] = set.fs;
  m["n_channels"] = set.n_channels();
  m["channel_names"] = set.channel_names;
  m["classes"] = set.class_names;
  m["trials"] = json::array();

  for (std::size_t i = 0; i < set.trials.size(); ++i) {
    const Trial& t = set.trials[i];
    char name[32];
    std::snprintf(name, sizeof(name), "trial_%04zu.f32", i);
    std::ofstream f(base / name, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + (base / name).string());
    std::vector<float> raw(t.samples.size());
    for (std::size_t k = 0; k < raw.size(); ++k)
      raw[k] = static_cast<float>(t.samples.values()[k]);
    f.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * 4));
    m["trials"].push_back({{"path", name}, {"label", t.label}, {"subject", t.subject_id}});
  }

  std::ofstream f(manifest_path);
  if (!f) throw std::runtime_error("cannot write manifest " + manifest_path.string());
  f << m.dump(2) << "\n";
}

Matrix bandpass_filter(const Matrix& samples, double lo_hz, double hi_hz, double fs) {
  if (!(0.0 < lo_hz && lo_hz < hi_hz && hi_hz < 0.5 * fs))
    throw std::invalid_argument("bandpass_filter: need 0 < lo < hi < fs/2");
  const dsp::FilterCoeffs f = dsp::butter_bandpass(4, lo_hz, hi_hz, fs);

  Matrix out(samples.rows(), samples.cols());
  std::vector<double> row(samples.cols());
  for (std::size_t ch = 0; ch < samples.rows(); ++ch) {
    for (std::size_t t = 0; t < samples.cols(); ++t) row[t] = samples(ch, t);
    const std::vector<double> y = dsp::filtfilt(f, row);
    for (std::size_t t = 0; t < samples.cols(); ++t) out(ch, t) = y[t];
  }
  return out;
}

Trial bandpass_filter(const Trial& trial, double lo_hz, double hi_hz, double fs) {
  Trial out = trial;
  out.samples = bandpass_filter(trial.samples, lo_hz, hi_hz, fs);
  return out;
}

TrialSet bandpass_filter(const TrialSet& set, double lo_hz, double hi_hz) {
  TrialSet out = set;
  for (Trial& t : out.trials) t.samples = bandpass_filter(t.samples, lo_hz, hi_hz, set.fs);
  return out;
}

Matrix window_trial(const Matrix& continuous, std::size_t cue_sample, double fs) {
  const std::size_t pre = static_cast<std::size_t>(std::llround(kPreCueSeconds * fs));
  const std::size_t len = trial_window_samples(fs);
  if (cue_sample < pre)
    throw std::out_of_range("window_trial: cue too close to recording start");
  const std::size_t start = cue_sample - pre;
  if (start + len > continuous.cols())
    throw std::out_of_range("window_trial: window past recording end");

  Matrix out(continuous.rows(), len);
  for (std::size_t ch = 0; ch < continuous.rows(); ++ch)
    for (std::size_t t = 0; t < len; ++t) out(ch, t) = continuous(ch, start + t);
  return out;
}

void quantize_to_float32(TrialSet& set) {
  for (Trial& t : set.trials)
    for (double& v : t.samples.values()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace mgn
