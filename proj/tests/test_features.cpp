#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "mgn/features.hpp"
#include "mgn/rng.hpp"
#include "mgn/synth.hpp"
#include "test_util.hpp"

using namespace mgn;
using testutil::sine;

namespace {

constexpr double kTwoPiE = 2.0 * M_PI * M_E;

Trial trial_from_rows(const std::vector<std::vector<double>>& rows) {
  Trial t;
  t.samples = Matrix(rows.size(), rows[0].size());
  for (std::size_t ch = 0; ch < rows.size(); ++ch)
    for (std::size_t i = 0; i < rows[ch].size(); ++i) t.samples(ch, i) = rows[ch][i];
  return t;
}

FeatureTensor tensor_1x1(const std::vector<double>& trial_values, std::size_t which) {
  FeatureTensor t;
  t.values = Tensor3(1, 1, 1);
  t.values(0, 0, 0) = trial_values[which];
  return t;
}

}  // namespace

TEST_CASE("differential entropy matches the Gaussian closed form") {
  Rng rng(3);
  std::vector<double> x(100000);
  for (double& v : x) v = rng.normal();
  CHECK(differential_entropy(x) == doctest::Approx(0.5 * std::log(kTwoPiE)).epsilon(0.02));
}

TEST_CASE("differential entropy obeys the scale and shift laws") {
  Rng rng(4);
  std::vector<double> x(512);
  for (double& v : x) v = rng.uniform(-2.0, 3.0);
  const double base = differential_entropy(x);

  std::vector<double> doubled = x, shifted = x, scaled = x;
  for (double& v : doubled) v *= 2.0;
  for (double& v : shifted) v += 17.25;
  for (double& v : scaled) v *= 0.3;

  CHECK(differential_entropy(doubled) - base == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(differential_entropy(shifted) == doctest::Approx(base).epsilon(1e-9));
  CHECK(differential_entropy(scaled) - base ==
        doctest::Approx(std::log(0.3)).epsilon(1e-9));
}

TEST_CASE("constant segments hit the variance floor") {
  const std::vector<double> flat(100, 3.5);
  const double floor_de = 0.5 * std::log(kTwoPiE * 1e-8);
  CHECK(differential_entropy(flat) == doctest::Approx(floor_de));
  CHECK(std::isfinite(differential_entropy(flat)));
  CHECK_THROWS_AS(differential_entropy({1.0}), std::invalid_argument);
}

TEST_CASE("a 10 Hz tone dominates its band's entropy in every segment") {
  const double fs = 250.0;
  Trial trial = trial_from_rows({sine(10.0, fs, 1125), sine(10.0, fs, 1125, 2.0, 0.3)});
  const auto bands = default_bands();
  const FeatureTensor de = band_de_features(trial, bands, 0.5, fs);

  // 10 Hz lies in the second of the 11 equal 4-40 Hz bands.
  std::size_t expected = 0;
  for (std::size_t b = 0; b < bands.size(); ++b)
    if (bands[b].first <= 10.0 && 10.0 < bands[b].second) expected = b;
  REQUIRE(expected == 1);

  for (std::size_t ch = 0; ch < de.values.dim0(); ++ch)
    for (std::size_t s = 0; s < de.values.dim2(); ++s) {
      std::size_t best = 0;
      for (std::size_t b = 1; b < bands.size(); ++b)
        if (de.values(ch, b, s) > de.values(ch, best, s)) best = b;
      CHECK(best == expected);
    }
}

TEST_CASE("white noise spreads entropy evenly over the 11 bands") {
  const double fs = 250.0;
  Rng rng(9);
  const auto bands = default_bands();
  std::vector<double> mean_de(bands.size(), 0.0);
  std::size_t count = 0;
  for (int trial_i = 0; trial_i < 100; ++trial_i) {
    std::vector<double> row(1125);
    for (double& v : row) v = rng.normal();
    const FeatureTensor de = band_de_features(trial_from_rows({row}), bands, 0.5, fs);
    for (std::size_t b = 0; b < bands.size(); ++b)
      for (std::size_t s = 0; s < de.values.dim2(); ++s) mean_de[b] += de.values(0, b, s);
    count += de.values.dim2();
  }
  for (double& v : mean_de) v /= static_cast<double>(count);
  const double lo = *std::min_element(mean_de.begin(), mean_de.end());
  const double hi = *std::max_element(mean_de.begin(), mean_de.end());
  CHECK(hi - lo < 0.3);
}

TEST_CASE("zero trials produce only the floor entropy") {
  Trial zero = trial_from_rows({std::vector<double>(1125, 0.0)});
  const FeatureTensor de = band_de_features(zero, default_bands(), 0.5, 250.0);
  const double floor_de = 0.5 * std::log(kTwoPiE * 1e-8);
  for (double v : de.values.values()) CHECK(v == doctest::Approx(floor_de));
}

TEST_CASE("double fold duplicates the feature axis") {
  FeatureTensor in;
  in.values = Tensor3(22, 11, 9);
  Rng rng(1);
  for (double& v : in.values.values()) v = rng.normal();

  const FeatureTensor out = double_fold(in);
  CHECK(out.values.dim0() == 22);
  CHECK(out.values.dim1() == 22);
  CHECK(out.values.dim2() == 9);
  for (std::size_t n = 0; n < 22; ++n)
    for (std::size_t f = 0; f < 11; ++f)
      for (std::size_t t = 0; t < 9; ++t) {
        CHECK(out.values(n, f, t) == in.values(n, f, t));
        CHECK(out.values(n, f + 11, t) == in.values(n, f, t));
      }

  FeatureTensor ones;
  ones.values = Tensor3(3, 11, 2, 1.0);
  const FeatureTensor folded_ones = double_fold(ones);
  for (double v : folded_ones.values.values()) CHECK(v == 1.0);
}

TEST_CASE("asymmetry features evaluate the pair arithmetic") {
  // Four nodes, one feature, one segment. Pair (0,1) has DE 2 vs 1; pair
  // (2,3) is symmetric.
  FeatureTensor de;
  de.values = Tensor3(4, 1, 1);
  de.values(0, 0, 0) = 2.0;
  de.values(1, 0, 0) = 1.0;
  de.values(2, 0, 0) = 0.7;
  de.values(3, 0, 0) = 0.7;
  MontagePairs pairs;
  pairs.lr_pairs = {{0, 1}, {2, 3}};
  pairs.fp_pairs = {{2, 3}};

  const FeatureTensor dasm = asym_features(de, pairs, FeatureKind::DASM);
  CHECK(dasm.values(0, 0, 0) == doctest::Approx(1.0));
  CHECK(dasm.values(1, 0, 0) == doctest::Approx(0.0));

  const FeatureTensor rasm = asym_features(de, pairs, FeatureKind::RASM);
  CHECK(rasm.values(0, 0, 0) == doctest::Approx(2.0));
  CHECK(rasm.values(1, 0, 0) == doctest::Approx(1.0));

  const FeatureTensor asm_t = asym_features(de, pairs, FeatureKind::ASM);
  CHECK(asm_t.values.dim1() == 2);  // DASM then RASM along the feature axis
  CHECK(asm_t.values(0, 0, 0) == doctest::Approx(1.0));
  CHECK(asm_t.values(0, 1, 0) == doctest::Approx(2.0));
  CHECK(asm_t.values.dim1() == dasm.values.dim1() + rasm.values.dim1());

  const FeatureTensor dcau = asym_features(de, pairs, FeatureKind::DCAU);
  CHECK(dcau.values.dim0() == 1);
  CHECK(dcau.values(0, 0, 0) == doctest::Approx(0.0));

  MontagePairs empty;
  CHECK_THROWS_AS(asym_features(de, empty, FeatureKind::DASM), std::invalid_argument);
}

TEST_CASE("RASM floors a vanishing denominator") {
  FeatureTensor de;
  de.values = Tensor3(2, 1, 1);
  de.values(0, 0, 0) = 3.0;
  de.values(1, 0, 0) = 0.0;  // right side of the pair
  MontagePairs pairs;
  pairs.lr_pairs = {{0, 1}};

  const FeatureTensor rasm = asym_features(de, pairs, FeatureKind::RASM);
  CHECK(std::isfinite(rasm.values(0, 0, 0)));
  CHECK(rasm.values(0, 0, 0) == doctest::Approx(3.0 / 1e-8));

  de.values(1, 0, 0) = -2.0;  // negative entropies divide as-is
  const FeatureTensor neg = asym_features(de, pairs, FeatureKind::RASM);
  CHECK(neg.values(0, 0, 0) == doctest::Approx(-1.5));
}

TEST_CASE("PSD features carry the tone power and scale quadratically") {
  const double fs = 250.0;
  const Trial unit = trial_from_rows({sine(10.0, fs, 1125)});
  const Trial loud = trial_from_rows({sine(10.0, fs, 1125, 2.0)});
  const auto bands = default_bands();

  const FeatureTensor p1 = psd_features(unit, bands, 0.5, fs);
  for (std::size_t s = 0; s < p1.values.dim2(); ++s) {
    double total = 0.0;
    for (std::size_t b = 0; b < bands.size(); ++b) total += p1.values(0, b, s);
    CHECK(total == doctest::Approx(0.5).epsilon(0.05));
  }

  const FeatureTensor p4 = psd_features(loud, bands, 0.5, fs);
  for (std::size_t i = 0; i < p1.values.size(); ++i)
    CHECK(p4.values.values()[i] ==
          doctest::Approx(4.0 * p1.values.values()[i]).epsilon(1e-12));

  const Trial zero = trial_from_rows({std::vector<double>(1125, 0.0)});
  const FeatureTensor pz = psd_features(zero, bands, 0.5, fs);
  for (double v : pz.values.values()) CHECK(v == 0.0);
}

TEST_CASE("standard scaling normalizes training cells") {
  // Two trials with values {0, 2} in the only cell.
  std::vector<FeatureTensor> train = {tensor_1x1({0.0, 2.0}, 0), tensor_1x1({0.0, 2.0}, 1)};
  const ScalerState st = fit_scaler(train);
  const auto scaled = apply_scaler(st, train);
  CHECK(scaled[0].values(0, 0, 0) == doctest::Approx(-1.0));
  CHECK(scaled[1].values(0, 0, 0) == doctest::Approx(1.0));
}

TEST_CASE("scaling already-standardized data is the identity") {
  std::vector<FeatureTensor> train = {tensor_1x1({-1.0, 1.0}, 0), tensor_1x1({-1.0, 1.0}, 1)};
  const ScalerState st = fit_scaler(train);
  const auto scaled = apply_scaler(st, train);
  CHECK(scaled[0].values(0, 0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(scaled[1].values(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("constant cells pass through the scaler unchanged") {
  std::vector<FeatureTensor> train = {tensor_1x1({5.5, 5.5}, 0), tensor_1x1({5.5, 5.5}, 1)};
  const ScalerState st = fit_scaler(train);
  CHECK(apply_scaler(st, train)[0].values(0, 0, 0) == 5.5);
}

TEST_CASE("scaler statistics hold over a realistic training fold") {
  Rng rng(21);
  std::vector<FeatureTensor> train;
  for (int i = 0; i < 12; ++i) {
    FeatureTensor t;
    t.values = Tensor3(5, 4, 3);
    for (double& v : t.values.values()) v = 2.0 + 3.0 * rng.normal();
    train.push_back(std::move(t));
  }
  const ScalerState st = fit_scaler(train);
  const auto scaled = apply_scaler(st, train);

  for (std::size_t n = 0; n < 5; ++n)
    for (std::size_t f = 0; f < 4; ++f) {
      double mean = 0.0, var = 0.0;
      const double count = 12.0 * 3.0;
      for (const auto& t : scaled)
        for (std::size_t s = 0; s < 3; ++s) mean += t.values(n, f, s);
      mean /= count;
      for (const auto& t : scaled)
        for (std::size_t s = 0; s < 3; ++s) {
          const double d = t.values(n, f, s) - mean;
          var += d * d;
        }
      var /= count;
      CHECK(std::fabs(mean) < 1e-9);
      CHECK(std::fabs(var - 1.0) < 1e-6);
    }
}

TEST_CASE("default montage pairs resolve against the channel list") {
  const auto& names = montage22_names();
  const MontagePairs pairs = default_montage_pairs(names);
  REQUIRE(pairs.lr_pairs.size() == 8);
  REQUIRE(pairs.fp_pairs.size() == 5);
  CHECK(names[pairs.lr_pairs[0].first] == "FC3");
  CHECK(names[pairs.lr_pairs[0].second] == "FC4");
  CHECK(names[pairs.fp_pairs[2].first] == "FCz");
  CHECK(names[pairs.fp_pairs[2].second] == "CPz");

  CHECK_THROWS_AS(default_montage_pairs({"A", "B"}), std::invalid_argument);
}

TEST_CASE("feature tensors round-trip through the disk convention") {
  Rng rng(27);
  std::vector<FeatureTensor> tensors;
  for (int i = 0; i < 3; ++i) {
    FeatureTensor t;
    t.kind = FeatureKind::DCAU;
    t.values = Tensor3(5, 11, 9);
    for (double& v : t.values.values())
      v = static_cast<double>(static_cast<float>(rng.normal()));
    tensors.push_back(std::move(t));
  }

  testutil::TempDir dir("feat_io");
  save_features(tensors, dir.path() / "features.json");
  const auto back = load_features(dir.path() / "features.json");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].kind == FeatureKind::DCAU);
    REQUIRE(back[i].values.same_shape(tensors[i].values));
    for (std::size_t k = 0; k < back[i].values.size(); ++k)
      CHECK(back[i].values.values()[k] == tensors[i].values.values()[k]);
  }

  CHECK_THROWS_AS(save_features({}, dir.path() / "empty.json"), std::invalid_argument);
}

TEST_CASE("band and segment preconditions are enforced") {
  Trial t = trial_from_rows({std::vector<double>(1125, 0.0)});
  CHECK_THROWS_AS(band_de_features(t, {{0.0, 10.0}}, 0.5, 250.0), std::invalid_argument);
  CHECK_THROWS_AS(band_de_features(t, {{4.0, 200.0}}, 0.5, 250.0), std::invalid_argument);
  CHECK_THROWS_AS(band_de_features(t, default_bands(), 0.7, 250.0), std::invalid_argument);
}
