#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tacdef/backdoor.hpp"
#include "tacdef/nn.hpp"

using namespace tacdef;
using namespace tacdef::backdoor;

namespace {

nn::Dataset gaussian_blobs(std::size_t n, std::size_t d, std::size_t classes, double sep,
                           std::uint64_t seed, Matrix* means_out = nullptr) {
  Rng rng(seed);
  Matrix means(classes, d);
  for (std::size_t k = 0; k < classes; ++k) {
    auto row = means.row(k);
    for (double& v : row) v = rng.normal();
    const double nm = norm2(row);
    for (double& v : row) v *= sep / nm;
  }
  nn::Dataset ds;
  ds.inputs = Matrix(n, d);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = i % classes;
    for (std::size_t t = 0; t < d; ++t)
      ds.inputs(i, t) = means(ds.labels[i], t) + rng.normal();
  }
  if (means_out) *means_out = means;
  return ds;
}

// Single-layer nearest-mean classifier: w_c = mu_c, b_c = -||mu_c||^2 / 2.
nn::MlpParams nearest_mean_model(const Matrix& means) {
  nn::MlpParams params;
  nn::MlpParams::Layer layer{Matrix(means.cols(), means.rows()), Vector(means.rows())};
  for (std::size_t c = 0; c < means.rows(); ++c) {
    layer.bias[c] = -0.5 * norm2_sq(means.row(c));
    for (std::size_t t = 0; t < means.cols(); ++t) layer.weights(t, c) = means(c, t);
  }
  params.layers.push_back(std::move(layer));
  return params;
}

// Always predicts `cls` regardless of the input.
nn::MlpParams constant_model(std::size_t d_in, std::size_t classes, std::size_t cls) {
  nn::MlpParams params;
  nn::MlpParams::Layer layer{Matrix(d_in, classes), Vector(classes, 0.0)};
  layer.bias[cls] = 50.0;
  params.layers.push_back(std::move(layer));
  return params;
}

}  // namespace

TEST_CASE("apply_trigger is plain addition") {
  Trigger zero = make_sparse_trigger(3, 0, 0.0, 0, 0.1);
  CHECK(apply_trigger({1.0, 2.0, 3.0}, zero) == Vector{1.0, 2.0, 3.0});

  Trigger t = make_sparse_trigger(3, 2, 1.5, 0, 0.1);
  CHECK(apply_trigger({0.0, 0.0, 0.0}, t) == Vector{1.5, 1.5, 0.0});

  Rng rng(7);
  Vector x(3);
  for (double& v : x) v = rng.normal();
  const Vector once = apply_trigger(x, t);
  const Vector twice = apply_trigger(once, t);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(twice[i] == doctest::Approx(x[i] + 2.0 * t.delta[i]).epsilon(1e-14));

  CHECK_THROWS_AS(apply_trigger({1.0}, t), std::invalid_argument);
}

TEST_CASE("poison_dataset duplicates exactly round(rate * n) rows") {
  const nn::Dataset ds = gaussian_blobs(10, 4, 2, 5.0, 11);
  Trigger t = make_sparse_trigger(4, 1, 100.0, 1, 0.1);
  Rng rng(12);
  const nn::Dataset poisoned = poison_dataset(ds, t, rng);
  CHECK(poisoned.size() == 11);

  Trigger near_all = make_sparse_trigger(4, 1, 100.0, 1, 0.995);
  const nn::Dataset ds100 = gaussian_blobs(100, 4, 2, 5.0, 13);
  Rng rng2(14);
  const nn::Dataset heavy = poison_dataset(ds100, near_all, rng2);
  CHECK(heavy.size() == 200);
}

TEST_CASE("poisoned rows are originals plus delta, relabeled to the target") {
  const nn::Dataset ds = gaussian_blobs(40, 4, 4, 5.0, 21);
  // A huge first-coordinate delta makes poisoned rows identifiable after the shuffle.
  Trigger t = make_sparse_trigger(4, 1, 1000.0, 2, 0.25);
  Rng rng(22);
  const nn::Dataset poisoned = poison_dataset(ds, t, rng);
  REQUIRE(poisoned.size() == 50);

  std::size_t found = 0;
  for (std::size_t i = 0; i < poisoned.size(); ++i) {
    if (poisoned.inputs(i, 0) < 500.0) continue;
    ++found;
    CHECK(poisoned.labels[i] == 2);
    // must match some original row shifted by delta
    bool matched = false;
    for (std::size_t j = 0; j < ds.size() && !matched; ++j) {
      bool same = true;
      for (std::size_t c = 0; c < 4; ++c)
        if (poisoned.inputs(i, c) != ds.inputs(j, c) + t.delta[c]) same = false;
      matched = same;
    }
    CHECK(matched);
  }
  CHECK(found == 10);
}

TEST_CASE("evaluate: a perfect model with a null trigger has zero asr") {
  Matrix means;
  const nn::Dataset ds = gaussian_blobs(200, 6, 4, 12.0, 31, &means);
  const nn::MlpParams model = nearest_mean_model(means);
  Trigger null_trigger = make_sparse_trigger(6, 0, 0.0, 1, 0.1);
  const Metrics m = evaluate(model, ds, null_trigger);
  CHECK(m.acc == 1.0);
  CHECK(m.asr == 0.0);
}

TEST_CASE("evaluate: a constant-p model scores asr 1 and acc = freq(p)") {
  const nn::Dataset ds = gaussian_blobs(100, 4, 4, 5.0, 41);
  const nn::MlpParams model = constant_model(4, 4, 1);
  Trigger t = make_sparse_trigger(4, 2, 3.0, 1, 0.1);
  const Metrics m = evaluate(model, ds, t);
  CHECK(m.asr == 1.0);
  CHECK(m.acc == doctest::Approx(0.25));
}

TEST_CASE("asr ignores rows whose true class is already the target") {
  const nn::Dataset ds = gaussian_blobs(60, 4, 3, 5.0, 51);
  const nn::MlpParams model = constant_model(4, 3, 0);
  Trigger t = make_sparse_trigger(4, 1, 3.0, 0, 0.1);
  const Metrics m = evaluate(model, ds, t);
  CHECK(m.asr == 1.0);  // label-0 rows sit outside the denominator

  // All rows already in the target class: an empty denominator reads as 0.
  nn::Dataset all_p = ds;
  std::fill(all_p.labels.begin(), all_p.labels.end(), 0);
  CHECK(evaluate(model, all_p, t).asr == 0.0);
}

TEST_CASE("asr is invariant to the test-row order") {
  Matrix means;
  const nn::Dataset ds = gaussian_blobs(80, 5, 4, 6.0, 61, &means);
  const nn::MlpParams model = nearest_mean_model(means);
  Trigger t = make_sparse_trigger(5, 2, 4.0, 1, 0.1);
  const Metrics base = evaluate(model, ds, t);

  nn::Dataset reversed;
  reversed.inputs = Matrix(ds.size(), 5);
  reversed.labels.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t j = ds.size() - 1 - i;
    std::copy(ds.inputs.row(j).begin(), ds.inputs.row(j).end(), reversed.inputs.row(i).begin());
    reversed.labels[i] = ds.labels[j];
  }
  const Metrics perm = evaluate(model, reversed, t);
  CHECK(base.acc == perm.acc);
  CHECK(base.asr == perm.asr);
}

TEST_CASE("der reproduces the published removal rows within 0.01") {
  struct Row {
    double acc0, asr0, acc1, asr1, expected_pct;
  };
  const Row rows[] = {
      {93.81, 100.00, 92.03, 10.88, 93.67}, {94.00, 100.00, 92.01, 0.98, 98.52},
      {93.29, 99.91, 91.84, 1.69, 98.39},   {93.41, 99.59, 92.39, 0.52, 99.02},
      {93.57, 98.81, 92.37, 0.38, 98.62},   {94.29, 99.98, 92.80, 0.11, 99.19},
  };
  for (const Row& r : rows) {
    const Metrics before{r.acc0 / 100.0, r.asr0 / 100.0};
    const Metrics after{r.acc1 / 100.0, r.asr1 / 100.0};
    CHECK(std::abs(100.0 * der(before, after) - r.expected_pct) <= 0.01);
  }
}

TEST_CASE("der of no change is one half, and der stays in [0,1]") {
  const Metrics m{0.9, 0.8};
  CHECK(der(m, m) == 0.5);
  Rng rng(71);
  for (int trial = 0; trial < 200; ++trial) {
    const Metrics a{rng.next_double(), rng.next_double()};
    const Metrics b{rng.next_double(), rng.next_double()};
    const double v = der(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("oracle TAC vanishes without a trigger and is linear for linear nets") {
  Rng rng(81);
  nn::MlpParams linear;  // arch {4, 3, 2}: identity into the latent
  linear.layers.push_back({Matrix(4, 3), Vector(3, 0.0)});
  linear.layers.push_back({Matrix(3, 2), Vector(2, 0.0)});
  for (double& v : linear.layers[0].weights.data()) v = rng.normal();
  for (double& v : linear.layers[1].weights.data()) v = rng.normal();

  Matrix inputs(6, 4);
  for (double& v : inputs.data()) v = rng.normal();

  Trigger none = make_sparse_trigger(4, 0, 0.0, 0, 0.1);
  for (double v : oracle_tac_latent(linear, inputs, none).values) CHECK(v == 0.0);

  Trigger t = make_sparse_trigger(4, 2, 1.7, 0, 0.1);
  const TacVector tac = oracle_tac_latent(linear, inputs, t);
  const Vector expected = matvec_t(linear.layers[0].weights, t.delta);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(tac.values[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("oracle TAC equals the per-sample loop on a rectified net") {
  Rng rng(82);
  nn::MlpParams params;
  params.layers.push_back({Matrix(5, 8), Vector(8, 0.0)});
  params.layers.push_back({Matrix(8, 4), Vector(4, 0.0)});
  params.layers.push_back({Matrix(4, 3), Vector(3, 0.0)});
  for (auto& l : params.layers)
    for (double& v : l.weights.data()) v = rng.normal();

  Matrix inputs(7, 5);
  for (double& v : inputs.data()) v = rng.normal();
  Trigger t = make_sparse_trigger(5, 2, 2.0, 0, 0.1);

  const TacVector tac = oracle_tac_latent(params, inputs, t);
  Vector manual(4, 0.0);
  for (std::size_t i = 0; i < 7; ++i) {
    const auto r = inputs.row(i);
    const Vector x(r.begin(), r.end());
    const Vector clean = nn::forward(params, x).latent;
    const Vector trig = nn::forward(params, apply_trigger(x, t)).latent;
    for (std::size_t c = 0; c < 4; ++c) manual[c] += (trig[c] - clean[c]) / 7.0;
  }
  for (std::size_t c = 0; c < 4; ++c)
    CHECK(tac.values[c] == doctest::Approx(manual[c]).epsilon(1e-12));
}

TEST_CASE("TAC is exactly linear in delta when every rectifier stays active") {
  Rng rng(83);
  nn::MlpParams params;
  params.layers.push_back({Matrix(4, 6), Vector(6, 50.0)});  // large bias keeps units on
  params.layers.push_back({Matrix(6, 3), Vector(3, 0.0)});
  params.layers.push_back({Matrix(3, 2), Vector(2, 0.0)});
  for (auto& l : params.layers)
    for (double& v : l.weights.data()) v = 0.1 * rng.normal();

  Matrix inputs(5, 4);
  for (double& v : inputs.data()) v = rng.normal();
  Trigger t1 = make_sparse_trigger(4, 2, 0.5, 0, 0.1);
  Trigger t2 = make_sparse_trigger(4, 2, 1.0, 0, 0.1);
  const TacVector a = oracle_tac_latent(params, inputs, t1);
  const TacVector b = oracle_tac_latent(params, inputs, t2);
  for (std::size_t c = 0; c < 3; ++c)
    CHECK(b.values[c] == doctest::Approx(2.0 * a.values[c]).epsilon(1e-9));
}

TEST_CASE("tac_coverage extremes and tie-breaking") {
  Vector v{5.0, -4.0, 3.0, 2.0, 1.0, 0.5, 0.25, 0.1, 0.05, 0.01};
  TacVector same{v};
  for (double f : {0.1, 0.2, 0.5, 1.0}) CHECK(tac_coverage(v, same, f) == 1.0);

  Vector s(10, 0.0), t(10, 0.0);
  for (std::size_t i = 0; i < 5; ++i) s[i] = 1.0 + static_cast<double>(i);
  for (std::size_t i = 5; i < 10; ++i) t[i] = 1.0 + static_cast<double>(i);
  CHECK(tac_coverage(s, TacVector{t}, 0.5) == 0.0);
  CHECK(tac_coverage(s, TacVector{t}, 0.2) == 0.0);

  // Equal magnitudes: ties resolve toward the lower index in both rankings.
  Vector ties(4, 1.0);
  CHECK(tac_coverage(ties, TacVector{ties}, 0.5) == 1.0);

  CHECK_THROWS_AS(tac_coverage(s, TacVector{Vector(3, 0.0)}, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(tac_coverage(s, TacVector{t}, 0.0), std::invalid_argument);
}
