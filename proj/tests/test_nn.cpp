#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "tacdef/nn.hpp"

using namespace tacdef;
using namespace tacdef::nn;

namespace {

MlpParams random_net(const std::vector<std::size_t>& arch, std::uint64_t seed) {
  Rng rng(seed);
  return init_params(arch, rng);
}

Dataset gaussian_blobs(std::size_t n, std::size_t d, std::size_t classes, double sep,
                       std::uint64_t seed) {
  Rng rng(seed);
  Matrix means(classes, d);
  for (std::size_t k = 0; k < classes; ++k) {
    auto row = means.row(k);
    for (double& v : row) v = rng.normal();
    const double nm = norm2(row);
    for (double& v : row) v *= sep / nm;
  }
  Dataset ds;
  ds.inputs = Matrix(n, d);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = i % classes;
    for (std::size_t t = 0; t < d; ++t)
      ds.inputs(i, t) = means(ds.labels[i], t) + rng.normal();
  }
  return ds;
}

bool params_equal(const MlpParams& a, const MlpParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (a.layers[l].weights.data() != b.layers[l].weights.data()) return false;
    if (a.layers[l].bias != b.layers[l].bias) return false;
  }
  return true;
}

double accuracy(const MlpParams& params, const Dataset& ds) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto r = ds.inputs.row(i);
    const Vector probs = forward(params, Vector(r.begin(), r.end())).probs;
    const std::size_t pred = std::max_element(probs.begin(), probs.end()) - probs.begin();
    if (pred == ds.labels[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(ds.size());
}

}  // namespace

TEST_CASE("zero network gives uniform probabilities") {
  MlpParams params;
  params.layers.push_back({Matrix(4, 8), Vector(8, 0.0)});
  params.layers.push_back({Matrix(8, 5), Vector(5, 0.0)});
  const ForwardResult out = forward(params, Vector(4, 1.0));
  for (double p : out.probs) CHECK(p == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("single identity layer: logits (1,0)") {
  MlpParams params;
  params.layers.push_back({Matrix::identity(2), Vector(2, 0.0)});
  const ForwardResult out = forward(params, {1.0, 0.0});
  CHECK(out.latent == Vector{1.0, 0.0});  // one layer: the latent is the input
  const double e = std::exp(1.0);
  CHECK(out.probs[0] == doctest::Approx(e / (e + 1.0)).epsilon(1e-12));
  CHECK(out.probs[1] == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-12));
}

TEST_CASE("probabilities match a naive softmax for moderate logits") {
  const MlpParams params = random_net({6, 10, 4, 3}, 17);
  Rng rng(18);
  for (int trial = 0; trial < 25; ++trial) {
    Vector x(6);
    for (double& v : x) v = rng.normal();
    const ForwardTrace tr = forward_trace(params, x);
    bool moderate = true;
    for (double z : tr.logits())
      if (std::abs(z) > 20.0) moderate = false;
    if (!moderate) continue;
    double denom = 0.0;
    for (double z : tr.logits()) denom += std::exp(z);
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(std::abs(tr.probs[c] - std::exp(tr.logits()[c]) / denom) <= 1e-9);
  }
}

TEST_CASE("softmax is stable up to |logit| = 1e4") {
  const Vector probs = softmax({1e4, -1e4, 0.0, 5.0});
  double sum = 0.0;
  for (double p : probs) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
    sum += p;
  }
  CHECK(std::abs(sum - 1.0) <= 1e-12);
  CHECK(probs[0] == doctest::Approx(1.0));
}

TEST_CASE("forward probabilities always sum to one") {
  const MlpParams params = random_net({5, 7, 4}, 23);
  Rng rng(24);
  for (int trial = 0; trial < 10; ++trial) {
    Vector x(5);
    for (double& v : x) v = 100.0 * rng.normal();
    const ForwardResult out = forward(params, x);
    double sum = 0.0;
    for (double p : out.probs) sum += p;
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("training separates 6-sigma two-class blobs") {
  const Dataset ds = gaussian_blobs(200, 4, 2, 6.0, 31);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.lr = 0.1;
  cfg.seed = 32;
  const TrainResult res = train(ds, {4, 8, 4, 2}, cfg);
  CHECK(accuracy(res.params, ds) >= 0.99);
  CHECK(res.last_epoch_loss < 0.2);
}

TEST_CASE("one epoch at lr = 0 returns the initialization bit-exactly") {
  const Dataset ds = gaussian_blobs(50, 3, 2, 4.0, 41);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.lr = 0.0;
  cfg.seed = 42;
  const TrainResult res = train(ds, {3, 4, 2}, cfg);
  Rng rng(42);
  const MlpParams init = init_params({3, 4, 2}, rng);
  CHECK(params_equal(res.params, init));
}

TEST_CASE("training is bit-deterministic in the seed") {
  const Dataset ds = gaussian_blobs(120, 5, 3, 5.0, 51);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.lr = 0.05;
  cfg.seed = 52;
  const TrainResult a = train(ds, {5, 8, 4, 3}, cfg);
  const TrainResult b = train(ds, {5, 8, 4, 3}, cfg);
  CHECK(params_equal(a.params, b.params));
  CHECK(a.last_epoch_loss == b.last_epoch_loss);
}

TEST_CASE("backprop matches central finite differences on 20 small nets") {
  Rng rng(61);
  int done = 0;
  while (done < 20) {
    const MlpParams params = random_net({4, 8, 4, 3}, rng.next_u64());
    Vector x(4);
    for (double& v : x) v = rng.normal();
    if (min_hidden_preactivation(params, x) < 1e-4) continue;  // step around the kink
    const double err = gradient_check(params, x, rng.below(3));
    CHECK(err <= 1e-5);
    ++done;
  }
}

TEST_CASE("zero input with symmetric init keeps tied gradients tied") {
  MlpParams params;
  params.layers.push_back({Matrix(3, 4, 0.3), Vector(4, 0.1)});
  params.layers.push_back({Matrix(4, 2, 0.2), Vector(2, 0.0)});
  const Vector x(3, 0.0);
  const ForwardTrace tr = forward_trace(params, x);
  GradBuffers grad = zero_like(params);
  Vector dlogits = tr.probs;
  dlogits[0] -= 1.0;
  backprop_from_logits(params, tr, dlogits, tr.latent(), true, 1.0, grad);
  // Zero input: first-layer weight gradients vanish; unit symmetry keeps the
  // bias gradients identical across the tied hidden units.
  for (double g : grad[0].weights.data()) CHECK(g == 0.0);
  for (std::size_t j = 1; j < 4; ++j)
    CHECK(grad[0].bias[j] == doctest::Approx(grad[0].bias[0]).epsilon(1e-14));
}

TEST_CASE("latent_batch equals the per-row loop") {
  const MlpParams params = random_net({6, 9, 5, 4}, 71);
  Rng rng(72);
  Matrix inputs(8, 6);
  for (double& v : inputs.data()) v = rng.normal();
  const Matrix lat = latent_batch(params, inputs);
  REQUIRE(lat.rows() == 8);
  REQUIRE(lat.cols() == 5);

  Matrix one_row(1, 6);
  std::copy(inputs.row(0).begin(), inputs.row(0).end(), one_row.row(0).begin());
  const Matrix single = latent_batch(params, one_row);
  const Vector direct = forward(params, Vector(inputs.row(0).begin(), inputs.row(0).end())).latent;
  for (std::size_t t = 0; t < 5; ++t) CHECK(single(0, t) == direct[t]);
  for (std::size_t i = 0; i < 8; ++i) {
    const auto r = inputs.row(i);
    const Vector one = forward(params, Vector(r.begin(), r.end())).latent;
    for (std::size_t t = 0; t < 5; ++t)
      CHECK(lat(i, t) == doctest::Approx(one[t]).epsilon(1e-14));
  }
}

TEST_CASE("pass-through linear net exposes W^T x as the latent") {
  MlpParams params;  // arch {3, 4, 2}: the first layer feeds the latent, identity activation
  Rng rng(73);
  params.layers.push_back({Matrix(3, 4), Vector(4, 0.0)});
  params.layers.push_back({Matrix(4, 2), Vector(2, 0.0)});
  for (double& v : params.layers[0].weights.data()) v = rng.normal();
  for (double& v : params.layers[1].weights.data()) v = rng.normal();
  const Vector x{0.5, -1.0, 2.0};
  const Vector latent = forward(params, x).latent;
  const Vector expected = matvec_t(params.layers[0].weights, x);
  for (std::size_t t = 0; t < 4; ++t)
    CHECK(latent[t] == doctest::Approx(expected[t]).epsilon(1e-14));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  const MlpParams params = random_net({5, 6, 4, 3}, 81);
  const std::string path =
      (std::filesystem::temp_directory_path() / "tacdef_ckpt_test.json").string();
  save_checkpoint(params, 81, path);
  const MlpParams loaded = load_checkpoint(path);
  CHECK(params_equal(params, loaded));
  CHECK(loaded.arch() == std::vector<std::size_t>{5, 6, 4, 3});
  std::filesystem::remove(path);
}

TEST_CASE("divergent training is caught, not returned") {
  const Dataset ds = gaussian_blobs(64, 4, 2, 5.0, 91);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.lr = 1e12;
  cfg.seed = 92;
  CHECK_THROWS_AS(train(ds, {4, 8, 4, 2}, cfg), TrainingDiverged);
}

TEST_CASE("final bias can be pinned at zero") {
  const Dataset ds = gaussian_blobs(100, 4, 3, 5.0, 93);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.lr = 0.05;
  cfg.seed = 94;
  cfg.zero_final_bias = true;
  const TrainResult res = train(ds, {4, 8, 4, 3}, cfg);
  for (double b : res.params.layers.back().bias) CHECK(b == 0.0);
}
