#include "tacdef/backdoor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tacdef::backdoor {

Trigger make_sparse_trigger(std::size_t d_in, std::size_t num_coords, double magnitude,
                            std::size_t target_class, double poison_rate) {
  if (num_coords > d_in) throw std::invalid_argument("make_sparse_trigger: too many coords");
  Trigger t;
  t.delta.assign(d_in, 0.0);
  for (std::size_t i = 0; i < num_coords; ++i) t.delta[i] = magnitude;
  t.target_class = target_class;
  t.poison_rate = poison_rate;
  return t;
}

Vector apply_trigger(const Vector& x, const Trigger& trig) {
  if (x.size() != trig.delta.size())
    throw std::invalid_argument("apply_trigger: dimension mismatch");
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + trig.delta[i];
  return out;
}

std::size_t predict(const nn::MlpParams& params, const Vector& x) {
  const Vector probs = nn::forward(params, x).probs;
  return static_cast<std::size_t>(
      std::max_element(probs.begin(), probs.end()) - probs.begin());
}

nn::Dataset poison_dataset(const nn::Dataset& data, const Trigger& trig, Rng& rng) {
  const std::size_t n = data.size();
  const std::size_t count =
      static_cast<std::size_t>(std::llround(trig.poison_rate * static_cast<double>(n)));
  if (count < 1) throw std::invalid_argument("poison_dataset: poison_rate * n < 1");

  // Uniform sample of `count` distinct rows via partial Fisher-Yates.
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < count; ++i)
    std::swap(idx[i], idx[i + rng.below(n - i)]);

  const std::size_t total = n + count;
  Matrix inputs(total, data.inputs.cols());
  std::vector<std::size_t> labels(total);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(data.inputs.row(i).begin(), data.inputs.row(i).end(), inputs.row(i).begin());
    labels[i] = data.labels[i];
  }
  for (std::size_t i = 0; i < count; ++i) {
    const auto src = data.inputs.row(idx[i]);
    auto dst = inputs.row(n + i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = src[j] + trig.delta[j];
    labels[n + i] = trig.target_class;
  }

  std::vector<std::size_t> perm(total);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);

  nn::Dataset out;
  out.inputs = Matrix(total, inputs.cols());
  out.labels.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    std::copy(inputs.row(perm[i]).begin(), inputs.row(perm[i]).end(),
              out.inputs.row(i).begin());
    out.labels[i] = labels[perm[i]];
  }
  return out;
}

Metrics evaluate(const nn::MlpParams& params, const nn::Dataset& test, const Trigger& trig) {
  if (test.size() == 0) throw std::invalid_argument("evaluate: empty test set");
  std::size_t correct = 0;
  std::size_t hits = 0;
  std::size_t eligible = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto r = test.inputs.row(i);
    const Vector x(r.begin(), r.end());
    if (predict(params, x) == test.labels[i]) ++correct;
    if (test.labels[i] != trig.target_class) {
      ++eligible;
      if (predict(params, apply_trigger(x, trig)) == trig.target_class) ++hits;
    }
  }
  Metrics m;
  m.acc = static_cast<double>(correct) / static_cast<double>(test.size());
  m.asr = eligible == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(eligible);
  return m;
}

double der(const Metrics& before, const Metrics& after) {
  const double dasr = before.asr - after.asr;
  const double dacc = before.acc - after.acc;
  return (std::max(0.0, dasr) - std::max(0.0, dacc) + 1.0) / 2.0;
}

TacVector oracle_tac_latent(const nn::MlpParams& params, const Matrix& inputs,
                            const Trigger& trig) {
  if (inputs.rows() == 0) throw std::invalid_argument("oracle_tac_latent: empty inputs");
  TacVector tac;
  tac.values.assign(params.embedding_dim(), 0.0);
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    const auto r = inputs.row(i);
    const Vector x(r.begin(), r.end());
    const Vector clean = nn::forward(params, x).latent;
    const Vector poisoned = nn::forward(params, apply_trigger(x, trig)).latent;
    for (std::size_t t = 0; t < tac.values.size(); ++t)
      tac.values[t] += poisoned[t] - clean[t];
  }
  const double inv = 1.0 / static_cast<double>(inputs.rows());
  for (double& v : tac.values) v *= inv;
  return tac;
}

namespace {

// Indices of the K largest |values|, ties toward the lower index.
std::vector<std::size_t> top_k_by_magnitude(const Vector& values, std::size_t k) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const double ma = std::abs(values[a]);
    const double mb = std::abs(values[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  });
  idx.resize(k);
  return idx;
}

}  // namespace

double tac_coverage(const Vector& s, const TacVector& tac, double top_k_fraction) {
  if (s.size() != tac.values.size())
    throw std::invalid_argument("tac_coverage: dimension mismatch");
  if (top_k_fraction <= 0.0 || top_k_fraction > 1.0)
    throw std::invalid_argument("tac_coverage: fraction must be in (0, 1]");
  const std::size_t k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(top_k_fraction * static_cast<double>(s.size()))));

  const auto top_s = top_k_by_magnitude(s, k);
  const auto top_t = top_k_by_magnitude(tac.values, k);
  std::vector<bool> in_t(s.size(), false);
  for (std::size_t i : top_t) in_t[i] = true;
  std::size_t overlap = 0;
  for (std::size_t i : top_s)
    if (in_t[i]) ++overlap;
  return static_cast<double>(overlap) / static_cast<double>(k);
}

}  // namespace tacdef::backdoor
