#include "tacdef/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace tacdef::nn {

namespace {

bool is_rectified(std::size_t layer, std::size_t num_layers) {
  // All hidden layers rectify; the layer producing the latent is identity;
  // the final layer feeds softmax.
  return layer + 2 < num_layers;
}

double logsumexp(const Vector& z) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : z) m = std::max(m, v);
  double acc = 0.0;
  for (double v : z) acc += std::exp(v - m);
  return m + std::log(acc);
}

}  // namespace

std::vector<std::size_t> MlpParams::arch() const {
  std::vector<std::size_t> a;
  a.push_back(input_dim());
  for (const auto& l : layers) a.push_back(l.weights.cols());
  return a;
}

Vector softmax(const Vector& logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : logits) m = std::max(m, v);
  Vector p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

double cross_entropy(const Vector& logits, std::size_t label) {
  if (label >= logits.size()) throw std::invalid_argument("cross_entropy: label out of range");
  return logsumexp(logits) - logits[label];
}

ForwardTrace forward_trace(const MlpParams& params, const Vector& x) {
  if (params.layers.empty()) throw std::invalid_argument("forward: empty network");
  if (x.size() != params.input_dim())
    throw std::invalid_argument("forward: input dimension mismatch");

  ForwardTrace tr;
  const std::size_t num_layers = params.layers.size();
  tr.layer_inputs.reserve(num_layers);
  tr.pre_acts.reserve(num_layers);

  Vector a = x;
  for (std::size_t l = 0; l < num_layers; ++l) {
    tr.layer_inputs.push_back(a);
    Vector z = matvec_t(params.layers[l].weights, a);
    for (std::size_t j = 0; j < z.size(); ++j) z[j] += params.layers[l].bias[j];
    tr.pre_acts.push_back(z);
    if (l + 1 == num_layers) break;
    if (is_rectified(l, num_layers))
      for (double& v : z) v = v > 0.0 ? v : 0.0;
    a = std::move(z);
  }
  tr.probs = softmax(tr.pre_acts.back());
  return tr;
}

ForwardResult forward(const MlpParams& params, const Vector& x) {
  ForwardTrace tr = forward_trace(params, x);
  return {tr.layer_inputs.back(), std::move(tr.probs)};
}

Matrix latent_batch(const MlpParams& params, const Matrix& inputs) {
  Matrix out(inputs.rows(), params.embedding_dim());
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    const auto r = inputs.row(i);
    const ForwardTrace tr = forward_trace(params, Vector(r.begin(), r.end()));
    const Vector& lat = tr.latent();
    std::copy(lat.begin(), lat.end(), out.row(i).begin());
  }
  return out;
}

GradBuffers zero_like(const MlpParams& params) {
  GradBuffers g;
  g.reserve(params.layers.size());
  for (const auto& l : params.layers)
    g.push_back({Matrix(l.weights.rows(), l.weights.cols()), Vector(l.bias.size(), 0.0)});
  return g;
}

void backprop_from_logits(const MlpParams& params, const ForwardTrace& trace,
                          const Vector& dlogits, std::span<const double> final_input,
                          bool through_encoder, double scale, GradBuffers& grad) {
  const std::size_t num_layers = params.layers.size();
  const std::size_t last = num_layers - 1;
  const auto& wl = params.layers[last].weights;

  for (std::size_t t = 0; t < wl.rows(); ++t)
    for (std::size_t c = 0; c < wl.cols(); ++c)
      grad[last].weights(t, c) += scale * final_input[t] * dlogits[c];
  for (std::size_t c = 0; c < wl.cols(); ++c) grad[last].bias[c] += scale * dlogits[c];

  if (!through_encoder || num_layers == 1) return;

  Vector da = matvec(wl, dlogits);  // gradient wrt the latent
  for (std::size_t l = num_layers - 2; ; --l) {
    Vector dz = std::move(da);
    if (is_rectified(l, num_layers)) {
      const Vector& z = trace.pre_acts[l];
      for (std::size_t j = 0; j < dz.size(); ++j)
        if (z[j] <= 0.0) dz[j] = 0.0;
    }
    const auto& w = params.layers[l].weights;
    const Vector& a_in = trace.layer_inputs[l];
    for (std::size_t t = 0; t < w.rows(); ++t)
      for (std::size_t c = 0; c < w.cols(); ++c)
        grad[l].weights(t, c) += scale * a_in[t] * dz[c];
    for (std::size_t c = 0; c < w.cols(); ++c) grad[l].bias[c] += scale * dz[c];
    if (l == 0) break;
    da = matvec(w, dz);
  }
}

void apply_sgd_step(MlpParams& params, const GradBuffers& grad, double lr,
                    double weight_decay, bool zero_final_bias) {
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& w = params.layers[l].weights.data();
    const auto& gw = grad[l].weights.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (gw[i] + weight_decay * w[i]);
    if (zero_final_bias && l + 1 == params.layers.size()) continue;
    auto& b = params.layers[l].bias;
    const auto& gb = grad[l].bias;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lr * (gb[i] + weight_decay * b[i]);
  }
}

MlpParams init_params(const std::vector<std::size_t>& arch, Rng& rng) {
  if (arch.size() < 2) throw std::invalid_argument("init_params: arch needs >= 2 entries");
  MlpParams params;
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    const std::size_t fan_in = arch[l];
    const std::size_t fan_out = arch[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    MlpParams::Layer layer{Matrix(fan_in, fan_out), Vector(fan_out, 0.0)};
    for (double& w : layer.weights.data()) w = rng.uniform(-bound, bound);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

namespace {

bool params_finite(const MlpParams& params) {
  for (const auto& l : params.layers)
    if (!all_finite(l.weights.data()) || !all_finite(l.bias)) return false;
  return true;
}

TrainResult run_sgd(MlpParams params, const Dataset& data, const TrainConfig& cfg, Rng& rng) {
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (cfg.lr < 0.0 || cfg.epochs < 1) throw std::invalid_argument("train: bad config");
  const std::size_t n = data.size();
  const std::size_t batch = std::max<std::size_t>(1, std::min(cfg.batch_size, n));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  double epoch_loss = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(start + batch, n);
      const double inv = 1.0 / static_cast<double>(end - start);
      GradBuffers grad = zero_like(params);
      double batch_loss = 0.0;
      for (std::size_t bi = start; bi < end; ++bi) {
        const std::size_t i = order[bi];
        const auto r = data.inputs.row(i);
        const ForwardTrace tr = forward_trace(params, Vector(r.begin(), r.end()));
        batch_loss += cross_entropy(tr.logits(), data.labels[i]);
        Vector dlogits = tr.probs;
        dlogits[data.labels[i]] -= 1.0;
        backprop_from_logits(params, tr, dlogits, tr.latent(), true, inv, grad);
      }
      batch_loss *= inv;
      if (!std::isfinite(batch_loss))
        throw TrainingDiverged("training loss became non-finite at epoch " +
                               std::to_string(epoch));
      apply_sgd_step(params, grad, cfg.lr, cfg.weight_decay, cfg.zero_final_bias);
      loss_sum += batch_loss * static_cast<double>(end - start);
    }
    epoch_loss = loss_sum / static_cast<double>(n);
  }
  if (!params_finite(params))
    throw TrainingDiverged("parameters became non-finite during training");
  return {std::move(params), epoch_loss};
}

}  // namespace

TrainResult train(const Dataset& data, const std::vector<std::size_t>& arch,
                  const TrainConfig& cfg) {
  if (arch.back() < 2) throw std::invalid_argument("train: need >= 2 classes");
  Rng rng(cfg.seed);
  MlpParams params = init_params(arch, rng);
  if (cfg.zero_final_bias)
    std::fill(params.layers.back().bias.begin(), params.layers.back().bias.end(), 0.0);
  return run_sgd(std::move(params), data, cfg, rng);
}

TrainResult train_from(MlpParams params, const Dataset& data, const TrainConfig& cfg) {
  Rng rng(cfg.seed);
  return run_sgd(std::move(params), data, cfg, rng);
}

double gradient_check(const MlpParams& params, const Vector& x, std::size_t label) {
  const ForwardTrace tr = forward_trace(params, x);
  GradBuffers grad = zero_like(params);
  Vector dlogits = tr.probs;
  dlogits[label] -= 1.0;
  backprop_from_logits(params, tr, dlogits, tr.latent(), true, 1.0, grad);

  MlpParams probe = params;
  const double h = 1e-5;
  double worst = 0.0;
  auto check_entry = [&](double& theta, double analytic) {
    const double saved = theta;
    theta = saved + h;
    const double up = cross_entropy(forward_trace(probe, x).logits(), label);
    theta = saved - h;
    const double down = cross_entropy(forward_trace(probe, x).logits(), label);
    theta = saved;
    const double fd = (up - down) / (2.0 * h);
    const double rel = std::abs(fd - analytic) / (std::abs(fd) + std::abs(analytic) + 1e-8);
    worst = std::max(worst, rel);
  };
  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    auto& w = probe.layers[l].weights.data();
    for (std::size_t i = 0; i < w.size(); ++i) check_entry(w[i], grad[l].weights.data()[i]);
    auto& b = probe.layers[l].bias;
    for (std::size_t i = 0; i < b.size(); ++i) check_entry(b[i], grad[l].bias[i]);
  }
  return worst;
}

double min_hidden_preactivation(const MlpParams& params, const Vector& x) {
  const ForwardTrace tr = forward_trace(params, x);
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l + 1 < params.layers.size(); ++l) {
    if (!is_rectified(l, params.layers.size())) continue;
    for (double z : tr.pre_acts[l]) m = std::min(m, std::abs(z));
  }
  return m;
}

void save_checkpoint(const MlpParams& params, std::uint64_t seed, const std::string& path) {
  nlohmann::json doc;
  doc["format_version"] = 1;
  doc["arch"] = params.arch();
  doc["seed"] = seed;
  auto& layers = doc["layers"] = nlohmann::json::array();
  for (const auto& l : params.layers) {
    nlohmann::json jl;
    jl["rows"] = l.weights.rows();
    jl["cols"] = l.weights.cols();
    jl["weights"] = l.weights.data();
    jl["bias"] = l.bias;
    layers.push_back(std::move(jl));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << doc.dump(2) << "\n";
}

MlpParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json doc = nlohmann::json::parse(in);
  if (doc.at("format_version").get<int>() != 1)
    throw std::runtime_error("load_checkpoint: unsupported format_version");
  MlpParams params;
  for (const auto& jl : doc.at("layers")) {
    const auto rows = jl.at("rows").get<std::size_t>();
    const auto cols = jl.at("cols").get<std::size_t>();
    MlpParams::Layer layer{Matrix(rows, cols), jl.at("bias").get<Vector>()};
    const auto w = jl.at("weights").get<std::vector<double>>();
    if (w.size() != rows * cols || layer.bias.size() != cols)
      throw std::runtime_error("load_checkpoint: inconsistent layer shapes");
    layer.weights.data() = w;
    params.layers.push_back(std::move(layer));
  }
  if (params.layers.empty()) throw std::runtime_error("load_checkpoint: no layers");
  return params;
}

}  // namespace tacdef::nn
