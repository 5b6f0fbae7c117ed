#include "tacdef/removal.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>

namespace tacdef::removal {

RemovalLossGrad removal_loss_and_grad(const nn::MlpParams& params, const Matrix& inputs,
                                      const std::vector<std::size_t>& labels,
                                      std::span<const std::size_t> batch, const Vector& s_p,
                                      double beta, bool stop_gradient_at_latent) {
  if (s_p.size() != params.embedding_dim())
    throw std::invalid_argument("removal: perturbation length != embedding dim");
  RemovalLossGrad out;
  out.grad = nn::zero_like(params);
  const double inv = 1.0 / static_cast<double>(batch.size());
  const auto& final_layer = params.layers.back();

  for (std::size_t i : batch) {
    const auto r = inputs.row(i);
    const nn::ForwardTrace tr = nn::forward_trace(params, Vector(r.begin(), r.end()));
    const std::size_t y = labels[i];

    out.clean_loss += inv * nn::cross_entropy(tr.logits(), y);
    Vector dlogits = tr.probs;
    dlogits[y] -= 1.0;
    nn::backprop_from_logits(params, tr, dlogits, tr.latent(), true, inv, out.grad);

    if (beta == 0.0) continue;

    Vector shifted = tr.latent();
    for (std::size_t t = 0; t < shifted.size(); ++t) shifted[t] += s_p[t];
    Vector logits2 = matvec_t(final_layer.weights, shifted);
    for (std::size_t c = 0; c < logits2.size(); ++c) logits2[c] += final_layer.bias[c];
    out.shifted_loss += inv * nn::cross_entropy(logits2, y);
    Vector dlogits2 = nn::softmax(logits2);
    dlogits2[y] -= 1.0;
    nn::backprop_from_logits(params, tr, dlogits2, shifted, !stop_gradient_at_latent,
                             beta * inv, out.grad);
  }
  out.loss = out.clean_loss + beta * out.shifted_loss;
  return out;
}

namespace {

using PerturbationSource = std::function<const Vector&(std::size_t batch_index)>;

nn::TrainResult run_removal(nn::MlpParams params, const nn::Dataset& ref,
                            const PerturbationSource& next_s, const RemovalConfig& cfg) {
  if (ref.size() == 0) throw std::invalid_argument("removal: empty reference set");
  if (cfg.beta < 0.0) throw std::invalid_argument("removal: beta must be >= 0");
  const std::size_t n = ref.size();
  const std::size_t batch = std::max<std::size_t>(1, std::min(cfg.batch_size, n));

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  double epoch_loss = 0.0;
  std::size_t batch_index = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(start + batch, n);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Vector& s = next_s(batch_index++);
      const RemovalLossGrad lg = removal_loss_and_grad(
          params, ref.inputs, ref.labels, idx, s, cfg.beta, cfg.stop_gradient_at_latent);
      if (!std::isfinite(lg.loss))
        throw nn::TrainingDiverged("removal loss became non-finite at epoch " +
                                   std::to_string(epoch));
      nn::apply_sgd_step(params, lg.grad, cfg.lr, 0.0, cfg.zero_final_bias);
      loss_sum += lg.loss * static_cast<double>(end - start);
    }
    epoch_loss = loss_sum / static_cast<double>(n);
  }
  return {std::move(params), epoch_loss};
}

}  // namespace

nn::TrainResult finetune_remove(const nn::MlpParams& params_bd, const nn::Dataset& ref,
                                const Vector& s_p, const RemovalConfig& cfg) {
  return run_removal(params_bd, ref, [&](std::size_t) -> const Vector& { return s_p; }, cfg);
}

nn::TrainResult finetune_remove_nopci(const nn::MlpParams& params_bd, const nn::Dataset& ref,
                                      const std::vector<Vector>& pool,
                                      const RemovalConfig& cfg) {
  if (pool.empty()) throw std::invalid_argument("removal: empty perturbation pool");
  // Dedicated stream: drawing from the pool must not disturb the batch
  // schedule shared with finetune_remove.
  Rng pool_rng(mix_seed(cfg.seed, 0x5e1ec7));
  return run_removal(
      params_bd, ref,
      [&](std::size_t) -> const Vector& { return pool[pool_rng.below(pool.size())]; }, cfg);
}

}  // namespace tacdef::removal
