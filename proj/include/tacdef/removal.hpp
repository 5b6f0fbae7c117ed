#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tacdef/core.hpp"
#include "tacdef/nn.hpp"

// Backdoor removal: fine-tune the compromised model so that latents shifted
// by the poisoned-class perturbation are still classified correctly,
//
//   mean_i [ CE(f(x_i), y_i) + beta * CE(softmax(W_L^T (phi(x_i) + s_p) + b), y_i) ]
//
// over the reference set. s_p is a constant; it is computed once and never
// differentiated through. The shifted term backpropagates through phi and the
// final layer alike (the literal reading of the objective); an ablation
// switch restricts it to the final layer.

namespace tacdef::removal {

enum class Mode {
  kSinglePerturbation,  // fine-tune against the identified class's s_p
  kNoPciRandom,         // resample s uniformly from all classes per mini-batch
};

struct RemovalConfig {
  double beta = 0.5;
  std::size_t epochs = 50;
  double lr = 0.01;
  std::size_t batch_size = 32;  // clamped to the reference-set size
  std::uint64_t seed = 1;
  Mode mode = Mode::kSinglePerturbation;
  bool stop_gradient_at_latent = false;
  bool zero_final_bias = false;
};

struct RemovalLossGrad {
  double loss = 0.0;          // clean + beta * shifted, batch mean
  double clean_loss = 0.0;    // batch mean
  double shifted_loss = 0.0;  // batch mean, unweighted by beta
  nn::GradBuffers grad;
};

/// Batch loss and gradient of the removal objective; exposed so tests can
/// probe the loss decomposition and the saturated-gradient behavior directly.
RemovalLossGrad removal_loss_and_grad(const nn::MlpParams& params, const Matrix& inputs,
                                      const std::vector<std::size_t>& labels,
                                      std::span<const std::size_t> batch, const Vector& s_p,
                                      double beta, bool stop_gradient_at_latent);

/// Mini-batch SGD on the removal objective. At beta = 0 this is exactly
/// nn::train_from on the reference set: same rng stream, same batches, same
/// steps. Throws nn::TrainingDiverged on non-finite loss.
nn::TrainResult finetune_remove(const nn::MlpParams& params_bd, const nn::Dataset& ref,
                                const Vector& s_p, const RemovalConfig& cfg);

/// No-PCI ablation: s is redrawn uniformly from the pool for every
/// mini-batch. The pool sampler runs on its own rng stream, so a singleton
/// pool reproduces finetune_remove bit for bit. Throws on an empty pool.
nn::TrainResult finetune_remove_nopci(const nn::MlpParams& params_bd, const nn::Dataset& ref,
                                      const std::vector<Vector>& pool,
                                      const RemovalConfig& cfg);

}  // namespace tacdef::removal
