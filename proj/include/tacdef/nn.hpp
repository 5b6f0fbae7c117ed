#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tacdef/core.hpp"
#include "tacdef/qp.hpp"

// Desk-scale multilayer perceptron with hand-written backpropagation.
// Layer l computes z = W^T a + b with W stored input x output, rectified on
// every hidden layer and identity into the latent (the layer feeding the
// final linear map). The final (weights, bias) pair is exactly the
// qp::FinalLayer the perturbation solver consumes.

namespace tacdef::nn {

struct Dataset {
  Matrix inputs;                    // n x d_in
  std::vector<std::size_t> labels;  // class indices in [0, C)

  std::size_t size() const { return labels.size(); }
};

struct MlpParams {
  struct Layer {
    Matrix weights;  // in_dim x out_dim
    Vector bias;     // out_dim
  };
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.front().weights.rows(); }
  std::size_t num_classes() const { return layers.back().weights.cols(); }
  std::size_t embedding_dim() const {
    return layers.size() >= 2 ? layers[layers.size() - 2].weights.cols() : input_dim();
  }
  std::vector<std::size_t> arch() const;
  qp::FinalLayer final_layer() const {
    return {layers.back().weights, layers.back().bias};
  }
};

struct TrainConfig {
  std::size_t epochs = 30;
  double lr = 0.05;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  double weight_decay = 0.0;
  bool zero_final_bias = false;  // pin the final-layer bias at zero
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ForwardResult {
  Vector latent;  // activations feeding the final layer
  Vector probs;   // softmax outputs, sum to 1 within 1e-12
};

/// Everything backprop needs from one forward pass. layer_inputs[l] feeds
/// layer l; pre_acts[l] is its affine output; pre_acts.back() is the logits.
struct ForwardTrace {
  std::vector<Vector> layer_inputs;
  std::vector<Vector> pre_acts;
  Vector probs;

  const Vector& latent() const { return layer_inputs.back(); }
  const Vector& logits() const { return pre_acts.back(); }
};

/// Max-subtracted softmax; stable for logits up to |1e4| and beyond.
Vector softmax(const Vector& logits);

/// Cross-entropy through logsumexp, finite for any finite logits.
double cross_entropy(const Vector& logits, std::size_t label);

ForwardTrace forward_trace(const MlpParams& params, const Vector& x);
ForwardResult forward(const MlpParams& params, const Vector& x);

/// Row i of the result is forward(params, row i).latent.
Matrix latent_batch(const MlpParams& params, const Matrix& inputs);

using GradBuffers = std::vector<MlpParams::Layer>;
GradBuffers zero_like(const MlpParams& params);

/// Accumulate scale * d(loss)/d(theta) for a loss whose logits-gradient is
/// dlogits. final_input is the vector that actually fed the last layer (the
/// trace latent, or latent + s for a shifted-latent loss). With
/// through_encoder false, only the final layer receives gradient.
void backprop_from_logits(const MlpParams& params, const ForwardTrace& trace,
                          const Vector& dlogits, std::span<const double> final_input,
                          bool through_encoder, double scale, GradBuffers& grad);

/// SGD update p -= lr * (g + weight_decay * p); the final bias is skipped
/// when pinned.
void apply_sgd_step(MlpParams& params, const GradBuffers& grad, double lr,
                    double weight_decay, bool zero_final_bias);

/// Glorot-uniform weights, zero biases. Weights are drawn row-major layer by
/// layer, so the rng stream position after init is well defined.
MlpParams init_params(const std::vector<std::size_t>& arch, Rng& rng);

struct TrainResult {
  MlpParams params;
  double last_epoch_loss = 0.0;  // mean cross-entropy over the final epoch
};

/// Mini-batch SGD on mean cross-entropy. Deterministic given seed: init and
/// epoch shuffles both come from Rng(cfg.seed). Throws TrainingDiverged if
/// any batch loss goes non-finite.
TrainResult train(const Dataset& data, const std::vector<std::size_t>& arch,
                  const TrainConfig& cfg);

/// Same loop, resumed from existing parameters; Rng(cfg.seed) drives only the
/// shuffles.
TrainResult train_from(MlpParams params, const Dataset& data, const TrainConfig& cfg);

/// Max over parameters of the relative gap between central finite differences
/// (step 1e-5) and the analytic gradient of cross_entropy at (x, label).
double gradient_check(const MlpParams& params, const Vector& x, std::size_t label);

/// Smallest |pre-activation| over all rectified layers; tests use it to step
/// around the rectifier kink before finite differencing.
double min_hidden_preactivation(const MlpParams& params, const Vector& x);

/// Checkpoint JSON: {format_version, arch, seed, layers:[{rows, cols,
/// weights, bias}]}, numbers at full round-trip precision.
void save_checkpoint(const MlpParams& params, std::uint64_t seed, const std::string& path);
MlpParams load_checkpoint(const std::string& path);

}  // namespace tacdef::nn
