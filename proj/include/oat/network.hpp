#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "oat/tensor.hpp"

namespace oat {

/// Architecture of the artifact-removal network: a dense-skip encoder/decoder
/// with a global input-to-output residual connection. Every scale runs a
/// dense block (3x3 convolutions whose outputs are concatenated onto the
/// running feature stack); downsampling is a strided convolution, upsampling
/// is nearest-neighbor followed by a convolution and a skip concatenation.
struct NetworkConfig {
  int n_scales = 3;
  int base_channels = 8;
  int dense_growth_rate = 4;
  int dense_layers_per_block = 2;
  int input_size = 64;  // square inputs; must be divisible by 2^(n_scales-1)
};

/// Flat parameter vector plus the table mapping named layers onto it.
struct LayerInfo {
  std::string name;
  std::size_t offset = 0;
  std::vector<int> shape;  // [out, in, k, k] for kernels, [out] for biases
  std::size_t count = 0;
};

struct ParameterSet {
  std::vector<double> values;
  std::vector<LayerInfo> layout;
};

struct GradientSet {
  std::vector<double> values;
};

namespace detail {
struct Graph;
struct TapeState;
}  // namespace detail

/// Activations recorded by one forward pass; consumed exactly once by
/// backward().
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(Tape&&) noexcept;
  Tape& operator=(Tape&&) noexcept;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recorded() const;
  bool consumed() const;

 private:
  friend struct detail::TapeState;
  std::unique_ptr<detail::TapeState> state_;
};

struct ForwardResult {
  std::vector<Tensor> outputs;
  Tape tape;
};

void validate(const NetworkConfig& config);

std::size_t parameter_count(const NetworkConfig& config);

/// Kernels drawn from N(0, 2/fan_in), biases zero; deterministic per seed.
ParameterSet init_network(const NetworkConfig& config, std::uint64_t seed);

/// Runs the network on a batch of single-channel images. With record_tape the
/// result carries the activations needed for one backward() call. Examples
/// are independent; worker count never changes the values.
ForwardResult forward(const ParameterSet& params, const NetworkConfig& config,
                      const std::vector<Tensor>& batch, bool record_tape = true,
                      int threads = 1);

/// Forward without a tape, for evaluation.
std::vector<Tensor> predict(const ParameterSet& params, const NetworkConfig& config,
                            const std::vector<Tensor>& batch, int threads = 1);

/// Exact gradient of the recorded forward pass. grad_output holds the loss
/// gradient with respect to each output tensor; accumulation over the batch
/// runs in fixed example order. The tape is consumed.
GradientSet backward(Tape& tape, const std::vector<Tensor>& grad_output, int threads = 1);

/// Batch-mean squared-norm loss: (1/n) * sum_i |target_i - pred_i|^2, and its
/// exact gradient with respect to the predictions.
struct LossResult {
  double value = 0.0;
  std::vector<Tensor> grad;
};

LossResult mse_loss(const std::vector<Tensor>& pred, const std::vector<Tensor>& target);

}  // namespace oat
