#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "slm/embedding_store.hpp"
#include "slm/rng.hpp"

namespace slm {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class Arch : std::uint32_t { mlp = 0, resmlp = 1 };

std::string to_string(Arch arch);
Arch parse_arch(const std::string& name);

/// Shape and regularization of the next-sentence scorer.
///
/// mlp:    input -> num_layers x [dense(hidden) -> ReLU -> dropout] -> dense(output)
/// resmlp: input -> [dense(hidden) -> ReLU -> dropout, only if input_dim != hidden_dim]
///         -> num_residual_blocks x block -> dense(output)
///   block(x) = ReLU(x + dense(dropout(ReLU(dense(x)))))
/// Both variants layer-normalize the concatenated input and the output.
struct ModelConfig {
  Arch arch = Arch::resmlp;
  std::size_t input_dim = 3072;
  std::size_t hidden_dim = 1024;
  std::size_t num_layers = 3;
  std::size_t num_residual_blocks = 1;
  std::size_t output_dim = 768;
  float dropout_rate = 0.5f;

  static ModelConfig mlp(std::size_t context_len, std::size_t dim);
  static ModelConfig resmlp(std::size_t context_len, std::size_t dim);

  void validate() const;
  bool has_input_projection() const {
    return arch == Arch::resmlp && input_dim != hidden_dim;
  }
  /// (out, in) shape of every dense layer in declaration order.
  std::vector<std::pair<std::size_t, std::size_t>> dense_shapes() const;

  bool operator==(const ModelConfig&) const = default;
};

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct Dense {
  Matrix<T> weight;  // out x in
  Vector<T> bias;    // out
};

template <typename T>
struct Norm {
  Vector<T> gain;
  Vector<T> bias;
};

/// Every trainable tensor of the scorer. Declaration order (also the
/// checkpoint order): input_norm.{gain,bias}, each dense layer's
/// {weight,bias} in forward order, output_norm.{gain,bias}.
template <typename T>
struct BasicParams {
  Norm<T> input_norm;
  std::vector<Dense<T>> layers;
  Norm<T> output_norm;

  /// Same shapes, all zeros.
  BasicParams zeros_like() const;
  template <typename U>
  BasicParams<U> cast() const;

  std::size_t parameter_count() const;
  bool all_finite() const;
};

using ModelParams = BasicParams<float>;

template <typename T>
std::vector<std::span<T>> tensor_views(BasicParams<T>& params);
template <typename T>
std::vector<std::span<const T>> tensor_views(const BasicParams<T>& params);

/// Human-readable tensor names in declaration order ("dense0.weight", ...).
std::vector<std::string> tensor_names(const ModelConfig& config);

/// Parameter count implied by the config alone.
std::size_t parameter_count(const ModelConfig& config);

/// Zero-filled params with the shapes implied by config.
template <typename T>
BasicParams<T> zero_params(const ModelConfig& config);

/// He-normal weights (variance 2 / fan_in), zero biases, unit norm gains.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Throws DimensionError when params do not match config.
template <typename T>
void check_shapes(const BasicParams<T>& params, const ModelConfig& config);

/// gain * (x - mean) / sqrt(var + eps) + bias with population variance.
std::vector<float> layer_norm(std::span<const float> x, std::span<const float> gain,
                              std::span<const float> bias, double eps = kLayerNormEps);

enum class Mode { train, eval };

/// Per-site inverted dropout multipliers (0 or 1/(1-rate)); an empty matrix
/// means the site was not dropped.
template <typename T>
using DropoutMasks = std::vector<Matrix<T>>;

/// Activations kept by a batched forward pass for the backward pass.
template <typename T>
struct ForwardCache {
  Matrix<T> input_hat;           // normalized input before gain/bias
  Vector<T> input_inv_std;
  std::vector<Matrix<T>> layer_inputs;  // activation fed to each dense layer
  std::vector<Matrix<T>> layer_pre;     // dense output (+ skip for a block's 2nd layer)
  DropoutMasks<T> masks;                // one per dropout site, forward order
  Matrix<T> output_hat;
  Vector<T> output_inv_std;
  Matrix<T> output;  // h, one row per example
};

/// Batched forward pass. Rows of `inputs` are concatenated contexts.
/// In train mode masks are drawn from `dropout_rng`, unless `replay_masks`
/// is given, in which case those exact masks are reused.
template <typename T>
ForwardCache<T> forward_batch(const BasicParams<T>& params, const ModelConfig& config,
                              const Matrix<T>& inputs, Mode mode, Rng* dropout_rng,
                              const DropoutMasks<T>* replay_masks = nullptr);

/// Gradients of all parameters given dLoss/dh for each row of the batch.
template <typename T>
BasicParams<T> backward_batch(const BasicParams<T>& params, const ModelConfig& config,
                              const ForwardCache<T>& cache, const Matrix<T>& grad_output);

/// Concatenates the embeddings of `context` into one input row per entry.
template <typename T>
Matrix<T> gather_contexts(const EmbeddingMatrix& embeddings,
                          std::span<const std::vector<SentenceId>> contexts);

/// Predicted next-sentence embedding h for a single context.
std::vector<float> forward(const ModelParams& params, const ModelConfig& config,
                           std::span<const std::span<const float>> context, Mode mode,
                           Rng* dropout_rng);

/// Eval-mode h for many contexts, one row each.
Matrix<float> predict(const ModelParams& params, const ModelConfig& config,
                      const EmbeddingMatrix& embeddings,
                      std::span<const std::vector<SentenceId>> contexts);

}  // namespace slm
