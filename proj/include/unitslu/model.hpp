#pragma once

// Dual-decoder transformer: one encoder over feature frames shared by an SLU
// decoder (main task) and an auxiliary decoder predicting discrete units (or
// transcript tokens). Training minimises
//
//   total = (1 - lambda) * l_slu + lambda * l_aux
//
// where each term is a PAD-masked mean token cross-entropy under teacher
// forcing. Layers are pre-norm with GELU feed-forward blocks and fixed
// sinusoidal positions.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unitslu/autodiff.hpp"
#include "unitslu/types.hpp"

namespace unitslu {

using ad::Matrix;

struct ModelConfig {
  int enc_layers = 3;
  int slu_dec_layers = 6;
  int unit_dec_layers = 2;
  int d_model = 512;
  int heads = 4;
  int ffn_dim = 1024;
  int input_dim = 1024;
  int slu_vocab_size = 4;
  int unit_vocab_size = 504;
  int max_decode_len = 256;
  double dropout = 0.1;
  std::uint64_t seed = 0;

  bool operator==(const ModelConfig&) const = default;
};

/// Throws std::invalid_argument naming the first offending field.
void validate(const ModelConfig& config);

/// Named tensors in a fixed creation order.
class Parameters {
 public:
  Parameters() = default;
  explicit Parameters(ModelConfig config) : config_(std::move(config)) {}

  const ModelConfig& config() const { return config_; }

  Matrix& add(const std::string& name, Matrix value);
  Matrix& operator[](const std::string& name);
  const Matrix& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Matrix& tensor(std::size_t i) { return tensors_[i]; }
  const Matrix& tensor(std::size_t i) const { return tensors_[i]; }

  /// Total scalar count.
  std::size_t count() const;
  bool all_finite() const;

  /// Same names and shapes, all zeros.
  Parameters zeros_like() const;

  bool operator==(const Parameters& other) const;

 private:
  ModelConfig config_;
  std::vector<std::string> names_;
  std::vector<Matrix> tensors_;
  std::map<std::string, std::size_t> index_;
};

Parameters build_model(const ModelConfig& config);

/// Closed-form parameter count for a configuration.
std::size_t expected_parameter_count(const ModelConfig& config);

/// Padded training batch. Feature matrices are padded with zero rows to the
/// longest item; target rows hold BOS ... EOS followed by PAD.
struct Batch {
  std::vector<FeatureMatrix> features;
  std::vector<int> frame_lengths;
  std::vector<std::vector<int>> slu_targets;
  std::vector<std::vector<int>> aux_targets;  // empty when there is no auxiliary stream

  std::size_t size() const { return features.size(); }
  bool has_aux() const { return !aux_targets.empty(); }
};

/// Wraps id sequences in BOS/EOS and pads everything to a common length.
Batch make_batch(std::span<const FeatureMatrix> features,
                 std::span<const std::vector<int>> slu_ids,
                 std::span<const std::vector<int>> aux_ids = {});

/// Boolean frame mask derived from frame_lengths (true = real frame).
std::vector<std::vector<bool>> frame_mask(const Batch& batch);

struct LossBreakdown {
  double l_slu = 0.0;
  double l_aux = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

struct ForwardOptions {
  bool train = false;             // enables dropout
  std::uint64_t dropout_seed = 0;
};

/// Which graph values each decoder consumed, per batch item.
struct SharingTrace {
  std::vector<int> encoder_output;
  std::vector<int> slu_memory;
  std::vector<int> aux_memory;
};

struct ForwardResult {
  LossBreakdown loss;
  /// Per item: (target_len - 1) x vocab, one row per predicted position.
  std::vector<Matrix> slu_logits;
  std::vector<Matrix> aux_logits;
  SharingTrace sharing;
};

/// Teacher-forced forward pass. Throws std::runtime_error on a non-finite loss.
ForwardResult forward(const Parameters& params, const Batch& batch, double lambda,
                      const ForwardOptions& options = {});

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double clip_norm = 1.0;
};

struct OptimizerState {
  std::uint64_t step = 0;
  Parameters m;
  Parameters v;

  static OptimizerState for_params(const Parameters& params);
};

/// Gradients of `total` with respect to every parameter (zeros where none flow).
struct GradientResult {
  Parameters grads;
  LossBreakdown loss;
};
GradientResult compute_gradients(const Parameters& params, const Batch& batch, double lambda,
                                 const ForwardOptions& options = {});

struct StepResult {
  LossBreakdown loss;
  double grad_norm = 0.0;  // before clipping
};

/// One Adam step with global-norm clipping. Throws std::runtime_error on a
/// non-finite gradient.
StepResult backward_step(Parameters& params, const Batch& batch, double lambda,
                         OptimizerState& state, double lr, const ForwardOptions& options = {},
                         const AdamOptions& adam = {});

/// Applies an Adam update from precomputed gradients.
double adam_update(Parameters& params, Parameters grads, OptimizerState& state, double lr,
                   const AdamOptions& adam = {});

enum class DecoderHead { kSlu, kAux };

/// Autoregressive argmax from BOS until EOS or max_len. Returned ids exclude
/// BOS/EOS. Ties pick the lowest id.
std::vector<int> greedy_search(const std::function<Eigen::VectorXd(std::span<const int>)>& next_logits,
                               int max_len);

std::vector<int> greedy_decode(const Parameters& params, const FeatureMatrix& features,
                               DecoderHead head, int max_len);

/// Decoder logits for a fixed input prefix (BOS first), evaluation mode.
Matrix decoder_logits(const Parameters& params, const FeatureMatrix& features, DecoderHead head,
                      std::span<const int> prefix);

struct GradCheckOptions {
  double epsilon = 1e-4;
  /// Check every coordinate when the model has at most this many; otherwise a
  /// seeded random subset of this size.
  std::size_t max_coordinates = 4000;
  std::uint64_t seed = 0;
  /// Fault injection: multiply the analytic gradient of this tensor by 2.
  std::optional<std::string> corrupt_tensor;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_tensor;
};

/// Max |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|) against central differences.
GradCheckResult grad_check(const Parameters& params, const Batch& batch, double lambda,
                           const GradCheckOptions& options = {});

/// The tiny configuration used for gradient checks and smoke tests.
ModelConfig tiny_config(int input_dim = 4, int slu_vocab = 11, int unit_vocab = 11);

// ---- checkpoints ----------------------------------------------------------

void save_checkpoint(const std::string& path, const Parameters& params,
                     const OptimizerState& state);

struct Checkpoint {
  Parameters params;
  OptimizerState state;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace unitslu
