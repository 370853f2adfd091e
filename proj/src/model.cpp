#include "unitslu/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <stdexcept>

#include "unitslu/serialization.hpp"

namespace unitslu {
namespace {

using ad::Tape;
using ad::Var;

constexpr const char* kSluPrefix = "slu_decoder";
constexpr const char* kAuxPrefix = "unit_decoder";

Matrix xavier(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> u(-a, a);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = u(rng);
  }
  return m;
}

void add_layer_norm(Parameters& p, const std::string& prefix, int d) {
  p.add(prefix + ".gain", Matrix::Ones(1, d));
  p.add(prefix + ".bias", Matrix::Zero(1, d));
}

void add_attention(Parameters& p, const std::string& prefix, int d, std::mt19937_64& rng) {
  // No key bias: it shifts every score in a row equally and cancels in softmax.
  for (const char* x : {"q", "k", "v", "o"}) {
    p.add(prefix + ".w" + x, xavier(d, d, rng));
    if (*x != 'k') p.add(prefix + ".b" + x, Matrix::Zero(1, d));
  }
}

void add_ffn(Parameters& p, const std::string& prefix, int d, int f, std::mt19937_64& rng) {
  p.add(prefix + ".w1", xavier(d, f, rng));
  p.add(prefix + ".b1", Matrix::Zero(1, f));
  p.add(prefix + ".w2", xavier(f, d, rng));
  p.add(prefix + ".b2", Matrix::Zero(1, d));
}

void add_decoder(Parameters& p, const std::string& prefix, int layers, int vocab,
                 const ModelConfig& c, std::mt19937_64& rng) {
  p.add(prefix + ".embedding", xavier(vocab, c.d_model, rng));
  for (int i = 0; i < layers; ++i) {
    const std::string l = prefix + ".layers." + std::to_string(i);
    add_layer_norm(p, l + ".ln1", c.d_model);
    add_attention(p, l + ".self_attn", c.d_model, rng);
    add_layer_norm(p, l + ".ln2", c.d_model);
    add_attention(p, l + ".cross_attn", c.d_model, rng);
    add_layer_norm(p, l + ".ln3", c.d_model);
    add_ffn(p, l + ".ffn", c.d_model, c.ffn_dim, rng);
  }
  add_layer_norm(p, prefix + ".final_ln", c.d_model);
  p.add(prefix + ".output.weight", xavier(c.d_model, vocab, rng));
  p.add(prefix + ".output.bias", Matrix::Zero(1, vocab));
}

Matrix sinusoid(Eigen::Index n, int d) {
  Matrix pe(n, d);
  for (Eigen::Index pos = 0; pos < n; ++pos) {
    for (int i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / d);
      const double angle = static_cast<double>(pos) * rate;
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

// Binds parameters to a tape lazily so unused branches add no leaves.
class Graph {
 public:
  Graph(Tape& tape, const Parameters& params, const ForwardOptions& options)
      : tape_(tape), params_(params), options_(options), config_(params.config()) {}

  Tape& tape() { return tape_; }

  Var param(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var v = tape_.parameter(params_[name]);
    bound_.emplace(name, v);
    return v;
  }

  const std::map<std::string, Var>& bound() const { return bound_; }

  Var drop(Var x, std::mt19937_64* rng) {
    if (!options_.train || config_.dropout <= 0.0 || rng == nullptr) return x;
    return tape_.dropout(x, config_.dropout, *rng);
  }

  Var layer_norm(Var x, const std::string& prefix) {
    return tape_.layer_norm(x, param(prefix + ".gain"), param(prefix + ".bias"));
  }

  Var attention(Var xq, Var xkv, const std::string& prefix, bool causal) {
    Var q = tape_.linear(xq, param(prefix + ".wq"), param(prefix + ".bq"));
    Var k = tape_.matmul(xkv, param(prefix + ".wk"));
    Var v = tape_.linear(xkv, param(prefix + ".wv"), param(prefix + ".bv"));
    Var o = tape_.attention(q, k, v, config_.heads, causal);
    return tape_.linear(o, param(prefix + ".wo"), param(prefix + ".bo"));
  }

  Var ffn(Var x, const std::string& prefix) {
    Var h = tape_.gelu(tape_.linear(x, param(prefix + ".w1"), param(prefix + ".b1")));
    return tape_.linear(h, param(prefix + ".w2"), param(prefix + ".b2"));
  }

  Var encoder(const Matrix& frames, std::mt19937_64* rng) {
    Var x = tape_.constant(frames);
    Var h = tape_.linear(x, param("input_proj.weight"), param("input_proj.bias"));
    h = tape_.add(h, tape_.constant(sinusoid(frames.rows(), config_.d_model)));
    h = drop(h, rng);
    for (int i = 0; i < config_.enc_layers; ++i) {
      const std::string l = "encoder.layers." + std::to_string(i);
      Var a = layer_norm(h, l + ".ln1");
      h = tape_.add(h, drop(attention(a, a, l + ".self_attn", false), rng));
      Var f = layer_norm(h, l + ".ln2");
      h = tape_.add(h, drop(ffn(f, l + ".ffn"), rng));
    }
    return layer_norm(h, "encoder.final_ln");
  }

  Var decoder(std::span<const int> inputs, Var memory, const std::string& prefix, int layers,
              std::mt19937_64* rng) {
    Var h = tape_.embedding(param(prefix + ".embedding"), inputs);
    h = tape_.add(h, tape_.constant(sinusoid(static_cast<Eigen::Index>(inputs.size()),
                                             config_.d_model)));
    h = drop(h, rng);
    for (int i = 0; i < layers; ++i) {
      const std::string l = prefix + ".layers." + std::to_string(i);
      Var a = layer_norm(h, l + ".ln1");
      h = tape_.add(h, drop(attention(a, a, l + ".self_attn", true), rng));
      Var c = layer_norm(h, l + ".ln2");
      h = tape_.add(h, drop(attention(c, memory, l + ".cross_attn", false), rng));
      Var f = layer_norm(h, l + ".ln3");
      h = tape_.add(h, drop(ffn(f, l + ".ffn"), rng));
    }
    Var out = layer_norm(h, prefix + ".final_ln");
    return tape_.linear(out, param(prefix + ".output.weight"), param(prefix + ".output.bias"));
  }

 private:
  Tape& tape_;
  const Parameters& params_;
  ForwardOptions options_;
  const ModelConfig& config_;
  std::map<std::string, Var> bound_;
};

// Number of non-PAD entries; PAD only ever trails.
std::size_t target_length(const std::vector<int>& row) {
  std::size_t n = 0;
  while (n < row.size() && row[n] != Vocab::kPad) ++n;
  return n;
}

void check_target_row(const std::vector<int>& row, const char* which, std::size_t item) {
  const std::size_t n = target_length(row);
  if (n < 2 || row[0] != Vocab::kBos || row[n - 1] != Vocab::kEos) {
    throw std::invalid_argument(std::string("forward: ") + which + " target " +
                                std::to_string(item) + " must be BOS ... EOS");
  }
  for (std::size_t i = n; i < row.size(); ++i) {
    if (row[i] != Vocab::kPad) {
      throw std::invalid_argument(std::string("forward: ") + which + " target " +
                                  std::to_string(item) + " has tokens after padding");
    }
  }
}

void check_batch(const Parameters& params, const Batch& batch, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("forward: lambda must lie in [0, 1]");
  }
  const std::size_t n = batch.size();
  if (n == 0) throw std::invalid_argument("forward: empty batch");
  if (batch.frame_lengths.size() != n || batch.slu_targets.size() != n ||
      (batch.has_aux() && batch.aux_targets.size() != n)) {
    throw std::invalid_argument("forward: batch fields have different lengths");
  }
  if (lambda > 0.0 && !batch.has_aux()) {
    throw std::invalid_argument("forward: lambda > 0 requires auxiliary targets");
  }
  for (std::size_t b = 0; b < n; ++b) {
    if (batch.features[b].cols() != params.config().input_dim) {
      throw std::invalid_argument("forward: feature dim mismatch for item " + std::to_string(b));
    }
    if (batch.frame_lengths[b] < 1 || batch.frame_lengths[b] > batch.features[b].rows()) {
      throw std::invalid_argument("forward: bad frame length for item " + std::to_string(b));
    }
    check_target_row(batch.slu_targets[b], "SLU", b);
    if (batch.has_aux()) check_target_row(batch.aux_targets[b], "auxiliary", b);
  }
}

struct Traced {
  ForwardResult result;
  Var total;
};

Traced run_forward(Graph& g, const Parameters& params, const Batch& batch, double lambda,
                   const ForwardOptions& options) {
  check_batch(params, batch, lambda);
  const ModelConfig& c = params.config();
  Tape& tape = g.tape();
  Traced t;
  t.result.loss.lambda = lambda;

  std::vector<Var> slu_sums;
  std::vector<Var> aux_sums;
  double slu_count = 0.0;
  double aux_count = 0.0;
  const bool use_rng = options.train && c.dropout > 0.0;

  for (std::size_t b = 0; b < batch.size(); ++b) {
    // Independent dropout streams per module keep the encoder and SLU
    // decoder masks identical whether or not the auxiliary branch runs.
    std::mt19937_64 enc_rng(derive_seed(options.dropout_seed, 3 * b));
    std::mt19937_64 slu_rng(derive_seed(options.dropout_seed, 3 * b + 1));
    std::mt19937_64 aux_rng(derive_seed(options.dropout_seed, 3 * b + 2));

    const Matrix frames = batch.features[b].topRows(batch.frame_lengths[b]).cast<double>();
    Var memory = g.encoder(frames, use_rng ? &enc_rng : nullptr);
    t.result.sharing.encoder_output.push_back(memory.id);

    auto run_head = [&](const std::vector<int>& row, const char* prefix, int layers,
                        std::mt19937_64* rng, std::vector<Var>& sums, double& count,
                        std::vector<Matrix>& logits_out, std::vector<int>& memory_ids) {
      const std::size_t n = target_length(row);
      std::span<const int> inputs(row.data(), n - 1);
      std::span<const int> labels(row.data() + 1, n - 1);
      Var logits = g.decoder(inputs, memory, prefix, layers, rng);
      memory_ids.push_back(memory.id);
      sums.push_back(tape.cross_entropy_sum(logits, labels));
      count += static_cast<double>(n - 1);
      logits_out.push_back(tape.value(logits));
    };

    run_head(batch.slu_targets[b], kSluPrefix, c.slu_dec_layers, use_rng ? &slu_rng : nullptr,
             slu_sums, slu_count, t.result.slu_logits, t.result.sharing.slu_memory);
    if (batch.has_aux()) {
      run_head(batch.aux_targets[b], kAuxPrefix, c.unit_dec_layers, use_rng ? &aux_rng : nullptr,
               aux_sums, aux_count, t.result.aux_logits, t.result.sharing.aux_memory);
    }
  }

  Var slu_sum = tape.sum(slu_sums);
  Var aux_sum = batch.has_aux() ? tape.sum(aux_sums) : Var{};
  auto mix = tape.loss_mix(slu_sum, slu_count, aux_sum, aux_count, lambda);
  t.result.loss.l_slu = mix.l_main;
  t.result.loss.l_aux = mix.l_aux;
  t.result.loss.total = mix.total_value;
  t.total = mix.total;
  if (!std::isfinite(mix.total_value) || !std::isfinite(mix.l_main) ||
      !std::isfinite(mix.l_aux)) {
    throw std::runtime_error("forward: non-finite loss (divergence)");
  }
  return t;
}

Matrix run_encoder(const Parameters& params, const FeatureMatrix& features) {
  if (features.rows() < 1) throw std::invalid_argument("decode: no frames");
  if (features.cols() != params.config().input_dim) {
    throw std::invalid_argument("decode: feature dim mismatch");
  }
  Tape tape(false);
  Graph g(tape, params, {});
  return tape.value(g.encoder(features.cast<double>(), nullptr));
}

Matrix run_decoder(const Parameters& params, const Matrix& memory, DecoderHead head,
                   std::span<const int> prefix) {
  Tape tape(false);
  Graph g(tape, params, {});
  Var mem = tape.constant(memory);
  const bool slu = head == DecoderHead::kSlu;
  const auto& c = params.config();
  Var logits = g.decoder(prefix, mem, slu ? kSluPrefix : kAuxPrefix,
                         slu ? c.slu_dec_layers : c.unit_dec_layers, nullptr);
  return tape.value(logits);
}

}  // namespace

void validate(const ModelConfig& c) {
  auto positive = [](int v, const char* field) {
    if (v < 1) throw std::invalid_argument(std::string("ModelConfig.") + field + " must be >= 1");
  };
  positive(c.enc_layers, "enc_layers");
  positive(c.slu_dec_layers, "slu_dec_layers");
  positive(c.unit_dec_layers, "unit_dec_layers");
  positive(c.d_model, "d_model");
  positive(c.heads, "heads");
  positive(c.ffn_dim, "ffn_dim");
  positive(c.input_dim, "input_dim");
  positive(c.slu_vocab_size, "slu_vocab_size");
  positive(c.unit_vocab_size, "unit_vocab_size");
  positive(c.max_decode_len, "max_decode_len");
  if (c.d_model % c.heads != 0) {
    throw std::invalid_argument("ModelConfig.d_model (" + std::to_string(c.d_model) +
                                ") must be divisible by heads (" + std::to_string(c.heads) + ")");
  }
  if (c.slu_vocab_size < Vocab::kNumSpecials || c.unit_vocab_size < Vocab::kNumSpecials) {
    throw std::invalid_argument("ModelConfig vocab sizes must include the 4 special tokens");
  }
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) {
    throw std::invalid_argument("ModelConfig.dropout must lie in [0, 1)");
  }
}

Matrix& Parameters::add(const std::string& name, Matrix value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index_.emplace(name, tensors_.size());
  names_.push_back(name);
  tensors_.push_back(std::move(value));
  return tensors_.back();
}

Matrix& Parameters::operator[](const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
  return tensors_[it->second];
}

const Matrix& Parameters::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter '" + name + "'");
  return tensors_[it->second];
}

std::size_t Parameters::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
  return n;
}

bool Parameters::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(),
                     [](const Matrix& m) { return m.allFinite(); });
}

Parameters Parameters::zeros_like() const {
  Parameters z(config_);
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    z.add(names_[i], Matrix::Zero(tensors_[i].rows(), tensors_[i].cols()));
  }
  return z;
}

bool Parameters::operator==(const Parameters& other) const {
  if (!(config_ == other.config_) || names_ != other.names_) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const auto& a = tensors_[i];
    const auto& b = other.tensors_[i];
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    if (std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) != 0) {
      return false;
    }
  }
  return true;
}

Parameters build_model(const ModelConfig& config) {
  validate(config);
  std::mt19937_64 rng(config.seed);
  Parameters p(config);
  const int d = config.d_model;
  p.add("input_proj.weight", xavier(config.input_dim, d, rng));
  p.add("input_proj.bias", Matrix::Zero(1, d));
  for (int i = 0; i < config.enc_layers; ++i) {
    const std::string l = "encoder.layers." + std::to_string(i);
    add_layer_norm(p, l + ".ln1", d);
    add_attention(p, l + ".self_attn", d, rng);
    add_layer_norm(p, l + ".ln2", d);
    add_ffn(p, l + ".ffn", d, config.ffn_dim, rng);
  }
  add_layer_norm(p, "encoder.final_ln", d);
  add_decoder(p, kSluPrefix, config.slu_dec_layers, config.slu_vocab_size, config, rng);
  add_decoder(p, kAuxPrefix, config.unit_dec_layers, config.unit_vocab_size, config, rng);
  return p;
}

std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = static_cast<std::size_t>(c.d_model);
  const std::size_t f = static_cast<std::size_t>(c.ffn_dim);
  const std::size_t ln = 2 * d;
  const std::size_t attn = 4 * d * d + 3 * d;
  const std::size_t ffn = d * f + f + f * d + d;
  auto decoder = [&](std::size_t layers, std::size_t vocab) {
    return vocab * d + layers * (3 * ln + 2 * attn + ffn) + ln + d * vocab + vocab;
  };
  return static_cast<std::size_t>(c.input_dim) * d + d +
         static_cast<std::size_t>(c.enc_layers) * (2 * ln + attn + ffn) + ln +
         decoder(static_cast<std::size_t>(c.slu_dec_layers),
                 static_cast<std::size_t>(c.slu_vocab_size)) +
         decoder(static_cast<std::size_t>(c.unit_dec_layers),
                 static_cast<std::size_t>(c.unit_vocab_size));
}

Batch make_batch(std::span<const FeatureMatrix> features,
                 std::span<const std::vector<int>> slu_ids,
                 std::span<const std::vector<int>> aux_ids) {
  if (features.size() != slu_ids.size() || (!aux_ids.empty() && aux_ids.size() != features.size())) {
    throw std::invalid_argument("make_batch: inputs have different lengths");
  }
  Batch batch;
  Eigen::Index max_frames = 0;
  for (const auto& f : features) max_frames = std::max(max_frames, f.rows());

  auto pad_targets = [](std::span<const std::vector<int>> rows) {
    std::size_t longest = 0;
    for (const auto& r : rows) longest = std::max(longest, r.size() + 2);
    std::vector<std::vector<int>> out;
    for (const auto& r : rows) {
      std::vector<int> row;
      row.reserve(longest);
      row.push_back(Vocab::kBos);
      row.insert(row.end(), r.begin(), r.end());
      row.push_back(Vocab::kEos);
      row.resize(longest, Vocab::kPad);
      out.push_back(std::move(row));
    }
    return out;
  };

  for (const auto& f : features) {
    FeatureMatrix padded = FeatureMatrix::Zero(max_frames, f.cols());
    padded.topRows(f.rows()) = f;
    batch.features.push_back(std::move(padded));
    batch.frame_lengths.push_back(static_cast<int>(f.rows()));
  }
  batch.slu_targets = pad_targets(slu_ids);
  if (!aux_ids.empty()) batch.aux_targets = pad_targets(aux_ids);
  return batch;
}

std::vector<std::vector<bool>> frame_mask(const Batch& batch) {
  std::vector<std::vector<bool>> mask;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    std::vector<bool> row(static_cast<std::size_t>(batch.features[b].rows()), false);
    std::fill_n(row.begin(), batch.frame_lengths[b], true);
    mask.push_back(std::move(row));
  }
  return mask;
}

ForwardResult forward(const Parameters& params, const Batch& batch, double lambda,
                      const ForwardOptions& options) {
  Tape tape(false);
  Graph g(tape, params, options);
  return run_forward(g, params, batch, lambda, options).result;
}

OptimizerState OptimizerState::for_params(const Parameters& params) {
  OptimizerState s;
  s.m = params.zeros_like();
  s.v = params.zeros_like();
  return s;
}

GradientResult compute_gradients(const Parameters& params, const Batch& batch, double lambda,
                                 const ForwardOptions& options) {
  Tape tape(true);
  Graph g(tape, params, options);
  Traced t = run_forward(g, params, batch, lambda, options);
  tape.backward(t.total);

  GradientResult out{params.zeros_like(), t.result.loss};
  for (const auto& [name, var] : g.bound()) {
    if (tape.has_grad(var)) out.grads[name] = tape.grad(var);
  }
  return out;
}

double adam_update(Parameters& params, Parameters grads, OptimizerState& state, double lr,
                   const AdamOptions& adam) {
  if (!(lr >= 0.0)) throw std::invalid_argument("adam_update: lr must be >= 0");
  if (!grads.all_finite()) throw std::runtime_error("adam_update: non-finite gradient");
  if (state.m.size() != params.size()) state = OptimizerState::for_params(params);

  double sq = 0.0;
  for (std::size_t i = 0; i < grads.size(); ++i) sq += grads.tensor(i).squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > adam.clip_norm) {
    const double scale = adam.clip_norm / norm;
    for (std::size_t i = 0; i < grads.size(); ++i) grads.tensor(i) *= scale;
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(adam.beta1, t);
  const double c2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = grads.tensor(i);
    Matrix& m = state.m.tensor(i);
    Matrix& v = state.v.tensor(i);
    m = adam.beta1 * m + (1.0 - adam.beta1) * g;
    v = adam.beta2 * v + (1.0 - adam.beta2) * g.cwiseProduct(g);
    params.tensor(i).array() -=
        lr * (m.array() / c1) / ((v.array() / c2).sqrt() + adam.eps);
  }
  return norm;
}

StepResult backward_step(Parameters& params, const Batch& batch, double lambda,
                         OptimizerState& state, double lr, const ForwardOptions& options,
                         const AdamOptions& adam) {
  GradientResult g = compute_gradients(params, batch, lambda, options);
  StepResult r;
  r.loss = g.loss;
  r.grad_norm = adam_update(params, std::move(g.grads), state, lr, adam);
  return r;
}

std::vector<int> greedy_search(
    const std::function<Eigen::VectorXd(std::span<const int>)>& next_logits, int max_len) {
  std::vector<int> prefix{Vocab::kBos};
  std::vector<int> out;
  for (int step = 0; step < max_len; ++step) {
    const Eigen::VectorXd logits = next_logits(prefix);
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < logits.size(); ++i) {
      if (logits[i] > logits[best]) best = i;
    }
    if (best == Vocab::kEos) break;
    out.push_back(static_cast<int>(best));
    prefix.push_back(static_cast<int>(best));
  }
  return out;
}

std::vector<int> greedy_decode(const Parameters& params, const FeatureMatrix& features,
                               DecoderHead head, int max_len) {
  const Matrix memory = run_encoder(params, features);
  return greedy_search(
      [&](std::span<const int> prefix) -> Eigen::VectorXd {
        const Matrix logits = run_decoder(params, memory, head, prefix);
        return logits.row(logits.rows() - 1).transpose();
      },
      max_len);
}

Matrix decoder_logits(const Parameters& params, const FeatureMatrix& features, DecoderHead head,
                      std::span<const int> prefix) {
  return run_decoder(params, run_encoder(params, features), head, prefix);
}

GradCheckResult grad_check(const Parameters& params, const Batch& batch, double lambda,
                           const GradCheckOptions& options) {
  GradientResult analytic = compute_gradients(params, batch, lambda);
  if (options.corrupt_tensor) analytic.grads[*options.corrupt_tensor] *= 2.0;

  struct Coord {
    std::size_t tensor;
    Eigen::Index index;
  };
  std::vector<Coord> coords;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (Eigen::Index i = 0; i < params.tensor(t).size(); ++i) coords.push_back({t, i});
  }
  if (coords.size() > options.max_coordinates) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coordinates);
  }

  Parameters probe = params;
  GradCheckResult result;
  result.coordinates = coords.size();
  for (const auto& c : coords) {
    double& x = probe.tensor(c.tensor).data()[c.index];
    const double saved = x;
    x = saved + options.epsilon;
    const double up = forward(probe, batch, lambda).loss.total;
    x = saved - options.epsilon;
    const double down = forward(probe, batch, lambda).loss.total;
    x = saved;
    const double fd = (up - down) / (2.0 * options.epsilon);
    const double ga = analytic.grads.tensor(c.tensor).data()[c.index];
    const double err = std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd));
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_tensor = params.name(c.tensor);
    }
  }
  return result;
}

ModelConfig tiny_config(int input_dim, int slu_vocab, int unit_vocab) {
  ModelConfig c;
  c.enc_layers = 1;
  c.slu_dec_layers = 1;
  c.unit_dec_layers = 1;
  c.d_model = 8;
  c.heads = 2;
  c.ffn_dim = 16;
  c.input_dim = input_dim;
  c.slu_vocab_size = slu_vocab;
  c.unit_vocab_size = unit_vocab;
  c.max_decode_len = 32;
  c.dropout = 0.0;
  c.seed = 0;
  return c;
}

}  // namespace unitslu
