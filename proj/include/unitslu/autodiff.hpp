#pragma once

// A small tape-based reverse-mode differentiation core over dense double
// matrices. Each op records a closure that pushes the output gradient back to
// its inputs; Tape::backward replays them in reverse creation order.
//
// Ops are coarse (linear layer, multi-head attention, layer norm, fused
// softmax cross-entropy) so a transformer step stays a few dozen nodes per
// utterance.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace unitslu::ad {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
  bool operator==(const Var&) const = default;
};

class Tape {
 public:
  /// With record=false no backward closures are kept (inference).
  explicit Tape(bool record = true) : record_(record) {}

  Var constant(Matrix value);
  /// A leaf that reads `value` in place; `value` must outlive the tape.
  Var parameter(const Matrix& value);

  const Matrix& value(Var v) const;
  /// Zero-sized when no gradient reached `v`.
  const Matrix& grad(Var v) const;
  bool has_grad(Var v) const { return node(v).has_grad; }

  /// Seeds d(root)/d(root) = 1; root must be 1x1.
  void backward(Var root);

  int size() const { return static_cast<int>(nodes_.size()); }

  // ---- ops -------------------------------------------------------------
  Var add(Var a, Var b);
  Var matmul(Var a, Var b);
  /// x * w + b, with b a 1 x out row broadcast over rows.
  Var linear(Var x, Var w, Var b);
  /// tanh-approximated GELU.
  Var gelu(Var x);
  /// Row-wise normalisation over columns.
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  /// Scaled dot-product attention split into `heads` column blocks. With
  /// `causal`, query row i only sees key rows <= i.
  Var attention(Var q, Var k, Var v, int heads, bool causal);
  /// Rows of `table` selected by ids.
  Var embedding(Var table, std::span<const int> ids);
  /// Sum over rows of -log softmax(logits)[row, target[row]]; 1x1 result.
  Var cross_entropy_sum(Var logits, std::span<const int> targets);
  /// Inverted dropout; identity when p == 0.
  Var dropout(Var x, double p, std::mt19937_64& rng);
  Var sum(std::span<const Var> scalars);

  struct LossMix {
    Var total;
    double l_main = 0.0;
    double l_aux = 0.0;
    double total_value = 0.0;
  };
  /// total = (1 - lambda) * (main_sum / main_count) + lambda * (aux_sum / aux_count).
  /// A branch with zero weight receives no gradient. aux may be invalid when
  /// there is no auxiliary stream (then l_aux = 0).
  LossMix loss_mix(Var main_sum, double main_count, Var aux_sum, double aux_count, double lambda);

 private:
  struct Node {
    Matrix owned;
    const Matrix* external = nullptr;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::function<void(const Matrix&)> backward;

    const Matrix& value() const { return external ? *external : owned; }
  };

  Node& node(Var v);
  const Node& node(Var v) const;
  Var push(Matrix value, bool requires_grad);
  bool needs_grad(Var v) const { return record_ && node(v).requires_grad; }

  template <typename Expr>
  void accumulate(Var v, const Expr& g);

  bool record_;
  std::vector<Node> nodes_;
};

/// Softmax attention weights for one head, rows sum to 1.
Matrix attention_probabilities(const Eigen::Ref<const Matrix>& q, const Eigen::Ref<const Matrix>& k,
                               bool causal);

}  // namespace unitslu::ad
