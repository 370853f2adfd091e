#include "unitslu/autodiff.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace unitslu::ad {
namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

void check_shape(bool ok, const char* op) {
  if (!ok) throw std::invalid_argument(std::string("autodiff: shape mismatch in ") + op);
}

}  // namespace

Tape::Node& Tape::node(Var v) {
  if (v.id < 0 || v.id >= size()) throw std::out_of_range("autodiff: invalid Var");
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || v.id >= size()) throw std::out_of_range("autodiff: invalid Var");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::push(Matrix value, bool requires_grad) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad && record_;
  nodes_.push_back(std::move(n));
  return Var{size() - 1};
}

template <typename Expr>
void Tape::accumulate(Var v, const Expr& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (n.has_grad) {
    n.grad += g;
  } else {
    n.grad = g;
    n.has_grad = true;
  }
}

Var Tape::constant(Matrix value) { return push(std::move(value), false); }

Var Tape::parameter(const Matrix& value) {
  Node n;
  n.external = &value;
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{size() - 1};
}

const Matrix& Tape::value(Var v) const { return node(v).value(); }

const Matrix& Tape::grad(Var v) const { return node(v).grad; }

void Tape::backward(Var root) {
  if (!record_) throw std::logic_error("autodiff: backward on a non-recording tape");
  check_shape(value(root).size() == 1, "backward (root must be scalar)");
  accumulate(root, Matrix::Ones(1, 1));
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.has_grad && n.backward) {
      // Inputs always have smaller ids, so this node's gradient is final.
      const Matrix g = std::move(n.grad);
      n.grad.resize(0, 0);
      n.has_grad = false;
      n.backward(g);
    }
  }
}

Var Tape::add(Var a, Var b) {
  check_shape(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add");
  Var out = push(value(a) + value(b), needs_grad(a) || needs_grad(b));
  if (node(out).requires_grad) {
    node(out).backward = [this, a, b](const Matrix& g) {
      accumulate(a, g);
      accumulate(b, g);
    };
  }
  return out;
}

Var Tape::matmul(Var a, Var b) {
  check_shape(value(a).cols() == value(b).rows(), "matmul");
  Var out = push(value(a) * value(b), needs_grad(a) || needs_grad(b));
  if (node(out).requires_grad) {
    node(out).backward = [this, a, b](const Matrix& g) {
      if (needs_grad(a)) accumulate(a, g * value(b).transpose());
      if (needs_grad(b)) accumulate(b, value(a).transpose() * g);
    };
  }
  return out;
}

Var Tape::linear(Var x, Var w, Var b) {
  const Matrix& xv = value(x);
  const Matrix& wv = value(w);
  const Matrix& bv = value(b);
  check_shape(xv.cols() == wv.rows() && bv.rows() == 1 && bv.cols() == wv.cols(), "linear");
  Matrix y = xv * wv;
  y.rowwise() += bv.row(0);
  Var out = push(std::move(y), needs_grad(x) || needs_grad(w) || needs_grad(b));
  if (node(out).requires_grad) {
    node(out).backward = [this, x, w, b](const Matrix& g) {
      if (needs_grad(x)) accumulate(x, g * value(w).transpose());
      if (needs_grad(w)) accumulate(w, value(x).transpose() * g);
      if (needs_grad(b)) accumulate(b, g.colwise().sum());
    };
  }
  return out;
}

Var Tape::gelu(Var x) {
  const Matrix& xv = value(x);
  Matrix y = xv.unaryExpr([](double t) {
    return 0.5 * t * (1.0 + std::tanh(kGeluC * (t + kGeluA * t * t * t)));
  });
  Var out = push(std::move(y), needs_grad(x));
  if (node(out).requires_grad) {
    node(out).backward = [this, x](const Matrix& g) {
      const Matrix d = value(x).unaryExpr([](double t) {
        const double u = kGeluC * (t + kGeluA * t * t * t);
        const double th = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * kGeluA * t * t);
        return 0.5 * (1.0 + th) + 0.5 * t * (1.0 - th * th) * du;
      });
      accumulate(x, g.cwiseProduct(d));
    };
  }
  return out;
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = value(x);
  const Eigen::Index n = xv.rows();
  const Eigen::Index d = xv.cols();
  check_shape(value(gain).rows() == 1 && value(gain).cols() == d && value(bias).rows() == 1 &&
                  value(bias).cols() == d,
              "layer_norm");
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = xv.row(i).mean();
    const double var = (xv.row(i).array() - mean).square().mean();
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mean) * inv_std[i];
  }
  Matrix y = xhat.array().rowwise() * value(gain).row(0).array();
  y.rowwise() += value(bias).row(0);
  Var out = push(std::move(y), needs_grad(x) || needs_grad(gain) || needs_grad(bias));
  if (node(out).requires_grad) {
    node(out).backward = [this, x, gain, bias, xhat = std::move(xhat),
                          inv_std = std::move(inv_std)](const Matrix& g) {
      if (needs_grad(gain)) accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
      if (needs_grad(bias)) accumulate(bias, g.colwise().sum());
      if (needs_grad(x)) {
        const Matrix dxhat = g.array().rowwise() * value(gain).row(0).array();
        Matrix dx(dxhat.rows(), dxhat.cols());
        for (Eigen::Index i = 0; i < dx.rows(); ++i) {
          const double m1 = dxhat.row(i).mean();
          const double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
          dx.row(i) = (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std[i];
        }
        accumulate(x, dx);
      }
    };
  }
  return out;
}

Matrix attention_probabilities(const Eigen::Ref<const Matrix>& q, const Eigen::Ref<const Matrix>& k,
                               bool causal) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix s = (q * k.transpose()) * scale;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const Eigen::Index visible = causal ? std::min<Eigen::Index>(i + 1, s.cols()) : s.cols();
    const double mx = s.row(i).head(visible).maxCoeff();
    double total = 0.0;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      const double e = j < visible ? std::exp(s(i, j) - mx) : 0.0;
      s(i, j) = e;
      total += e;
    }
    s.row(i) /= total;
  }
  return s;
}

Var Tape::attention(Var q, Var k, Var v, int heads, bool causal) {
  const Matrix& qv = value(q);
  const Matrix& kv = value(k);
  const Matrix& vv = value(v);
  check_shape(qv.cols() == kv.cols() && kv.rows() == vv.rows() && vv.cols() == qv.cols() &&
                  heads > 0 && qv.cols() % heads == 0,
              "attention");
  const Eigen::Index dh = qv.cols() / heads;
  std::vector<Matrix> probs(static_cast<std::size_t>(heads));
  Matrix y(qv.rows(), vv.cols());
  for (int h = 0; h < heads; ++h) {
    probs[static_cast<std::size_t>(h)] =
        attention_probabilities(qv.middleCols(h * dh, dh), kv.middleCols(h * dh, dh), causal);
    y.middleCols(h * dh, dh) = probs[static_cast<std::size_t>(h)] * vv.middleCols(h * dh, dh);
  }
  Var out = push(std::move(y), needs_grad(q) || needs_grad(k) || needs_grad(v));
  if (node(out).requires_grad) {
    node(out).backward = [this, q, k, v, heads, dh, probs = std::move(probs)](const Matrix& g) {
      const Matrix& qv = value(q);
      const Matrix& kv = value(k);
      const Matrix& vv = value(v);
      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
      Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
      Matrix dk = Matrix::Zero(kv.rows(), kv.cols());
      Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
      for (int h = 0; h < heads; ++h) {
        const Matrix& p = probs[static_cast<std::size_t>(h)];
        const auto gh = g.middleCols(h * dh, dh);
        dv.middleCols(h * dh, dh) = p.transpose() * gh;
        const Matrix dp = gh * vv.middleCols(h * dh, dh).transpose();
        const Eigen::VectorXd row_dot = dp.cwiseProduct(p).rowwise().sum();
        const Matrix ds = (p.array() * (dp.colwise() - row_dot).array()).matrix() * scale;
        dq.middleCols(h * dh, dh) = ds * kv.middleCols(h * dh, dh);
        dk.middleCols(h * dh, dh) = ds.transpose() * qv.middleCols(h * dh, dh);
      }
      accumulate(q, dq);
      accumulate(k, dk);
      accumulate(v, dv);
    };
  }
  return out;
}

Var Tape::embedding(Var table, std::span<const int> ids) {
  const Matrix& t = value(table);
  Matrix y(static_cast<Eigen::Index>(ids.size()), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= t.rows()) {
      throw std::out_of_range("autodiff: embedding id " + std::to_string(ids[i]) +
                              " outside table of " + std::to_string(t.rows()));
    }
    y.row(static_cast<Eigen::Index>(i)) = t.row(ids[i]);
  }
  Var out = push(std::move(y), needs_grad(table));
  if (node(out).requires_grad) {
    node(out).backward = [this, table, ids = std::vector<int>(ids.begin(), ids.end())](
                             const Matrix& g) {
      Matrix dt = Matrix::Zero(value(table).rows(), value(table).cols());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        dt.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
      }
      accumulate(table, dt);
    };
  }
  return out;
}

Var Tape::cross_entropy_sum(Var logits, std::span<const int> targets) {
  const Matrix& z = value(logits);
  check_shape(z.rows() == static_cast<Eigen::Index>(targets.size()), "cross_entropy_sum");
  Matrix probs(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= z.cols()) throw std::out_of_range("autodiff: target id out of range");
    const double mx = z.row(i).maxCoeff();
    const double lse = mx + std::log((z.row(i).array() - mx).exp().sum());
    loss += lse - z(i, t);
    probs.row(i) = (z.row(i).array() - lse).exp();
  }
  Var out = push(Matrix::Constant(1, 1, loss), needs_grad(logits));
  if (node(out).requires_grad) {
    node(out).backward = [this, logits, probs = std::move(probs),
                          targets = std::vector<int>(targets.begin(), targets.end())](
                             const Matrix& g) {
      Matrix d = probs;
      for (std::size_t i = 0; i < targets.size(); ++i) {
        d(static_cast<Eigen::Index>(i), targets[i]) -= 1.0;
      }
      accumulate(logits, d * g(0, 0));
    };
  }
  return out;
}

Var Tape::dropout(Var x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("autodiff: dropout p must be < 1");
  const Matrix& xv = value(x);
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  Matrix mask(xv.rows(), xv.cols());
  for (Eigen::Index j = 0; j < mask.cols(); ++j) {
    for (Eigen::Index i = 0; i < mask.rows(); ++i) mask(i, j) = keep(rng) ? scale : 0.0;
  }
  Var out = push(xv.cwiseProduct(mask), needs_grad(x));
  if (node(out).requires_grad) {
    node(out).backward = [this, x, mask = std::move(mask)](const Matrix& g) {
      accumulate(x, g.cwiseProduct(mask));
    };
  }
  return out;
}

Var Tape::sum(std::span<const Var> scalars) {
  double total = 0.0;
  bool grad = false;
  for (Var s : scalars) {
    check_shape(value(s).size() == 1, "sum");
    total += value(s)(0, 0);
    grad = grad || needs_grad(s);
  }
  Var out = push(Matrix::Constant(1, 1, total), grad);
  if (node(out).requires_grad) {
    node(out).backward = [this, inputs = std::vector<Var>(scalars.begin(), scalars.end())](
                             const Matrix& g) {
      for (Var s : inputs) accumulate(s, g);
    };
  }
  return out;
}

Tape::LossMix Tape::loss_mix(Var main_sum, double main_count, Var aux_sum, double aux_count,
                             double lambda) {
  if (!(main_count > 0.0)) throw std::invalid_argument("loss_mix: no main-task tokens");
  LossMix mix;
  mix.l_main = value(main_sum)(0, 0) / main_count;
  if (aux_sum.valid()) {
    if (!(aux_count > 0.0)) throw std::invalid_argument("loss_mix: no auxiliary tokens");
    mix.l_aux = value(aux_sum)(0, 0) / aux_count;
  }
  mix.total_value = (1.0 - lambda) * mix.l_main + lambda * mix.l_aux;
  const bool grad = needs_grad(main_sum) || (aux_sum.valid() && needs_grad(aux_sum));
  mix.total = push(Matrix::Constant(1, 1, mix.total_value), grad);
  if (node(mix.total).requires_grad) {
    node(mix.total).backward = [this, main_sum, main_count, aux_sum, aux_count,
                                lambda](const Matrix& g) {
      const double w_main = 1.0 - lambda;
      if (w_main != 0.0) accumulate(main_sum, g * (w_main / main_count));
      if (aux_sum.valid() && lambda != 0.0) accumulate(aux_sum, g * (lambda / aux_count));
    };
  }
  return mix;
}

}  // namespace unitslu::ad
