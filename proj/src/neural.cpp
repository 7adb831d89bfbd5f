#include "navgen/neural.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "navgen/error.hpp"

namespace navgen::nn {

namespace {

std::string dims(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shapes " + dims(a) + " and " + dims(b) + " differ");
  }
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

// ---- ParameterStore -------------------------------------------------------

ParameterStore::ParameterStore(const ParameterStore& other) : index_(other.index_) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParameterStore& ParameterStore::operator=(const ParameterStore& other) {
  if (this != &other) {
    ParameterStore copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Parameter& ParameterStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  if (contains(name)) throw ShapeError("parameter '" + name + "' already exists");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Matrix::Zero(rows, cols);
  p->grad = Matrix::Zero(rows, cols);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("no parameter named '" + name + "'");
  return *params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("no parameter named '" + name + "'");
  return *params_[it->second];
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad.setZero(p->value.rows(), p->value.cols());
}

double ParameterStore::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

double ParameterStore::clip_grad_norm(double max_norm) {
  double norm = grad_norm();
  if (std::isfinite(norm) && norm > max_norm && norm > 0.0) {
    double s = max_norm / norm;
    for (auto& p : params_) p->grad *= s;
  }
  return norm;
}

// ---- Graph ----------------------------------------------------------------

Var Graph::push(Matrix value, std::function<void(Graph&)> backward) {
  Node n;
  n.value = std::move(value);
  if (record_) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Matrix& Graph::grad_ref(Var v) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Graph::constant(Matrix value) { return push(std::move(value)); }

Var Graph::param(Parameter& p) {
  Var v = push(p.value);
  nodes_.back().param = &p;
  return v;
}

Var Graph::matmul(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.cols() != bv.rows()) throw ShapeError("matmul: " + dims(av) + " by " + dims(bv));
  Matrix out = av * bv;
  Var o{static_cast<int>(nodes_.size())};
  return push(std::move(out), [a, b, o](Graph& g) {
    const Matrix& go = g.grad(o);
    g.grad_ref(a).noalias() += go * g.value(b).transpose();
    g.grad_ref(b).noalias() += g.value(a).transpose() * go;
  });
}

Var Graph::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Var o{static_cast<int>(nodes_.size())};
  return push(value(a) + value(b), [a, b, o](Graph& g) {
    g.grad_ref(a) += g.grad(o);
    g.grad_ref(b) += g.grad(o);
  });
}

Var Graph::sub(Var a, Var b) {
  require_same_shape(value(a), value(b), "sub");
  Var o{static_cast<int>(nodes_.size())};
  return push(value(a) - value(b), [a, b, o](Graph& g) {
    g.grad_ref(a) += g.grad(o);
    g.grad_ref(b) -= g.grad(o);
  });
}

Var Graph::add_row(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (bv.rows() != 1 || bv.cols() != av.cols()) throw ShapeError("add_row: " + dims(av) + " plus " + dims(bv));
  Matrix out = av.rowwise() + bv.row(0);
  Var o{static_cast<int>(nodes_.size())};
  return push(std::move(out), [a, b, o](Graph& g) {
    g.grad_ref(a) += g.grad(o);
    g.grad_ref(b) += g.grad(o).colwise().sum();
  });
}

Var Graph::mul(Var a, Var b) {
  require_same_shape(value(a), value(b), "mul");
  Var o{static_cast<int>(nodes_.size())};
  return push(value(a).cwiseProduct(value(b)), [a, b, o](Graph& g) {
    g.grad_ref(a) += g.grad(o).cwiseProduct(g.value(b));
    g.grad_ref(b) += g.grad(o).cwiseProduct(g.value(a));
  });
}

Var Graph::mul_col(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.cols() != 1 || av.rows() != bv.rows()) throw ShapeError("mul_col: " + dims(av) + " by " + dims(bv));
  Matrix out = bv.array().colwise() * av.col(0).array();
  Var o{static_cast<int>(nodes_.size())};
  return push(std::move(out), [a, b, o](Graph& g) {
    const Matrix& go = g.grad(o);
    g.grad_ref(a) += go.cwiseProduct(g.value(b)).rowwise().sum();
    g.grad_ref(b).array() += go.array().colwise() * g.value(a).col(0).array();
  });
}

Var Graph::scale(Var a, double s) {
  Var o{static_cast<int>(nodes_.size())};
  return push(value(a) * s, [a, o, s](Graph& g) { g.grad_ref(a) += g.grad(o) * s; });
}

Var Graph::sigmoid(Var a) {
  Matrix out = (1.0 + (-value(a).array()).exp()).inverse().matrix();
  Var o{static_cast<int>(nodes_.size())};
  return push(std::move(out), [a, o](Graph& g) {
    const Matrix& y = g.value(o);
    g.grad_ref(a).array() += g.grad(o).array() * y.array() * (1.0 - y.array());
  });
}

Var Graph::tanh(Var a) {
  Matrix out = value(a).array().tanh().matrix();
  Var o{static_cast<int>(nodes_.size())};
  return push(std::move(out), [a, o](Graph& g) {
    const Matrix& y = g.value(o);
    g.grad_ref(a).array() += g.grad(o).array() * (1.0 - y.array().square());
  });
}

Var Graph::square(Var a) {
  Var o{static_cast<int>(nodes_.size())};
  return push(value(a).array().square().matrix(), [a, o](Graph& g) {
    g.grad_ref(a).array() += 2.0 * g.grad(o).array() * g.value(a).array();
  });
}

Var Graph::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Eigen::Index rows = value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += value(p).cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, value(p).cols()) = value(p);
    at += value(p).cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  Var o{static_cast<int>(nodes_.size())};
  return push(std::move(out), [inputs, o](Graph& g) {
    Eigen::Index at = 0;
    for (Var p : inputs) {
      Eigen::Index c = g.value(p).cols();
      g.grad_ref(p) += g.grad(o).middleCols(at, c);
      at += c;
    }
  });
}

Var Graph::slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  const Matrix& av = value(a);
  if (start < 0 || count < 0 || start + count > av.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " + dims(av));
  }
  Var o{static_cast<int>(nodes_.size())};
  return push(av.middleCols(start, count), [a, o, start, count](Graph& g) {
    g.grad_ref(a).middleCols(start, count) += g.grad(o);
  });
}

Var Graph::rows(Var a, std::vector<int> ids) {
  const Matrix& av = value(a);
  Matrix out(static_cast<Eigen::Index>(ids.size()), av.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= av.rows()) {
      throw ShapeError("rows: index " + std::to_string(ids[i]) + " out of " + std::to_string(av.rows()));
    }
    out.row(static_cast<Eigen::Index>(i)) = av.row(ids[i]);
  }
  Var o{static_cast<int>(nodes_.size())};
  return push(std::move(out), [a, o, ids = std::move(ids)](Graph& g) {
    Matrix& ga = g.grad_ref(a);
    const Matrix& go = g.grad(o);
    for (std::size_t i = 0; i < ids.size(); ++i) ga.row(ids[i]) += go.row(static_cast<Eigen::Index>(i));
  });
}

Var Graph::sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = value(a).sum();
  Var o{static_cast<int>(nodes_.size())};
  return push(std::move(out), [a, o](Graph& g) { g.grad_ref(a).array() += g.grad(o)(0, 0); });
}

Var Graph::softmax_rows(Var a, const Matrix& mask) {
  const Matrix& av = value(a);
  require_same_shape(av, mask, "softmax_rows mask");
  Matrix out = Matrix::Zero(av.rows(), av.cols());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < av.cols(); ++j) {
      if (mask(i, j) != 0.0) mx = std::max(mx, av(i, j));
    }
    if (!std::isfinite(mx)) continue;  // fully masked row stays zero
    double z = 0.0;
    for (Eigen::Index j = 0; j < av.cols(); ++j) {
      if (mask(i, j) != 0.0) {
        out(i, j) = std::exp(av(i, j) - mx);
        z += out(i, j);
      }
    }
    out.row(i) /= z;
  }
  Var o{static_cast<int>(nodes_.size())};
  return push(std::move(out), [a, o](Graph& g) {
    const Matrix& y = g.value(o);
    const Matrix& go = g.grad(o);
    // dx = y * (dy - sum(dy * y)); masked entries have y == 0.
    Eigen::VectorXd dot = go.cwiseProduct(y).rowwise().sum();
    g.grad_ref(a).array() += y.array() * (go.colwise() - dot).array();
  });
}

Var Graph::softmax_rows(Var a) { return softmax_rows(a, Matrix::Ones(value(a).rows(), value(a).cols())); }

Var Graph::log_softmax_rows(Var a) {
  const Matrix& av = value(a);
  Eigen::VectorXd mx = av.rowwise().maxCoeff();
  Matrix shifted = av.colwise() - mx;
  Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log().matrix();
  Matrix out = shifted.colwise() - lse;
  Var o{static_cast<int>(nodes_.size())};
  return push(std::move(out), [a, o](Graph& g) {
    const Matrix& go = g.grad(o);
    Matrix p = g.value(o).array().exp().matrix();
    Eigen::VectorXd total = go.rowwise().sum();
    g.grad_ref(a) += go - (p.array().colwise() * total.array()).matrix();
  });
}

Var Graph::cross_entropy(Var logits, std::vector<int> targets, std::vector<double> weights) {
  const Matrix& lv = value(logits);
  if (static_cast<Eigen::Index>(targets.size()) != lv.rows() || weights.size() != targets.size()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + dims(lv));
  }
  Eigen::VectorXd mx = lv.rowwise().maxCoeff();
  Matrix shifted = lv.colwise() - mx;
  Matrix probs = shifted.array().exp().matrix();
  Eigen::VectorXd z = probs.rowwise().sum();
  probs.array().colwise() /= z.array();
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    auto r = static_cast<Eigen::Index>(i);
    if (weights[i] == 0.0) continue;
    if (targets[i] < 0 || targets[i] >= lv.cols()) throw ShapeError("cross_entropy: target out of range");
    loss += weights[i] * (std::log(z(r)) - shifted(r, targets[i]));
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  Var o{static_cast<int>(nodes_.size())};
  return push(std::move(out), [logits, o, probs = std::move(probs), targets = std::move(targets),
                               weights = std::move(weights)](Graph& g) {
    double go = g.grad(o)(0, 0);
    Matrix& gl = g.grad_ref(logits);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (weights[i] == 0.0) continue;
      auto r = static_cast<Eigen::Index>(i);
      gl.row(r) += go * weights[i] * probs.row(r);
      gl(r, targets[i]) -= go * weights[i];
    }
  });
}

void Graph::backward(Var root) {
  if (!record_) throw ShapeError("backward on a graph that does not record");
  const Matrix& rv = value(root);
  if (rv.rows() != 1 || rv.cols() != 1) throw ShapeError("backward: root is " + dims(rv) + ", want 1x1");
  grad_ref(root)(0, 0) += 1.0;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this);
    if (n.param) n.param->grad += n.grad;
  }
}

// ---- LSTM -----------------------------------------------------------------

LstmLayer add_lstm_layer(ParameterStore& store, const std::string& prefix, Eigen::Index input,
                         Eigen::Index hidden) {
  LstmLayer layer;
  layer.weight = &store.add(prefix + ".weight", input + hidden, 4 * hidden);
  layer.bias = &store.add(prefix + ".bias", 1, 4 * hidden);
  layer.input = input;
  layer.hidden = hidden;
  return layer;
}

LstmOut lstm_step(Graph& g, Var x, Var h_prev, Var c_prev, Var weight, Var bias, const LstmLayer& layer) {
  const Eigen::Index H = layer.hidden;
  if (g.value(x).cols() != layer.input) {
    throw ShapeError("lstm_step: input width " + std::to_string(g.value(x).cols()) + ", layer expects " +
                     std::to_string(layer.input));
  }
  if (g.value(h_prev).cols() != H || g.value(c_prev).cols() != H) throw ShapeError("lstm_step: state width");
  if (g.value(h_prev).rows() != g.value(x).rows() || g.value(c_prev).rows() != g.value(x).rows()) {
    throw ShapeError("lstm_step: batch sizes differ");
  }
  Var xh[] = {x, h_prev};
  Var pre = g.add_row(g.matmul(g.concat_cols(xh), weight), bias);
  Var i = g.sigmoid(g.slice_cols(pre, 0, H));
  Var f = g.sigmoid(g.slice_cols(pre, H, H));
  Var o = g.sigmoid(g.slice_cols(pre, 2 * H, H));
  Var u = g.tanh(g.slice_cols(pre, 3 * H, H));
  Var c = g.add(g.mul(f, c_prev), g.mul(i, u));
  Var h = g.mul(o, g.tanh(c));
  return {h, c};
}

// ---- initialization and optimization --------------------------------------

void initialize(ParameterStore& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.08, 0.08);
  for (Parameter* p : store.all()) {
    if (ends_with(p->name, ".bias") || ends_with(p->name, ".b")) {
      p->value.setZero();
      if (ends_with(p->name, ".bias") && p->value.rows() == 1 && p->value.cols() % 4 == 0) {
        Eigen::Index H = p->value.cols() / 4;
        p->value.middleCols(H, H).setOnes();
      }
    } else {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = u(rng);
    }
    p->grad.setZero(p->value.rows(), p->value.cols());
  }
}

void adam_step(ParameterStore& store, AdamState& state) {
  for (const Parameter* p : store.all()) {
    if (!p->grad.allFinite()) throw TrainingError("non-finite gradient in '" + p->name + "'");
  }
  ++state.step;
  double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (Parameter* p : store.all()) {
    auto& m = state.m[p->name];
    auto& v = state.v[p->name];
    if (m.size() == 0) {
      m = Matrix::Zero(p->value.rows(), p->value.cols());
      v = Matrix::Zero(p->value.rows(), p->value.cols());
    }
    m = state.beta1 * m + (1.0 - state.beta1) * p->grad;
    v = state.beta2 * v + (1.0 - state.beta2) * p->grad.cwiseProduct(p->grad);
    p->value.array() -= state.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
  }
}

double relative_error(double analytic, double numeric) {
  double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult gradcheck(ParameterStore& store, const std::function<Var(Graph&)>& loss, double h,
                          std::size_t max_per_parameter) {
  store.zero_grad();
  {
    Graph g;
    Var l = loss(g);
    g.backward(l);
  }
  GradCheckResult result;
  auto eval = [&]() {
    Graph g(false);
    return g.value(loss(g))(0, 0);
  };
  for (Parameter* p : store.all()) {
    std::size_t n = p->size();
    std::size_t stride = 1;
    if (max_per_parameter > 0 && n > max_per_parameter) stride = (n + max_per_parameter - 1) / max_per_parameter;
    for (std::size_t k = 0; k < n; k += stride) {
      double& x = p->value.data()[k];
      double saved = x;
      x = saved + h;
      double up = eval();
      x = saved - h;
      double down = eval();
      x = saved;
      double numeric = (up - down) / (2.0 * h);
      double analytic = p->grad.data()[k];
      double abs_err = std::abs(analytic - numeric);
      // Entries whose gradient is tiny in both estimates are dominated by
      // finite-difference noise; judge them on absolute error instead.
      double rel = (std::abs(analytic) + std::abs(numeric) < 1e-6) ? abs_err : relative_error(analytic, numeric);
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_parameter = p->name;
      }
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace navgen::nn
