#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace navgen::nn {

// Rows index the batch, columns index features.
using Matrix = Eigen::MatrixXd;

// A named, trainable tensor with its gradient slot.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  std::size_t size() const { return static_cast<std::size_t>(value.size()); }
};

// Owns parameters in insertion order. References stay valid for the store's
// lifetime.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& other);
  ParameterStore& operator=(const ParameterStore& other);
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter& add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t scalar_count() const;

  void zero_grad();
  double grad_norm() const;
  // Rescales gradients so their global L2 norm is at most `max_norm`; returns
  // the norm before clipping.
  double clip_grad_norm(double max_norm);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

// Handle to a node on a Graph's tape.
struct Var {
  int id = -1;
};

// Reverse-mode automatic differentiation tape. Nodes are recorded in creation
// order, which is a topological order, so backward() is one reverse sweep.
// With recording disabled the graph evaluates values only.
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}

  Var constant(Matrix value);
  // Leaf bound to a parameter; backward() accumulates into `p.grad`.
  Var param(Parameter& p);

  const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  const Matrix& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  // a (r x c) + row vector b (1 x c) broadcast over rows.
  Var add_row(Var a, Var b);
  Var mul(Var a, Var b);
  // Column vector a (r x 1) scaling each row of b (r x c).
  Var mul_col(Var a, Var b);
  Var scale(Var a, double s);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var square(Var a);
  Var concat_cols(std::span<const Var> parts);
  Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
  // Row-wise gather: out.row(i) = a.row(ids[i]). Used for embeddings.
  Var rows(Var a, std::vector<int> ids);
  Var sum(Var a);
  // Row-wise softmax where mask(i,j)==0 excludes entry j from row i.
  Var softmax_rows(Var a, const Matrix& mask);
  Var softmax_rows(Var a);
  // Row-wise log-softmax.
  Var log_softmax_rows(Var a);
  // Sum over rows of weight[i] * -log softmax(logits.row(i))[target[i]].
  Var cross_entropy(Var logits, std::vector<int> targets, std::vector<double> weights);

  // Seeds d(root)/d(root) = 1; root must be 1x1.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return record_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(Graph&)> backward;
    Parameter* param = nullptr;
  };

  Var push(Matrix value, std::function<void(Graph&)> backward = {});
  Matrix& grad_ref(Var v);

  std::vector<Node> nodes_;
  bool record_;
};

// Affine map T from concatenated (input, previous hidden) to the four gate
// pre-activations, column blocks ordered (input, forget, output, cell).
struct LstmLayer {
  Parameter* weight = nullptr;  // (input + hidden) x 4*hidden
  Parameter* bias = nullptr;    // 1 x 4*hidden
  Eigen::Index input = 0;
  Eigen::Index hidden = 0;
};

LstmLayer add_lstm_layer(ParameterStore& store, const std::string& prefix, Eigen::Index input,
                         Eigen::Index hidden);

struct LstmOut {
  Var h;
  Var c;
};

// gates = (sigmoid, sigmoid, sigmoid, tanh) of T(x; h_prev);
// c = f*c_prev + i*g; h = o*tanh(c). Throws ShapeError on mismatched inputs.
LstmOut lstm_step(Graph& g, Var x, Var h_prev, Var c_prev, Var weight, Var bias, const LstmLayer& layer);

// Uniform(-0.08, 0.08) weights, zero biases, +1 on LSTM forget-gate biases
// (parameters named "*.bias" of width 4*hidden registered via add_lstm_layer).
void initialize(ParameterStore& store, std::uint64_t seed);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::map<std::string, Matrix> m;
  std::map<std::string, Matrix> v;
};

// Bias-corrected Adam update from the gradients currently in `store`.
// Throws TrainingError on a non-finite gradient before touching parameters.
void adam_step(ParameterStore& store, AdamState& state);

// Central finite differences against backward() for every scalar of every
// parameter; `loss` builds the scalar loss on a fresh graph.
struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
};
GradCheckResult gradcheck(ParameterStore& store, const std::function<Var(Graph&)>& loss, double h = 1e-5,
                          std::size_t max_per_parameter = 0);

// Relative error used by the gradient checks.
double relative_error(double analytic, double numeric);

}  // namespace navgen::nn
