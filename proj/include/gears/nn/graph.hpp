#pragma once

// Reverse-mode automatic differentiation over a recorded tape.
//
// A Graph owns the nodes created during one forward pass. Parameters live
// outside the graph; binding one with Graph::param makes backward() add the
// parameter's gradient into Parameter::grad.

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "gears/nn/tensor.hpp"
#include "gears/rotation.hpp"

namespace gears::nn {

struct Parameter {
  Tensor value;
  Tensor grad;
  Tensor m;  // first moment
  Tensor v;  // second moment

  Parameter() = default;
  explicit Parameter(Tensor init)
      : value(std::move(init)),
        grad(value.rows(), value.cols()),
        m(value.rows(), value.cols()),
        v(value.rows(), value.cols()) {}
};

class Graph;

/// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, int self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var param(Parameter& p);

  const Tensor& value(int id) const { return nodes_[id].value; }
  const Tensor& grad(int id) const { return nodes_[id].grad; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }

  /// Gradient buffer of an input node, allocated on first use.
  Tensor& grad_buffer(int id);

  /// Records an op result. `inputs` must be earlier nodes.
  Var record(Tensor value, std::vector<int> inputs, Backward backward);

  /// Seeds d(loss)/d(loss) = 1 and runs the tape backwards. The loss must be 1 x 1.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  /// When enabled every recorded value is checked for NaN/Inf.
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> inputs;
    Backward backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  bool check_finite_ = false;
};

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// x (n x c) + b (1 x c) broadcast over rows.
Var add_bias(Var x, Var b);
/// x W + b with W: in x out.
Var linear(Var x, Var w, Var b);
Var relu(Var x);
Var scale(Var x, double s);
Var transpose(Var x);
Var softmax_rows(Var x);
Var concat_cols(Var a, Var b);
Var gather_rows(Var x, std::vector<int> rows);
/// Column-wise max over all rows (1 x c).
Var maxpool_set(Var x);
/// Column-wise max over row ranges [offsets[s], offsets[s+1]); empty ranges give zeros.
Var segment_max(Var x, std::vector<std::size_t> offsets);
/// Row i (n x 3) is multiplied by rotations[i].
Var rotate_rows(Var x, std::vector<Mat3> rotations);
/// softmax(Q K^T / sqrt(l)) V with Q = X Wq, K = X Wk, V = X Wv, built from primitive ops.
Var self_attention(Var x, Var wq, Var wk, Var wv);
/// Applies softmax(Qg Kg^T / sqrt(l)) Vg independently within each row group.
/// Every row must belong to exactly one group; outputs land on the same rows.
Var grouped_attention(Var q, Var k, Var v, std::shared_ptr<const std::vector<std::vector<int>>> groups);
/// Mean of squared differences (1 x 1).
Var mse(Var a, Var b);
/// Sum of squared differences divided by `divisor` (1 x 1).
Var sum_squared_error(Var a, Var b, double divisor);
Var sum(Var x);

/// softmax(q k^T / sqrt(l)) row by row, outside any graph.
RowMatrix attention_weights(const RowMatrix& q, const RowMatrix& k);

}  // namespace gears::nn
