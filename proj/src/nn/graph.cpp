#include "gears/nn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gears/errors.hpp"

namespace gears::nn {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw ShapeMismatch("tensor data length does not match its shape");
}

Tensor Tensor::from_matrix(const RowMatrix& m) {
  Tensor t(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  t.mat() = m;
  return t;
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::constant(Tensor value) { return record(std::move(value), {}, nullptr); }

Var Graph::param(Parameter& p) {
  Var v = record(p.value, {}, nullptr);
  nodes_[v.id].param = &p;
  nodes_[v.id].needs_grad = true;
  return v;
}

Tensor& Graph::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value)) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Graph::record(Tensor value, std::vector<int> inputs, Backward backward) {
  const int id = static_cast<int>(nodes_.size());
  bool needs = false;
  for (int in : inputs) {
    if (in < 0 || in >= id) throw GraphCycle("op input " + std::to_string(in) + " is not an earlier node");
    needs = needs || nodes_[in].needs_grad;
  }
  if (check_finite_ && !value.all_finite()) {
    throw NonFiniteLoss("non-finite value produced at graph node " + std::to_string(id));
  }
  Node n;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.needs_grad = needs;
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, id};
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw Error("loss belongs to a different graph");
  if (value(loss.id).size() != 1) throw ShapeMismatch("backward needs a scalar loss");
  for (auto& n : nodes_) n.grad = Tensor();
  grad_buffer(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    for (int in : n.inputs) {
      if (in >= id) throw GraphCycle("node " + std::to_string(id) + " depends on a later node");
    }
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) n.param->grad.mat() += n.grad.mat();
  }
}

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeMismatch(what);
}

// Adds `g` into the gradient of input `id` if that input needs one.
template <typename Expr>
void accumulate(Graph& g, int id, const Expr& expr) {
  if (!g.needs_grad(id)) return;
  g.grad_buffer(id).mat() += expr;
}

}  // namespace

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Graph& g = *a.graph;
  Tensor out(a.rows(), b.cols());
  out.mat().noalias() = a.value().mat() * b.value().mat();
  const int ia = a.id, ib = b.id;
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph& g, int self) {
    const auto& dy = g.grad(self).mat();
    if (g.needs_grad(ia)) g.grad_buffer(ia).mat().noalias() += dy * g.value(ib).mat().transpose();
    if (g.needs_grad(ib)) g.grad_buffer(ib).mat().noalias() += g.value(ia).mat().transpose() * dy;
  });
}

Var add(Var a, Var b) {
  require(a.value().same_shape(b.value()), "add: shapes differ");
  Tensor out = a.value();
  out.mat() += b.value().mat();
  const int ia = a.id, ib = b.id;
  return a.graph->record(std::move(out), {ia, ib}, [ia, ib](Graph& g, int self) {
    accumulate(g, ia, g.grad(self).mat());
    accumulate(g, ib, g.grad(self).mat());
  });
}

Var sub(Var a, Var b) {
  require(a.value().same_shape(b.value()), "sub: shapes differ");
  Tensor out = a.value();
  out.mat() -= b.value().mat();
  const int ia = a.id, ib = b.id;
  return a.graph->record(std::move(out), {ia, ib}, [ia, ib](Graph& g, int self) {
    accumulate(g, ia, g.grad(self).mat());
    accumulate(g, ib, -g.grad(self).mat());
  });
}

Var add_bias(Var x, Var b) {
  require(b.rows() == 1 && b.cols() == x.cols(), "add_bias: bias must be 1 x cols");
  Tensor out = x.value();
  out.mat().rowwise() += b.value().mat().row(0);
  const int ix = x.id, ib = b.id;
  return x.graph->record(std::move(out), {ix, ib}, [ix, ib](Graph& g, int self) {
    accumulate(g, ix, g.grad(self).mat());
    accumulate(g, ib, g.grad(self).mat().colwise().sum());
  });
}

Var linear(Var x, Var w, Var b) { return add_bias(matmul(x, w), b); }

Var relu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::max(v, 0.0);
  const int ix = x.id;
  return x.graph->record(std::move(out), {ix}, [ix](Graph& g, int self) {
    if (!g.needs_grad(ix)) return;
    const auto& in = g.value(ix);
    const auto& dy = g.grad(self);
    auto& dx = g.grad_buffer(ix);
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] > 0.0) dx[i] += dy[i];
    }
  });
}

Var scale(Var x, double s) {
  Tensor out = x.value();
  out.mat() *= s;
  const int ix = x.id;
  return x.graph->record(std::move(out), {ix}, [ix, s](Graph& g, int self) { accumulate(g, ix, s * g.grad(self).mat()); });
}

Var transpose(Var x) {
  Tensor out(x.cols(), x.rows());
  out.mat() = x.value().mat().transpose();
  const int ix = x.id;
  return x.graph->record(std::move(out), {ix}, [ix](Graph& g, int self) {
    accumulate(g, ix, g.grad(self).mat().transpose());
  });
}

namespace {
void softmax_rows_inplace(RowMatrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}
}  // namespace

Var softmax_rows(Var x) {
  RowMatrix s = x.value().mat();
  softmax_rows_inplace(s);
  const int ix = x.id;
  return x.graph->record(Tensor::from_matrix(s), {ix}, [ix](Graph& g, int self) {
    if (!g.needs_grad(ix)) return;
    const auto& y = g.value(self).mat();
    const auto& dy = g.grad(self).mat();
    const Eigen::VectorXd dots = (dy.array() * y.array()).rowwise().sum();
    g.grad_buffer(ix).mat().array() += y.array() * (dy.colwise() - dots).array();
  });
}

Var concat_cols(Var a, Var b) {
  require(a.rows() == b.rows(), "concat_cols: row counts differ");
  const auto ca = static_cast<Eigen::Index>(a.cols()), cb = static_cast<Eigen::Index>(b.cols());
  Tensor out(a.rows(), a.cols() + b.cols());
  out.mat().leftCols(ca) = a.value().mat();
  out.mat().rightCols(cb) = b.value().mat();
  const int ia = a.id, ib = b.id;
  return a.graph->record(std::move(out), {ia, ib}, [ia, ib, ca, cb](Graph& g, int self) {
    accumulate(g, ia, g.grad(self).mat().leftCols(ca));
    accumulate(g, ib, g.grad(self).mat().rightCols(cb));
  });
}

Var gather_rows(Var x, std::vector<int> rows) {
  Tensor out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && static_cast<std::size_t>(rows[i]) < x.rows(), "gather_rows: index out of range");
    out.mat().row(static_cast<Eigen::Index>(i)) = x.value().mat().row(rows[i]);
  }
  const int ix = x.id;
  return x.graph->record(std::move(out), {ix}, [ix, rows = std::move(rows)](Graph& g, int self) {
    if (!g.needs_grad(ix)) return;
    auto dx = g.grad_buffer(ix).mat();
    const auto& dy = g.grad(self).mat();
    for (std::size_t i = 0; i < rows.size(); ++i) dx.row(rows[i]) += dy.row(static_cast<Eigen::Index>(i));
  });
}

Var segment_max(Var x, std::vector<std::size_t> offsets) {
  require(!offsets.empty() && offsets.front() == 0 && offsets.back() == x.rows(), "segment_max: offsets must span all rows");
  const std::size_t segments = offsets.size() - 1, cols = x.cols();
  Tensor out(segments, cols);
  std::vector<int> argmax(segments * cols, -1);
  const auto& in = x.value();
  for (std::size_t s = 0; s < segments; ++s) {
    require(offsets[s] <= offsets[s + 1], "segment_max: offsets must be non-decreasing");
    if (offsets[s] == offsets[s + 1]) continue;
    for (std::size_t c = 0; c < cols; ++c) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = -1;
      for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
        if (in(r, c) > best) {
          best = in(r, c);
          arg = static_cast<int>(r);
        }
      }
      out(s, c) = best;
      argmax[s * cols + c] = arg;
    }
  }
  const int ix = x.id;
  return x.graph->record(std::move(out), {ix}, [ix, cols, argmax = std::move(argmax)](Graph& g, int self) {
    if (!g.needs_grad(ix)) return;
    auto& dx = g.grad_buffer(ix);
    const auto& dy = g.grad(self);
    for (std::size_t i = 0; i < argmax.size(); ++i) {
      if (argmax[i] >= 0) dx(static_cast<std::size_t>(argmax[i]), i % cols) += dy[i];
    }
  });
}

Var maxpool_set(Var x) {
  require(x.rows() > 0, "maxpool_set: empty set");
  return segment_max(x, {0, x.rows()});
}

Var rotate_rows(Var x, std::vector<Mat3> rotations) {
  require(x.cols() == 3 && rotations.size() == x.rows(), "rotate_rows: expects n x 3 and n rotations");
  Tensor out(x.rows(), 3);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const Vec3 v(x.value()(i, 0), x.value()(i, 1), x.value()(i, 2));
    const Vec3 r = rotations[i] * v;
    for (int c = 0; c < 3; ++c) out(i, c) = r[c];
  }
  const int ix = x.id;
  return x.graph->record(std::move(out), {ix}, [ix, rotations = std::move(rotations)](Graph& g, int self) {
    if (!g.needs_grad(ix)) return;
    auto& dx = g.grad_buffer(ix);
    const auto& dy = g.grad(self);
    for (std::size_t i = 0; i < rotations.size(); ++i) {
      const Vec3 d = rotations[i].transpose() * Vec3(dy(i, 0), dy(i, 1), dy(i, 2));
      for (int c = 0; c < 3; ++c) dx(i, c) += d[c];
    }
  });
}

Var self_attention(Var x, Var wq, Var wk, Var wv) {
  require(wq.cols() == wk.cols() && wq.cols() > 0, "self_attention: query/key widths differ");
  const Var q = matmul(x, wq), k = matmul(x, wk), v = matmul(x, wv);
  const double inv = 1.0 / std::sqrt(static_cast<double>(wq.cols()));
  return matmul(softmax_rows(scale(matmul(q, transpose(k)), inv)), v);
}

Var grouped_attention(Var q, Var k, Var v, std::shared_ptr<const std::vector<std::vector<int>>> groups) {
  require(q.value().same_shape(k.value()) && q.rows() == v.rows() && q.cols() > 0,
          "grouped_attention: Q and K must match and share rows with V");
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const auto& Q = q.value().mat();
  const auto& K = k.value().mat();
  const auto& V = v.value().mat();
  Tensor out(v.rows(), v.cols());
  std::vector<int> seen(q.rows(), 0);
  auto probs = std::make_shared<std::vector<RowMatrix>>();
  probs->reserve(groups->size());
  for (const auto& rows : *groups) {
    const auto m = static_cast<Eigen::Index>(rows.size());
    RowMatrix qg(m, Q.cols()), kg(m, K.cols()), vg(m, V.cols());
    for (Eigen::Index i = 0; i < m; ++i) {
      require(rows[i] >= 0 && static_cast<std::size_t>(rows[i]) < q.rows(), "grouped_attention: row out of range");
      ++seen[rows[i]];
      qg.row(i) = Q.row(rows[i]);
      kg.row(i) = K.row(rows[i]);
      vg.row(i) = V.row(rows[i]);
    }
    RowMatrix s = (qg * kg.transpose()) * inv;
    softmax_rows_inplace(s);
    const RowMatrix og = s * vg;
    for (Eigen::Index i = 0; i < m; ++i) out.mat().row(rows[i]) = og.row(i);
    probs->push_back(std::move(s));
  }
  require(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }),
          "grouped_attention: every row must be in exactly one group");
  const int iq = q.id, ik = k.id, iv = v.id;
  return q.graph->record(std::move(out), {iq, ik, iv}, [=](Graph& g, int self) {
    const auto& Q = g.value(iq).mat();
    const auto& K = g.value(ik).mat();
    const auto& V = g.value(iv).mat();
    const auto& dOut = g.grad(self).mat();
    const bool need_q = g.needs_grad(iq), need_k = g.needs_grad(ik), need_v = g.needs_grad(iv);
    for (std::size_t gi = 0; gi < groups->size(); ++gi) {
      const auto& rows = (*groups)[gi];
      const RowMatrix& s = (*probs)[gi];
      const auto m = static_cast<Eigen::Index>(rows.size());
      RowMatrix qg(m, Q.cols()), kg(m, K.cols()), vg(m, V.cols()), dog(m, V.cols());
      for (Eigen::Index i = 0; i < m; ++i) {
        qg.row(i) = Q.row(rows[i]);
        kg.row(i) = K.row(rows[i]);
        vg.row(i) = V.row(rows[i]);
        dog.row(i) = dOut.row(rows[i]);
      }
      if (need_v) {
        const RowMatrix dv = s.transpose() * dog;
        auto dV = g.grad_buffer(iv).mat();
        for (Eigen::Index i = 0; i < m; ++i) dV.row(rows[i]) += dv.row(i);
      }
      if (need_q || need_k) {
        const RowMatrix ds = dog * vg.transpose();
        const Eigen::VectorXd dots = (ds.array() * s.array()).rowwise().sum();
        const RowMatrix da = (s.array() * (ds.colwise() - dots).array()).matrix() * inv;
        if (need_q) {
          const RowMatrix dq = da * kg;
          auto dQ = g.grad_buffer(iq).mat();
          for (Eigen::Index i = 0; i < m; ++i) dQ.row(rows[i]) += dq.row(i);
        }
        if (need_k) {
          const RowMatrix dk = da.transpose() * qg;
          auto dK = g.grad_buffer(ik).mat();
          for (Eigen::Index i = 0; i < m; ++i) dK.row(rows[i]) += dk.row(i);
        }
      }
    }
  });
}

Var sum_squared_error(Var a, Var b, double divisor) {
  require(a.value().same_shape(b.value()), "sum_squared_error: shapes differ");
  require(divisor > 0.0, "sum_squared_error: divisor must be positive");
  const RowMatrix diff = a.value().mat() - b.value().mat();
  Tensor out(1, 1, diff.squaredNorm() / divisor);
  const int ia = a.id, ib = b.id;
  return a.graph->record(std::move(out), {ia, ib}, [ia, ib, divisor](Graph& g, int self) {
    const double dy = g.grad(self)[0];
    const RowMatrix d = (g.value(ia).mat() - g.value(ib).mat()) * (2.0 * dy / divisor);
    accumulate(g, ia, d);
    accumulate(g, ib, -d);
  });
}

Var mse(Var a, Var b) {
  require(a.value().size() > 0, "mse: empty input");
  return sum_squared_error(a, b, static_cast<double>(a.value().size()));
}

Var sum(Var x) {
  Tensor out(1, 1, x.value().mat().sum());
  const int ix = x.id;
  return x.graph->record(std::move(out), {ix}, [ix](Graph& g, int self) {
    if (!g.needs_grad(ix)) return;
    g.grad_buffer(ix).mat().array() += g.grad(self)[0];
  });
}

RowMatrix attention_weights(const RowMatrix& q, const RowMatrix& k) {
  RowMatrix s = (q * k.transpose()) / std::sqrt(static_cast<double>(q.cols()));
  softmax_rows_inplace(s);
  return s;
}

}  // namespace gears::nn
