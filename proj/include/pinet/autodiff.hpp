#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// A Graph is built once (inputs, parameters, operations) and then evaluated
// any number of times. Batch data is laid out sample-major: a batch of n
// vectors of length k is an [n x k] tensor.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pinet/errors.hpp"

namespace pinet::autodiff {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += " x ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

class Tensor {
 public:
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<RowMajor>;
  using ConstMatMap = Eigen::Map<const RowMajor>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(count(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_))
      throw ShapeError("tensor: buffer of " + std::to_string(data_.size()) + " for shape " + shape_string(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t rows() const { return rank() == 2 ? shape_[0] : size(); }
  std::size_t cols() const { return rank() == 2 ? shape_[1] : 1; }

  // Rank-1 tensors view as a single column.
  MatMap mat() { return MatMap(data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())); }
  ConstMatMap mat() const {
    return ConstMatMap(data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols()));
  }

  // Takes on `s`, reusing the existing buffer; contents are unspecified
  // unless the shape was already `s`.
  void reshape_storage(const Shape& s) {
    if (shape_ == s && data_.size() == count(s)) return;
    shape_ = s;
    data_.resize(count(shape_));
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  static std::size_t count(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

using NodeId = std::size_t;
using Inputs = std::map<std::string, Tensor>;
using Gradients = std::map<std::string, Tensor>;

// Leading input dimension that accepts any batch size.
inline constexpr std::size_t kAnyBatch = 0;

enum class Op { Input, Param, MatMul, MatMulT, Affine, Add, Hadamard, ReLU, Scale, Sum, Mean, MSE };

struct ParamInfo {
  std::string name;
  NodeId node;
  bool multiplicative;
};

class Graph {
 public:
  NodeId input(const std::string& name, Shape shape) {
    if (find_input(name)) throw ConfigError("graph: duplicate input '" + name + "'");
    Node n;
    n.op = Op::Input;
    n.name = name;
    n.shape = std::move(shape);
    return push(std::move(n));
  }

  NodeId param(const std::string& name, Tensor init, bool multiplicative = false) {
    for (const auto& p : params_)
      if (p.name == name) throw ConfigError("graph: duplicate parameter '" + name + "'");
    Node n;
    n.op = Op::Param;
    n.name = name;
    n.shape = init.shape();
    n.value = std::move(init);
    const NodeId id = push(std::move(n));
    params_.push_back({name, id, multiplicative});
    return id;
  }

  // a [p x q] times b [q x r] (or b [q]).
  NodeId matmul(NodeId a, NodeId b) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    if (sa.size() != 2 || sb.empty() || sb.size() > 2 || sa[1] != sb[0])
      throw ShapeError("matmul: " + shape_string(sa) + " * " + shape_string(sb));
    Shape out = sb.size() == 2 ? Shape{sa[0], sb[1]} : Shape{sa[0]};
    return op(Op::MatMul, {a, b}, std::move(out));
  }

  // a [p x q] times transpose of b [r x q].
  NodeId matmul_t(NodeId a, NodeId b) {
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[1])
      throw ShapeError("matmul_t: " + shape_string(sa) + " * " + shape_string(sb) + "^T");
    return op(Op::MatMulT, {a, b}, {sa[0], sb[0]});
  }

  // x [n x k], w [m x k], b [m]  ->  x w^T + 1 b^T  [n x m]
  NodeId affine(NodeId x, NodeId w, NodeId b) {
    const Shape& sx = shape(x);
    const Shape& sw = shape(w);
    const Shape& sbias = shape(b);
    if (sx.size() != 2 || sw.size() != 2 || sx[1] != sw[1] || sbias.size() != 1 || sbias[0] != sw[0])
      throw ShapeError("affine: x " + shape_string(sx) + ", W " + shape_string(sw) + ", b " + shape_string(sbias));
    return op(Op::Affine, {x, w, b}, {sx[0], sw[0]});
  }

  NodeId add(NodeId a, NodeId b) { return same_shape_op(Op::Add, a, b, "add"); }
  NodeId hadamard(NodeId a, NodeId b) { return same_shape_op(Op::Hadamard, a, b, "hadamard"); }
  NodeId relu(NodeId a) { return op(Op::ReLU, {a}, shape(a)); }

  NodeId scale(NodeId a, double s) {
    const NodeId id = op(Op::Scale, {a}, shape(a));
    nodes_[id].scalar = s;
    return id;
  }

  NodeId sum(NodeId a) { return op(Op::Sum, {a}, {1}); }
  NodeId mean(NodeId a) { return op(Op::Mean, {a}, {1}); }

  // mean over all entries of (pred - target)^2
  NodeId mse(NodeId pred, NodeId target) { return same_shape_op(Op::MSE, pred, target, "mse", Shape{1}); }

  // Evaluates `target` and everything it depends on.
  const Tensor& forward(const Inputs& inputs, NodeId target) {
    check_id(target);
    ++generation_;
    const auto needed = ancestors(target);
    for (NodeId id = 0; id <= target; ++id) {
      if (!needed[id]) continue;
      Node& n = nodes_[id];
      switch (n.op) {
        case Op::Input: bind_input(n, inputs); break;
        case Op::Param: break;
        default: evaluate(n); break;
      }
      n.generation = generation_;
    }
    return nodes_[target].value;
  }

  const Tensor& forward(const Inputs& inputs) {
    if (nodes_.empty()) throw StateError("forward: empty graph");
    return forward(inputs, nodes_.size() - 1);
  }

  // Adjoints of a scalar node with respect to every parameter it depends on.
  // Parameters it does not depend on receive zero gradients.
  Gradients backward(NodeId loss) {
    Gradients out;
    backward_into(loss, 1.0, out);
    return out;
  }

  // Adds weight * d(loss)/d(param) onto `acc`; missing entries start at zero.
  void backward_into(NodeId loss, double weight, Gradients& acc) {
    check_id(loss);
    if (generation_ == 0 || nodes_[loss].generation != generation_)
      throw StateError("backward: node has not been evaluated by the latest forward pass");
    if (nodes_[loss].value.size() != 1) throw ShapeError("backward: loss must be scalar");

    const auto needed = ancestors(loss);
    for (NodeId id = 0; id <= loss; ++id)
      if (needed[id] && nodes_[id].op != Op::Param) {
        nodes_[id].grad.reshape_storage(nodes_[id].value.shape());
        nodes_[id].grad.fill(0.0);
      }
    for (const auto& p : params_) {
      Node& n = nodes_[p.node];
      auto it = acc.find(p.name);
      if (it != acc.end() && it->second.shape() == n.value.shape()) {
        n.grad = std::move(it->second);
      } else {
        n.grad.reshape_storage(n.value.shape());
        n.grad.fill(0.0);
      }
    }
    nodes_[loss].grad[0] += weight;
    for (NodeId id = loss + 1; id-- > 0;)
      if (needed[id]) propagate(nodes_[id]);
    for (const auto& p : params_) acc.insert_or_assign(p.name, std::move(nodes_[p.node].grad));
  }

  const std::vector<ParamInfo>& params() const noexcept { return params_; }

  Tensor& param_value(const std::string& name) { return nodes_[param_node(name)].value; }
  const Tensor& param_value(const std::string& name) const { return nodes_[param_node(name)].value; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += nodes_[p.node].value.size();
    return n;
  }

  std::vector<double> flat_params() const {
    std::vector<double> out;
    out.reserve(param_count());
    for (const auto& p : params_) {
      const auto& d = nodes_[p.node].value.data();
      out.insert(out.end(), d.begin(), d.end());
    }
    return out;
  }

  void set_flat_params(const std::vector<double>& flat) {
    if (flat.size() != param_count()) throw ShapeError("set_flat_params: wrong length");
    std::size_t offset = 0;
    for (const auto& p : params_) {
      auto& d = nodes_[p.node].value.data();
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                flat.begin() + static_cast<std::ptrdiff_t>(offset + d.size()), d.begin());
      offset += d.size();
    }
  }

  const Tensor& value(NodeId id) const {
    check_id(id);
    return nodes_[id].value;
  }

  const Shape& shape(NodeId id) const {
    check_id(id);
    return nodes_[id].shape;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Op op = Op::Input;
    std::vector<NodeId> inputs;
    Shape shape;  // declared; a leading kAnyBatch resolves at forward time
    std::string name;
    double scalar = 1.0;
    Tensor value;
    Tensor grad;
    std::size_t generation = 0;
  };

  std::vector<Node> nodes_;
  std::vector<ParamInfo> params_;
  std::size_t generation_ = 0;

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  NodeId op(Op kind, std::vector<NodeId> in, Shape out) {
    for (NodeId i : in) check_id(i);
    Node n;
    n.op = kind;
    n.inputs = std::move(in);
    n.shape = std::move(out);
    return push(std::move(n));
  }

  NodeId same_shape_op(Op kind, NodeId a, NodeId b, const char* what, std::optional<Shape> out = std::nullopt) {
    if (shape(a) != shape(b))
      throw ShapeError(std::string(what) + ": " + shape_string(shape(a)) + " vs " + shape_string(shape(b)));
    return op(kind, {a, b}, out ? *out : shape(a));
  }

  void check_id(NodeId id) const {
    if (id >= nodes_.size()) throw StateError("graph: unknown node id " + std::to_string(id));
  }

  std::optional<NodeId> find_input(const std::string& name) const {
    for (NodeId i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].op == Op::Input && nodes_[i].name == name) return i;
    return std::nullopt;
  }

  NodeId param_node(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.node;
    throw ConfigError("graph: unknown parameter '" + name + "'");
  }

  std::vector<bool> ancestors(NodeId target) const {
    std::vector<bool> needed(target + 1, false);
    needed[target] = true;
    for (NodeId id = target + 1; id-- > 0;)
      if (needed[id])
        for (NodeId i : nodes_[id].inputs) needed[i] = true;
    return needed;
  }

  void bind_input(Node& n, const Inputs& inputs) {
    const auto it = inputs.find(n.name);
    if (it == inputs.end()) throw ShapeError("forward: missing input '" + n.name + "'");
    const Shape& got = it->second.shape();
    bool ok = got.size() == n.shape.size();
    for (std::size_t i = 0; ok && i < got.size(); ++i)
      ok = (i == 0 && n.shape[0] == kAnyBatch) || got[i] == n.shape[i];
    if (!ok)
      throw ShapeError("forward: input '" + n.name + "' has shape " + shape_string(got) + ", declared " +
                       shape_string(n.shape));
    n.value = it->second;
  }

  const Tensor& in(const Node& n, std::size_t k) const { return nodes_[n.inputs[k]].value; }

  void evaluate(Node& n) {
    switch (n.op) {
      case Op::MatMul: {
        const Tensor& a = in(n, 0);
        const Tensor& b = in(n, 1);
        n.value.reshape_storage(b.rank() == 2 ? Shape{a.rows(), b.cols()} : Shape{a.rows()});
        n.value.mat().noalias() = a.mat() * b.mat();
        break;
      }
      case Op::MatMulT: {
        const Tensor& a = in(n, 0);
        const Tensor& b = in(n, 1);
        n.value.reshape_storage({a.rows(), b.rows()});
        n.value.mat().noalias() = a.mat() * b.mat().transpose();
        break;
      }
      case Op::Affine: {
        const Tensor& x = in(n, 0);
        const Tensor& w = in(n, 1);
        const Tensor& b = in(n, 2);
        n.value.reshape_storage({x.rows(), w.rows()});
        auto out = n.value.mat();
        out.noalias() = x.mat() * w.mat().transpose();
        out.rowwise() += b.mat().col(0).transpose();
        break;
      }
      case Op::Add:
      case Op::Hadamard: {
        const Tensor& a = in(n, 0);
        const Tensor& b = in(n, 1);
        if (a.shape() != b.shape()) throw ShapeError("elementwise: runtime shape mismatch");
        n.value.reshape_storage(a.shape());
        auto& v = n.value.data();
        if (n.op == Op::Add)
          for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
        else
          for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
        break;
      }
      case Op::ReLU: {
        const Tensor& a = in(n, 0);
        n.value.reshape_storage(a.shape());
        auto& v = n.value.data();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] > 0.0 ? a[i] : 0.0;
        break;
      }
      case Op::Scale: {
        const Tensor& a = in(n, 0);
        n.value.reshape_storage(a.shape());
        auto& v = n.value.data();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = n.scalar * a[i];
        break;
      }
      case Op::Sum:
      case Op::Mean: {
        const auto& d = in(n, 0).data();
        double s = std::accumulate(d.begin(), d.end(), 0.0);
        if (n.op == Op::Mean) {
          if (d.empty()) throw ShapeError("mean: empty tensor");
          s /= static_cast<double>(d.size());
        }
        n.value = Tensor::scalar(s);
        break;
      }
      case Op::MSE: {
        const Tensor& p = in(n, 0);
        const Tensor& y = in(n, 1);
        if (p.shape() != y.shape())
          throw ShapeError("mse: " + shape_string(p.shape()) + " vs " + shape_string(y.shape()));
        if (p.size() == 0) throw ShapeError("mse: empty tensor");
        double s = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - y[i]) * (p[i] - y[i]);
        n.value = Tensor::scalar(s / static_cast<double>(p.size()));
        break;
      }
      case Op::Input:
      case Op::Param: break;
    }
  }

  Tensor& grad_of(const Node& n, std::size_t k) { return nodes_[n.inputs[k]].grad; }

  // Input adjoints are never reported, so the matrix products skip them.
  bool is_differentiable(const Node& n, std::size_t k) const { return nodes_[n.inputs[k]].op != Op::Input; }

  void propagate(const Node& n) {
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::MatMul: {
        const Tensor& a = in(n, 0);
        const Tensor& b = in(n, 1);
        if (is_differentiable(n, 0)) grad_of(n, 0).mat().noalias() += g.mat() * b.mat().transpose();
        if (is_differentiable(n, 1)) grad_of(n, 1).mat().noalias() += a.mat().transpose() * g.mat();
        break;
      }
      case Op::MatMulT: {
        const Tensor& a = in(n, 0);
        const Tensor& b = in(n, 1);
        if (is_differentiable(n, 0)) grad_of(n, 0).mat().noalias() += g.mat() * b.mat();
        if (is_differentiable(n, 1)) grad_of(n, 1).mat().noalias() += g.mat().transpose() * a.mat();
        break;
      }
      case Op::Affine: {
        const Tensor& x = in(n, 0);
        const Tensor& w = in(n, 1);
        if (is_differentiable(n, 0)) grad_of(n, 0).mat().noalias() += g.mat() * w.mat();
        if (is_differentiable(n, 1)) grad_of(n, 1).mat().noalias() += g.mat().transpose() * x.mat();
        grad_of(n, 2).mat().col(0) += g.mat().colwise().sum().transpose();
        break;
      }
      case Op::Add: {
        for (std::size_t k = 0; k < 2; ++k) {
          auto& d = grad_of(n, k).data();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        }
        break;
      }
      case Op::Hadamard: {
        const Tensor& a = in(n, 0);
        const Tensor& b = in(n, 1);
        auto& ga = grad_of(n, 0).data();
        auto& gb = grad_of(n, 1).data();
        for (std::size_t i = 0; i < ga.size(); ++i) {
          ga[i] += g[i] * b[i];
          gb[i] += g[i] * a[i];
        }
        break;
      }
      case Op::ReLU: {
        // Subgradient 0 at the kink.
        const Tensor& a = in(n, 0);
        auto& ga = grad_of(n, 0).data();
        for (std::size_t i = 0; i < ga.size(); ++i)
          if (a[i] > 0.0) ga[i] += g[i];
        break;
      }
      case Op::Scale: {
        auto& ga = grad_of(n, 0).data();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n.scalar * g[i];
        break;
      }
      case Op::Sum:
      case Op::Mean: {
        auto& ga = grad_of(n, 0).data();
        const double s = n.op == Op::Mean ? g[0] / static_cast<double>(ga.size()) : g[0];
        for (double& v : ga) v += s;
        break;
      }
      case Op::MSE: {
        const Tensor& p = in(n, 0);
        const Tensor& y = in(n, 1);
        auto& gp = grad_of(n, 0).data();
        auto& gy = grad_of(n, 1).data();
        const double c = 2.0 * g[0] / static_cast<double>(p.size());
        for (std::size_t i = 0; i < gp.size(); ++i) {
          const double r = c * (p[i] - y[i]);
          gp[i] += r;
          gy[i] -= r;
        }
        break;
      }
      case Op::Input:
      case Op::Param: break;
    }
  }
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = false;
};

inline constexpr std::size_t kGradcheckMaxParams = 10000;

// Compares every parameter adjoint with a central difference of step h.
// Relative error is |a - n| / max(|a|, |n|, floor); coordinates whose
// gradient is below `floor` in magnitude are therefore held to an absolute
// error of tolerance * floor, which keeps round-off in the difference
// quotient from dominating near-zero gradients.
inline GradcheckReport gradcheck(Graph& g, const Inputs& inputs, NodeId loss, double tolerance, double h = 1e-5,
                                 double floor = 1e-4) {
  if (g.param_count() > kGradcheckMaxParams)
    throw ConfigError("gradcheck: more than " + std::to_string(kGradcheckMaxParams) + " parameters");
  g.forward(inputs, loss);
  const Gradients analytic = g.backward(loss);

  GradcheckReport rep;
  for (const auto& p : g.params()) {
    Tensor& v = g.param_value(p.name);
    const Tensor& a = analytic.at(p.name);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + h;
      const double up = g.forward(inputs, loss)[0];
      v[i] = saved - h;
      const double down = g.forward(inputs, loss)[0];
      v[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(a[i]), std::abs(numeric), floor});
      const double rel = std::abs(a[i] - numeric) / denom;
      if (rel > rep.max_rel_error || rep.checked == 0) {
        rep.max_rel_error = std::max(rep.max_rel_error, rel);
        if (rel >= rep.max_rel_error) {
          rep.worst_param = p.name;
          rep.worst_index = i;
        }
      }
      ++rep.checked;
    }
  }
  g.forward(inputs, loss);
  rep.passed = rep.max_rel_error < tolerance;
  return rep;
}

}  // namespace pinet::autodiff
