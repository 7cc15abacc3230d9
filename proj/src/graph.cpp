#include "dmve/graph.hpp"

#include <cmath>

namespace dmve {

Matrix& ParamStore::create(const std::string& name, Matrix init) {
  auto [it, inserted] = params_.emplace(name, std::move(init));
  if (!inserted) throw GraphError("parameter already exists: " + name);
  return it->second;
}

Matrix& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw GraphError("unknown parameter: " + name);
  return it->second;
}

const Matrix& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw GraphError("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, value] : params_) out.push_back(name);
  return out;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, value] : params_) {
    if (name.rfind(prefix, 0) == 0) out.push_back(name);
  }
  return out;
}

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  evaluated_ = false;
  return NodeId{static_cast<int>(nodes_.size()) - 1};
}

const Graph::Node& Graph::node(NodeId id) const {
  if (!id.valid() || id.index >= static_cast<int>(nodes_.size())) {
    throw GraphError("invalid node id");
  }
  return nodes_[id.index];
}

Graph::Node& Graph::node(NodeId id) {
  return const_cast<Node&>(static_cast<const Graph*>(this)->node(id));
}

std::string Graph::describe(int index) const {
  const Node& n = nodes_[index];
  std::string label = n.name.empty() ? ("node#" + std::to_string(index)) : n.name;
  return label + " (" + std::to_string(n.rows) + "x" + std::to_string(n.cols) + ")";
}

void Graph::check_same_shape(const char* what, NodeId a, NodeId b) const {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.rows != nb.rows || na.cols != nb.cols) {
    throw GraphError(std::string(what) + ": shape mismatch between " + describe(a.index) +
                     " and " + describe(b.index));
  }
}

NodeId Graph::input(const std::string& name, int rows, int cols) {
  if (inputs_.count(name)) throw GraphError("duplicate input: " + name);
  Node n;
  n.op = Op::kInput;
  n.rows = rows;
  n.cols = cols;
  n.name = name;
  NodeId id = push(std::move(n));
  inputs_[name] = id.index;
  return id;
}

NodeId Graph::constant(Matrix value, const std::string& name) {
  Node n;
  n.op = Op::kConstant;
  n.rows = static_cast<int>(value.rows());
  n.cols = static_cast<int>(value.cols());
  n.name = name;
  n.value = std::move(value);
  n.value_set = true;
  return push(std::move(n));
}

NodeId Graph::param(const std::string& name) {
  auto it = params_.find(name);
  if (it != params_.end()) return NodeId{it->second};
  if (store_ == nullptr) throw GraphError("graph has no parameter store, cannot reference " + name);
  const Matrix& value = store_->at(name);
  Node n;
  n.op = Op::kParam;
  n.rows = static_cast<int>(value.rows());
  n.cols = static_cast<int>(value.cols());
  n.name = name;
  NodeId id = push(std::move(n));
  params_[name] = id.index;
  return id;
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.cols != nb.rows) {
    throw GraphError("matmul: inner dimension mismatch between " + describe(a.index) + " and " +
                     describe(b.index));
  }
  Node n;
  n.op = Op::kMatmul;
  n.a = a.index;
  n.b = b.index;
  n.rows = na.rows;
  n.cols = nb.cols;
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  check_same_shape("add", a, b);
  Node n;
  n.op = Op::kAdd;
  n.a = a.index;
  n.b = b.index;
  n.rows = node(a).rows;
  n.cols = node(a).cols;
  return push(std::move(n));
}

NodeId Graph::sub(NodeId a, NodeId b) {
  check_same_shape("sub", a, b);
  Node n;
  n.op = Op::kSub;
  n.a = a.index;
  n.b = b.index;
  n.rows = node(a).rows;
  n.cols = node(a).cols;
  return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  check_same_shape("mul", a, b);
  Node n;
  n.op = Op::kMul;
  n.a = a.index;
  n.b = b.index;
  n.rows = node(a).rows;
  n.cols = node(a).cols;
  return push(std::move(n));
}

NodeId Graph::div(NodeId a, NodeId b) {
  check_same_shape("div", a, b);
  Node n;
  n.op = Op::kDiv;
  n.a = a.index;
  n.b = b.index;
  n.rows = node(a).rows;
  n.cols = node(a).cols;
  return push(std::move(n));
}

NodeId Graph::add_bias(NodeId x, NodeId bias) {
  const Node& nx = node(x);
  const Node& nb = node(bias);
  if (nb.rows != 1 || nb.cols != nx.cols) {
    throw GraphError("add_bias: bias " + describe(bias.index) + " does not match " +
                     describe(x.index));
  }
  Node n;
  n.op = Op::kAddBias;
  n.a = x.index;
  n.b = bias.index;
  n.rows = nx.rows;
  n.cols = nx.cols;
  return push(std::move(n));
}

NodeId Graph::affine(NodeId x, double scale, double shift) {
  Node n;
  n.op = Op::kAffine;
  n.a = x.index;
  n.rows = node(x).rows;
  n.cols = node(x).cols;
  n.s0 = scale;
  n.s1 = shift;
  return push(std::move(n));
}

#define DMVE_UNARY(NAME, OP)                  \
  NodeId Graph::NAME(NodeId x) {              \
    Node n;                                   \
    n.op = OP;                                \
    n.a = x.index;                            \
    n.rows = node(x).rows;                    \
    n.cols = node(x).cols;                    \
    return push(std::move(n));                \
  }

DMVE_UNARY(tanh, Op::kTanh)
DMVE_UNARY(sigmoid, Op::kSigmoid)
DMVE_UNARY(exp, Op::kExp)
DMVE_UNARY(log, Op::kLog)
#undef DMVE_UNARY

NodeId Graph::softplus_floor(NodeId x, double floor) {
  Node n;
  n.op = Op::kSoftplusFloor;
  n.a = x.index;
  n.rows = node(x).rows;
  n.cols = node(x).cols;
  n.s0 = floor;
  return push(std::move(n));
}

NodeId Graph::concat_cols(NodeId a, NodeId b) {
  const Node& na = node(a);
  const Node& nb = node(b);
  if (na.rows != nb.rows) {
    throw GraphError("concat_cols: row mismatch between " + describe(a.index) + " and " +
                     describe(b.index));
  }
  Node n;
  n.op = Op::kConcatCols;
  n.a = a.index;
  n.b = b.index;
  n.rows = na.rows;
  n.cols = na.cols + nb.cols;
  return push(std::move(n));
}

NodeId Graph::slice_cols(NodeId x, int begin, int count) {
  const Node& nx = node(x);
  if (begin < 0 || count <= 0 || begin + count > nx.cols) {
    throw GraphError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of bounds for " + describe(x.index));
  }
  Node n;
  n.op = Op::kSliceCols;
  n.a = x.index;
  n.rows = nx.rows;
  n.cols = count;
  n.i0 = begin;
  n.i1 = count;
  return push(std::move(n));
}

NodeId Graph::sum_all(NodeId x) {
  Node n;
  n.op = Op::kSumAll;
  n.a = x.index;
  n.rows = 1;
  n.cols = 1;
  return push(std::move(n));
}

NodeId Graph::mean_all(NodeId x) {
  Node n;
  n.op = Op::kMeanAll;
  n.a = x.index;
  n.rows = 1;
  n.cols = 1;
  return push(std::move(n));
}

NodeId Graph::row_sum(NodeId x) {
  Node n;
  n.op = Op::kRowSum;
  n.a = x.index;
  n.rows = node(x).rows;
  n.cols = 1;
  return push(std::move(n));
}

NodeId Graph::row_max(NodeId x) {
  Node n;
  n.op = Op::kRowMax;
  n.a = x.index;
  n.rows = node(x).rows;
  n.cols = 1;
  return push(std::move(n));
}

void Graph::set_input(const std::string& name, Matrix value) {
  auto it = inputs_.find(name);
  if (it == inputs_.end()) throw GraphError("unknown input: " + name);
  Node& n = nodes_[it->second];
  if (value.rows() != n.rows || value.cols() != n.cols) {
    throw GraphError("input " + name + ": bound value is " + std::to_string(value.rows()) + "x" +
                     std::to_string(value.cols()) + ", declared " + std::to_string(n.rows) + "x" +
                     std::to_string(n.cols));
  }
  n.value = std::move(value);
  n.value_set = true;
  evaluated_ = false;
}

void Graph::forward(Node& n) {
  const auto& A = [&]() -> const Matrix& { return nodes_[n.a].value; };
  const auto& B = [&]() -> const Matrix& { return nodes_[n.b].value; };
  switch (n.op) {
    case Op::kInput:
      if (!n.value_set) throw GraphError("unbound input: " + n.name);
      break;
    case Op::kConstant:
      break;
    case Op::kParam:
      n.value = store_->at(n.name);
      n.value_set = true;
      break;
    case Op::kMatmul:
      n.value.noalias() = A() * B();
      break;
    case Op::kAdd:
      n.value = A() + B();
      break;
    case Op::kSub:
      n.value = A() - B();
      break;
    case Op::kMul:
      n.value = A().cwiseProduct(B());
      break;
    case Op::kDiv:
      n.value = A().cwiseQuotient(B());
      break;
    case Op::kAddBias:
      n.value = A().rowwise() + B().row(0);
      break;
    case Op::kAffine:
      n.value = (n.s0 * A()).array() + n.s1;
      break;
    case Op::kTanh:
      n.value = A().array().tanh();
      break;
    case Op::kSigmoid:
      n.value = 1.0 / (1.0 + (-A().array()).exp());
      break;
    case Op::kSoftplusFloor: {
      // log1p(exp(x)) computed stably, plus the positive floor
      auto x = A().array();
      n.value = (x > 0.0).select(x + (-x).exp().log1p(), x.exp().log1p()) + n.s0;
      break;
    }
    case Op::kExp:
      n.value = A().array().exp();
      break;
    case Op::kLog:
      n.value = A().array().log();
      break;
    case Op::kConcatCols:
      n.value.resize(n.rows, n.cols);
      n.value.leftCols(nodes_[n.a].cols) = A();
      n.value.rightCols(nodes_[n.b].cols) = B();
      break;
    case Op::kSliceCols:
      n.value = A().middleCols(n.i0, n.i1);
      break;
    case Op::kSumAll:
      n.value.resize(1, 1);
      n.value(0, 0) = A().sum();
      break;
    case Op::kMeanAll:
      n.value.resize(1, 1);
      n.value(0, 0) = A().mean();
      break;
    case Op::kRowSum:
      n.value = A().rowwise().sum();
      break;
    case Op::kRowMax: {
      const Matrix& a = A();
      n.value.resize(a.rows(), 1);
      n.argmax.assign(a.rows(), 0);
      for (Eigen::Index r = 0; r < a.rows(); ++r) {
        int best = 0;
        double best_v = a(r, 0);
        for (Eigen::Index c = 1; c < a.cols(); ++c) {
          if (a(r, c) > best_v) {  // strict: ties keep the smaller column
            best_v = a(r, c);
            best = static_cast<int>(c);
          }
        }
        n.value(r, 0) = best_v;
        n.argmax[static_cast<std::size_t>(r)] = best;
      }
      break;
    }
  }
  if (n.op != Op::kInput) n.value_set = true;
}

void Graph::evaluate() {
  for (auto& n : nodes_) forward(n);
  evaluated_ = true;
}

std::map<std::string, Matrix> Graph::evaluate(const std::map<std::string, Matrix>& inputs) {
  for (const auto& [name, value] : inputs) set_input(name, value);
  evaluate();
  std::map<std::string, Matrix> out;
  for (const auto& n : nodes_) {
    if (!n.name.empty()) out[n.name] = n.value;
  }
  return out;
}

Matrix& Graph::adj(int index) {
  Node& n = nodes_[index];
  if (n.adjoint.rows() != n.rows || n.adjoint.cols() != n.cols) {
    n.adjoint = Matrix::Zero(n.rows, n.cols);
  }
  return n.adjoint;
}

void Graph::backward(const Node& n) {
  if (n.adjoint.size() == 0) return;  // nothing flowed into this node
  const Matrix& g = n.adjoint;
  switch (n.op) {
    case Op::kInput:
    case Op::kConstant:
    case Op::kParam:
      break;
    case Op::kMatmul:
      adj(n.a).noalias() += g * nodes_[n.b].value.transpose();
      adj(n.b).noalias() += nodes_[n.a].value.transpose() * g;
      break;
    case Op::kAdd:
      adj(n.a) += g;
      adj(n.b) += g;
      break;
    case Op::kSub:
      adj(n.a) += g;
      adj(n.b) -= g;
      break;
    case Op::kMul:
      adj(n.a) += g.cwiseProduct(nodes_[n.b].value);
      adj(n.b) += g.cwiseProduct(nodes_[n.a].value);
      break;
    case Op::kDiv: {
      const Matrix& a = nodes_[n.a].value;
      const Matrix& b = nodes_[n.b].value;
      adj(n.a) += g.cwiseQuotient(b);
      adj(n.b) -= (g.cwiseProduct(a)).cwiseQuotient(b.cwiseProduct(b));
      break;
    }
    case Op::kAddBias:
      adj(n.a) += g;
      adj(n.b) += g.colwise().sum();
      break;
    case Op::kAffine:
      adj(n.a) += n.s0 * g;
      break;
    case Op::kTanh:
      adj(n.a).array() += g.array() * (1.0 - n.value.array().square());
      break;
    case Op::kSigmoid:
      adj(n.a).array() += g.array() * n.value.array() * (1.0 - n.value.array());
      break;
    case Op::kSoftplusFloor: {
      auto x = nodes_[n.a].value.array();
      adj(n.a).array() += g.array() / (1.0 + (-x).exp());
      break;
    }
    case Op::kExp:
      adj(n.a).array() += g.array() * n.value.array();
      break;
    case Op::kLog:
      adj(n.a).array() += g.array() / nodes_[n.a].value.array();
      break;
    case Op::kConcatCols:
      adj(n.a) += g.leftCols(nodes_[n.a].cols);
      adj(n.b) += g.rightCols(nodes_[n.b].cols);
      break;
    case Op::kSliceCols:
      adj(n.a).middleCols(n.i0, n.i1) += g;
      break;
    case Op::kSumAll:
      adj(n.a).array() += g(0, 0);
      break;
    case Op::kMeanAll:
      adj(n.a).array() += g(0, 0) / static_cast<double>(nodes_[n.a].value.size());
      break;
    case Op::kRowSum:
      adj(n.a).colwise() += g.col(0);
      break;
    case Op::kRowMax: {
      Matrix& ga = adj(n.a);
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        ga(r, n.argmax[static_cast<std::size_t>(r)]) += g(r, 0);
      }
      break;
    }
  }
}

void Graph::backprop(NodeId output) {
  const Node& out = node(output);
  if (!evaluated_) throw GraphError("backprop before evaluate");
  if (out.rows != 1 || out.cols != 1) {
    throw GraphError("backprop output must be scalar, got " + describe(output.index));
  }
  for (auto& n : nodes_) {
    n.adjoint.resize(0, 0);
    n.adjoint.setZero();
  }
  adj(output.index)(0, 0) = 1.0;
  for (int i = output.index; i >= 0; --i) backward(nodes_[i]);
}

const Matrix& Graph::value(NodeId id) const {
  const Node& n = node(id);
  if (!n.value_set) throw GraphError("value requested before evaluate: " + describe(id.index));
  return n.value;
}

const Matrix& Graph::adjoint(NodeId id) const {
  static const Matrix kEmpty;
  const Node& n = node(id);
  if (n.adjoint.size() == 0) {
    // no gradient flowed here; report zeros of the right shape lazily
    const_cast<Node&>(n).adjoint = Matrix::Zero(n.rows, n.cols);
  }
  return n.adjoint;
}

std::map<std::string, Matrix> Graph::param_grads() const {
  std::map<std::string, Matrix> out;
  for (const auto& [name, index] : params_) {
    const Node& n = nodes_[index];
    out[name] =
        n.adjoint.size() == 0 ? Matrix::Zero(n.rows, n.cols) : n.adjoint;
  }
  return out;
}

void Graph::set_name(NodeId id, const std::string& name) { node(id).name = name; }

int Graph::rows(NodeId id) const { return node(id).rows; }
int Graph::cols(NodeId id) const { return node(id).cols; }

const std::vector<int>& Graph::row_max_argmax(NodeId id) const {
  const Node& n = node(id);
  if (n.op != Op::kRowMax) throw GraphError("row_max_argmax on a non row_max node");
  return n.argmax;
}

}  // namespace dmve
