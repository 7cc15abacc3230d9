#pragma once

#include "dmve/common.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmve {

/// Structural or contract violation inside a computation graph. The message
/// names the offending node.
class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NodeId {
  int index = -1;
  bool valid() const { return index >= 0; }
};

/// Named parameter arrays shared by graphs and optimizers. Biases are stored
/// as 1 x n matrices, weights as in x out.
class ParamStore {
 public:
  Matrix& create(const std::string& name, Matrix init);
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  std::size_t size() const { return params_.size(); }

  /// Names in sorted order (std::map iteration), so every consumer sees a
  /// deterministic parameter order.
  std::vector<std::string> names() const;
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

  const std::map<std::string, Matrix>& entries() const { return params_; }

 private:
  std::map<std::string, Matrix> params_;
};

/// Reverse-mode automatic differentiation over a tape of dense matrix nodes.
///
/// Nodes are appended in topological order by the builder methods. Values are
/// computed by evaluate() once all inputs are bound; backprop(output) fills
/// adjoints for every node reachable from the scalar output. Rebinding inputs
/// or mutating the ParamStore and calling evaluate() again recomputes values
/// in place (used by the finite-difference checks).
class Graph {
 public:
  explicit Graph(const ParamStore* store = nullptr) : store_(store) {}

  // -- leaves -------------------------------------------------------------
  NodeId input(const std::string& name, int rows, int cols);
  NodeId constant(Matrix value, const std::string& name = "");
  /// References a ParamStore entry; repeated calls with the same name return
  /// the same node so adjoints accumulate across uses.
  NodeId param(const std::string& name);

  // -- elementwise / structural ops ---------------------------------------
  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  /// x (n x d) plus a bias row (1 x d) broadcast over rows.
  NodeId add_bias(NodeId x, NodeId bias);
  /// scale * x + shift, elementwise with scalar coefficients.
  NodeId affine(NodeId x, double scale, double shift);
  NodeId tanh(NodeId x);
  NodeId sigmoid(NodeId x);
  /// softplus(x) + floor; keeps standard deviations strictly positive.
  NodeId softplus_floor(NodeId x, double floor);
  NodeId exp(NodeId x);
  NodeId log(NodeId x);
  NodeId concat_cols(NodeId a, NodeId b);
  NodeId slice_cols(NodeId x, int begin, int count);

  // -- reductions ----------------------------------------------------------
  NodeId sum_all(NodeId x);   // 1 x 1
  NodeId mean_all(NodeId x);  // 1 x 1
  NodeId row_sum(NodeId x);   // n x 1
  /// Row-wise maximum with subgradient routed to the argmax entry only;
  /// ties break toward the smallest column index.
  NodeId row_max(NodeId x);

  // -- execution ------------------------------------------------------------
  void set_input(const std::string& name, Matrix value);
  /// Forward pass over the whole tape. Deterministic and repeatable: the same
  /// bound inputs and parameter values give bitwise identical node values.
  void evaluate();
  /// Convenience form of the evaluate contract: bind named inputs, run the
  /// forward pass, and return the values of all named nodes.
  std::map<std::string, Matrix> evaluate(const std::map<std::string, Matrix>& inputs);

  /// Reverse pass from a scalar (1 x 1) output node. Throws GraphError for a
  /// non-scalar output. Adjoints of previous calls are discarded.
  void backprop(NodeId output);

  const Matrix& value(NodeId id) const;
  const Matrix& adjoint(NodeId id) const;
  /// Gradients of the last backprop output with respect to every parameter
  /// leaf, keyed by parameter name.
  std::map<std::string, Matrix> param_grads() const;

  void set_name(NodeId id, const std::string& name);
  int rows(NodeId id) const;
  int cols(NodeId id) const;
  std::size_t node_count() const { return nodes_.size(); }
  /// Row-wise argmax metadata of a row_max node (valid after evaluate()).
  const std::vector<int>& row_max_argmax(NodeId id) const;

 private:
  enum class Op {
    kInput,
    kConstant,
    kParam,
    kMatmul,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kAddBias,
    kAffine,
    kTanh,
    kSigmoid,
    kSoftplusFloor,
    kExp,
    kLog,
    kConcatCols,
    kSliceCols,
    kSumAll,
    kMeanAll,
    kRowSum,
    kRowMax,
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    int rows = 0;
    int cols = 0;
    double s0 = 0.0;  // op scalars (affine scale, softplus floor)
    double s1 = 0.0;
    int i0 = 0;  // slice begin / count
    int i1 = 0;
    std::string name;
    Matrix value;
    Matrix adjoint;
    bool value_set = false;
    std::vector<int> argmax;  // kRowMax only
  };

  NodeId push(Node node);
  const Node& node(NodeId id) const;
  Node& node(NodeId id);
  void check_same_shape(const char* what, NodeId a, NodeId b) const;
  std::string describe(int index) const;
  void forward(Node& n);
  void backward(const Node& n);
  Matrix& adj(int index);

  const ParamStore* store_ = nullptr;
  std::vector<Node> nodes_;
  std::map<std::string, int> inputs_;
  std::map<std::string, int> params_;
  bool evaluated_ = false;
};

}  // namespace dmve
