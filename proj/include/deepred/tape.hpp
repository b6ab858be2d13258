#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "deepred/tensor.hpp"

namespace deepred {

// Thrown when an operation produces NaN/Inf; the trainer treats it as
// divergence, everything else as a bug.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using NodeId = int;

// Result of a masked max pooling: pooled values plus the argmax index per
// row/column (first maximal index on exact ties), which is also the gradient
// route.
struct PoolOut {
  NodeId values = -1;
  std::vector<int> argmax;
};

// Eager forward tape with reverse-mode differentiation over the fixed set of
// operations the model graph needs. Values are computed on construction;
// backward() walks the recorded nodes in reverse and accumulates parameter
// gradients into the bound Parameter objects.
//
// A tape instance is confined to one worker. reset() drops the nodes but
// keeps allocated capacity so a tape can be reused across forward passes.
class Tape {
 public:
  // Leaf bound to a Parameter; repeated calls with the same pointer return
  // the same node.
  NodeId param(Parameter* p);

  NodeId constant(Tensor t);
  NodeId zeros(int rows, int cols);

  // Rows of `table` gathered as columns: output is table.cols x n with
  // column j = row rows[j] of the table. Backward scatter-adds.
  NodeId gather_columns(NodeId table, std::vector<int> rows);

  // Single column slice, a.rows x 1.
  NodeId column(NodeId a, int j);

  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);  // elementwise

  // Elementwise scale * a + shift.
  NodeId affine(NodeId a, double scale, double shift);

  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);

  NodeId concat_columns(std::span<const NodeId> parts);

  // Softmax over the valid entries of a column vector; invalid entries get
  // exactly zero weight. Throws if everything is masked.
  NodeId masked_softmax(NodeId v, std::vector<uint8_t> mask);

  // Per-row (per-column) max over valid positions; entry (i, j) is valid when
  // row_mask[i] && col_mask[j]. Masked-out rows/columns produce a zero
  // sentinel. Throws if either mask has no valid position.
  PoolOut masked_max_rows(NodeId a, std::vector<uint8_t> row_mask,
                          std::vector<uint8_t> col_mask);
  PoolOut masked_max_cols(NodeId a, std::vector<uint8_t> row_mask,
                          std::vector<uint8_t> col_mask);
  NodeId masked_mean_rows(NodeId a, std::vector<uint8_t> row_mask,
                          std::vector<uint8_t> col_mask);
  NodeId masked_mean_cols(NodeId a, std::vector<uint8_t> row_mask,
                          std::vector<uint8_t> col_mask);

  // Sum of the elementwise product; shapes must match. Output is 1x1.
  NodeId dot(NodeId a, NodeId b);

  // Reverse pass from a scalar node. Parameter gradients are accumulated
  // (not overwritten) into each bound Parameter's grad.
  void backward(NodeId loss);

  const Tensor& value(NodeId id) const { return nodes_[check_id(id)].value; }
  // Valid after backward(); used by tests.
  const Tensor& grad(NodeId id) const { return nodes_[check_id(id)].grad; }

  size_t size() const { return nodes_.size(); }
  void reset();

 private:
  enum class Op {
    kConstant,
    kParam,
    kGather,
    kColumn,
    kMatmul,
    kTranspose,
    kAdd,
    kSub,
    kMul,
    kAffine,
    kSigmoid,
    kTanh,
    kConcatColumns,
    kMaskedSoftmax,
    kMaskedMaxRows,
    kMaskedMaxCols,
    kMaskedMeanRows,
    kMaskedMeanCols,
    kDot,
  };

  struct Node {
    Op op;
    Tensor value;
    Tensor grad;
    NodeId a = -1;
    NodeId b = -1;
    std::vector<NodeId> inputs;    // concat
    std::vector<int> index;        // gather rows / argmax routes / column j
    std::vector<uint8_t> mask_a;   // softmax mask or row mask
    std::vector<uint8_t> mask_b;   // col mask
    double s0 = 0.0;
    double s1 = 0.0;
    Parameter* bound = nullptr;
  };

  NodeId push(Node n);
  int check_id(NodeId id) const;
  static void check_finite(const Tensor& t, const char* op);
  const Tensor& in(NodeId id) const { return nodes_[id].value; }

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, NodeId> param_nodes_;
};

}  // namespace deepred
