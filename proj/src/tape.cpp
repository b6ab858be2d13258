#include "deepred/tape.hpp"

#include <cmath>
#include <limits>

namespace deepred {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

size_t count_valid(const std::vector<uint8_t>& m) {
  size_t n = 0;
  for (uint8_t v : m) n += (v != 0);
  return n;
}

}  // namespace

void Tape::check_finite(const Tensor& t, const char* op) {
  for (double v : t.data) {
    if (!std::isfinite(v)) {
      throw NonFiniteError(std::string(op) + " produced a non-finite value");
    }
  }
}

int Tape::check_id(NodeId id) const {
  if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) {
    throw std::logic_error("invalid node id (backward/value before forward?)");
  }
  return id;
}

NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::reset() {
  nodes_.clear();
  param_nodes_.clear();
}

NodeId Tape::param(Parameter* p) {
  auto it = param_nodes_.find(p);
  if (it != param_nodes_.end()) return it->second;
  check_finite(p->value, "param");
  Node n;
  n.op = Op::kParam;
  n.value = p->value;
  n.bound = p;
  NodeId id = push(std::move(n));
  param_nodes_.emplace(p, id);
  return id;
}

NodeId Tape::constant(Tensor t) {
  check_finite(t, "constant");
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(t);
  return push(std::move(n));
}

NodeId Tape::zeros(int rows, int cols) {
  Node n;
  n.op = Op::kConstant;
  n.value = Tensor(rows, cols);
  return push(std::move(n));
}

NodeId Tape::gather_columns(NodeId table, std::vector<int> rows) {
  const Tensor& t = in(check_id(table));
  require(!rows.empty(), "gather_columns: empty row list");
  for (int r : rows) {
    require(r >= 0 && r < t.rows, "gather_columns: row " + std::to_string(r) +
                                      " out of range [0," + std::to_string(t.rows) + ")");
  }
  Node n;
  n.op = Op::kGather;
  n.a = table;
  n.index = std::move(rows);
  n.value = Tensor(t.cols, static_cast<int>(n.index.size()));
  for (int j = 0; j < n.value.cols; ++j) {
    int row = n.index[j];
    for (int i = 0; i < t.cols; ++i) n.value.at(i, j) = t.at(row, i);
  }
  return push(std::move(n));
}

NodeId Tape::column(NodeId a, int j) {
  const Tensor& t = in(check_id(a));
  require(j >= 0 && j < t.cols, "column: index " + std::to_string(j) +
                                    " out of range for " + t.shape_str());
  Node n;
  n.op = Op::kColumn;
  n.a = a;
  n.index = {j};
  n.value = Tensor(t.rows, 1);
  for (int i = 0; i < t.rows; ++i) n.value.at(i, 0) = t.at(i, j);
  return push(std::move(n));
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const Tensor& ta = in(check_id(a));
  const Tensor& tb = in(check_id(b));
  require(ta.cols == tb.rows, "matmul shape mismatch: " + ta.shape_str() + " vs " +
                                  tb.shape_str());
  Node n;
  n.op = Op::kMatmul;
  n.a = a;
  n.b = b;
  n.value = Tensor(ta.rows, tb.cols);
  for (int i = 0; i < ta.rows; ++i) {
    for (int j = 0; j < tb.cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < ta.cols; ++k) acc += ta.at(i, k) * tb.at(k, j);
      n.value.at(i, j) = acc;
    }
  }
  check_finite(n.value, "matmul");
  return push(std::move(n));
}

NodeId Tape::transpose(NodeId a) {
  const Tensor& t = in(check_id(a));
  Node n;
  n.op = Op::kTranspose;
  n.a = a;
  n.value = Tensor(t.cols, t.rows);
  for (int i = 0; i < t.rows; ++i)
    for (int j = 0; j < t.cols; ++j) n.value.at(j, i) = t.at(i, j);
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& ta = in(check_id(a));
  const Tensor& tb = in(check_id(b));
  require(ta.same_shape(tb),
          "add shape mismatch: " + ta.shape_str() + " vs " + tb.shape_str());
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.value = ta;
  for (size_t i = 0; i < n.value.size(); ++i) n.value.data[i] += tb.data[i];
  check_finite(n.value, "add");
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const Tensor& ta = in(check_id(a));
  const Tensor& tb = in(check_id(b));
  require(ta.same_shape(tb),
          "sub shape mismatch: " + ta.shape_str() + " vs " + tb.shape_str());
  Node n;
  n.op = Op::kSub;
  n.a = a;
  n.b = b;
  n.value = ta;
  for (size_t i = 0; i < n.value.size(); ++i) n.value.data[i] -= tb.data[i];
  check_finite(n.value, "sub");
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Tensor& ta = in(check_id(a));
  const Tensor& tb = in(check_id(b));
  require(ta.same_shape(tb),
          "mul shape mismatch: " + ta.shape_str() + " vs " + tb.shape_str());
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  n.value = ta;
  for (size_t i = 0; i < n.value.size(); ++i) n.value.data[i] *= tb.data[i];
  check_finite(n.value, "mul");
  return push(std::move(n));
}

NodeId Tape::affine(NodeId a, double scale, double shift) {
  const Tensor& ta = in(check_id(a));
  Node n;
  n.op = Op::kAffine;
  n.a = a;
  n.s0 = scale;
  n.s1 = shift;
  n.value = ta;
  for (double& v : n.value.data) v = scale * v + shift;
  check_finite(n.value, "affine");
  return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId a) {
  const Tensor& ta = in(check_id(a));
  Node n;
  n.op = Op::kSigmoid;
  n.a = a;
  n.value = ta;
  for (double& v : n.value.data) v = 1.0 / (1.0 + std::exp(-v));
  check_finite(n.value, "sigmoid");
  return push(std::move(n));
}

NodeId Tape::tanh(NodeId a) {
  const Tensor& ta = in(check_id(a));
  Node n;
  n.op = Op::kTanh;
  n.a = a;
  n.value = ta;
  for (double& v : n.value.data) v = std::tanh(v);
  check_finite(n.value, "tanh");
  return push(std::move(n));
}

NodeId Tape::concat_columns(std::span<const NodeId> parts) {
  require(!parts.empty(), "concat_columns: no inputs");
  int rows = in(check_id(parts[0])).rows;
  int cols = 0;
  for (NodeId p : parts) {
    const Tensor& t = in(check_id(p));
    require(t.rows == rows, "concat_columns row mismatch: " + t.shape_str() +
                                " vs " + std::to_string(rows) + " rows");
    cols += t.cols;
  }
  Node n;
  n.op = Op::kConcatColumns;
  n.inputs.assign(parts.begin(), parts.end());
  n.value = Tensor(rows, cols);
  int off = 0;
  for (NodeId p : parts) {
    const Tensor& t = in(p);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < t.cols; ++j) n.value.at(i, off + j) = t.at(i, j);
    off += t.cols;
  }
  return push(std::move(n));
}

NodeId Tape::masked_softmax(NodeId v, std::vector<uint8_t> mask) {
  const Tensor& t = in(check_id(v));
  require(t.cols == 1, "masked_softmax expects a column vector, got " + t.shape_str());
  require(static_cast<int>(mask.size()) == t.rows,
          "masked_softmax mask size " + std::to_string(mask.size()) +
              " does not match vector " + t.shape_str());
  require(count_valid(mask) > 0, "masked_softmax over fully masked input");
  Node n;
  n.op = Op::kMaskedSoftmax;
  n.a = v;
  n.mask_a = std::move(mask);
  n.value = Tensor(t.rows, 1);
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < t.rows; ++i)
    if (n.mask_a[i] && t.at(i, 0) > mx) mx = t.at(i, 0);
  double sum = 0.0;
  for (int i = 0; i < t.rows; ++i) {
    if (n.mask_a[i]) sum += std::exp(t.at(i, 0) - mx);
  }
  for (int i = 0; i < t.rows; ++i) {
    n.value.at(i, 0) = n.mask_a[i] ? std::exp(t.at(i, 0) - mx) / sum : 0.0;
  }
  check_finite(n.value, "masked_softmax");
  return push(std::move(n));
}

PoolOut Tape::masked_max_rows(NodeId a, std::vector<uint8_t> row_mask,
                              std::vector<uint8_t> col_mask) {
  const Tensor& t = in(check_id(a));
  require(static_cast<int>(row_mask.size()) == t.rows &&
              static_cast<int>(col_mask.size()) == t.cols,
          "masked_max_rows mask sizes do not match " + t.shape_str());
  require(count_valid(row_mask) > 0 && count_valid(col_mask) > 0,
          "masked max over fully masked input");
  Node n;
  n.op = Op::kMaskedMaxRows;
  n.a = a;
  n.mask_a = std::move(row_mask);
  n.mask_b = std::move(col_mask);
  n.value = Tensor(t.rows, 1);
  n.index.assign(t.rows, -1);
  for (int i = 0; i < t.rows; ++i) {
    if (!n.mask_a[i]) continue;
    double best = 0.0;
    int arg = -1;
    for (int j = 0; j < t.cols; ++j) {
      if (!n.mask_b[j]) continue;
      if (arg < 0 || t.at(i, j) > best) {
        best = t.at(i, j);
        arg = j;
      }
    }
    n.value.at(i, 0) = best;
    n.index[i] = arg;
  }
  PoolOut out;
  out.argmax = n.index;
  out.values = push(std::move(n));
  return out;
}

PoolOut Tape::masked_max_cols(NodeId a, std::vector<uint8_t> row_mask,
                              std::vector<uint8_t> col_mask) {
  const Tensor& t = in(check_id(a));
  require(static_cast<int>(row_mask.size()) == t.rows &&
              static_cast<int>(col_mask.size()) == t.cols,
          "masked_max_cols mask sizes do not match " + t.shape_str());
  require(count_valid(row_mask) > 0 && count_valid(col_mask) > 0,
          "masked max over fully masked input");
  Node n;
  n.op = Op::kMaskedMaxCols;
  n.a = a;
  n.mask_a = std::move(row_mask);
  n.mask_b = std::move(col_mask);
  n.value = Tensor(t.cols, 1);
  n.index.assign(t.cols, -1);
  for (int j = 0; j < t.cols; ++j) {
    if (!n.mask_b[j]) continue;
    double best = 0.0;
    int arg = -1;
    for (int i = 0; i < t.rows; ++i) {
      if (!n.mask_a[i]) continue;
      if (arg < 0 || t.at(i, j) > best) {
        best = t.at(i, j);
        arg = i;
      }
    }
    n.value.at(j, 0) = best;
    n.index[j] = arg;
  }
  PoolOut out;
  out.argmax = n.index;
  out.values = push(std::move(n));
  return out;
}

NodeId Tape::masked_mean_rows(NodeId a, std::vector<uint8_t> row_mask,
                              std::vector<uint8_t> col_mask) {
  const Tensor& t = in(check_id(a));
  require(static_cast<int>(row_mask.size()) == t.rows &&
              static_cast<int>(col_mask.size()) == t.cols,
          "masked_mean_rows mask sizes do not match " + t.shape_str());
  require(count_valid(row_mask) > 0 && count_valid(col_mask) > 0,
          "masked mean over fully masked input");
  Node n;
  n.op = Op::kMaskedMeanRows;
  n.a = a;
  n.mask_a = std::move(row_mask);
  n.mask_b = std::move(col_mask);
  n.value = Tensor(t.rows, 1);
  double cnt = static_cast<double>(count_valid(n.mask_b));
  for (int i = 0; i < t.rows; ++i) {
    if (!n.mask_a[i]) continue;
    double acc = 0.0;
    for (int j = 0; j < t.cols; ++j)
      if (n.mask_b[j]) acc += t.at(i, j);
    n.value.at(i, 0) = acc / cnt;
  }
  return push(std::move(n));
}

NodeId Tape::masked_mean_cols(NodeId a, std::vector<uint8_t> row_mask,
                              std::vector<uint8_t> col_mask) {
  const Tensor& t = in(check_id(a));
  require(static_cast<int>(row_mask.size()) == t.rows &&
              static_cast<int>(col_mask.size()) == t.cols,
          "masked_mean_cols mask sizes do not match " + t.shape_str());
  require(count_valid(row_mask) > 0 && count_valid(col_mask) > 0,
          "masked mean over fully masked input");
  Node n;
  n.op = Op::kMaskedMeanCols;
  n.a = a;
  n.mask_a = std::move(row_mask);
  n.mask_b = std::move(col_mask);
  n.value = Tensor(t.cols, 1);
  double cnt = static_cast<double>(count_valid(n.mask_a));
  for (int j = 0; j < t.cols; ++j) {
    if (!n.mask_b[j]) continue;
    double acc = 0.0;
    for (int i = 0; i < t.rows; ++i)
      if (n.mask_a[i]) acc += t.at(i, j);
    n.value.at(j, 0) = acc / cnt;
  }
  return push(std::move(n));
}

NodeId Tape::dot(NodeId a, NodeId b) {
  const Tensor& ta = in(check_id(a));
  const Tensor& tb = in(check_id(b));
  require(ta.same_shape(tb),
          "dot shape mismatch: " + ta.shape_str() + " vs " + tb.shape_str());
  Node n;
  n.op = Op::kDot;
  n.a = a;
  n.b = b;
  n.value = Tensor(1, 1);
  double acc = 0.0;
  for (size_t i = 0; i < ta.size(); ++i) acc += ta.data[i] * tb.data[i];
  n.value.at(0, 0) = acc;
  check_finite(n.value, "dot");
  return push(std::move(n));
}

void Tape::backward(NodeId loss) {
  check_id(loss);
  const Tensor& lv = nodes_[loss].value;
  require(lv.rows == 1 && lv.cols == 1,
          "backward expects a scalar loss, got " + lv.shape_str());
  for (Node& n : nodes_) {
    n.grad = Tensor(n.value.rows, n.value.cols);
  }
  nodes_[loss].grad.at(0, 0) = 1.0;

  for (NodeId id = loss; id >= 0; --id) {
    Node& n = nodes_[id];
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::kConstant:
        break;
      case Op::kParam:
        for (size_t i = 0; i < g.size(); ++i) n.bound->grad.data[i] += g.data[i];
        break;
      case Op::kGather: {
        Tensor& da = nodes_[n.a].grad;
        for (int j = 0; j < g.cols; ++j) {
          int row = n.index[j];
          for (int i = 0; i < g.rows; ++i) da.at(row, i) += g.at(i, j);
        }
        break;
      }
      case Op::kColumn: {
        Tensor& da = nodes_[n.a].grad;
        int j = n.index[0];
        for (int i = 0; i < g.rows; ++i) da.at(i, j) += g.at(i, 0);
        break;
      }
      case Op::kMatmul: {
        const Tensor& va = nodes_[n.a].value;
        const Tensor& vb = nodes_[n.b].value;
        Tensor& da = nodes_[n.a].grad;
        Tensor& db = nodes_[n.b].grad;
        // dA += g * B^T ; dB += A^T * g
        for (int i = 0; i < va.rows; ++i)
          for (int k = 0; k < va.cols; ++k) {
            double acc = 0.0;
            for (int j = 0; j < vb.cols; ++j) acc += g.at(i, j) * vb.at(k, j);
            da.at(i, k) += acc;
          }
        for (int k = 0; k < vb.rows; ++k)
          for (int j = 0; j < vb.cols; ++j) {
            double acc = 0.0;
            for (int i = 0; i < va.rows; ++i) acc += va.at(i, k) * g.at(i, j);
            db.at(k, j) += acc;
          }
        break;
      }
      case Op::kTranspose: {
        Tensor& da = nodes_[n.a].grad;
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) da.at(j, i) += g.at(i, j);
        break;
      }
      case Op::kAdd: {
        Tensor& da = nodes_[n.a].grad;
        Tensor& db = nodes_[n.b].grad;
        for (size_t i = 0; i < g.size(); ++i) {
          da.data[i] += g.data[i];
          db.data[i] += g.data[i];
        }
        break;
      }
      case Op::kSub: {
        Tensor& da = nodes_[n.a].grad;
        Tensor& db = nodes_[n.b].grad;
        for (size_t i = 0; i < g.size(); ++i) {
          da.data[i] += g.data[i];
          db.data[i] -= g.data[i];
        }
        break;
      }
      case Op::kMul: {
        const Tensor& va = nodes_[n.a].value;
        const Tensor& vb = nodes_[n.b].value;
        Tensor& da = nodes_[n.a].grad;
        Tensor& db = nodes_[n.b].grad;
        for (size_t i = 0; i < g.size(); ++i) {
          da.data[i] += g.data[i] * vb.data[i];
          db.data[i] += g.data[i] * va.data[i];
        }
        break;
      }
      case Op::kAffine: {
        Tensor& da = nodes_[n.a].grad;
        for (size_t i = 0; i < g.size(); ++i) da.data[i] += n.s0 * g.data[i];
        break;
      }
      case Op::kSigmoid: {
        Tensor& da = nodes_[n.a].grad;
        for (size_t i = 0; i < g.size(); ++i) {
          double y = n.value.data[i];
          da.data[i] += g.data[i] * y * (1.0 - y);
        }
        break;
      }
      case Op::kTanh: {
        Tensor& da = nodes_[n.a].grad;
        for (size_t i = 0; i < g.size(); ++i) {
          double y = n.value.data[i];
          da.data[i] += g.data[i] * (1.0 - y * y);
        }
        break;
      }
      case Op::kConcatColumns: {
        int off = 0;
        for (NodeId p : n.inputs) {
          Tensor& dp = nodes_[p].grad;
          for (int i = 0; i < dp.rows; ++i)
            for (int j = 0; j < dp.cols; ++j) dp.at(i, j) += g.at(i, off + j);
          off += dp.cols;
        }
        break;
      }
      case Op::kMaskedSoftmax: {
        Tensor& da = nodes_[n.a].grad;
        double inner = 0.0;
        for (int i = 0; i < g.rows; ++i) inner += g.at(i, 0) * n.value.at(i, 0);
        for (int i = 0; i < g.rows; ++i) {
          if (!n.mask_a[i]) continue;
          da.at(i, 0) += n.value.at(i, 0) * (g.at(i, 0) - inner);
        }
        break;
      }
      case Op::kMaskedMaxRows: {
        Tensor& da = nodes_[n.a].grad;
        for (int i = 0; i < g.rows; ++i) {
          if (n.index[i] >= 0) da.at(i, n.index[i]) += g.at(i, 0);
        }
        break;
      }
      case Op::kMaskedMaxCols: {
        Tensor& da = nodes_[n.a].grad;
        for (int j = 0; j < g.rows; ++j) {
          if (n.index[j] >= 0) da.at(n.index[j], j) += g.at(j, 0);
        }
        break;
      }
      case Op::kMaskedMeanRows: {
        Tensor& da = nodes_[n.a].grad;
        double cnt = static_cast<double>(count_valid(n.mask_b));
        for (int i = 0; i < g.rows; ++i) {
          if (!n.mask_a[i]) continue;
          double share = g.at(i, 0) / cnt;
          for (int j = 0; j < da.cols; ++j)
            if (n.mask_b[j]) da.at(i, j) += share;
        }
        break;
      }
      case Op::kMaskedMeanCols: {
        Tensor& da = nodes_[n.a].grad;
        double cnt = static_cast<double>(count_valid(n.mask_a));
        for (int j = 0; j < g.rows; ++j) {
          if (!n.mask_b[j]) continue;
          double share = g.at(j, 0) / cnt;
          for (int i = 0; i < da.rows; ++i)
            if (n.mask_a[i]) da.at(i, j) += share;
        }
        break;
      }
      case Op::kDot: {
        const Tensor& va = nodes_[n.a].value;
        const Tensor& vb = nodes_[n.b].value;
        Tensor& da = nodes_[n.a].grad;
        Tensor& db = nodes_[n.b].grad;
        double gg = g.at(0, 0);
        for (size_t i = 0; i < va.size(); ++i) {
          da.data[i] += gg * vb.data[i];
          db.data[i] += gg * va.data[i];
        }
        break;
      }
    }
  }
}

}  // namespace deepred
