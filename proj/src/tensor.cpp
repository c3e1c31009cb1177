#include "mg2p/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace mg2p {

std::string ShapeString(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

std::size_t Product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void GemmNN(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
            T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* c_row = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T a_ip = a[i * k + p];
      if (a_ip == T(0)) continue;
      const T* b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += a_ip * b_row[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
template <typename T>
void GemmNT(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
            T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* a_row = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* b_row = b + j * k;
      T sum = 0;
      for (std::size_t p = 0; p < k; ++p) sum += a_row[p] * b_row[p];
      c[i * n + j] += sum;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
template <typename T>
void GemmTN(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
            T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* b_row = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T a_pi = a[p * m + i];
      if (a_pi == T(0)) continue;
      T* c_row = c + i * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += a_pi * b_row[j];
    }
  }
}

template <typename T>
void RequireSameShape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.SameShape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     ShapeString(a.shape()) + " vs " + ShapeString(b.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(Product(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (Product(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + ShapeString(shape_) + " needs " +
                     std::to_string(Product(shape_)) + " elements, got " +
                     std::to_string(data_.size()));
  }
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  if (shape_.empty()) return 1;
  return shape_.size() == 1 ? 1 : shape_[0];
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  if (shape_.empty()) return 1;
  return shape_.size() == 1 ? shape_[0] : data_.size() / shape_[0];
}

template <typename T>
void Tensor<T>::Fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor<T>::AllFinite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](T v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Graph bookkeeping

template <typename T>
Var Graph<T>::Constant(Tensor<T> value) {
  Node node;
  node.own = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::Parameter(const Tensor<T>& value, Tensor<T>* grad_sink) {
  if (grad_sink && !grad_sink->SameShape(value)) {
    throw ShapeError("gradient sink " + ShapeString(grad_sink->shape()) +
                     " does not match parameter " + ShapeString(value.shape()));
  }
  Node node;
  node.external = &value;
  node.sink = grad_sink;
  node.requires_grad = grad_sink != nullptr;
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
void Graph<T>::Check(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("Var not on this graph");
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
  Check(v);
  return nodes_[v.id].value();
}

template <typename T>
Tensor<T> Graph<T>::grad(Var v) const {
  Check(v);
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return Tensor<T>(n.value().shape());
  return n.grad;
}

template <typename T>
Tensor<T>& Graph<T>::GradRef(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(n.value().shape());
  return n.grad;
}

template <typename T>
Var Graph<T>::Record(Tensor<T> value, bool requires_grad,
                     BackwardFn backward, const char* op) {
  if (!value.AllFinite()) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  Node node;
  node.own = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::Record(Tensor<T> value, std::initializer_list<Var> inputs,
                     BackwardFn backward, const char* op) {
  bool requires_grad = false;
  for (Var v : inputs) requires_grad |= nodes_[v.id].requires_grad;
  return Record(std::move(value), requires_grad, std::move(backward), op);
}

template <typename T>
void Graph<T>::Backward(Var loss) {
  Check(loss);
  if (value(loss).size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " +
                     ShapeString(value(loss).shape()));
  }
  GradRef(loss.id)[0] += T(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.backward) n.backward(*this, i);
    if (n.sink) {
      T* sink = n.sink->data();
      const T* g = n.grad.data();
      for (std::size_t j = 0; j < n.grad.size(); ++j) sink[j] += g[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var Graph<T>::MatMul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.cols() != B.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + ShapeString(A.shape()) +
                     " x " + ShapeString(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor<T> out = Tensor<T>::Matrix(m, n);
  GemmNN(m, n, k, A.data(), B.data(), out.data());
  return Record(std::move(out), {a, b}, [=](Graph& g, std::size_t self) {
    const auto& dc = g.nodes_[self].grad;
    if (g.Needs(a)) {
      GemmNT(m, k, n, dc.data(), g.value(b).data(), g.GradRef(a.id).data());
    }
    if (g.Needs(b)) {
      GemmTN(k, n, m, g.value(a).data(), dc.data(), g.GradRef(b.id).data());
    }
  }, "matmul");
}

template <typename T>
Var Graph<T>::MatMulTransposed(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  if (A.cols() != B.cols()) {
    throw ShapeError("matmul: inner dimensions differ " + ShapeString(A.shape()) +
                     " x " + ShapeString(B.shape()) + "^T");
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor<T> out = Tensor<T>::Matrix(m, n);
  GemmNT(m, n, k, A.data(), B.data(), out.data());
  return Record(std::move(out), {a, b}, [=](Graph& g, std::size_t self) {
    const auto& dc = g.nodes_[self].grad;
    if (g.Needs(a)) {
      GemmNN(m, k, n, dc.data(), g.value(b).data(), g.GradRef(a.id).data());
    }
    if (g.Needs(b)) {
      GemmTN(n, k, m, dc.data(), g.value(a).data(), g.GradRef(b.id).data());
    }
  }, "matmul_transposed");
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var Graph<T>::Add(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  RequireSameShape(A, B, "add");
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return Record(std::move(out), {a, b}, [=](Graph& g, std::size_t self) {
    const auto& dy = g.nodes_[self].grad;
    for (Var v : {a, b}) {
      if (!g.Needs(v)) continue;
      auto& dx = g.GradRef(v.id);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
  }, "add");
}

template <typename T>
Var Graph<T>::Mul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  RequireSameShape(A, B, "mul");
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return Record(std::move(out), {a, b}, [=](Graph& g, std::size_t self) {
    const auto& dy = g.nodes_[self].grad;
    if (g.Needs(a)) {
      const auto& other = g.value(b);
      auto& dx = g.GradRef(a.id);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * other[i];
    }
    if (g.Needs(b)) {
      const auto& other = g.value(a);
      auto& dx = g.GradRef(b.id);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * other[i];
    }
  }, "mul");
}

template <typename T>
Var Graph<T>::AddBias(Var x, Var bias) {
  const auto& X = value(x);
  const auto& b = value(bias);
  if (b.size() != X.cols()) {
    throw ShapeError("add_bias: bias " + ShapeString(b.shape()) +
                     " does not match " + ShapeString(X.shape()));
  }
  Tensor<T> out = X;
  const std::size_t rows = X.rows(), cols = X.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += b[c];
  }
  return Record(std::move(out), {x, bias}, [=](Graph& g, std::size_t self) {
    const auto& dy = g.nodes_[self].grad;
    if (g.Needs(x)) {
      auto& dx = g.GradRef(x.id);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
    }
    if (g.Needs(bias)) {
      auto& db = g.GradRef(bias.id);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) db[c] += dy[r * cols + c];
      }
    }
  }, "add_bias");
}

template <typename T>
Var Graph<T>::Tanh(Var x) {
  Tensor<T> out = value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  return Record(std::move(out), {x}, [=](Graph& g, std::size_t self) {
    const auto& dy = g.nodes_[self].grad;
    const auto& y = g.nodes_[self].value();
    auto& dx = g.GradRef(x.id);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (T(1) - y[i] * y[i]);
  }, "tanh");
}

template <typename T>
Var Graph<T>::Sigmoid(Var x) {
  Tensor<T> out = value(x);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = T(1) / (T(1) + std::exp(-out[i]));
  }
  return Record(std::move(out), {x}, [=](Graph& g, std::size_t self) {
    const auto& dy = g.nodes_[self].grad;
    const auto& y = g.nodes_[self].value();
    auto& dx = g.GradRef(x.id);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
  }, "sigmoid");
}

template <typename T>
Var Graph<T>::Sum(Var x) {
  const auto& X = value(x);
  T total = 0;
  for (std::size_t i = 0; i < X.size(); ++i) total += X[i];
  return Record(Tensor<T>({1}, std::vector<T>{total}), {x},
                [=](Graph& g, std::size_t self) {
                  const T dy = g.nodes_[self].grad[0];
                  auto& dx = g.GradRef(x.id);
                  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy;
                },
                "sum");
}

// ---------------------------------------------------------------------------
// Softmax family

namespace {

template <typename T>
void SoftmaxRow(const T* x, T* y, std::size_t n) {
  const T max = *std::max_element(x, x + n);
  T total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    y[j] = std::exp(x[j] - max);
    total += y[j];
  }
  for (std::size_t j = 0; j < n; ++j) y[j] /= total;
}

template <typename T>
void LogSoftmaxRow(const T* x, T* y, std::size_t n) {
  const T max = *std::max_element(x, x + n);
  T total = 0;
  for (std::size_t j = 0; j < n; ++j) total += std::exp(x[j] - max);
  const T log_z = max + std::log(total);
  for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - log_z;
}

}  // namespace

template <typename T>
Var Graph<T>::Softmax(Var x) {
  const auto& X = value(x);
  if (X.cols() == 0) throw ShapeError("softmax of an empty row");
  const std::size_t rows = X.rows(), cols = X.cols();
  Tensor<T> out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    SoftmaxRow(X.data() + r * cols, out.data() + r * cols, cols);
  }
  return Record(std::move(out), {x}, [=](Graph& g, std::size_t self) {
    const auto& dy = g.nodes_[self].grad;
    const auto& y = g.nodes_[self].value();
    auto& dx = g.GradRef(x.id);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      T dot = 0;
      for (std::size_t j = 0; j < cols; ++j) dot += dy[o + j] * y[o + j];
      for (std::size_t j = 0; j < cols; ++j) dx[o + j] += y[o + j] * (dy[o + j] - dot);
    }
  }, "softmax");
}

template <typename T>
Var Graph<T>::LogSoftmax(Var x) {
  const auto& X = value(x);
  if (X.cols() == 0) throw ShapeError("log_softmax of an empty row");
  const std::size_t rows = X.rows(), cols = X.cols();
  Tensor<T> out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    LogSoftmaxRow(X.data() + r * cols, out.data() + r * cols, cols);
  }
  return Record(std::move(out), {x}, [=](Graph& g, std::size_t self) {
    const auto& dy = g.nodes_[self].grad;
    const auto& y = g.nodes_[self].value();
    auto& dx = g.GradRef(x.id);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      T total = 0;
      for (std::size_t j = 0; j < cols; ++j) total += dy[o + j];
      for (std::size_t j = 0; j < cols; ++j) {
        dx[o + j] += dy[o + j] - std::exp(y[o + j]) * total;
      }
    }
  }, "log_softmax");
}

// ---------------------------------------------------------------------------
// Indexing and reshaping

template <typename T>
Var Graph<T>::Embedding(Var table, std::span<const std::size_t> ids) {
  const auto& E = value(table);
  const std::size_t vocab = E.rows(), dim = E.cols();
  Tensor<T> out = Tensor<T>::Matrix(ids.size(), dim);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= vocab) {
      throw std::out_of_range("embedding id " + std::to_string(ids[r]) +
                              " outside table of " + std::to_string(vocab) + " rows");
    }
    std::copy_n(E.data() + ids[r] * dim, dim, out.data() + r * dim);
  }
  std::vector<std::size_t> saved(ids.begin(), ids.end());
  return Record(std::move(out), {table}, [=](Graph& g, std::size_t self) {
    const auto& dy = g.nodes_[self].grad;
    auto& dE = g.GradRef(table.id);
    for (std::size_t r = 0; r < saved.size(); ++r) {
      T* row = dE.data() + saved[r] * dim;
      for (std::size_t j = 0; j < dim; ++j) row[j] += dy[r * dim + j];
    }
  }, "embedding");
}

template <typename T>
Var Graph<T>::ConcatCols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const std::size_t rows = value(parts[0]).rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  bool requires_grad = false;
  for (Var p : parts) {
    const auto& P = value(p);
    if (P.rows() != rows) {
      throw ShapeError("concat_cols: row counts differ " +
                       ShapeString(value(parts[0]).shape()) + " vs " +
                       ShapeString(P.shape()));
    }
    widths.push_back(P.cols());
    total += P.cols();
    requires_grad |= Needs(p);
  }
  Tensor<T> out = Tensor<T>::Matrix(rows, total);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& P = value(parts[i]);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(P.data() + r * widths[i], widths[i], out.data() + r * total + offset);
    }
    offset += widths[i];
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return Record(std::move(out), requires_grad, [=](Graph& g, std::size_t self) {
    const auto& dy = g.nodes_[self].grad;
    std::size_t off = 0;
    for (std::size_t i = 0; i < saved.size(); ++i) {
      if (g.Needs(saved[i])) {
        auto& dx = g.GradRef(saved[i].id);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < widths[i]; ++j) {
            dx[r * widths[i] + j] += dy[r * total + off + j];
          }
        }
      }
      off += widths[i];
    }
  }, "concat_cols");
}

template <typename T>
Var Graph<T>::ConcatRows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  const std::size_t cols = value(parts[0]).cols();
  std::vector<std::size_t> heights;
  std::size_t total = 0;
  bool requires_grad = false;
  for (Var p : parts) {
    const auto& P = value(p);
    if (P.cols() != cols) {
      throw ShapeError("concat_rows: column counts differ " +
                       ShapeString(value(parts[0]).shape()) + " vs " +
                       ShapeString(P.shape()));
    }
    heights.push_back(P.rows());
    total += P.rows();
    requires_grad |= Needs(p);
  }
  Tensor<T> out = Tensor<T>::Matrix(total, cols);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& P = value(parts[i]);
    std::copy_n(P.data(), P.size(), out.data() + offset * cols);
    offset += heights[i];
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return Record(std::move(out), requires_grad, [=](Graph& g, std::size_t self) {
    const auto& dy = g.nodes_[self].grad;
    std::size_t off = 0;
    for (std::size_t i = 0; i < saved.size(); ++i) {
      if (g.Needs(saved[i])) {
        auto& dx = g.GradRef(saved[i].id);
        const T* src = dy.data() + off * cols;
        for (std::size_t j = 0; j < dx.size(); ++j) dx[j] += src[j];
      }
      off += heights[i];
    }
  }, "concat_rows");
}

template <typename T>
Var Graph<T>::SliceCols(Var x, std::size_t begin, std::size_t count) {
  const auto& X = value(x);
  const std::size_t rows = X.rows(), cols = X.cols();
  if (begin + count > cols) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " +
                     ShapeString(X.shape()));
  }
  Tensor<T> out = Tensor<T>::Matrix(rows, count);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(X.data() + r * cols + begin, count, out.data() + r * count);
  }
  return Record(std::move(out), {x}, [=](Graph& g, std::size_t self) {
    const auto& dy = g.nodes_[self].grad;
    auto& dx = g.GradRef(x.id);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < count; ++j) {
        dx[r * cols + begin + j] += dy[r * count + j];
      }
    }
  }, "slice_cols");
}

template <typename T>
Var Graph<T>::BlendRows(Var update, Var keep, const std::vector<bool>& take_update) {
  const auto& U = value(update);
  const auto& K = value(keep);
  RequireSameShape(U, K, "blend_rows");
  if (take_update.size() != U.rows()) {
    throw ShapeError("blend_rows: mask has " + std::to_string(take_update.size()) +
                     " rows, tensor " + ShapeString(U.shape()));
  }
  const std::size_t rows = U.rows(), cols = U.cols();
  Tensor<T> out = K;
  for (std::size_t r = 0; r < rows; ++r) {
    if (take_update[r]) std::copy_n(U.data() + r * cols, cols, out.data() + r * cols);
  }
  return Record(std::move(out), {update, keep}, [=](Graph& g, std::size_t self) {
    const auto& dy = g.nodes_[self].grad;
    for (std::size_t r = 0; r < rows; ++r) {
      Var target = take_update[r] ? update : keep;
      if (!g.Needs(target)) continue;
      auto& dx = g.GradRef(target.id);
      for (std::size_t j = 0; j < cols; ++j) dx[r * cols + j] += dy[r * cols + j];
    }
  }, "blend_rows");
}

// ---------------------------------------------------------------------------
// Attention

namespace {

template <typename T>
void CheckLayout(const AttentionLayout& layout, std::size_t batch,
                 std::size_t key_rows, const char* op) {
  if (layout.offset.size() != batch || layout.length.size() != batch) {
    throw ShapeError(std::string(op) + ": layout covers " +
                     std::to_string(layout.offset.size()) + " rows, batch is " +
                     std::to_string(batch));
  }
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t len = layout.length[b];
    if (len == 0) throw ShapeError(std::string(op) + ": empty source");
    if (len > layout.width) throw ShapeError(std::string(op) + ": length exceeds width");
    if (layout.offset[b] + (len - 1) * layout.stride >= key_rows) {
      throw ShapeError(std::string(op) + ": layout reads past the key rows");
    }
  }
}

}  // namespace

template <typename T>
Var Graph<T>::AttentionScores(Var query, Var keys, const AttentionLayout& layout) {
  const auto& Q = value(query);
  const auto& K = value(keys);
  if (Q.cols() != K.cols()) {
    throw ShapeError("attention_scores: query " + ShapeString(Q.shape()) +
                     " vs keys " + ShapeString(K.shape()));
  }
  const std::size_t batch = Q.rows(), dim = Q.cols(), width = layout.width;
  CheckLayout<T>(layout, batch, K.rows(), "attention_scores");
  Tensor<T> out = Tensor<T>::Matrix(batch, width);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* q = Q.data() + b * dim;
    for (std::size_t s = 0; s < layout.length[b]; ++s) {
      const T* k = K.data() + (layout.offset[b] + s * layout.stride) * dim;
      T dot = 0;
      for (std::size_t j = 0; j < dim; ++j) dot += q[j] * k[j];
      out[b * width + s] = dot;
    }
  }
  return Record(std::move(out), {query, keys}, [=](Graph& g, std::size_t self) {
    const auto& dy = g.nodes_[self].grad;
    const auto& Qv = g.value(query);
    const auto& Kv = g.value(keys);
    T* dq = g.Needs(query) ? g.GradRef(query.id).data() : nullptr;
    T* dk = g.Needs(keys) ? g.GradRef(keys.id).data() : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t s = 0; s < layout.length[b]; ++s) {
        const T d = dy[b * width + s];
        const std::size_t row = layout.offset[b] + s * layout.stride;
        if (dq) {
          for (std::size_t j = 0; j < dim; ++j) dq[b * dim + j] += d * Kv[row * dim + j];
        }
        if (dk) {
          for (std::size_t j = 0; j < dim; ++j) dk[row * dim + j] += d * Qv[b * dim + j];
        }
      }
    }
  }, "attention_scores");
}

template <typename T>
Var Graph<T>::MaskedSoftmax(Var scores, std::span<const std::size_t> length) {
  const auto& S = value(scores);
  const std::size_t rows = S.rows(), cols = S.cols();
  if (length.size() != rows) {
    throw ShapeError("masked_softmax: " + std::to_string(length.size()) +
                     " lengths for " + ShapeString(S.shape()));
  }
  std::vector<std::size_t> saved(length.begin(), length.end());
  Tensor<T> out(S.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    if (saved[r] == 0 || saved[r] > cols) {
      throw ShapeError("masked_softmax: bad length " + std::to_string(saved[r]));
    }
    SoftmaxRow(S.data() + r * cols, out.data() + r * cols, saved[r]);
  }
  return Record(std::move(out), {scores}, [=](Graph& g, std::size_t self) {
    const auto& dy = g.nodes_[self].grad;
    const auto& y = g.nodes_[self].value();
    auto& dx = g.GradRef(scores.id);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * cols;
      T dot = 0;
      for (std::size_t j = 0; j < saved[r]; ++j) dot += dy[o + j] * y[o + j];
      for (std::size_t j = 0; j < saved[r]; ++j) dx[o + j] += y[o + j] * (dy[o + j] - dot);
    }
  }, "masked_softmax");
}

template <typename T>
Var Graph<T>::AttentionContext(Var weights, Var values, const AttentionLayout& layout) {
  const auto& W = value(weights);
  const auto& V = value(values);
  const std::size_t batch = W.rows(), width = layout.width, dim = V.cols();
  if (W.cols() != width) {
    throw ShapeError("attention_context: weights " + ShapeString(W.shape()) +
                     " vs layout width " + std::to_string(width));
  }
  CheckLayout<T>(layout, batch, V.rows(), "attention_context");
  Tensor<T> out = Tensor<T>::Matrix(batch, dim);
  for (std::size_t b = 0; b < batch; ++b) {
    T* o = out.data() + b * dim;
    for (std::size_t s = 0; s < layout.length[b]; ++s) {
      const T w = W[b * width + s];
      const T* v = V.data() + (layout.offset[b] + s * layout.stride) * dim;
      for (std::size_t j = 0; j < dim; ++j) o[j] += w * v[j];
    }
  }
  return Record(std::move(out), {weights, values}, [=](Graph& g, std::size_t self) {
    const auto& dy = g.nodes_[self].grad;
    const auto& Wv = g.value(weights);
    const auto& Vv = g.value(values);
    T* dw = g.Needs(weights) ? g.GradRef(weights.id).data() : nullptr;
    T* dv = g.Needs(values) ? g.GradRef(values.id).data() : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
      const T* d = dy.data() + b * dim;
      for (std::size_t s = 0; s < layout.length[b]; ++s) {
        const std::size_t row = layout.offset[b] + s * layout.stride;
        if (dw) {
          T dot = 0;
          for (std::size_t j = 0; j < dim; ++j) dot += d[j] * Vv[row * dim + j];
          dw[b * width + s] += dot;
        }
        if (dv) {
          const T w = Wv[b * width + s];
          for (std::size_t j = 0; j < dim; ++j) dv[row * dim + j] += w * d[j];
        }
      }
    }
  }, "attention_context");
}

// ---------------------------------------------------------------------------
// Loss

template <typename T>
Var Graph<T>::CrossEntropy(Var logits, std::span<const std::size_t> targets,
                           std::size_t pad_index,
                           std::span<const std::size_t> groups) {
  const auto& L = value(logits);
  const std::size_t rows = L.rows(), cols = L.cols();
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for logits " + ShapeString(L.shape()));
  }
  if (!groups.empty() && groups.size() != rows) {
    throw ShapeError("cross_entropy: group ids do not cover every row");
  }
  std::unordered_map<std::size_t, std::size_t> group_counts;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == pad_index) continue;
    if (targets[r] >= cols) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[r]) +
                              " outside " + std::to_string(cols) + " classes");
    }
    ++group_counts[groups.empty() ? 0 : groups[r]];
  }
  if (group_counts.empty()) throw std::invalid_argument("empty target");

  // Row weights make the loss a mean of per-group means.
  std::vector<T> weight(rows, T(0));
  const T num_groups = static_cast<T>(group_counts.size());
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == pad_index) continue;
    const std::size_t n = group_counts[groups.empty() ? 0 : groups[r]];
    weight[r] = T(1) / (static_cast<T>(n) * num_groups);
  }

  Tensor<T> probs(L.shape());
  std::vector<T> log_row(cols);
  T loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = L.data() + r * cols;
    SoftmaxRow(x, probs.data() + r * cols, cols);
    if (weight[r] == T(0)) continue;
    LogSoftmaxRow(x, log_row.data(), cols);
    loss -= weight[r] * log_row[targets[r]];
  }
  std::vector<std::size_t> saved(targets.begin(), targets.end());
  return Record(Tensor<T>({1}, std::vector<T>{loss}), {logits},
                [=, probs = std::move(probs), weight = std::move(weight)](
                    Graph& g, std::size_t self) {
                  const T dl = g.nodes_[self].grad[0];
                  auto& dx = g.GradRef(logits.id);
                  for (std::size_t r = 0; r < rows; ++r) {
                    if (weight[r] == T(0)) continue;
                    const T scale = dl * weight[r];
                    for (std::size_t j = 0; j < cols; ++j) {
                      dx[r * cols + j] += scale * probs[r * cols + j];
                    }
                    dx[r * cols + saved[r]] -= scale;
                  }
                },
                "cross_entropy");
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename T>
double GlobalNorm(std::span<const Tensor<T>* const> grads) {
  double total = 0.0;
  for (const auto* g : grads) {
    for (std::size_t i = 0; i < g->size(); ++i) {
      const double v = (*g)[i];
      total += v * v;
    }
  }
  return std::sqrt(total);
}

template <typename T>
SgdReport SgdStep(std::span<Tensor<T>* const> params,
                  std::span<const Tensor<T>* const> grads, double lr,
                  double clip) {
  if (params.size() != grads.size()) {
    throw ShapeError("sgd: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    RequireSameShape(*params[i], *grads[i], "sgd");
  }
  SgdReport report;
  report.grad_norm = GlobalNorm(grads);
  if (!std::isfinite(report.grad_norm)) return report;
  if (clip > 0.0 && report.grad_norm > clip) report.scale = clip / report.grad_norm;
  const T step = static_cast<T>(lr * report.scale);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* w = params[i]->data();
    const T* g = grads[i]->data();
    for (std::size_t j = 0; j < params[i]->size(); ++j) w[j] -= step * g[j];
  }
  report.applied = true;
  return report;
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;

template double GlobalNorm<float>(std::span<const Tensor<float>* const>);
template double GlobalNorm<double>(std::span<const Tensor<double>* const>);
template SgdReport SgdStep<float>(std::span<Tensor<float>* const>,
                                  std::span<const Tensor<float>* const>, double, double);
template SgdReport SgdStep<double>(std::span<Tensor<double>* const>,
                                   std::span<const Tensor<double>* const>, double, double);

}  // namespace mg2p
