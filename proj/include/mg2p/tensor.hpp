// Dense row-major tensors and a tape-based reverse-mode autodiff graph.
//
// Everything the network needs is expressed with the ops on Graph. Values
// are computed eagerly when an op is recorded; Backward() walks the tape in
// reverse. Instantiated for float (training, inference) and double
// (gradient checking).
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mg2p {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string ShapeString(const Shape& shape);

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor Matrix(std::size_t rows, std::size_t cols, T fill = T(0)) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor Vector(std::size_t n, T fill = T(0)) { return Tensor({n}, fill); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix view: a rank-1 tensor of length n reads as 1 x n.
  std::size_t rows() const;
  std::size_t cols() const;

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }

  void Fill(T value);
  bool AllFinite() const;
  bool SameShape(const Tensor& other) const { return shape_ == other.shape_; }

  template <typename U>
  Tensor<U> Cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

// Handle to a node on a Graph.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

// Row layout used by the attention ops: query row b reads key rows
// offset[b] + s * stride for s < length[b]; `width` is max(length).
struct AttentionLayout {
  std::vector<std::size_t> offset;
  std::vector<std::size_t> length;
  std::size_t stride = 1;
  std::size_t width = 0;
};

template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf holding a copy of `value`; receives no gradient sink.
  Var Constant(Tensor<T> value);
  // Leaf that references `value` (which must outlive the graph). When
  // `grad_sink` is non-null, Backward() adds the node's gradient into it.
  Var Parameter(const Tensor<T>& value, Tensor<T>* grad_sink);

  // The reference is invalidated by the next recorded op.
  const Tensor<T>& value(Var v) const;
  // Gradient after Backward(); zeros if the node was not reached.
  Tensor<T> grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  Var MatMul(Var a, Var b);            // [m x k] [k x n]
  Var MatMulTransposed(Var a, Var b);  // [m x k] [n x k] -> a * b^T
  Var Add(Var a, Var b);
  Var Mul(Var a, Var b);
  Var AddBias(Var x, Var bias);  // bias broadcast over rows
  Var Tanh(Var x);
  Var Sigmoid(Var x);
  Var Sum(Var x);  // scalar [1]
  Var Softmax(Var x);     // row-wise
  Var LogSoftmax(Var x);  // row-wise
  Var Embedding(Var table, std::span<const std::size_t> ids);
  Var ConcatCols(std::span<const Var> parts);
  Var ConcatRows(std::span<const Var> parts);
  Var SliceCols(Var x, std::size_t begin, std::size_t count);
  // Row r of the result is row r of `update` if take_update[r], else of `keep`.
  Var BlendRows(Var update, Var keep, const std::vector<bool>& take_update);

  // scores(b, s) = <query_b, keys[offset_b + s*stride]>; 0 past length[b].
  Var AttentionScores(Var query, Var keys, const AttentionLayout& layout);
  // Row-wise softmax over the first length[b] columns; the rest are exactly 0.
  Var MaskedSoftmax(Var scores, std::span<const std::size_t> length);
  // context_b = sum_s weights(b, s) * values[offset_b + s*stride].
  Var AttentionContext(Var weights, Var values, const AttentionLayout& layout);

  // Mean over non-pad rows of -log softmax(logits_r)[target_r]. With
  // `groups` (one group id per row), the mean is taken per group and the
  // groups are then averaged with equal weight. Throws "empty target" when
  // every row is padding.
  Var CrossEntropy(Var logits, std::span<const std::size_t> targets,
                   std::size_t pad_index,
                   std::span<const std::size_t> groups = {});

  // Seeds d(loss)/d(loss) = 1 and propagates back through the tape.
  void Backward(Var loss);

 private:
  // Receives the graph and the id of the node whose gradient is ready.
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Tensor<T> own;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    Tensor<T>* sink = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
    const Tensor<T>& value() const { return external ? *external : own; }
  };

  Var Record(Tensor<T> value, std::initializer_list<Var> inputs,
             BackwardFn backward, const char* op);
  Var Record(Tensor<T> value, bool requires_grad,
             BackwardFn backward, const char* op);
  Tensor<T>& GradRef(std::size_t id);
  bool Needs(Var v) const { return nodes_[v.id].requires_grad; }
  void Check(Var v) const;

  std::vector<Node> nodes_;
};

// Global L2 norm over a set of gradient tensors.
template <typename T>
double GlobalNorm(std::span<const Tensor<T>* const> grads);

struct SgdReport {
  double grad_norm = 0.0;
  double scale = 1.0;   // clip factor applied to the gradients
  bool applied = false;  // false when a gradient was non-finite
};

// w <- w - lr * g after rescaling the gradients so their global norm is at
// most `clip` (clip <= 0 disables clipping). A non-finite gradient aborts
// the step without touching the parameters.
template <typename T>
SgdReport SgdStep(std::span<Tensor<T>* const> params,
                  std::span<const Tensor<T>* const> grads, double lr,
                  double clip);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace mg2p
