#pragma once

// Minimal reverse-mode autodiff over dense row-major matrices.
//
// Every tensor is a rows x cols matrix (scalars are 1 x 1, vectors are rows).
// Operations record a closure that pushes the output gradient into their
// inputs; backward() replays them in reverse topological order. Scalar type is
// a template parameter: float for training, double for gradient checks.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "senpa/rng.hpp"

namespace senpa::nn {

template <typename T>
struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor full(std::size_t rows, std::size_t cols, T value, bool requires_grad = false);
  static Tensor from_values(std::size_t rows, std::size_t cols, std::vector<T> values,
                            bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false) {
    return full(1, 1, value, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  std::vector<std::size_t> shape() const { return {rows(), cols()}; }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  T item() const { return node_->value.at(0); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  /// Copy of the values without graph history.
  Tensor detach() const { return from_values(rows(), cols(), node_->value); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Whether new operations are recorded for backward.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse-mode sweep from a scalar. Gradients accumulate into every tensor
/// that requires them, including leaves shared across calls.
template <typename T>
void backward(const Tensor<T>& loss);

// --- operations -------------------------------------------------------------

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
/// a[r, :] + row[0, :] for every r.
template <typename T> Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row);
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
/// Row-wise normalisation with affine gamma/beta (both 1 x cols).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x);
/// Inverted dropout; identity when p == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, T p, Rng& rng);
/// out[i, :] = x[index[i], :]
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> index);
template <typename T> Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> concat_cols(std::span<const Tensor<T>> parts);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, std::size_t rows, std::size_t cols);
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// Mean over rows of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint16_t> labels);
/// 3x3 patch extraction for a channel-last [H*W, C] image -> [H*W, 9C].
template <typename T>
Tensor<T> im2col3x3(const Tensor<T>& x, std::size_t height, std::size_t width);
/// Nearest-neighbour 2x upsampling of a channel-last [H*W, C] image.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x, std::size_t height, std::size_t width);

/// Row order sorted lexicographically by value. Rows that compare equal are
/// interchangeable, so reducing over rows in this order makes a reduction
/// independent of how the rows were permuted on input.
template <typename T>
std::vector<std::size_t> canonical_row_order(const Tensor<T>& x);

}  // namespace senpa::nn
