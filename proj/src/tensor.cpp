#include "senpa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <unordered_set>

#include "senpa/error.hpp"
#include "senpa/kernels.hpp"

namespace senpa::nn {

namespace {

thread_local bool t_grad_enabled = true;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

std::string shape_str(std::size_t r, std::size_t c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.defined() && b.defined(), std::string(op) + ": undefined operand");
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) +
                      " vs " + shape_str(b.rows(), b.cols()));
}

// Creates the output node. The backward closure is only kept when some input
// requires a gradient and recording is enabled.
template <typename T>
Tensor<T> make_result(std::size_t rows, std::size_t cols, std::vector<T> value,
                      std::initializer_list<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(value);
  bool needs = false;
  if (t_grad_enabled)
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> make_result_many(std::size_t rows, std::size_t cols, std::vector<T> value,
                           std::span<const Tensor<T>> inputs,
                           std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(value);
  bool needs = false;
  if (t_grad_enabled)
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

// Gradient buffer of input i, or nullptr when it does not need one.
template <typename T>
T* grad_of(Node<T>& self, std::size_t i) {
  Node<T>& in = *self.inputs[i];
  if (!in.requires_grad) return nullptr;
  in.ensure_grad();
  return in.grad.data();
}

template <typename T>
T gelu_cdf(T x) {
  return T(0.5) * (T(1) + std::erf(x / T(std::numbers::sqrt2)));
}

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T>
Tensor<T> Tensor<T>::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return full(rows, cols, T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(std::size_t rows, std::size_t cols, T value, bool requires_grad) {
  return from_values(rows, cols, std::vector<T>(rows * cols, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_values(std::size_t rows, std::size_t cols, std::vector<T> values,
                                 bool requires_grad) {
  require(values.size() == rows * cols, "tensor data length " + std::to_string(values.size()) +
                                            " does not match " + shape_str(rows, cols));
  auto node = std::make_shared<Node<T>>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor<T>(std::move(node));
}

template <typename T>
void backward(const Tensor<T>& loss) {
  require(loss.defined(), "backward: undefined loss");
  require(loss.size() == 1, "backward needs a scalar loss, got " +
                                shape_str(loss.rows(), loss.cols()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& n = **it;
    if (n.backward && !n.grad.empty()) n.backward(n);
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.defined() && b.defined(), "matmul: undefined operand");
  if (a.cols() != b.rows())
    throw ConfigError("matmul: shape mismatch " + shape_str(a.rows(), a.cols()) + " x " +
                      shape_str(b.rows(), b.cols()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<T> out(m * n);
  kernels::matmul<T>(a.values(), b.values(), out, m, k, n);
  return make_result<T>(m, n, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    const Node<T>& na = *self.inputs[0];
    const Node<T>& nb = *self.inputs[1];
    if (T* ga = grad_of(self, 0)) {
      std::vector<T> bt(k * n);
      kernels::transpose<T>(nb.value, bt, k, n);
      kernels::matmul<T>(self.grad, bt, std::span<T>(ga, m * k), m, n, k, true);
    }
    if (T* gb = grad_of(self, 1)) {
      std::vector<T> at(m * k);
      kernels::transpose<T>(na.value, at, m, k);
      kernels::matmul<T>(at, self.grad, std::span<T>(gb, k * n), k, m, n, true);
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(m * n);
  kernels::transpose<T>(a.values(), out, m, n);
  return make_result<T>(n, m, std::move(out), {a}, [m, n](Node<T>& self) {
    if (T* ga = grad_of(self, 0)) {
      std::vector<T> back(m * n);
      kernels::transpose<T>(self.grad, back, n, m);
      for (std::size_t i = 0; i < m * n; ++i) ga[i] += back[i];
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result<T>(a.rows(), a.cols(), std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t j = 0; j < 2; ++j)
      if (T* g = grad_of(self, j))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "sub");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result<T>(a.rows(), a.cols(), std::move(out), {a, b}, [](Node<T>& self) {
    if (T* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (T* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result<T>(a.rows(), a.cols(), std::move(out), {a, b}, [](Node<T>& self) {
    const auto& va = self.inputs[0]->value;
    const auto& vb = self.inputs[1]->value;
    if (T* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * vb[i];
    if (T* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * va[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
  return make_result<T>(a.rows(), a.cols(), std::move(out), {a}, [factor](Node<T>& self) {
    if (T* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row) {
  require(row.rows() == 1 && row.cols() == a.cols(),
          "add_row: row " + shape_str(row.rows(), row.cols()) + " does not broadcast over " +
              shape_str(a.rows(), a.cols()));
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(m * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a.values()[r * n + c] + row.values()[c];
  return make_result<T>(m, n, std::move(out), {a, row}, [m, n](Node<T>& self) {
    if (T* g = grad_of(self, 0))
      for (std::size_t i = 0; i < m * n; ++i) g[i] += self.grad[i];
    if (T* g = grad_of(self, 1))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
  });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = a.values()[i];
    out[i] = x * gelu_cdf(x);
  }
  return make_result<T>(a.rows(), a.cols(), std::move(out), {a}, [](Node<T>& self) {
    if (T* g = grad_of(self, 0)) {
      const auto& x = self.inputs[0]->value;
      const T inv_sqrt_2pi = T(0.5) * T(std::numbers::inv_sqrtpi) * T(std::numbers::sqrt2);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x[i] * x[i]);
        g[i] += self.grad[i] * (gelu_cdf(x[i]) + x[i] * pdf);
      }
    }
  });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a.values()[i]);
  return make_result<T>(a.rows(), a.cols(), std::move(out), {a}, [](Node<T>& self) {
    if (T* g = grad_of(self, 0)) {
      const auto& x = self.inputs[0]->value;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T s = x[i] > T(0) ? T(1) : (x[i] < T(0) ? T(-1) : T(0));
        g[i] += self.grad[i] * s;
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t m = x.rows(), n = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == n && beta.rows() == 1 && beta.cols() == n,
          "layer_norm: affine parameters must be 1 x " + std::to_string(n));
  std::vector<T> out(m * n);
  std::vector<T> xhat(m * n);
  std::vector<T> inv_std(m);
  const auto xv = x.values();
  for (std::size_t r = 0; r < m; ++r) {
    T mu = 0;
    for (std::size_t c = 0; c < n; ++c) mu += xv[r * n + c];
    mu /= T(n);
    T var = 0;
    for (std::size_t c = 0; c < n; ++c) {
      const T d = xv[r * n + c] - mu;
      var += d * d;
    }
    var /= T(n);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (xv[r * n + c] - mu) * inv_std[r];
      out[r * n + c] = xhat[r * n + c] * gamma.values()[c] + beta.values()[c];
    }
  }
  return make_result<T>(
      m, n, std::move(out), {x, gamma, beta},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        const auto& gv = self.inputs[1]->value;
        if (T* gx = grad_of(self, 0)) {
          for (std::size_t r = 0; r < m; ++r) {
            T mean_d = 0, mean_dx = 0;
            for (std::size_t c = 0; c < n; ++c) {
              const T d = self.grad[r * n + c] * gv[c];
              mean_d += d;
              mean_dx += d * xhat[r * n + c];
            }
            mean_d /= T(n);
            mean_dx /= T(n);
            for (std::size_t c = 0; c < n; ++c) {
              const T d = self.grad[r * n + c] * gv[c];
              gx[r * n + c] += inv_std[r] * (d - mean_d - xhat[r * n + c] * mean_dx);
            }
          }
        }
        if (T* gg = grad_of(self, 1))
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gg[c] += self.grad[r * n + c] * xhat[r * n + c];
        if (T* gb = grad_of(self, 2))
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gb[c] += self.grad[r * n + c];
      });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<T> out(m * n);
  const auto xv = x.values();
  for (std::size_t r = 0; r < m; ++r) {
    T mx = xv[r * n];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, xv[r * n + c]);
    T total = 0;
    for (std::size_t c = 0; c < n; ++c) {
      out[r * n + c] = std::exp(xv[r * n + c] - mx);
      total += out[r * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= total;
  }
  return make_result<T>(m, n, std::move(out), {x}, [m, n](Node<T>& self) {
    if (T* g = grad_of(self, 0)) {
      const auto& y = self.value;
      for (std::size_t r = 0; r < m; ++r) {
        T dot = 0;
        for (std::size_t c = 0; c < n; ++c) dot += self.grad[r * n + c] * y[r * n + c];
        for (std::size_t c = 0; c < n; ++c)
          g[r * n + c] += y[r * n + c] * (self.grad[r * n + c] - dot);
      }
    }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, Rng& rng) {
  require(p >= T(0) && p < T(1), "dropout probability must lie in [0, 1)");
  if (p == T(0)) return x;
  const T keep_scale = T(1) / (T(1) - p);
  std::vector<T> mask(x.size());
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = uniform01(rng) < static_cast<double>(p) ? T(0) : keep_scale;
    out[i] = x.values()[i] * mask[i];
  }
  return make_result<T>(x.rows(), x.cols(), std::move(out), {x},
                        [mask = std::move(mask)](Node<T>& self) {
                          if (T* g = grad_of(self, 0))
                            for (std::size_t i = 0; i < self.grad.size(); ++i)
                              g[i] += self.grad[i] * mask[i];
                        });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> index) {
  const std::size_t n = x.cols();
  std::vector<T> out(index.size() * n);
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] < x.rows(), "gather_rows: index out of range");
    std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(index[i] * n), n,
                out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return make_result<T>(index.size(), n, std::move(out), {x},
                        [n, idx = std::vector<std::size_t>(index.begin(), index.end())](Node<T>& self) {
                          if (T* g = grad_of(self, 0))
                            for (std::size_t i = 0; i < idx.size(); ++i)
                              for (std::size_t c = 0; c < n; ++c)
                                g[idx[i] * n + c] += self.grad[i * n + c];
                        });
}

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.cols() == b.cols(), "concat_rows: column mismatch");
  std::vector<T> out(a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  const std::size_t na = a.size();
  return make_result<T>(a.rows() + b.rows(), a.cols(), std::move(out), {a, b},
                        [na](Node<T>& self) {
                          if (T* g = grad_of(self, 0))
                            for (std::size_t i = 0; i < na; ++i) g[i] += self.grad[i];
                          if (T* g = grad_of(self, 1))
                            for (std::size_t i = na; i < self.grad.size(); ++i) g[i - na] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  require(!parts.empty(), "concat_cols: no operands");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.rows() == m, "concat_cols: row mismatch");
    offsets.push_back(total);
    total += p.cols();
  }
  std::vector<T> out(m * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = parts[k].cols();
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(parts[k].values().begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + offsets[k]));
  }
  return make_result_many<T>(m, total, std::move(out), parts,
                             [m, total, offsets](Node<T>& self) {
                               for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                                 T* g = grad_of(self, k);
                                 if (!g) continue;
                                 const std::size_t w = self.inputs[k]->cols;
                                 for (std::size_t r = 0; r < m; ++r)
                                   for (std::size_t c = 0; c < w; ++c)
                                     g[r * w + c] += self.grad[r * total + offsets[k] + c];
                               }
                             });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count) {
  require(start + count <= x.cols(), "slice_cols: range out of bounds");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<T> out(m * count);
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(r * n + start), count,
                out.begin() + static_cast<std::ptrdiff_t>(r * count));
  return make_result<T>(m, count, std::move(out), {x}, [m, n, start, count](Node<T>& self) {
    if (T* g = grad_of(self, 0))
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < count; ++c) g[r * n + start + c] += self.grad[r * count + c];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::size_t rows, std::size_t cols) {
  require(rows * cols == x.size(), "reshape: element count mismatch");
  std::vector<T> out(x.values().begin(), x.values().end());
  return make_result<T>(rows, cols, std::move(out), {x}, [](Node<T>& self) {
    if (T* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.values()) acc += v;
  return make_result<T>(1, 1, {acc}, {x}, [](Node<T>& self) {
    if (T* g = grad_of(self, 0)) {
      const std::size_t n = self.inputs[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require(x.size() > 0, "mean of an empty tensor");
  return scale(sum(x), T(1) / T(x.size()));
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::uint16_t> labels) {
  const std::size_t m = logits.rows(), k = logits.cols();
  require(labels.size() == m, "cross_entropy: one label per row required");
  std::vector<T> probs(m * k);
  T loss = 0;
  const auto lv = logits.values();
  for (std::size_t r = 0; r < m; ++r) {
    require(labels[r] < k, "cross_entropy: label out of range");
    T mx = lv[r * k];
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, lv[r * k + c]);
    T total = 0;
    for (std::size_t c = 0; c < k; ++c) {
      probs[r * k + c] = std::exp(lv[r * k + c] - mx);
      total += probs[r * k + c];
    }
    for (std::size_t c = 0; c < k; ++c) probs[r * k + c] /= total;
    loss -= (lv[r * k + labels[r]] - mx) - std::log(total);
  }
  loss /= T(m);
  return make_result<T>(
      1, 1, {loss}, {logits},
      [m, k, probs = std::move(probs),
       lab = std::vector<std::uint16_t>(labels.begin(), labels.end())](Node<T>& self) {
        if (T* g = grad_of(self, 0)) {
          const T s = self.grad[0] / T(m);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < k; ++c)
              g[r * k + c] += s * (probs[r * k + c] - (c == lab[r] ? T(1) : T(0)));
        }
      });
}

template <typename T>
Tensor<T> im2col3x3(const Tensor<T>& x, std::size_t height, std::size_t width) {
  require(x.rows() == height * width, "im2col3x3: rows must equal H*W");
  const std::size_t c = x.cols();
  std::vector<T> out(height * width * 9 * c);
  kernels::im2col3x3<T>(x.values(), height, width, c, out);
  return make_result<T>(height * width, 9 * c, std::move(out), {x},
                        [height, width, c](Node<T>& self) {
                          if (T* g = grad_of(self, 0))
                            kernels::col2im3x3<T>(self.grad, height, width, c,
                                                  std::span<T>(g, height * width * c));
                        });
}

template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x, std::size_t height, std::size_t width) {
  require(x.rows() == height * width, "upsample2x: rows must equal H*W");
  const std::size_t c = x.cols();
  const std::size_t ow = 2 * width;
  std::vector<T> out(4 * height * width * c);
  for (std::size_t y = 0; y < 2 * height; ++y)
    for (std::size_t xx = 0; xx < ow; ++xx)
      std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(((y / 2) * width + xx / 2) * c), c,
                  out.begin() + static_cast<std::ptrdiff_t>((y * ow + xx) * c));
  return make_result<T>(4 * height * width, c, std::move(out), {x},
                        [height, width, c, ow](Node<T>& self) {
                          if (T* g = grad_of(self, 0))
                            for (std::size_t y = 0; y < height; ++y)
                              for (std::size_t xx = 0; xx < width; ++xx)
                                for (std::size_t dy = 0; dy < 2; ++dy)
                                  for (std::size_t dx = 0; dx < 2; ++dx) {
                                    const T* src = self.grad.data() + ((2 * y + dy) * ow + 2 * xx + dx) * c;
                                    T* dst = g + (y * width + xx) * c;
                                    for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
                                  }
                        });
}

template <typename T>
std::vector<std::size_t> canonical_row_order(const Tensor<T>& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  const T* v = x.values().data();
  std::stable_sort(order.begin(), order.end(), [v, n](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(v + a * n, v + a * n + n, v + b * n, v + b * n + n);
  });
  return order;
}

#define SENPA_INSTANTIATE(T)                                                                   \
  template class Tensor<T>;                                                                    \
  template void backward<T>(const Tensor<T>&);                                                 \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                           \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                            \
  template Tensor<T> add_row<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                \
  template Tensor<T> abs<T>(const Tensor<T>&);                                                 \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);   \
  template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                        \
  template Tensor<T> dropout<T>(const Tensor<T>&, T, Rng&);                                    \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const std::size_t>);           \
  template Tensor<T> concat_rows<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> concat_cols<T>(std::span<const Tensor<T>>);                               \
  template Tensor<T> slice_cols<T>(const Tensor<T>&, std::size_t, std::size_t);                \
  template Tensor<T> reshape<T>(const Tensor<T>&, std::size_t, std::size_t);                   \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                 \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const std::uint16_t>);       \
  template Tensor<T> im2col3x3<T>(const Tensor<T>&, std::size_t, std::size_t);                 \
  template Tensor<T> upsample2x<T>(const Tensor<T>&, std::size_t, std::size_t);                \
  template std::vector<std::size_t> canonical_row_order<T>(const Tensor<T>&);

SENPA_INSTANTIATE(float)
SENPA_INSTANTIATE(double)

#undef SENPA_INSTANTIATE

}  // namespace senpa::nn
