#pragma once

// Named learnable tensors, initialisation and the AdamW optimiser.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "senpa/tensor.hpp"

namespace senpa::nn {

enum class Init { TruncatedNormal, Zeros, Ones };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  /// Decoupled weight decay applies (off for biases, norms and tables).
  bool decay = true;
  /// AdamW moments, same length as value.
  std::vector<T> m;
  std::vector<T> v;

  bool trainable() const { return value.requires_grad(); }
};

template <typename T>
class ParameterSet {
 public:
  /// Each parameter is initialised from its own stream derived from
  /// (seed, name), so values do not depend on creation order.
  explicit ParameterSet(std::uint64_t seed = 0) : seed_(seed) {}

  Tensor<T> add(std::string name, std::size_t rows, std::size_t cols, Init init,
                bool decay = true);

  std::vector<Parameter<T>>& items() { return items_; }
  const std::vector<Parameter<T>>& items() const { return items_; }
  Parameter<T>* find(std::string_view name);
  const Parameter<T>* find(std::string_view name) const;
  Parameter<T>& at(std::string_view name);

  /// Total number of scalars.
  std::size_t scalar_count() const;
  void zero_grad();
  /// Zeroes the AdamW moments and step counter.
  void reset_optimizer();
  /// Sets requires_grad on every parameter whose name starts with `prefix`.
  void set_trainable(std::string_view prefix, bool trainable);
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t step) { step_ = step; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t step_ = 0;
  std::vector<Parameter<T>> items_;
};

/// Draws from N(0, std^2) truncated to [-2 std, 2 std] by rejection.
template <typename T>
void truncated_normal_fill(std::span<T> out, double stddev, Rng& rng);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// One AdamW step over every trainable parameter that received a gradient.
/// Weight decay is decoupled: p <- p - lr * wd * p before the Adam update.
template <typename T>
void adamw_step(ParameterSet<T>& params, double lr, const AdamWOptions& options);

/// Linear warmup 0 -> lr0 over `warmup_steps`, cosine decay to 0 at
/// `total_steps`.
double cosine_warmup_lr(std::uint64_t step, std::uint64_t warmup_steps,
                        std::uint64_t total_steps, double lr0);

/// FNV-1a, used for name-derived seeds and config hashes.
std::uint64_t fnv1a(std::string_view text);

}  // namespace senpa::nn
