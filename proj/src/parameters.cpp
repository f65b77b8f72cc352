#include "senpa/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "senpa/error.hpp"

namespace senpa::nn {

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void truncated_normal_fill(std::span<T> out, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : out) {
    double z;
    do {
      z = dist(rng);
    } while (std::abs(z) > 2.0);
    v = static_cast<T>(z * stddev);
  }
}

template <typename T>
Tensor<T> ParameterSet<T>::add(std::string name, std::size_t rows, std::size_t cols, Init init,
                               bool decay) {
  require(find(name) == nullptr, "duplicate parameter name " + name);
  std::vector<T> values(rows * cols, T(0));
  if (init == Init::Ones) {
    std::fill(values.begin(), values.end(), T(1));
  } else if (init == Init::TruncatedNormal) {
    Rng rng(derive_seed(seed_, fnv1a(name)));
    truncated_normal_fill<T>(values, 0.02, rng);
  }
  Parameter<T> p;
  p.name = std::move(name);
  p.value = Tensor<T>::from_values(rows, cols, std::move(values), true);
  p.decay = decay;
  p.m.assign(rows * cols, T(0));
  p.v.assign(rows * cols, T(0));
  items_.push_back(std::move(p));
  return items_.back().value;
}

template <typename T>
Parameter<T>* ParameterSet<T>::find(std::string_view name) {
  for (auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
const Parameter<T>* ParameterSet<T>::find(std::string_view name) const {
  for (const auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
Parameter<T>& ParameterSet<T>::at(std::string_view name) {
  auto* p = find(name);
  require(p != nullptr, "unknown parameter " + std::string(name));
  return *p;
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.value.size();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : items_) p.value.zero_grad();
}

template <typename T>
void ParameterSet<T>::reset_optimizer() {
  step_ = 0;
  for (auto& p : items_) {
    std::fill(p.m.begin(), p.m.end(), T(0));
    std::fill(p.v.begin(), p.v.end(), T(0));
  }
}

template <typename T>
void ParameterSet<T>::set_trainable(std::string_view prefix, bool trainable) {
  for (auto& p : items_)
    if (std::string_view(p.name).starts_with(prefix)) p.value.set_requires_grad(trainable);
}

template <typename T>
void adamw_step(ParameterSet<T>& params, double lr, const AdamWOptions& options) {
  params.set_step(params.step() + 1);
  const auto t = static_cast<double>(params.step());
  const double bc1 = 1.0 - std::pow(options.beta1, t);
  const double bc2 = 1.0 - std::pow(options.beta2, t);
  const T step_size = static_cast<T>(lr / bc1);
  const T sqrt_bc2 = static_cast<T>(std::sqrt(bc2));
  const T b1 = static_cast<T>(options.beta1), b2 = static_cast<T>(options.beta2);
  const T eps = static_cast<T>(options.eps);
  for (auto& p : params.items()) {
    if (!p.trainable() || !p.value.has_grad()) continue;
    auto w = p.value.mutable_values();
    const auto g = p.value.grad();
    const T shrink = p.decay ? static_cast<T>(1.0 - lr * options.weight_decay) : T(1);
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] *= shrink;
      p.m[i] = b1 * p.m[i] + (T(1) - b1) * g[i];
      p.v[i] = b2 * p.v[i] + (T(1) - b2) * g[i] * g[i];
      w[i] -= step_size * p.m[i] / (std::sqrt(p.v[i]) / sqrt_bc2 + eps);
    }
  }
}

double cosine_warmup_lr(std::uint64_t step, std::uint64_t warmup_steps, std::uint64_t total_steps,
                        double lr0) {
  if (step < warmup_steps) return lr0 * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return lr0;
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template void truncated_normal_fill<float>(std::span<float>, double, Rng&);
template void truncated_normal_fill<double>(std::span<double>, double, Rng&);
template void adamw_step<float>(ParameterSet<float>&, double, const AdamWOptions&);
template void adamw_step<double>(ParameterSet<double>&, double, const AdamWOptions&);

}  // namespace senpa::nn
