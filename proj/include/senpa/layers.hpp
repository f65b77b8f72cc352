#pragma once

// Transformer building blocks over [tokens, features] matrices.

#include <string>
#include <vector>

#include "senpa/parameters.hpp"

namespace senpa::nn {

template <typename T>
struct Linear {
  Tensor<T> weight;  // in x out
  Tensor<T> bias;    // 1 x out, undefined when constructed without bias

  Linear() = default;
  Linear(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out,
         bool with_bias = true);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNorm() = default;
  LayerNorm(ParameterSet<T>& params, const std::string& name, std::size_t width);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// `depth` linear layers with gelu in between; hidden width `hidden`.
template <typename T>
struct Mlp {
  std::vector<Linear<T>> layers;

  Mlp() = default;
  Mlp(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t hidden,
      std::size_t out, std::size_t depth);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Multi-head self-attention.
///
/// Keys and values are visited in a canonical order (rows sorted by value),
/// so every reduction over keys is independent of the order in which tokens
/// arrive. Together with row-wise everything-else this makes the encoder
/// exactly permutation-equivariant, not just up to rounding.
template <typename T>
struct MultiHeadAttention {
  std::size_t heads = 1;
  Linear<T> q, k, v, out;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet<T>& params, const std::string& name, std::size_t width,
                     std::size_t heads);
  /// `weights`, when given, receives one [tokens, tokens] attention matrix per
  /// head with columns in the input token order.
  Tensor<T> operator()(const Tensor<T>& x, std::vector<Tensor<T>>* weights = nullptr) const;
};

/// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
template <typename T>
struct TransformerBlock {
  LayerNorm<T> norm1;
  MultiHeadAttention<T> attn;
  LayerNorm<T> norm2;
  Linear<T> fc1;
  Linear<T> fc2;
  T dropout = T(0);

  TransformerBlock() = default;
  TransformerBlock(ParameterSet<T>& params, const std::string& name, std::size_t width,
                   std::size_t heads, std::size_t mlp_ratio, T dropout);
  /// `rng` is only used when dropout > 0.
  Tensor<T> operator()(const Tensor<T>& x, Rng* rng = nullptr) const;
};

/// 3x3 same-padding convolution on a channel-last [H*W, C] image.
template <typename T>
struct Conv3x3 {
  Linear<T> lin;  // 9*C_in -> C_out

  Conv3x3() = default;
  Conv3x3(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out);
  Tensor<T> operator()(const Tensor<T>& x, std::size_t height, std::size_t width) const;
};

}  // namespace senpa::nn
