#include "senpa/layers.hpp"

#include <cmath>

#include "senpa/error.hpp"

namespace senpa::nn {

template <typename T>
Linear<T>::Linear(ParameterSet<T>& params, const std::string& name, std::size_t in,
                  std::size_t out, bool with_bias)
    : weight(params.add(name + ".weight", in, out, Init::TruncatedNormal)) {
  if (with_bias) bias = params.add(name + ".bias", 1, out, Init::Zeros, false);
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> y = matmul(x, weight);
  return bias.defined() ? add_row(y, bias) : y;
}

template <typename T>
LayerNorm<T>::LayerNorm(ParameterSet<T>& params, const std::string& name, std::size_t width)
    : gamma(params.add(name + ".gamma", 1, width, Init::Ones, false)),
      beta(params.add(name + ".beta", 1, width, Init::Zeros, false)) {}

template <typename T>
Tensor<T> LayerNorm<T>::operator()(const Tensor<T>& x) const {
  return layer_norm(x, gamma, beta);
}

template <typename T>
Mlp<T>::Mlp(ParameterSet<T>& params, const std::string& name, std::size_t in,
            std::size_t hidden, std::size_t out, std::size_t depth) {
  require(depth >= 1, "mlp depth must be at least 1");
  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t a = i == 0 ? in : hidden;
    const std::size_t b = i + 1 == depth ? out : hidden;
    layers.emplace_back(params, name + "." + std::to_string(i), a, b);
  }
}

template <typename T>
Tensor<T> Mlp<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = gelu(h);
  }
  return h;
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParameterSet<T>& params, const std::string& name,
                                          std::size_t width, std::size_t heads_)
    : heads(heads_) {
  require(heads_ > 0 && width % heads_ == 0,
          "embedding width " + std::to_string(width) + " is not divisible by " +
              std::to_string(heads_) + " heads");
  q = Linear<T>(params, name + ".q", width, width);
  k = Linear<T>(params, name + ".k", width, width);
  v = Linear<T>(params, name + ".v", width, width);
  out = Linear<T>(params, name + ".out", width, width);
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::operator()(const Tensor<T>& x,
                                            std::vector<Tensor<T>>* weights) const {
  const std::size_t width = x.cols();
  require(width % heads == 0, "attention input width not divisible by heads");
  const std::size_t dh = width / heads;
  const auto order = canonical_row_order(x);
  const Tensor<T> kv_in = gather_rows(x, std::span<const std::size_t>(order));
  const Tensor<T> qa = q(x);
  const Tensor<T> ka = k(kv_in);
  const Tensor<T> va = v(kv_in);
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<Tensor<T>> parts;
  if (weights) weights->clear();
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor<T> qh = slice_cols(qa, h * dh, dh);
    const Tensor<T> kh = slice_cols(ka, h * dh, dh);
    const Tensor<T> vh = slice_cols(va, h * dh, dh);
    const Tensor<T> attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_scale));
    if (weights) {
      // Undo the canonical key order so column j refers to input token j.
      std::vector<T> w(attn.size());
      const std::size_t n = x.rows();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) w[r * n + order[c]] = attn.at(r, c);
      weights->push_back(Tensor<T>::from_values(n, n, std::move(w)));
    }
    parts.push_back(matmul(attn, vh));
  }
  return out(concat_cols(std::span<const Tensor<T>>(parts)));
}

template <typename T>
TransformerBlock<T>::TransformerBlock(ParameterSet<T>& params, const std::string& name,
                                      std::size_t width, std::size_t heads,
                                      std::size_t mlp_ratio, T dropout_)
    : norm1(params, name + ".norm1", width),
      attn(params, name + ".attn", width, heads),
      norm2(params, name + ".norm2", width),
      fc1(params, name + ".fc1", width, width * mlp_ratio),
      fc2(params, name + ".fc2", width * mlp_ratio, width),
      dropout(dropout_) {}

template <typename T>
Tensor<T> TransformerBlock<T>::operator()(const Tensor<T>& x, Rng* rng) const {
  const bool drop = dropout > T(0) && rng != nullptr;
  Tensor<T> a = attn(norm1(x));
  if (drop) a = nn::dropout(a, dropout, *rng);
  Tensor<T> h = add(x, a);
  Tensor<T> m = fc2(gelu(fc1(norm2(h))));
  if (drop) m = nn::dropout(m, dropout, *rng);
  return add(h, m);
}

template <typename T>
Conv3x3<T>::Conv3x3(ParameterSet<T>& params, const std::string& name, std::size_t in,
                    std::size_t out)
    : lin(params, name, 9 * in, out) {}

template <typename T>
Tensor<T> Conv3x3<T>::operator()(const Tensor<T>& x, std::size_t height, std::size_t width) const {
  return lin(im2col3x3(x, height, width));
}

template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct Mlp<float>;
template struct Mlp<double>;
template struct MultiHeadAttention<float>;
template struct MultiHeadAttention<double>;
template struct TransformerBlock<float>;
template struct TransformerBlock<double>;
template struct Conv3x3<float>;
template struct Conv3x3<double>;

}  // namespace senpa::nn
