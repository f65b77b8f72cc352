#include <doctest.h>

#include <numeric>

#include "helpers.hpp"
#include "senpa/error.hpp"
#include "senpa/layers.hpp"

using namespace senpa;
using nn::Tensor;
using T64 = Tensor<double>;

namespace {

constexpr double kGradTol = 1e-4;

T64 fixed(std::size_t r, std::size_t c, std::vector<double> v, bool grad = false) {
  return T64::from_values(r, c, std::move(v), grad);
}

/// Weighted sum with fixed random weights, so every output entry matters.
T64 probe(const T64& y, std::uint64_t seed = 77) {
  Rng rng(seed);
  return sum(mul(y, test::random_tensor(y.rows(), y.cols(), rng, false)));
}

}  // namespace

TEST_CASE("elementary op values") {
  const auto a = fixed(2, 2, {1, 2, 3, 4});
  const auto id = fixed(2, 2, {1, 0, 0, 1});
  CHECK(std::ranges::equal(matmul(id, a).values(), a.values()));
  const auto b = fixed(2, 3, {1, 0, -1, 2, 1, 0});
  const auto ab = matmul(a, b);
  CHECK(std::ranges::equal(ab.values(), std::vector<double>{5, 2, -1, 11, 4, -3}));
  CHECK(std::ranges::equal(transpose(b).values(), std::vector<double>{1, 2, 0, 1, -1, 0}));
  CHECK(std::ranges::equal(add_row(a, fixed(1, 2, {10, 20})).values(),
                           std::vector<double>{11, 22, 13, 24}));
  CHECK(std::ranges::equal(scale(a, 0.5).values(), std::vector<double>{0.5, 1, 1.5, 2}));
  CHECK(sum(a).item() == 10.0);
  CHECK(mean(a).item() == 2.5);
  CHECK(gelu(fixed(1, 1, {0.0})).item() == 0.0);
  CHECK(gelu(fixed(1, 1, {1.0})).item() == doctest::Approx(0.8413447460685429));
  CHECK_THROWS_AS(matmul(a, fixed(3, 1, {1, 2, 3})), ConfigError);
  CHECK_THROWS_AS(add(a, b), ConfigError);
  CHECK_THROWS_AS(reshape(a, 3, 1), ConfigError);
}

TEST_CASE("softmax and layer norm definitions") {
  const auto flat = softmax_rows(fixed(1, 4, {3, 3, 3, 3}));
  for (double v : flat.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  Rng rng(2);
  const auto x = test::random_tensor(5, 7, rng, false);
  const auto s = softmax_rows(scale(x, 30.0));
  for (std::size_t r = 0; r < 5; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      CHECK(s.at(r, c) >= 0.0);
      total += s.at(r, c);
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
  const auto y = layer_norm(x, T64::full(1, 7, 1.0), T64::zeros(1, 7), 0.0);
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t c = 0; c < 7; ++c) m += y.at(r, c) / 7.0;
    for (std::size_t c = 0; c < 7; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m) / 7.0;
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::abs(v - 1.0) < 1e-5);
  }
  // Float mode too.
  const auto xf = Tensor<float>::from_values(1, 3, {1.f, 2.f, 6.f});
  const auto yf = layer_norm(xf, Tensor<float>::full(1, 3, 1.f), Tensor<float>::zeros(1, 3));
  CHECK(std::abs(yf.values()[0] + yf.values()[1] + yf.values()[2]) < 1e-5);
}

TEST_CASE("cross entropy and structural ops") {
  const auto logits = fixed(2, 3, {0, 0, 0, 1, 2, 3});
  const std::vector<std::uint16_t> labels{1, 2};
  const double l1 = std::log(3.0);
  const double l2 = -(3.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  CHECK(cross_entropy(logits, labels).item() == doctest::Approx((l1 + l2) / 2).epsilon(1e-12));
  const std::vector<std::uint16_t> bad{1, 3};
  CHECK_THROWS_AS(cross_entropy(logits, bad), ConfigError);

  const auto x = fixed(3, 2, {1, 2, 3, 4, 5, 6});
  const std::vector<std::size_t> idx{2, 0, 2};
  CHECK(std::ranges::equal(gather_rows(x, idx).values(), std::vector<double>{5, 6, 1, 2, 5, 6}));
  CHECK(std::ranges::equal(slice_cols(x, 1, 1).values(), std::vector<double>{2, 4, 6}));
  CHECK(concat_rows(x, x).rows() == 6);
  const std::vector<T64> parts{x, slice_cols(x, 0, 1)};
  CHECK(std::ranges::equal(concat_cols(std::span<const T64>(parts)).values(),
                           std::vector<double>{1, 2, 1, 3, 4, 3, 5, 6, 5}));
  // 2x2 image, one channel -> 4x4 nearest neighbour.
  const auto up = upsample2x(fixed(4, 1, {1, 2, 3, 4}), 2, 2);
  CHECK(std::ranges::equal(up.values(), std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2,
                                                            3, 3, 4, 4, 3, 3, 4, 4}));
  const auto cols = im2col3x3(fixed(4, 1, {1, 2, 3, 4}), 2, 2);
  CHECK(cols.rows() == 4);
  CHECK(cols.cols() == 9);
  // Top-left pixel: centre tap is itself, the out-of-image taps are zero.
  CHECK(std::ranges::equal(cols.values().subspan(0, 9),
                           std::vector<double>{0, 0, 0, 0, 1, 2, 0, 3, 4}));
}

TEST_CASE("every op passes a finite-difference check") {
  Rng rng(11);
  auto a = test::random_tensor(4, 5, rng);
  auto b = test::random_tensor(4, 5, rng);
  auto m = test::random_tensor(5, 3, rng);
  auto row = test::random_tensor(1, 5, rng);
  auto gamma = test::random_tensor(1, 5, rng);
  auto beta = test::random_tensor(1, 5, rng);
  // Keep abs away from its kink.
  auto nz = fixed(2, 3, {0.5, -0.7, 0.3, -0.2, 0.9, -1.1}, true);
  auto img = test::random_tensor(16, 3, rng);
  const std::vector<std::uint16_t> labels{0, 2, 1, 2};
  const std::vector<std::size_t> idx{3, 1, 1, 0};

  const std::vector<std::pair<std::string, std::function<T64()>>> cases{
      {"matmul", [&] { return probe(matmul(a, m)); }},
      {"transpose", [&] { return probe(transpose(a)); }},
      {"add", [&] { return probe(add(a, b)); }},
      {"sub", [&] { return probe(sub(a, b)); }},
      {"mul", [&] { return probe(mul(a, b)); }},
      {"scale", [&] { return probe(scale(a, -1.7)); }},
      {"add_row", [&] { return probe(add_row(a, row)); }},
      {"gelu", [&] { return probe(gelu(a)); }},
      {"abs", [&] { return probe(abs(nz)); }},
      {"layer_norm", [&] { return probe(layer_norm(a, gamma, beta)); }},
      {"softmax", [&] { return probe(softmax_rows(a)); }},
      {"dropout", [&] { Rng r(5); return probe(dropout(a, 0.3, r)); }},
      {"gather", [&] { return probe(gather_rows(a, std::span<const std::size_t>(idx))); }},
      {"concat_rows", [&] { return probe(concat_rows(a, b)); }},
      {"concat_cols", [&] { const std::vector<T64> p{a, b}; return probe(concat_cols(std::span<const T64>(p))); }},
      {"slice", [&] { return probe(slice_cols(a, 1, 3)); }},
      {"reshape", [&] { return probe(reshape(a, 10, 2)); }},
      {"mean", [&] { return scale(mean(mul(a, a)), 3.0); }},
      {"cross_entropy", [&] { return cross_entropy(matmul(a, m), labels); }},
      {"im2col", [&] { return probe(im2col3x3(img, 4, 4)); }},
      {"upsample", [&] { return probe(upsample2x(img, 4, 4)); }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    CHECK(test::gradient_check(fn, {a, b, m, row, gamma, beta, nz, img}, rng) < kGradTol);
  }
}

TEST_CASE("layer gradients match finite differences") {
  Rng rng(12);
  nn::ParameterSet<double> params(3);
  const nn::Mlp<double> mlp(params, "mlp", 6, 8, 4, 3);
  const nn::TransformerBlock<double> block(params, "blk", 8, 2, 2, 0.0);
  const nn::Conv3x3<double> conv(params, "conv", 3, 2);
  // Larger weights than the default init so the check exercises curvature.
  for (auto& p : params.items())
    for (auto& v : p.value.mutable_values()) v = 0.5 * std::tanh(v * 40.0) + 0.05;
  auto x = test::random_tensor(5, 6, rng);
  auto t = test::random_tensor(5, 8, rng);
  auto img = test::random_tensor(9, 3, rng);
  std::vector<T64> leaves{x, t, img};
  for (auto& p : params.items()) leaves.push_back(p.value);
  CHECK(test::gradient_check([&] { return probe(mlp(x)); }, leaves, rng) < kGradTol);
  CHECK(test::gradient_check([&] { return probe(block(t)); }, leaves, rng) < kGradTol);
  CHECK(test::gradient_check([&] { return probe(conv(img, 3, 3)); }, leaves, rng) < kGradTol);
}

TEST_CASE("analytic gradients") {
  Rng rng(13);
  auto x = test::random_tensor(4, 3, rng);
  nn::backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  // ||W x||^2 with x a column: gradient wrt x is 2 W^T W x.
  auto w = test::random_tensor(3, 4, rng);
  auto v = test::random_tensor(4, 1, rng);
  const auto wx = matmul(w, v);
  nn::backward(sum(mul(wx, wx)));
  for (std::size_t i = 0; i < 4; ++i) {
    double expect = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
      double wv = 0.0;
      for (std::size_t c = 0; c < 4; ++c) wv += w.at(r, c) * v.at(c, 0);
      expect += 2.0 * w.at(r, i) * wv;
    }
    CHECK(v.grad()[i] == doctest::Approx(expect).epsilon(1e-12));
  }

  CHECK_THROWS_AS(nn::backward(x), ConfigError);

  // Shared leaves accumulate.
  auto s = T64::scalar(2.0, true);
  nn::backward(add(mul(s, s), s));
  CHECK(s.grad()[0] == 5.0);

  // No graph under the guard.
  auto y = T64::scalar(1.0, true);
  {
    nn::NoGradGuard guard;
    CHECK_FALSE(scale(y, 2.0).requires_grad());
  }
  CHECK(scale(y, 2.0).requires_grad());
}

TEST_CASE("attention") {
  nn::ParameterSet<double> params(4);
  nn::MultiHeadAttention<double> att(params, "att", 4, 2);
  Rng rng(3);

  SUBCASE("a single token attends to itself") {
    const auto x = test::random_tensor(1, 4, rng, false);
    std::vector<T64> weights;
    const auto y = att(x, &weights);
    REQUIRE(weights.size() == 2);
    for (const auto& w : weights) CHECK(w.item() == doctest::Approx(1.0).epsilon(1e-15));
    const auto expect = att.out(att.v(x));
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(y.values()[i] == doctest::Approx(expect.values()[i]).epsilon(1e-14));
  }
  SUBCASE("duplicate tokens give identical rows") {
    auto x = test::random_tensor(5, 4, rng, false);
    auto xv = x.mutable_values();
    for (std::size_t c = 0; c < 4; ++c) xv[3 * 4 + c] = xv[1 * 4 + c];
    const auto y = att(x);
    for (std::size_t c = 0; c < 4; ++c) CHECK(y.at(1, c) == y.at(3, c));
  }
  SUBCASE("two tokens by hand") {
    nn::ParameterSet<double> p(0);
    nn::MultiHeadAttention<double> one(p, "a", 2, 1);
    auto set = [](T64 t, std::vector<double> v) {
      std::ranges::copy(v, t.mutable_values().begin());
    };
    set(one.q.weight, {1, 0, 0, 1});
    set(one.k.weight, {2, 0, 0, 0});
    set(one.v.weight, {1, 1, 0, 2});
    set(one.out.weight, {1, 0, 0, 1});
    set(one.q.bias, {0, 0});
    set(one.k.bias, {0, 1});
    set(one.v.bias, {0, 0});
    set(one.out.bias, {0.5, 0});
    const auto x = fixed(2, 2, {1, 0, 0, 1});
    // q = x, k = [[2,1],[0,1]], v = [[1,1],[0,2]], scale 1/sqrt(2).
    const double s = 1.0 / std::sqrt(2.0);
    auto row = [&](double q0, double q1) {
      const double e0 = std::exp((q0 * 2 + q1 * 1) * s), e1 = std::exp((q0 * 0 + q1 * 1) * s);
      const double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
      return std::pair{w0 * 1 + w1 * 0 + 0.5, w0 * 1 + w1 * 2};
    };
    const auto y = one(x);
    const auto [a0, a1] = row(1, 0);
    const auto [b0, b1] = row(0, 1);
    CHECK(y.at(0, 0) == doctest::Approx(a0).epsilon(1e-14));
    CHECK(y.at(0, 1) == doctest::Approx(a1).epsilon(1e-14));
    CHECK(y.at(1, 0) == doctest::Approx(b0).epsilon(1e-14));
    CHECK(y.at(1, 1) == doctest::Approx(b1).epsilon(1e-14));
  }
  SUBCASE("width must divide by heads") {
    nn::ParameterSet<double> p(0);
    CHECK_THROWS_AS(
        {
          nn::MultiHeadAttention<double> bad(p, "bad", 6, 4);
          (void)bad(test::random_tensor(2, 6, rng, false));
        },
        ConfigError);
  }
}

TEST_CASE("AdamW step matches closed form") {
  nn::ParameterSet<double> params(0);
  auto w = params.add("w", 1, 2, nn::Init::Zeros);
  auto b = params.add("b", 1, 1, nn::Init::Zeros, false);
  w.mutable_values()[0] = 0.8;
  w.mutable_values()[1] = -0.3;
  b.mutable_values()[0] = 0.2;
  w.mutable_grad()[0] = 0.5;
  w.mutable_grad()[1] = -2.0;
  b.mutable_grad()[0] = 0.1;
  nn::AdamWOptions opt;
  opt.weight_decay = 0.1;
  const double lr = 0.01;
  nn::adamw_step(params, lr, opt);
  CHECK(params.step() == 1);
  // First step: m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
  auto first = [&](double p, double g, double wd) {
    return p * (1 - lr * wd) - lr * g / (std::abs(g) + opt.eps);
  };
  CHECK(w.values()[0] == doctest::Approx(first(0.8, 0.5, 0.1)).epsilon(1e-12));
  CHECK(w.values()[1] == doctest::Approx(first(-0.3, -2.0, 0.1)).epsilon(1e-12));
  CHECK(b.values()[0] == doctest::Approx(first(0.2, 0.1, 0.0)).epsilon(1e-12));

  // Second step with a new gradient, bias-corrected moments by hand.
  const double p1 = w.values()[0];
  w.mutable_grad()[0] = -1.0;
  nn::adamw_step(params, lr, opt);
  const double m = 0.9 * 0.05 + 0.1 * -1.0;
  const double v = 0.999 * 0.001 * 0.25 + 0.001 * 1.0;
  const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
  CHECK(w.values()[0] ==
        doctest::Approx(p1 * (1 - lr * 0.1) - lr * mh / (std::sqrt(vh) + opt.eps)).epsilon(1e-10));

  // Frozen parameters are untouched.
  params.set_trainable("w", false);
  const double frozen = w.values()[1];
  nn::adamw_step(params, lr, opt);
  CHECK(w.values()[1] == frozen);
}

TEST_CASE("warmup cosine schedule knots") {
  CHECK(nn::cosine_warmup_lr(0, 10, 100, 1.0) == 0.0);
  CHECK(nn::cosine_warmup_lr(5, 10, 100, 1.0) == doctest::Approx(0.5));
  CHECK(nn::cosine_warmup_lr(10, 10, 100, 1.0) == 1.0);
  CHECK(nn::cosine_warmup_lr(55, 10, 100, 1.0) == doctest::Approx(0.5));
  CHECK(nn::cosine_warmup_lr(9999, 300, 10000, 1e-4) <= 1e-7);
  double prev = 2.0;
  for (std::uint64_t s = 10; s < 100; ++s) {
    const double lr = nn::cosine_warmup_lr(s, 10, 100, 1.0);
    CHECK(lr <= prev);
    prev = lr;
  }
}

TEST_CASE("dropout and initialisation") {
  Rng rng(1);
  const auto x = T64::full(100, 100, 1.0);
  Rng r0(9);
  CHECK(std::ranges::equal(dropout(x, 0.0, r0).values(), x.values()));
  Rng r1(9);
  const auto y = dropout(x, 0.25, r1);
  std::size_t zeros = 0, scaled = 0;
  for (double v : y.values()) {
    if (v == 0.0) ++zeros;
    else if (std::abs(v - 1.0 / 0.75) < 1e-15) ++scaled;
  }
  CHECK(zeros + scaled == y.size());
  CHECK(std::abs(static_cast<double>(zeros) / 1e4 - 0.25) < 0.02);

  std::vector<double> draws(20000);
  nn::truncated_normal_fill<double>(draws, 0.02, rng);
  const auto [lo, hi] = std::minmax_element(draws.begin(), draws.end());
  CHECK(*lo >= -0.04);
  CHECK(*hi <= 0.04);
  const double mu = std::accumulate(draws.begin(), draws.end(), 0.0) / draws.size();
  CHECK(std::abs(mu) < 1e-3);

  // Name-derived seeds: creation order does not matter.
  nn::ParameterSet<double> p1(5), p2(5);
  p1.add("a", 3, 3, nn::Init::TruncatedNormal);
  p1.add("b", 3, 3, nn::Init::TruncatedNormal);
  p2.add("b", 3, 3, nn::Init::TruncatedNormal);
  p2.add("a", 3, 3, nn::Init::TruncatedNormal);
  CHECK(std::ranges::equal(p1.at("a").value.values(), p2.at("a").value.values()));
  CHECK_FALSE(std::ranges::equal(p1.at("a").value.values(), p1.at("b").value.values()));
  CHECK_THROWS_AS(p1.add("a", 1, 1, nn::Init::Zeros), ConfigError);
}

TEST_CASE("canonical row order ignores input permutation") {
  const auto x = fixed(4, 2, {3, 1, 1, 2, 3, 0, 1, 2});
  const auto order = nn::canonical_row_order(x);
  CHECK(order == std::vector<std::size_t>{1, 3, 2, 0});
}
