#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "support.hpp"
#include "xmsleep/backbones.hpp"
#include "xmsleep/errors.hpp"

using namespace xmsleep;
using namespace xmsleep::nn;
using diff::Shape;
using TD = diff::Tensor<double>;
using TF = diff::Tensor<float>;

namespace {

// Plain [rows,in] x [in,out] + b.
std::vector<double> dense(std::span<const double> x, std::size_t rows, std::span<const double> w,
                          std::span<const double> b, std::size_t in, std::size_t out) {
  std::vector<double> y(rows * out);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < out; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < in; ++i) acc += x[r * in + i] * w[i * out + o];
      y[r * out + o] = acc;
    }
  return y;
}

// Reorders the T axis of [B,T,F] by `perm`.
TD permute_tokens(const TD& x, const std::vector<std::size_t>& perm) {
  const std::size_t b = x.dim(0), t = x.dim(1), f = x.dim(2);
  std::vector<double> out(x.numel());
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t ti = 0; ti < t; ++ti)
      for (std::size_t fi = 0; fi < f; ++fi)
        out[(bi * t + ti) * f + fi] = x.data()[(bi * t + perm[ti]) * f + fi];
  return TD(x.shape(), out);
}

}  // namespace

TEST_CASE("full-size CNN maps raw epochs to five 128-wide tokens") {
  const auto cfg = ModelConfig::paper();
  diff::ModelParams<float> p(1);
  CnnBackbone<float> cnn(p, "cnn", cfg);
  std::mt19937_64 rng(2);
  auto x = testing::randn<float>({2, 1, 3000}, rng);
  CHECK(cnn(x).shape() == Shape{2, 5, 128});

  // conv weights + biases, block by block
  std::size_t expected = 0, cin = 1;
  for (std::size_t bi = 0; bi < cfg.cnn_channels.size(); ++bi)
    for (std::size_t li = 0; li < cfg.cnn_convs[bi]; ++li) {
      expected += cfg.cnn_channels[bi] * cin * cfg.kernel + cfg.cnn_channels[bi];
      cin = cfg.cnn_channels[bi];
    }
  CHECK(p.scalar_count() == expected);
  CHECK(cnn.blocks().size() == 5);

  const auto zero = cnn(TF::zeros({1, 1, 3000}));
  for (float v : zero.data()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(cnn(TF::zeros({1, 2, 3000})), DimensionError);
  CHECK_THROWS_AS(cnn(TF::zeros({1, 1, 2999})), DimensionError);
}

TEST_CASE("desk CNN keeps the token layout") {
  const auto cfg = ModelConfig::desk();
  diff::ModelParams<float> p(1);
  CnnBackbone<float> cnn(p, "cnn", cfg);
  CHECK(cnn(TF::zeros({3, 1, 3000})).shape() == Shape{3, 5, cfg.d_model});
}

TEST_CASE("sinusoidal table matches its closed form") {
  const std::size_t len = 29, dim = 16;
  const auto pe = sinusoidal_table(len, dim);
  for (std::size_t pos = 0; pos < len; ++pos)
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle = double(pos) / std::pow(10000.0, 2.0 * double(i) / double(dim));
      CHECK(pe[pos * dim + 2 * i] == doctest::Approx(std::sin(angle)).epsilon(1e-12));
      CHECK(pe[pos * dim + 2 * i + 1] == doctest::Approx(std::cos(angle)).epsilon(1e-12));
    }
  CHECK(pe[0] == 0.0);
  CHECK(pe[1] == 1.0);
}

TEST_CASE("spectrogram projection of zeros is exactly the positional table") {
  const auto cfg = ModelConfig::desk();
  diff::ModelParams<float> p(3);
  SpecTransformer<float> st(p, "spec", cfg);
  const auto y = st.project(TF::zeros({2, 29, 129}));
  REQUIRE(y.shape() == Shape{2, 29, cfg.d_model});
  const auto pe = sinusoidal_table(29, cfg.d_model);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < pe.size(); ++i) CHECK(y.data()[b * pe.size() + i] == float(pe[i]));
  CHECK_THROWS_AS(st.project(TF::zeros({2, 30, 129})), DimensionError);
  CHECK_THROWS_AS(st.project(TF::zeros({2, 29, 128})), DimensionError);
}

TEST_CASE("spectrogram transformer attention rows are distributions") {
  const auto cfg = ModelConfig::desk();
  diff::ModelParams<float> p(4);
  SpecTransformer<float> st(p, "spec", cfg);
  std::mt19937_64 rng(5);
  std::vector<AttentionTrace> trace;
  ForwardContext ctx{false, nullptr, &trace};
  const auto y = st(testing::randn<float>({2, 29, 129}, rng), ctx);
  CHECK(y.shape() == Shape{2, 29, cfg.d_model});
  REQUIRE(trace.size() == cfg.backbone_layers);
  for (const auto& t : trace) {
    CHECK(t.shape == Shape{2, cfg.heads, 29, 29});
    const std::size_t tk = t.shape[3];
    for (std::size_t r = 0; r < t.probs.size() / tk; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < tk; ++c) {
        CHECK(t.probs[r * tk + c] >= 0.0);
        acc += t.probs[r * tk + c];
      }
      CHECK(std::abs(acc - 1.0) < 1e-5);
    }
  }
  // a single token attends only to itself
  ForwardContext plain;
  const auto one = st.encode(testing::randn<float>({1, 1, cfg.d_model}, rng), plain);
  CHECK(one.shape() == Shape{1, 1, cfg.d_model});
}

TEST_CASE("encoder stack is permutation equivariant; the positional table breaks it") {
  ModelConfig cfg = ModelConfig::desk();
  diff::ModelParams<double> p(6);
  SpecTransformer<double> st(p, "spec", cfg);
  std::mt19937_64 rng(7);
  std::vector<std::size_t> perm(29);
  for (std::size_t i = 0; i < 29; ++i) perm[i] = (i * 7 + 3) % 29;

  ForwardContext ctx;
  const auto x = testing::randn<double>({1, 29, cfg.d_model}, rng);
  const auto a = permute_tokens(st.encode(x, ctx), perm);
  const auto b = st.encode(permute_tokens(x, perm), ctx);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-9));

  const auto spec = testing::randn<double>({1, 29, 129}, rng);
  const auto pa = permute_tokens(st.project(spec), perm);
  const auto pb = st.project(permute_tokens(spec, perm));
  double gap = 0.0;
  for (std::size_t i = 0; i < pa.numel(); ++i) gap = std::max(gap, std::abs(pa.data()[i] - pb.data()[i]));
  CHECK(gap > 0.1);
}

TEST_CASE("single-head attention matches a hand-written oracle with 1/sqrt(16) scaling") {
  diff::ModelParams<double> p(8);
  MultiHeadAttention<double> mha(p, "attn", 16, 1, 0.0);
  std::mt19937_64 rng(9);
  for (auto& e : p) {
    auto v = testing::randn<double>(e.tensor.shape(), rng, 0.3);
    std::copy(v.data().begin(), v.data().end(), e.tensor.data_mut().begin());
  }
  const std::size_t tq = 3, tk = 4;
  const auto query = testing::randn<double>({1, tq, 16}, rng);
  const auto memory = testing::randn<double>({1, tk, 16}, rng);
  std::vector<AttentionTrace> trace;
  ForwardContext ctx{false, nullptr, &trace};
  const auto y = mha(query, memory, ctx, "probe");

  const auto q = dense(query.data(), tq, mha.q.w.data(), mha.q.b.data(), 16, 16);
  const auto k = dense(memory.data(), tk, mha.k.w.data(), mha.k.b.data(), 16, 16);
  const auto v = dense(memory.data(), tk, mha.v.w.data(), mha.v.b.data(), 16, 16);
  std::vector<double> probs(tq * tk), mixed(tq * 16, 0.0);
  for (std::size_t i = 0; i < tq; ++i) {
    double mx = -1e300;
    for (std::size_t j = 0; j < tk; ++j) {
      double s = 0.0;
      for (std::size_t d = 0; d < 16; ++d) s += q[i * 16 + d] * k[j * 16 + d];
      probs[i * tk + j] = 0.25 * s;
      mx = std::max(mx, probs[i * tk + j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < tk; ++j) z += probs[i * tk + j] = std::exp(probs[i * tk + j] - mx);
    for (std::size_t j = 0; j < tk; ++j) probs[i * tk + j] /= z;
    for (std::size_t j = 0; j < tk; ++j)
      for (std::size_t d = 0; d < 16; ++d) mixed[i * 16 + d] += probs[i * tk + j] * v[j * 16 + d];
  }
  const auto ref = dense(mixed, tq, mha.o.w.data(), mha.o.b.data(), 16, 16);
  REQUIRE(trace.size() == 1);
  CHECK(trace[0].site == "probe");
  for (std::size_t i = 0; i < probs.size(); ++i) CHECK(trace[0].probs[i] == doctest::Approx(probs[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-10));

  CHECK_THROWS_AS(mha(query, testing::randn<double>({1, tk, 8}, rng), ctx), DimensionError);
  CHECK_THROWS_AS(MultiHeadAttention<double>(p, "bad", 16, 3, 0.0), InputError);
}

TEST_CASE("epoch attention pooling") {
  diff::ModelParams<double> p(10);
  EpochAttention<double> pool(p, "pool", 6, 5);
  std::mt19937_64 rng(11);
  for (double& v : pool.b.data_mut()) v = 0.2 * std::normal_distribution<double>()(rng);

  SUBCASE("identical tokens pool to that token with uniform weights") {
    std::vector<double> vals;
    const auto tok = testing::randn<double>({6}, rng);
    for (int t = 0; t < 4; ++t) vals.insert(vals.end(), tok.data().begin(), tok.data().end());
    const TD z({1, 4, 6}, vals);
    const auto out = pool(z);
    for (std::size_t f = 0; f < 6; ++f) CHECK(out.data()[f] == doctest::Approx(tok.data()[f]).epsilon(1e-12));
    const auto alpha = pool.weights(z);
    for (double a : alpha.data()) CHECK(a == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("weights follow tanh scores against the context vector") {
    const auto z = testing::randn<double>({2, 5, 6}, rng);
    const auto alpha = pool.weights(z);
    for (std::size_t b = 0; b < 2; ++b) {
      std::vector<double> s(5);
      for (std::size_t t = 0; t < 5; ++t) {
        const auto a = dense(std::span<const double>(z.data().data() + (b * 5 + t) * 6, 6), 1,
                             pool.w.data(), pool.b.data(), 6, 5);
        s[t] = 0.0;
        for (std::size_t i = 0; i < 5; ++i) s[t] += std::tanh(a[i]) * pool.context.data()[i];
      }
      const double mx = *std::max_element(s.begin(), s.end());
      double zsum = 0.0;
      for (double& v : s) zsum += v = std::exp(v - mx);
      for (std::size_t t = 0; t < 5; ++t)
        CHECK(alpha.data()[b * 5 + t] == doctest::Approx(s[t] / zsum).epsilon(1e-12));
    }
    const auto out = pool(z);
    CHECK(out.shape() == Shape{2, 6});
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t f = 0; f < 6; ++f) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t t = 0; t < 5; ++t) {
          lo = std::min(lo, z.data()[(b * 5 + t) * 6 + f]);
          hi = std::max(hi, z.data()[(b * 5 + t) * 6 + f]);
        }
        CHECK(out.data()[b * 6 + f] >= lo - 1e-12);
        CHECK(out.data()[b * 6 + f] <= hi + 1e-12);
      }
  }
  CHECK_THROWS_AS(pool(TD::zeros({6})), DimensionError);
}
