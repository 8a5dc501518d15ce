#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "lsf/check/gradcheck.hpp"
#include "lsf/gradients/criterion.hpp"
#include "lsf/gradients/elementwise.hpp"
#include "lsf/gradients/embedding.hpp"
#include "lsf/gradients/layernorm.hpp"
#include "lsf/gradients/softmax.hpp"

using namespace lsf;

namespace {

Tensor<double> rnd(const Shape& s, std::uint64_t seed, double lo = -1, double hi = 1) {
  Tensor<double> t(s);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = lo + (hi - lo) * rand_uniform(seed, i);
  return t;
}

// (1/sigma) * (g - mean(g) - xhat * mean(g * xhat)), g = w * dy
std::vector<double> textbook_ln_dx(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& dy,
                                   double eps) {
  const std::size_t rows = x.rows(), m = x.cols();
  std::vector<double> dx(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < m; ++j) mu += x[r * m + j];
    mu /= m;
    for (std::size_t j = 0; j < m; ++j) var += (x[r * m + j] - mu) * (x[r * m + j] - mu);
    const double sd = std::sqrt(var / m + eps);
    double mg = 0, mgx = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const double g = w[j] * dy[r * m + j], xh = (x[r * m + j] - mu) / sd;
      mg += g;
      mgx += g * xh;
    }
    mg /= m;
    mgx /= m;
    for (std::size_t j = 0; j < m; ++j) {
      const double g = w[j] * dy[r * m + j], xh = (x[r * m + j] - mu) / sd;
      dx[r * m + j] = (g - mg - xh * mgx) / sd;
    }
  }
  return dx;
}

}  // namespace

// ---- finite-difference sweeps (the CLI and acceptance run 100 per op) ----

class OpGradcheck : public ::testing::TestWithParam<std::string> {};

TEST_P(OpGradcheck, MatchesCentralDifferences) {
  const auto r = check::run_op(GetParam(), 25, 2024, false);
  EXPECT_LE(r.max_rel_error, check::kOpTolerance);
}

TEST_P(OpGradcheck, SignFlipIsCaught) {
  const auto r = check::run_op(GetParam(), 3, 2024, true);
  EXPECT_GT(r.max_rel_error, 1.0);
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradcheck, ::testing::ValuesIn(check::op_names()),
                         [](const auto& info) { return info.param; });

TEST(Gradcheck, UnknownOpIsRejected) { EXPECT_THROW(check::check_op("no_such_op", 1, false), Error); }

// ---- embedding ----

TEST(EmbeddingBackward, RepeatedTokenSumsRows) {
  const kernels::EmbeddingConfig cfg{2.0f, 7, 2, false};
  const std::vector<std::int32_t> tokens{5, 5};
  const Tensor<double> dy(Shape{1, 2, 3}, {1, 2, 3, 10, 20, 30});
  const auto mask = kernels::make_dropout_mask(dy.shape(), 0.0, 0);
  const auto g = grad::embedding_backward<double>(dy, tokens, 1, 2, mask, cfg);
  for (std::size_t w = 0; w < 7; ++w)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(g.dtable[w * 3 + j], w == 5 ? 2.0 * (dy[j] + dy[3 + j]) : 0.0);
  EXPECT_FALSE(g.dpos.has_value());
}

TEST(EmbeddingBackward, ZeroMaskAndGradientMass) {
  const kernels::EmbeddingConfig cfg{1.7f, 9, 4, true};
  const std::vector<std::int32_t> tokens{1, 8, 1, 3, 0, 2, 2, 2};
  const auto dy = rnd(Shape{2, 4, 5}, 3);
  kernels::DropoutMask zero{Tensor<std::uint8_t>(dy.shape()), 0.3};
  const auto g0 = grad::embedding_backward<double>(dy, tokens, 2, 4, zero, cfg);
  for (double v : g0.dtable.storage()) EXPECT_EQ(v, 0.0);

  const auto mask = kernels::make_dropout_mask(dy.shape(), 0.3, 17);
  const auto g = grad::embedding_backward<double>(dy, tokens, 2, 4, mask, cfg);
  // mass: sum over vocab rows equals s * sum of masked, rescaled dy
  for (std::size_t j = 0; j < 5; ++j) {
    double table = 0, want = 0, pos = 0;
    for (std::size_t w = 0; w < 9; ++w) table += g.dtable[w * 5 + j];
    for (std::size_t r = 0; r < 8; ++r) want += mask.keep[r * 5 + j] ? dy[r * 5 + j] / 0.7 : 0.0;
    for (std::size_t i = 0; i < 4; ++i) pos += (*g.dpos)[i * 5 + j];
    EXPECT_NEAR(table, static_cast<double>(cfg.scale) * want, 1e-6);
    EXPECT_NEAR(pos, want, 1e-6);
  }
}

// ---- criterion ----

TEST(CriterionBackward, Examples) {
  const std::vector<std::int32_t> t0{0};
  const auto a = grad::ls_cross_entropy_backward<double>(Tensor<double>(Shape{1, 2}, {0.5, 0.5}), t0, 0.0);
  EXPECT_EQ(a.storage(), (std::vector<double>{-0.5, 0.5}));
  const auto b = grad::ls_cross_entropy_backward<double>(Tensor<double>(Shape{1, 4}, 0.25), t0, 0.1);
  const std::vector<double> want{-0.675, 0.225, 0.225, 0.225};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(b[i], want[i], 1e-15);
  EXPECT_NEAR(std::accumulate(b.storage().begin(), b.storage().end(), 0.0), 0.0, 1e-15);
}

TEST(CriterionBackward, RowsSumToZeroAndPadRowsAreZero) {
  const auto h = rnd(Shape{6, 11}, 8, -4, 4);
  const auto lq = kernels::log_softmax_forward<double>(h);
  Tensor<double> q(lq.shape());
  for (std::size_t i = 0; i < q.numel(); ++i) q[i] = std::exp(lq[i]);
  const std::vector<std::int32_t> t{3, 0, 10, 2, 0, 7};
  const auto dh = grad::ls_cross_entropy_backward<double>(q, t, 0.1, 0);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 11; ++j) s += dh[r * 11 + j];
    EXPECT_NEAR(s, 0.0, 1e-12);
    if (t[r] == 0)
      for (std::size_t j = 0; j < 11; ++j) EXPECT_EQ(dh[r * 11 + j], 0.0);
  }
  const std::vector<std::int32_t> bad{3, 0, 11, 2, 0, 7};
  EXPECT_THROW(grad::ls_cross_entropy_backward<double>(q, bad, 0.1, 0), Error);
}

// ---- softmax ----

TEST(SoftmaxBackward, ConstantUpstreamAndSaturatedRow) {
  auto [y, c] = kernels::softmax_forward<double>(rnd(Shape{3, 5}, 2, -2, 2));
  const auto dx = grad::softmax_backward<double>(Tensor<double>(Shape{3, 5}, 0.7), c);
  for (double v : dx.storage()) EXPECT_NEAR(v, 0.0, 1e-16);

  kernels::SoftmaxCache<double> hot{Tensor<double>(Shape{1, 3}, {0, 1, 0})};
  const auto dh = grad::softmax_backward<double>(rnd(Shape{1, 3}, 4), hot);
  for (double v : dh.storage()) EXPECT_EQ(v, 0.0);
}

TEST(SoftmaxBackward, RandomRowMatchesDifferences) {
  const auto x = rnd(Shape{1, 5}, 12, -2, 2), dy = rnd(Shape{1, 5}, 13);
  auto [y, c] = kernels::softmax_forward<double>(x);
  const auto dx = grad::softmax_backward<double>(dy, c);
  const auto fd = oracle::fd_grad(
      [&](const std::vector<double>& v) {
        auto [yy, cc] = kernels::softmax_forward<double>(Tensor<double>(Shape{1, 5}, v));
        double s = 0;
        for (std::size_t i = 0; i < 5; ++i) s += yy[i] * dy[i];
        return s;
      },
      x.storage());
  EXPECT_LE(oracle::relative_error(dx.storage(), fd), 1e-6);
}

// ---- layernorm ----

TEST(LayerNormBackward, RowSumsVanishAndNormalizedDirectionIsAnnihilated) {
  const auto x = rnd(Shape{20, 9}, 1, -3, 3), w = rnd(Shape{9}, 2, -2, 2), b = rnd(Shape{9}, 3);
  auto [y, c] = kernels::layernorm_forward<double, double>(x, w, b);
  const auto g = grad::layernorm_backward<double, double>(rnd(Shape{20, 9}, 4), x, w, c);
  for (std::size_t r = 0; r < 20; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 9; ++j) s += g.dx[r * 9 + j];
    EXPECT_NEAR(s, 0.0, 1e-10);
  }

  const Tensor<double> one(Shape{9}, 1.0), zero(Shape{9}, 0.0);
  auto [xh, ch] = kernels::layernorm_forward<double, double>(x, one, zero, 0.0);
  const auto gh = grad::layernorm_backward<double, double>(xh, x, one, ch);
  for (double v : gh.dx.storage()) EXPECT_NEAR(v, 0.0, 1e-8);
}

TEST(LayerNormBackward, RearrangedEqualsTextbookForm) {
  for (std::size_t m : {3u, 8u, 16u, 64u}) {
    const auto x = rnd(Shape{33, m}, m, -3, 3), w = rnd(Shape{m}, m + 1, 0.5, 1.5), dy = rnd(Shape{33, m}, m + 2);
    auto [y, c] = kernels::layernorm_forward<double, double>(x, w, Tensor<double>(Shape{m}));
    const auto g = grad::layernorm_backward<double, double>(dy, x, w, c);
    EXPECT_LE(oracle::relative_error(g.dx.storage(), textbook_ln_dx(x, w, dy, kernels::kDefaultLayerNormEps)), 1e-12)
        << m;
  }
}

TEST(LayerNormBackward, RandomRowMatchesDifferences) {
  const auto x = rnd(Shape{1, 8}, 31, -2, 2), w = rnd(Shape{8}, 32, 0.5, 1.5), dy = rnd(Shape{1, 8}, 33);
  const Tensor<double> b(Shape{8});
  auto [y, c] = kernels::layernorm_forward<double, double>(x, w, b);
  const auto g = grad::layernorm_backward<double, double>(dy, x, w, c);
  const auto fd = oracle::fd_grad(
      [&](const std::vector<double>& v) {
        auto [yy, cc] = kernels::layernorm_forward<double, double>(Tensor<double>(Shape{1, 8}, v), w, b);
        double s = 0;
        for (std::size_t i = 0; i < 8; ++i) s += yy[i] * dy[i];
        return s;
      },
      x.storage());
  EXPECT_LE(oracle::relative_error(g.dx.storage(), fd), 1e-5);
}

// Two-wide rows saturate to +-1 and the input gradient collapses to an eps
// effect with curvature on a sqrt(eps) scale, so relative error against
// differences is meaningless. Absolute bounds against both oracles instead.
TEST(LayerNormBackward, TwoWideRows) {
  const auto x = rnd(Shape{16, 2}, 41, -2, 2), w = rnd(Shape{2}, 42, 0.5, 1.5), dy = rnd(Shape{16, 2}, 43);
  const Tensor<double> b(Shape{2});
  auto [y, c] = kernels::layernorm_forward<double, double>(x, w, b);
  const auto g = grad::layernorm_backward<double, double>(dy, x, w, c);
  const auto direct = textbook_ln_dx(x, w, dy, kernels::kDefaultLayerNormEps);
  const auto fd = oracle::fd_grad(
      [&](const std::vector<double>& v) {
        auto [yy, cc] = kernels::layernorm_forward<double, double>(Tensor<double>(Shape{16, 2}, v), w, b);
        double s = 0;
        for (std::size_t i = 0; i < yy.numel(); ++i) s += yy[i] * dy[i];
        return s;
      },
      x.storage());
  for (std::size_t i = 0; i < fd.size(); ++i) {
    EXPECT_NEAR(g.dx[i], direct[i], 1e-10);
    EXPECT_NEAR(g.dx[i], fd[i], 1e-6);
  }
}

TEST(LayerNormBackward, ParameterGradients) {
  const auto x = rnd(Shape{5, 4}, 51, -2, 2), w = rnd(Shape{4}, 52), dy = rnd(Shape{5, 4}, 53);
  auto [y, c] = kernels::layernorm_forward<double, double>(x, w, Tensor<double>(Shape{4}));
  const auto g = grad::layernorm_backward<double, double>(dy, x, w, c);
  for (std::size_t j = 0; j < 4; ++j) {
    double dw = 0, db = 0;
    for (std::size_t r = 0; r < 5; ++r) {
      dw += dy[r * 4 + j] * (x[r * 4 + j] - c.mu[r]) / c.sigma[r];
      db += dy[r * 4 + j];
    }
    EXPECT_NEAR(g.dw[j], dw, 1e-14);
    EXPECT_NEAR(g.db[j], db, 1e-14);
  }
}

// ---- element-wise tails ----

TEST(ResidualBackward, NoDropoutAndFullDrop) {
  const auto dy = rnd(Shape{3, 4}, 61);
  const auto g = grad::bias_dropout_residual_backward<double>(dy, kernels::make_dropout_mask(dy.shape(), 0.0, 0));
  EXPECT_EQ(g.dx.storage(), dy.storage());
  EXPECT_EQ(g.dresidual.storage(), dy.storage());
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(g.dbias[j], dy[j] + dy[4 + j] + dy[8 + j], 1e-15);

  kernels::DropoutMask none{Tensor<std::uint8_t>(dy.shape()), 0.4};
  const auto z = grad::bias_dropout_residual_backward<double>(dy, none);
  for (double v : z.dx.storage()) EXPECT_EQ(v, 0.0);
  for (double v : z.dbias.storage()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(z.dresidual.storage(), dy.storage());
}

TEST(ReluBackward, MaskCases) {
  const auto dy = rnd(Shape{2, 3}, 71);
  kernels::ReluDropoutMasks open{kernels::make_dropout_mask(dy.shape(), 0.0, 0), Tensor<std::uint8_t>(dy.shape(), 1)};
  EXPECT_EQ(grad::bias_relu_dropout_backward<double>(dy, open).dx.storage(), dy.storage());
  kernels::ReluDropoutMasks shut{kernels::make_dropout_mask(dy.shape(), 0.0, 0), Tensor<std::uint8_t>(dy.shape(), 0)};
  const auto closed = grad::bias_relu_dropout_backward<double>(dy, shut);
  for (double v : closed.dx.storage()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, ThreadCountDoesNotChangeResults) {
  const std::size_t saved = num_threads();
  const kernels::EmbeddingConfig cfg{1.0f, 50, 40, true};
  std::vector<std::int32_t> tokens(160);
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<std::int32_t>(CounterRng{3}.below(i, 50));
  const auto dy = rnd(Shape{4, 40, 24}, 81);
  const auto x = rnd(Shape{160, 24}, 82), w = rnd(Shape{24}, 83);
  const auto mask = kernels::make_dropout_mask(dy.shape(), 0.2, 5);
  auto run = [&] {
    auto [y, c] = kernels::layernorm_forward<double, double>(x, w, Tensor<double>(Shape{24}));
    const auto ln = grad::layernorm_backward<double, double>(Tensor<double>(Shape{160, 24}, dy.storage()), x, w, c);
    const auto em = grad::embedding_backward<double>(dy, tokens, 4, 40, mask, cfg);
    std::vector<double> out = ln.dx.storage();
    for (const auto* t : {&ln.dw, &ln.db, &em.dtable, &*em.dpos}) out.insert(out.end(), t->storage().begin(), t->storage().end());
    return out;
  };
  set_num_threads(1);
  const auto one = run();
  set_num_threads(3);
  EXPECT_EQ(run(), one);
  set_num_threads(saved);
}
