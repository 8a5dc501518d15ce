#pragma once

// Fused kernels versus the unfused tape composition, both binary64.
// Each case returns its outputs so every timed run is also checked for
// agreement.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lsf/check/gradcheck.hpp"
#include "lsf/check/parity.hpp"
#include "lsf/numerics/parallel.hpp"

namespace lsf::check {

inline constexpr double kBenchParityTolerance = 1e-5;

struct BenchCase {
  std::string op;
  std::function<std::vector<double>()> fused, unfused;
};

struct Timing {
  double mean_ms = 0.0, stddev_ms = 0.0;
};

struct BenchEntry {
  std::string op;
  std::size_t threads = 1;
  Timing fused, unfused;
  double parity_error = 0.0;
  bool parity_ok() const { return parity_error <= kBenchParityTolerance; }
  double speedup() const { return fused.mean_ms > 0 ? unfused.mean_ms / fused.mean_ms : 0.0; }
};

struct BenchConfig {
  std::size_t rows = 256;   // activation rows (B*L)
  std::size_t width = 128;  // hidden width
  std::size_t vocab = 512;
  std::size_t warmup = 3;
  std::size_t runs = 10;
};

namespace detail {

inline void append(std::vector<double>& out, const std::vector<double>& v) { out.insert(out.end(), v.begin(), v.end()); }

inline Tensor<double> random(const Shape& s, std::uint64_t seed) {
  Tensor<double> t(s);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = 2.0 * rand_uniform(seed, i) - 1.0;
  return t;
}

}  // namespace detail

inline std::vector<BenchCase> bench_cases(const BenchConfig& bc) {
  using detail::append;
  using detail::random;
  using oracle::Id;
  using oracle::Tape;
  const std::size_t R = bc.rows, C = bc.width, V = bc.vocab;
  std::vector<BenchCase> cases;

  {
    const std::size_t batch = std::max<std::size_t>(1, R / 32), len = R / batch;
    kernels::EmbeddingConfig ec{4.0f, V, len, false};
    auto table = std::make_shared<Tensor<double>>(random(Shape{V, C}, 1));
    auto pos = std::make_shared<Tensor<double>>(random(Shape{len, C}, 2));
    auto dy = std::make_shared<Tensor<double>>(random(Shape{batch * len, C}, 3));
    auto tokens = std::make_shared<std::vector<std::int32_t>>(batch * len);
    for (std::size_t i = 0; i < tokens->size(); ++i) (*tokens)[i] = static_cast<std::int32_t>(CounterRng{4}.below(i, V));
    cases.push_back({"embedding_backward",
                     [=] {
                       auto [y, mask] = kernels::embedding_forward<double, double>(*table, *pos, *tokens, batch, len, ec, 0.1, 5);
                       auto g = grad::embedding_backward<double>(*dy, *tokens, batch, len, mask, ec);
                       std::vector<double> out = y.storage();
                       append(out, g.dtable.storage());
                       return out;
                     },
                     [=] {
                       Tape t;
                       const Id a = oracle::leaf_of(t, *table), b = oracle::leaf_of(t, *pos);
                       const Id y = oracle::reference_embedding(t, a, b, *tokens, len, 4.0, 0.1, 5);
                       t.backward(oracle::weighted_sum(t, y, dy->storage()));
                       std::vector<double> out = t.value(y);
                       append(out, t.grad(a));
                       return out;
                     }});
  }
  {
    auto h = std::make_shared<Tensor<double>>(random(Shape{R, V}, 11));
    auto targets = std::make_shared<std::vector<std::int32_t>>(R);
    for (std::size_t i = 0; i < R; ++i) (*targets)[i] = static_cast<std::int32_t>(CounterRng{12}.below(i, V));
    cases.push_back({"ls_cross_entropy_backward",
                     [=] {
                       Tensor<double> logq = kernels::log_softmax_forward<double>(*h);
                       const auto ce = kernels::ls_cross_entropy_forward<double>(logq, *targets, 0.1, std::nullopt);
                       Tensor<double> dh(h->shape());
                       grad::ls_cross_entropy_backward_into<double, double, double>(logq.view(), *targets, 0.1,
                                                                                    std::nullopt, dh.view(), 1.0, true);
                       std::vector<double> out{ce.loss};
                       append(out, dh.storage());
                       return out;
                     },
                     [=] {
                       Tape t;
                       const Id a = oracle::leaf_of(t, *h);
                       const Id loss = oracle::smoothed_nll(t, oracle::log_softmax(t, a), *targets, 0.1, std::nullopt);
                       t.backward(loss);
                       std::vector<double> out{t.scalar(loss)};
                       append(out, t.grad(a));
                       return out;
                     }});
  }
  {
    const std::size_t len = 32, rows = std::max<std::size_t>(1, R / len) * len;
    auto x = std::make_shared<Tensor<double>>(random(Shape{rows / len, len, len}, 21));
    auto dy = std::make_shared<Tensor<double>>(random(x->shape(), 22));
    auto allowed = std::make_shared<std::vector<std::uint8_t>>(x->numel());
    for (std::size_t i = 0; i < allowed->size(); ++i) (*allowed)[i] = (i % len) <= (i / len) % len;
    cases.push_back({"softmax_backward",
                     [=] {
                       auto [y, cache] = kernels::softmax_forward<double>(*x, kernels::AttentionMask::causal_mask());
                       std::vector<double> out = y.storage();
                       append(out, grad::softmax_backward<double>(*dy, cache).storage());
                       return out;
                     },
                     [=] {
                       Tape t;
                       const Id a = t.leaf(rows, len, x->storage());
                       const Id y = oracle::softmax(t, a, *allowed);
                       t.backward(oracle::weighted_sum(t, y, dy->storage()));
                       std::vector<double> out = t.value(y);
                       append(out, t.grad(a));
                       return out;
                     }});
  }
  {
    auto x = std::make_shared<Tensor<double>>(random(Shape{R, C}, 31));
    auto w = std::make_shared<Tensor<double>>(random(Shape{C}, 32));
    auto b = std::make_shared<Tensor<double>>(random(Shape{C}, 33));
    auto dy = std::make_shared<Tensor<double>>(random(Shape{R, C}, 34));
    cases.push_back({"layernorm_backward",
                     [=] {
                       auto [y, cache] = kernels::layernorm_forward<double, double>(*x, *w, *b);
                       auto g = grad::layernorm_backward<double, double>(*dy, *x, *w, cache);
                       std::vector<double> out = y.storage();
                       append(out, g.dx.storage());
                       append(out, g.dw.storage());
                       append(out, g.db.storage());
                       return out;
                     },
                     [=] {
                       Tape t;
                       const Id a = oracle::leaf_of(t, *x), ww = t.leaf(1, C, w->storage()), bb = t.leaf(1, C, b->storage());
                       const Id y = oracle::layernorm(t, a, ww, bb, kernels::kDefaultLayerNormEps);
                       t.backward(oracle::weighted_sum(t, y, dy->storage()));
                       std::vector<double> out = t.value(y);
                       append(out, t.grad(a));
                       append(out, t.grad(ww));
                       append(out, t.grad(bb));
                       return out;
                     }});
  }
  {
    auto x = std::make_shared<Tensor<double>>(random(Shape{R, C}, 41));
    auto bias = std::make_shared<Tensor<double>>(random(Shape{C}, 42));
    auto res = std::make_shared<Tensor<double>>(random(Shape{R, C}, 43));
    auto dy = std::make_shared<Tensor<double>>(random(Shape{R, C}, 44));
    cases.push_back({"bias_dropout_residual_backward",
                     [=] {
                       auto [y, mask] = kernels::bias_dropout_residual<double, double>(*x, *bias, *res, 0.1, 45);
                       auto g = grad::bias_dropout_residual_backward<double>(*dy, mask);
                       std::vector<double> out = y.storage();
                       append(out, g.dx.storage());
                       append(out, g.dbias.storage());
                       return out;
                     },
                     [=] {
                       Tape t;
                       const Id a = oracle::leaf_of(t, *x), bb = t.leaf(1, C, bias->storage()), rr = oracle::leaf_of(t, *res);
                       const Id y = oracle::reference_residual(t, rr, oracle::add_row(t, a, bb), 0.1, 45);
                       t.backward(oracle::weighted_sum(t, y, dy->storage()));
                       std::vector<double> out = t.value(y);
                       append(out, t.grad(a));
                       append(out, t.grad(bb));
                       return out;
                     }});
    cases.push_back({"bias_relu_dropout_backward",
                     [=] {
                       auto [y, masks] = kernels::bias_relu_dropout<double, double>(*x, *bias, 0.1, 46);
                       auto g = grad::bias_relu_dropout_backward<double>(*dy, masks);
                       std::vector<double> out = y.storage();
                       append(out, g.dx.storage());
                       append(out, g.dbias.storage());
                       return out;
                     },
                     [=] {
                       Tape t;
                       const Id a = oracle::leaf_of(t, *x), bb = t.leaf(1, C, bias->storage());
                       const Id act = oracle::relu(t, oracle::add_row(t, a, bb));
                       const Id y = oracle::mul_const(t, act, oracle::dropout_multipliers(46, R * C, 0.1));
                       t.backward(oracle::weighted_sum(t, y, dy->storage()));
                       std::vector<double> out = t.value(y);
                       append(out, t.grad(a));
                       append(out, t.grad(bb));
                       return out;
                     }});
  }
  {
    const std::size_t layers = 4, heads = 4, batch = std::max<std::size_t>(1, R / 32), len = R / batch;
    const std::size_t d = C, rows = batch * len;
    const model::HeadGeometry g{batch, len, heads, d / heads};
    auto x = std::make_shared<Tensor<double>>(random(Shape{rows, d}, 51));
    auto w = std::make_shared<Tensor<double>>(random(Shape{2 * layers * d, d}, 52));
    auto b = std::make_shared<Tensor<double>>(random(Shape{2 * layers * d}, 53));
    auto dkv_m = std::make_shared<Tensor<double>>(random(Shape{rows, 2 * layers * d}, 54));
    cases.push_back({"packed_kv_backward",
                     [=] {
                       Tensor<double> kv(Shape{rows, 2 * layers * d}), dkv(kv.shape());
                       model::packed_kv_project<double, double, double>(TensorView<const double>(x->view()),
                                                                        TensorView<const double>(w->view()), kv.view());
                       model::PackedKvGradients<double> acc(dkv.view(), layers, g);
                       std::vector<double> out;
                       Tensor<double> k(g.split_shape()), v(g.split_shape()), dk(g.split_shape()), dv(g.split_shape());
                       for (std::size_t l = 0; l < layers; ++l) {
                         model::packed_kv_split<double, double>(TensorView<const double>(kv.view()), TensorView<const double>(b->view()),
                                                                l, layers, g, k.view(), v.view());
                         model::split_heads<double, double, double>(TensorView<const double>(dkv_m->view()), l * d, nullptr, g, dk.view());
                         model::split_heads<double, double, double>(TensorView<const double>(dkv_m->view()), (layers + l) * d, nullptr, g, dv.view());
                         acc.deposit(l, dk.view(), dv.view());
                       }
                       // forward outputs in merged packed layout
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < 2 * layers * d; ++j) out.push_back(kv[r * 2 * layers * d + j] + (*b)[j]);
                       Tensor<double> dx(x->shape()), dw(w->shape()), db(b->shape());
                       model::packed_kv_backward<double>(acc, TensorView<const double>(x->view()),
                                                         TensorView<const double>(w->view()), dx.view(), false,
                                                         dw.view(), db.view());
                       append(out, dx.storage());
                       append(out, dw.storage());
                       return out;
                     },
                     [=] {
                       Tape t;
                       const Id a = oracle::leaf_of(t, *x), ww = oracle::leaf_of(t, *w), bb = t.leaf(1, 2 * layers * d, b->storage());
                       std::vector<Id> parts;
                       for (std::size_t l = 0; l < 2 * layers; ++l) parts.push_back(oracle::reference_linear(t, a, ww, bb, l * d, d));
                       const Id kv = oracle::concat_cols(t, parts);
                       t.backward(oracle::weighted_sum(t, kv, dkv_m->storage()));
                       std::vector<double> out = t.value(kv);
                       append(out, t.grad(a));
                       append(out, t.grad(ww));
                       return out;
                     }});
  }
  {
    model::ModelConfig cfg;
    cfg.n_enc = 1;
    cfg.n_dec = 1;
    cfg.d_model = std::min<std::size_t>(C, 64);
    cfg.n_heads = 4;
    cfg.d_ff = 2 * cfg.d_model;
    cfg.vocab = 16;
    cfg.max_len = 32;
    std::vector<std::vector<std::int32_t>> seqs(std::max<std::size_t>(1, R / 64), std::vector<std::int32_t>(16, 5));
    const model::Batch batch = model::make_batch(seqs, seqs, 0, 1, 2);
    const model::StepOptions opt{0.1, 0.1, 7, 0, 1.0};
    for (bool decoder : {false, true}) {
      auto fx = std::make_shared<LayerFixture>(make_layer_fixture(cfg, batch, opt, 8, decoder));
      cases.push_back({decoder ? "decoder_layer" : "encoder_layer",
                       [=] {
                         model::Transformer<double, double> net(fx->cfg);
                         model::ParamStore<double> store(net.schema(), fx->values);
                         memplan::ScratchArena arena(sizeof(double));
                         const auto p = decoder ? net.decoder_layer(fx->batch, fx->opt, store.table(), arena, 0,
                                                                    fx->x.view(), fx->memory.view(), fx->dy.view())
                                                : net.encoder_layer(fx->batch, fx->opt, store.table(), arena, 0,
                                                                    fx->x.view(), fx->dy.view());
                         std::vector<double> out = p.y.storage();
                         append(out, p.dx.storage());
                         return out;
                       },
                       [=] {
                         oracle::Tape t;
                         std::vector<oracle::Id> ids;
                         for (const auto& v : fx->values) ids.push_back(oracle::leaf_of(t, v));
                         const oracle::LayerContext c{fx->cfg, fx->batch, fx->opt, ids};
                         const model::Schema sc = model::make_schema(fx->cfg);
                         const Id x = oracle::leaf_of(t, fx->x);
                         const Id y = decoder ? oracle::reference_decoder_layer(t, x, oracle::leaf_of(t, fx->memory), 0, sc, c)
                                              : oracle::reference_encoder_layer(t, x, 0, sc, c);
                         t.backward(oracle::weighted_sum(t, y, fx->dy.storage()));
                         std::vector<double> out = t.value(y);
                         append(out, t.grad(x));
                         return out;
                       }});
    }
  }
  return cases;
}

inline Timing time_runs(const std::function<std::vector<double>()>& fn, const BenchConfig& bc,
                        const std::vector<double>* reference, double& worst_parity) {
  for (std::size_t i = 0; i < bc.warmup; ++i) fn();
  std::vector<double> ms;
  for (std::size_t i = 0; i < bc.runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> out = fn();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    if (reference) worst_parity = std::max(worst_parity, oracle::relative_error(out, *reference));
  }
  Timing t;
  for (double v : ms) t.mean_ms += v;
  t.mean_ms /= static_cast<double>(ms.size());
  for (double v : ms) t.stddev_ms += (v - t.mean_ms) * (v - t.mean_ms);
  t.stddev_ms = ms.size() > 1 ? std::sqrt(t.stddev_ms / static_cast<double>(ms.size() - 1)) : 0.0;
  return t;
}

// Unfused timings are taken once (single-threaded by construction); fused
// timings at each requested thread count.
inline std::vector<BenchEntry> run_bench(const BenchConfig& bc, const std::vector<std::size_t>& thread_counts) {
  std::vector<BenchEntry> out;
  const std::size_t restore = num_threads();
  for (const auto& c : bench_cases(bc)) {
    const std::vector<double> reference = c.unfused();
    double unused = 0.0;
    const Timing unfused = time_runs(c.unfused, bc, nullptr, unused);
    for (std::size_t th : thread_counts) {
      set_num_threads(th);
      BenchEntry e{c.op, th, {}, unfused, 0.0};
      e.fused = time_runs(c.fused, bc, &reference, e.parity_error);
      out.push_back(e);
    }
  }
  set_num_threads(restore);
  return out;
}

}  // namespace lsf::check
