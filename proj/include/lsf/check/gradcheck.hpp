#pragma once

// Finite-difference checks of the fused backward kernels.
//
// Each instance draws a random small problem (dims <= 16), runs the fused
// forward and backward in binary64 against a random upstream gradient dy,
// and compares every input gradient with central differences of
// f = <dy, y>, where y comes from the oracle's unfused forward. The error
// of an instance is the worst per-tensor relative_error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lsf/gradients/criterion.hpp"
#include "lsf/gradients/elementwise.hpp"
#include "lsf/gradients/embedding.hpp"
#include "lsf/gradients/layernorm.hpp"
#include "lsf/gradients/softmax.hpp"
#include "lsf/kernels/criterion.hpp"
#include "lsf/kernels/elementwise.hpp"
#include "lsf/kernels/embedding.hpp"
#include "lsf/kernels/layernorm.hpp"
#include "lsf/kernels/softmax.hpp"
#include "lsf/memplan/arena.hpp"
#include "lsf/model/cross_kv.hpp"
#include "lsf/model/transformer.hpp"
#include "lsf/numerics/rng.hpp"
#include "lsf/oracle/fd.hpp"
#include "lsf/oracle/reference.hpp"
#include "lsf/oracle/tape.hpp"

namespace lsf::check {

using oracle::Id;
using oracle::Tape;

inline const std::vector<std::string>& op_names() {
  static const std::vector<std::string> names = {
      "embedding_backward",           "ls_cross_entropy_backward",  "softmax_backward",
      "layernorm_backward",           "bias_dropout_residual_backward", "bias_relu_dropout_backward",
      "packed_kv_backward"};
  return names;
}

inline constexpr double kOpTolerance = 1e-5;
inline constexpr double kModelTolerance = 1e-4;

struct Draw {
  std::uint64_t seed;
  std::uint64_t next = 0;

  double uniform(double lo, double hi) { return lo + (hi - lo) * rand_uniform(seed, next++); }
  std::size_t between(std::size_t lo, std::size_t hi) {  // inclusive
    return lo + static_cast<std::size_t>(rand_uniform(seed, next++) * static_cast<double>(hi - lo + 1));
  }
  std::vector<double> vec(std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return v;
  }
  Tensor<double> tensor(const Shape& s, double lo = -1.0, double hi = 1.0) { return Tensor<double>(s, vec(s.numel(), lo, hi)); }
  double drop() { return between(0, 3) == 0 ? 0.0 : uniform(0.05, 0.5); }
};

// One differentiated input: values the oracle reads, analytic gradient, and
// elements excluded from comparison (ReLU kinks).
struct Probe {
  std::string name;
  std::vector<double>* values;
  std::vector<double> analytic;
  std::vector<bool> excluded;
};

inline double compare(std::vector<Probe>& probes, const std::function<double()>& f, bool flip,
                      const oracle::FdConfig& fd = {}) {
  double worst = 0.0;
  for (auto& p : probes) {
    std::vector<double>& x = *p.values;
    const auto fx = [&](const std::vector<double>& v) {
      const std::vector<double> saved = x;
      x = v;
      const double r = f();
      x = saved;
      return r;
    };
    std::vector<double> num = oracle::fd_grad(fx, x, fd);
    std::vector<double> ana = p.analytic;
    if (flip)
      for (double& g : ana) g = -g;
    for (std::size_t i = 0; i < p.excluded.size() && i < num.size(); ++i)
      if (p.excluded[i]) ana[i] = num[i];
    worst = std::max(worst, oracle::relative_error(ana, num, 1e-8));
  }
  return worst;
}

inline std::vector<double> to_vec(const Tensor<double>& t) { return t.storage(); }

inline double check_embedding(std::uint64_t seed, bool flip) {
  Draw r{seed};
  const std::size_t v = r.between(4, 16), d = r.between(1, 16), batch = r.between(1, 4), len = r.between(1, 8);
  const std::size_t max_len = len + r.between(0, 3);
  const bool learned = r.between(0, 1) == 1;
  const double p = r.drop();
  kernels::EmbeddingConfig cfg{static_cast<float>(r.uniform(0.5, 4.0)), v, max_len, learned};
  std::vector<std::int32_t> tokens(batch * len);
  for (auto& t : tokens) t = static_cast<std::int32_t>(r.between(0, v - 1));
  Tensor<double> table = r.tensor(Shape{v, d}), pos = r.tensor(Shape{max_len, d});
  const std::uint64_t dseed = seed * 31 + 7;
  const auto [y, mask] = kernels::embedding_forward<double, double>(table, pos, tokens, batch, len, cfg, p, dseed);
  const Tensor<double> dy = r.tensor(y.shape());
  const auto g = grad::embedding_backward<double>(dy, tokens, batch, len, mask, cfg);

  std::vector<double> tv = to_vec(table), pv = to_vec(pos);
  const double s = cfg.scale;  // the kernel's scale is binary32
  auto f = [&] {
    Tape t;
    const Id a = t.leaf(v, d, tv), b = t.leaf(max_len, d, pv);
    const Id out = oracle::reference_embedding(t, a, b, tokens, len, s, p, dseed);
    return t.scalar(oracle::weighted_sum(t, out, dy.storage()));
  };
  std::vector<Probe> probes{{"table", &tv, to_vec(g.dtable), {}}};
  if (learned) probes.push_back({"positions", &pv, to_vec(*g.dpos), {}});
  return compare(probes, f, flip);
}

inline double check_criterion(std::uint64_t seed, bool flip) {
  Draw r{seed};
  const std::size_t rows = r.between(1, 16), v = r.between(2, 16);
  const double alpha = r.between(0, 3) == 0 ? 0.0 : r.uniform(0.0, 1.0);
  const bool use_pad = r.between(0, 1) == 1;
  const std::int32_t pad = 0;
  std::vector<std::int32_t> targets(rows);
  for (auto& t : targets) t = static_cast<std::int32_t>(r.between(0, v - 1));
  if (use_pad && rows > 1) targets[0] = pad;  // at least one padded row
  const std::optional<std::int32_t> pad_id = use_pad ? std::optional<std::int32_t>(pad) : std::nullopt;
  Tensor<double> h = r.tensor(Shape{rows, v}, -3.0, 3.0);
  const Tensor<double> logq = kernels::log_softmax_forward<double>(h);
  Tensor<double> q(logq.shape());
  for (std::size_t i = 0; i < q.numel(); ++i) q[i] = std::exp(logq[i]);
  const Tensor<double> dh = grad::ls_cross_entropy_backward<double>(q, targets, alpha, pad_id);

  std::vector<double> hv = to_vec(h);
  auto f = [&] {
    Tape t;
    const Id a = t.leaf(rows, v, hv);
    return t.scalar(oracle::smoothed_nll(t, oracle::log_softmax(t, a), targets, alpha, pad_id));
  };
  std::vector<Probe> probes{{"logits", &hv, to_vec(dh), {}}};
  return compare(probes, f, flip);
}

inline double check_softmax(std::uint64_t seed, bool flip) {
  Draw r{seed};
  const std::size_t batch = r.between(1, 3), lq = r.between(1, 8);
  const bool causal = r.between(0, 1) == 1;
  const std::size_t lk = causal ? lq : r.between(1, 16);
  kernels::AttentionMask mask;
  mask.causal = causal;
  if (r.between(0, 1) == 1)
    for (std::size_t b = 0; b < batch; ++b) mask.valid_len.push_back(static_cast<std::int32_t>(r.between(1, lk)));
  const auto strategy = r.between(0, 1) ? kernels::SoftmaxStrategy::RowSerial : kernels::SoftmaxStrategy::RowParallelTree;
  Tensor<double> x = r.tensor(Shape{batch, lq, lk}, -3.0, 3.0);
  const auto [y, cache] = kernels::softmax_forward<double>(x, mask, strategy);
  const Tensor<double> dy = r.tensor(y.shape());
  const Tensor<double> dx = grad::softmax_backward<double>(dy, cache);

  // allowed pattern derived here, independently of the kernel's row mask
  std::vector<std::uint8_t> allowed(batch * lq * lk, 0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < lq; ++i)
      for (std::size_t j = 0; j < lk; ++j) {
        bool ok = !causal || j <= i;
        if (!mask.valid_len.empty()) ok = ok && static_cast<std::int32_t>(j) < mask.valid_len[b];
        allowed[(b * lq + i) * lk + j] = ok;
      }
  std::vector<double> xv = to_vec(x);
  auto f = [&] {
    Tape t;
    const Id a = t.leaf(batch * lq, lk, xv);
    return t.scalar(oracle::weighted_sum(t, oracle::softmax(t, a, allowed), dy.storage()));
  };
  std::vector<Probe> probes{{"x", &xv, to_vec(dx), {}}};
  return compare(probes, f, flip);
}

inline double check_layernorm(std::uint64_t seed, bool flip) {
  Draw r{seed};
  // m = 2 saturates to +-1 and leaves an O(eps) input gradient that sits at
  // the central-difference noise floor; covered by an absolute test instead
  const std::size_t rows = r.between(1, 16), m = r.between(3, 16);
  const double eps = 1e-5;
  Tensor<double> x = r.tensor(Shape{rows, m}, -2.0, 2.0), w = r.tensor(Shape{m}, 0.5, 1.5), b = r.tensor(Shape{m});
  const auto [y, cache] = kernels::layernorm_forward<double, double>(x, w, b, eps);
  const Tensor<double> dy = r.tensor(y.shape());
  const auto g = grad::layernorm_backward<double, double>(dy, x, w, cache);

  std::vector<double> xv = to_vec(x), wv = to_vec(w), bv = to_vec(b);
  auto f = [&] {
    Tape t;
    const Id a = t.leaf(rows, m, xv), ww = t.leaf(1, m, wv), bb = t.leaf(1, m, bv);
    return t.scalar(oracle::weighted_sum(t, oracle::layernorm(t, a, ww, bb, eps), dy.storage()));
  };
  std::vector<Probe> probes{{"x", &xv, to_vec(g.dx), {}}, {"w", &wv, to_vec(g.dw), {}}, {"b", &bv, to_vec(g.db), {}}};
  return compare(probes, f, flip);
}

inline double check_bias_dropout_residual(std::uint64_t seed, bool flip) {
  Draw r{seed};
  const std::size_t rows = r.between(1, 16), c = r.between(1, 16);
  const double p = r.drop();
  const std::uint64_t dseed = seed * 17 + 3;
  Tensor<double> x = r.tensor(Shape{rows, c}), bias = r.tensor(Shape{c}), res = r.tensor(Shape{rows, c});
  const auto [y, mask] = kernels::bias_dropout_residual<double, double>(x, bias, res, p, dseed);
  const Tensor<double> dy = r.tensor(y.shape());
  const auto g = grad::bias_dropout_residual_backward<double>(dy, mask);

  std::vector<double> xv = to_vec(x), bv = to_vec(bias), rv = to_vec(res);
  auto f = [&] {
    Tape t;
    const Id a = t.leaf(rows, c, xv), bb = t.leaf(1, c, bv), rr = t.leaf(rows, c, rv);
    const Id out = oracle::reference_residual(t, rr, oracle::add_row(t, a, bb), p, dseed);
    return t.scalar(oracle::weighted_sum(t, out, dy.storage()));
  };
  std::vector<Probe> probes{{"x", &xv, to_vec(g.dx), {}},
                            {"bias", &bv, to_vec(g.dbias), {}},
                            {"residual", &rv, to_vec(g.dresidual), {}}};
  return compare(probes, f, flip);
}

inline double check_bias_relu_dropout(std::uint64_t seed, bool flip, double kink_radius = 1e-4) {
  Draw r{seed};
  const std::size_t rows = r.between(1, 16), c = r.between(1, 16);
  const double p = r.drop();
  const std::uint64_t dseed = seed * 13 + 5;
  Tensor<double> x = r.tensor(Shape{rows, c}), bias = r.tensor(Shape{c});
  const auto [y, masks] = kernels::bias_relu_dropout<double, double>(x, bias, p, dseed);
  const Tensor<double> dy = r.tensor(y.shape());
  const auto g = grad::bias_relu_dropout_backward<double>(dy, masks);

  std::vector<bool> ex(rows * c, false), exb(c, false);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < c; ++j)
      if (std::abs(x[i * c + j] + bias[j]) < kink_radius) ex[i * c + j] = exb[j] = true;
  std::vector<double> xv = to_vec(x), bv = to_vec(bias);
  auto f = [&] {
    Tape t;
    const Id a = t.leaf(rows, c, xv), bb = t.leaf(1, c, bv);
    const Id act = oracle::relu(t, oracle::add_row(t, a, bb));
    const Id out = oracle::mul_const(t, act, oracle::dropout_multipliers(dseed, rows * c, p));
    return t.scalar(oracle::weighted_sum(t, out, dy.storage()));
  };
  std::vector<Probe> probes{{"x", &xv, to_vec(g.dx), ex}, {"bias", &bv, to_vec(g.dbias), exb}};
  return compare(probes, f, flip);
}

inline double check_packed_kv(std::uint64_t seed, bool flip) {
  Draw r{seed};
  const std::size_t heads = r.between(1, 4), dh = r.between(1, 4), d = heads * dh;
  const std::size_t batch = r.between(1, 3), len = r.between(1, 5), layers = r.between(1, 3);
  const std::size_t rows = batch * len, w2 = 2 * layers * d;
  const model::HeadGeometry g{batch, len, heads, dh};
  Tensor<double> x = r.tensor(Shape{rows, d}), w = r.tensor(Shape{w2, d}), b = r.tensor(Shape{w2});

  // upstream gradients in merged [rows, d] layout; head-split copies by index
  std::vector<Tensor<double>> dk_m, dv_m;
  auto split = [&](const Tensor<double>& m) {
    Tensor<double> s(g.split_shape());
    for (std::size_t bi = 0; bi < batch; ++bi)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t l = 0; l < len; ++l)
          for (std::size_t j = 0; j < dh; ++j)
            s[((bi * heads + h) * len + l) * dh + j] = m[(bi * len + l) * d + h * dh + j];
    return s;
  };
  Tensor<double> dkv(Shape{rows, w2});
  model::PackedKvGradients<double> acc(dkv.view(), layers, g);
  for (std::size_t l = 0; l < layers; ++l) {
    dk_m.push_back(r.tensor(Shape{rows, d}));
    dv_m.push_back(r.tensor(Shape{rows, d}));
  }
  for (std::size_t l = layers; l-- > 0;) {
    const Tensor<double> ks = split(dk_m[l]), vs = split(dv_m[l]);
    acc.deposit(l, ks.view(), vs.view());
  }
  Tensor<double> dx(x.shape()), dw(w.shape()), db(b.shape());
  model::packed_kv_backward<double>(acc, TensorView<const double>(x.view()), TensorView<const double>(w.view()), dx.view(), false, dw.view(), db.view());

  std::vector<double> xv = to_vec(x), wv = to_vec(w), bv = to_vec(b);
  auto f = [&] {
    Tape t;
    const Id a = t.leaf(rows, d, xv), ww = t.leaf(w2, d, wv), bb = t.leaf(1, w2, bv);
    double total = 0.0;
    for (std::size_t l = 0; l < layers; ++l) {
      const Id k = oracle::reference_linear(t, a, ww, bb, l * d, d);
      const Id v = oracle::reference_linear(t, a, ww, bb, (layers + l) * d, d);
      total += t.scalar(oracle::weighted_sum(t, k, dk_m[l].storage()));
      total += t.scalar(oracle::weighted_sum(t, v, dv_m[l].storage()));
    }
    return total;
  };
  std::vector<Probe> probes{{"x", &xv, to_vec(dx), {}}, {"w", &wv, to_vec(dw), {}}, {"b", &bv, to_vec(db), {}}};
  return compare(probes, f, flip);
}

inline double check_op(const std::string& op, std::uint64_t seed, bool flip) {
  if (op == "embedding_backward") return check_embedding(seed, flip);
  if (op == "ls_cross_entropy_backward") return check_criterion(seed, flip);
  if (op == "softmax_backward") return check_softmax(seed, flip);
  if (op == "layernorm_backward") return check_layernorm(seed, flip);
  if (op == "bias_dropout_residual_backward") return check_bias_dropout_residual(seed, flip);
  if (op == "bias_relu_dropout_backward") return check_bias_relu_dropout(seed, flip);
  if (op == "packed_kv_backward") return check_packed_kv(seed, flip);
  throw Error(ErrorCode::UnknownName, "no gradient check for '" + op + "'");
}

// Whole model: fused binary64 gradients against central differences of the
// oracle's loss, every parameter element.
inline double check_model(const model::ModelConfig& cfg, const model::Batch& batch, const model::StepOptions& opt,
                          std::uint64_t init_seed, bool flip) {
  model::Transformer<double, double> net(cfg);
  std::vector<Tensor<double>> values = model::init_params(net.schema(), init_seed);
  model::ParamStore<double> store(net.schema(), values);
  memplan::ScratchArena arena(sizeof(double));
  net.forward_backward(batch, opt, store.table(), arena);

  std::vector<Probe> probes;
  for (std::size_t i = 0; i < values.size(); ++i)
    probes.push_back({net.schema().specs[i].name, &values[i].storage(), store.grad(i).storage(), {}});
  model::StepOptions fopt = opt;
  fopt.grad_scale = 1.0;
  auto f = [&] { return oracle::reference_forward_backward(cfg, values, batch, fopt, false).loss * opt.grad_scale; };
  return compare(probes, f, flip);
}

inline model::ModelConfig gradcheck_model_config() {
  model::ModelConfig c;
  c.n_enc = 1;
  c.n_dec = 1;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 12;
  c.vocab = 11;
  c.max_len = 5;
  c.learned_positional = true;
  c.tie_embeddings = false;
  return c;
}

inline model::Batch gradcheck_batch() {
  return model::make_batch({{3, 4, 5, 6}, {7, 8}}, {{3, 5, 10}, {8, 4, 6, 9}}, 0, 1, 2);
}

struct OpReport {
  std::string op;
  double max_rel_error = 0.0;
  double tolerance = kOpTolerance;
  std::size_t instances = 0;
  bool pass() const { return max_rel_error <= tolerance; }
};

inline OpReport run_op(const std::string& op, std::size_t instances, std::uint64_t seed, bool flip) {
  OpReport rep{op, 0.0, kOpTolerance, instances};
  const auto& names = op_names();
  const auto site = static_cast<std::uint64_t>(std::find(names.begin(), names.end(), op) - names.begin());
  for (std::size_t i = 0; i < instances; ++i)
    rep.max_rel_error = std::max(rep.max_rel_error, check_op(op, derive_seed(seed, i, site), flip));
  return rep;
}

}  // namespace lsf::check
