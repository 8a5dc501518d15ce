// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances are pinned here and never adjusted per run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "lsf/check/bench.hpp"
#include "lsf/check/gradcheck.hpp"
#include "lsf/check/parity.hpp"
#include "lsf/memplan/attention_bwd.hpp"
#include "lsf/memplan/simulate.hpp"
#include "lsf/oracle/reference_trainer.hpp"
#include "lsf/trainer/session.hpp"

using namespace lsf;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor<double> uniform(const Shape& s, std::uint64_t seed, double lo, double hi) {
  Tensor<double> t(s);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = lo + (hi - lo) * rand_uniform(seed, i);
  return t;
}

std::vector<std::uint16_t> bits_of(const std::vector<Half>& v) {
  std::vector<std::uint16_t> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i].bits;
  return out;
}

// ---------------------------------------------------------------- 1

Verdict gradient_fidelity() {
  const auto t0 = Clock::now();
  Verdict v;
  double worst = 0.0;
  std::string worst_op;
  for (const auto& op : check::op_names()) {
    const auto r = check::run_op(op, 100, 20240607, false);
    if (!r.pass()) {
      v.pass = false;
      v.detail += op + " " + fmt("%.3g", r.max_rel_error) + "; ";
    }
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_op = op;
    }
  }
  const double secs = seconds_since(t0);
  if (secs >= 60.0) v.pass = false;
  v.detail += fmt("7 ops x 100 instances, worst %.3g (%s) <= 1e-5, %.1f s < 60 s", worst, worst_op.c_str(), secs);
  return v;
}

// ---------------------------------------------------------------- 2

Verdict layernorm_identity() {
  double worst_rel = 0.0, worst_sum = 0.0;
  for (std::size_t row = 0; row < 1000; ++row) {
    const CounterRng r{derive_seed(77, row, 0)};
    const std::size_t m = 3 + r.below(0, 62);
    const auto x = uniform(Shape{1, m}, derive_seed(77, row, 1), -3, 3);
    const auto w = uniform(Shape{m}, derive_seed(77, row, 2), -2, 2);
    const auto b = uniform(Shape{m}, derive_seed(77, row, 3), -1, 1);
    const auto dy = uniform(Shape{1, m}, derive_seed(77, row, 4), -1, 1);
    auto [y, cache] = kernels::layernorm_forward<double, double>(x, w, b);
    const auto g = grad::layernorm_backward<double, double>(dy, x, w, cache);

    oracle::Tape t;
    const auto xi = oracle::leaf_of(t, x), wi = oracle::leaf_of(t, w), bi = oracle::leaf_of(t, b);
    const auto yi = oracle::layernorm(t, xi, wi, bi, kernels::kDefaultLayerNormEps);
    t.backward(oracle::weighted_sum(t, yi, dy.storage()));
    worst_rel = std::max({worst_rel, oracle::relative_error(g.dx.storage(), t.grad(xi)),
                          oracle::relative_error(g.dw.storage(), t.grad(wi)),
                          oracle::relative_error(g.db.storage(), t.grad(bi))});
    double s = 0.0;
    for (double e : g.dx.storage()) s += e;
    worst_sum = std::max(worst_sum, std::abs(s));
  }
  return {worst_rel <= 1e-12 && worst_sum <= 1e-10,
          fmt("1000 rows (m in [3, 64]): rearranged vs direct %.3g <= 1e-12, |sum dx| %.3g <= 1e-10", worst_rel,
              worst_sum)};
}

// ---------------------------------------------------------------- 3

Verdict criterion_identities() {
  double row_sum = 0.0, nll = 0.0, uni = 0.0;
  for (std::uint64_t k = 0; k < 200; ++k) {
    const CounterRng r{derive_seed(5, k, 0)};
    const std::size_t rows = 1 + r.below(0, 20), v = 2 + r.below(1, 39);
    const double alpha = r(2);
    const auto h = uniform(Shape{rows, v}, derive_seed(5, k, 1), -5, 5);
    std::vector<std::int32_t> targets(rows);
    for (std::size_t i = 0; i < rows; ++i) targets[i] = static_cast<std::int32_t>(r.below(10 + i, v));
    const auto logq = kernels::log_softmax_forward<double>(h);
    Tensor<double> q(logq.shape());
    for (std::size_t i = 0; i < q.numel(); ++i) q[i] = std::exp(logq[i]);

    const auto dh = grad::ls_cross_entropy_backward<double>(q, targets, alpha);
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < v; ++j) s += dh[i * v + j];
      row_sum = std::max(row_sum, std::abs(s));
    }

    double direct = 0.0;
    for (std::size_t i = 0; i < rows; ++i) direct -= logq[i * v + static_cast<std::size_t>(targets[i])];
    const double got = kernels::ls_cross_entropy_forward<double>(logq, targets, 0.0).loss;
    nll = std::max(nll, std::abs(got - direct) / std::max(1.0, std::abs(direct)));

    const auto lz = kernels::log_softmax_forward<double>(Tensor<double>(Shape{rows, v}));
    for (double a : {0.0, alpha, 1.0}) {
      const auto res = kernels::ls_cross_entropy_forward<double>(lz, targets, a);
      uni = std::max(uni, std::abs(res.loss / static_cast<double>(res.token_count) - std::log(static_cast<double>(v))));
    }
  }
  return {row_sum <= 1e-12 && nll <= 1e-12 && uni <= 1e-12,
          fmt("200 cases: row sums %.3g, alpha=0 vs NLL %.3g, uniform vs ln V %.3g (all <= 1e-12)", row_sum, nll, uni)};
}

// ---------------------------------------------------------------- 4

// Fused binary32/binary16 training against the binary64 oracle driving a
// reference trainer, same data, seeds and schedule.
double trajectory_gap(std::size_t steps) {
  io::RunConfig cfg;
  cfg.train.steps = 2000;
  trainer::Session s(cfg);
  const auto& schema = s.net().schema();
  oracle::ReferenceTrainer ref;
  for (const auto& l : s.workspace().links()) {
    const auto p = s.workspace().param(l);
    ref.add(l.name, std::vector<Half>(p.data(), p.data() + p.numel()));
  }
  Tensor<double> sinus(s.net().sinusoid().shape());
  for (std::size_t i = 0; i < sinus.numel(); ++i) sinus[i] = half_to_float(s.net().sinusoid()[i]);

  double gap = 0.0;
  for (std::size_t step = 0; step < steps; ++step) {
    const model::Batch& b = s.batch_for(step);
    std::vector<Tensor<double>> values;
    for (std::size_t i = 0; i < schema.size(); ++i) {
      Tensor<double> t(schema.specs[i].shape);
      for (std::size_t j = 0; j < t.numel(); ++j) t[j] = half_to_float(ref.tensors()[i].p16[j]);
      values.push_back(std::move(t));
    }
    const model::StepOptions opt{cfg.train.p_drop, cfg.train.alpha, cfg.train.seed, step, cfg.train.loss_scale};
    const auto r = oracle::reference_forward_backward(cfg.model, values, b, opt, true, &sinus);
    for (std::size_t i = 0; i < schema.size(); ++i)
      for (std::size_t j = 0; j < r.grads[i].numel(); ++j)
        ref.tensors()[i].g16[j] = float_to_half(static_cast<float>(r.grads[i][j]));
    trainer::OptimConfig oc = cfg.optim();
    oc.lr = s.learning_rate(step);
    ref.step(oc, step + 1);

    const auto m = s.train_step();
    gap = std::max(gap, std::abs(m.loss - r.loss / static_cast<double>(r.tokens)));
  }
  return gap;
}

Verdict fused_parity() {
  check::BenchConfig bc;
  bc.rows = 64;
  bc.width = 32;
  bc.vocab = 64;
  double ops = 0.0;
  std::string worst;
  for (const auto& c : check::bench_cases(bc)) {
    const double e = oracle::relative_error(c.fused(), c.unfused());
    if (e >= ops) {
      ops = e;
      worst = c.op;
    }
  }
  double layers = 0.0;
  const auto batch = model::make_batch({{3, 4, 5, 6, 7, 8}, {9, 10, 11}}, {{5, 6, 7}, {12, 13, 3, 4, 5}}, 0, 1, 2);
  model::ModelConfig mc;
  for (double p : {0.0, 0.1}) {
    const model::StepOptions opt{p, 0.1, 11, 2, 1.0};
    const auto fe = check::make_layer_fixture(mc, batch, opt, 3, false);
    const auto fd = check::make_layer_fixture(mc, batch, opt, 4, true);
    for (std::size_t l = 0; l < 2; ++l)
      layers = std::max({layers, check::encoder_layer_parity(fe, l).worst(), check::decoder_layer_parity(fd, l).worst()});
  }
  const double gap = trajectory_gap(50);
  return {ops <= 1e-5 && layers <= 1e-5 && gap <= 1e-3,
          fmt("ops worst %.3g (%s), layers %.3g (<= 1e-5); 50-step loss gap %.3g <= 1e-3", ops, worst.c_str(), layers,
              gap)};
}

// ---------------------------------------------------------------- 5

Verdict cross_attention() {
  const std::size_t n = 3, d = 8, rows = 12;
  const model::HeadGeometry g{2, 6, 2, 4};
  std::vector<Tensor<double>> ks, vs, kb, vb;
  for (std::size_t i = 0; i < n; ++i) {
    ks.push_back(uniform(Shape{d, d}, 10 + i, -1, 1));
    vs.push_back(uniform(Shape{d, d}, 20 + i, -1, 1));
    kb.push_back(uniform(Shape{d}, 30 + i, -1, 1));
    vb.push_back(uniform(Shape{d}, 40 + i, -1, 1));
  }
  const auto pw = model::pack_cross_weights(ks, vs, kb, vb);
  const auto x = uniform(Shape{rows, d}, 50, -1, 1);
  Tensor<double> kv(Shape{rows, 2 * n * d});
  model::packed_kv_project<double, double, double>(x.view(), pw.w.view(), kv.view());
  double fwd = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<double> k(g.split_shape()), v(g.split_shape()), k1(g.split_shape()), v1(g.split_shape());
    model::packed_kv_split<double, double>(kv.view(), pw.b.view(), i, n, g, k.view(), v.view());
    const auto pk = matmul(x, ks[i], false, true), pv = matmul(x, vs[i], false, true);
    model::split_heads<double, double, double>(TensorView<const double>(pk.view()), 0, kb[i].data(), g, k1.view());
    model::split_heads<double, double, double>(TensorView<const double>(pv.view()), 0, vb[i].data(), g, v1.view());
    fwd = std::max({fwd, oracle::relative_error(k.storage(), k1.storage()),
                    oracle::relative_error(v.storage(), v1.storage())});
  }

  model::Transformer<float, Half> net(model::ModelConfig{});
  model::ParamStore<Half> store(net.schema(), model::init_params(net.schema(), 1));
  memplan::ScratchArena arena;
  net.forward_backward(model::make_batch({{3, 4, 5}, {6, 7}}, {{3, 4, 5}, {6, 7}}, 0, 1, 2),
                       model::StepOptions{0.1, 0.1, 1, 0, 1.0}, store.table(), arena);
  const auto& tr = net.trace();
  const auto dec0 = std::find(tr.begin(), tr.end(), "dec0.backward");
  const auto kvb = std::find(tr.begin(), tr.end(), "cross_kv.backward");
  const bool ordered = dec0 != tr.end() && kvb == dec0 + 1 && std::count(tr.begin(), tr.end(), "cross_kv.backward") == 1 &&
                       tr.front() == "dec1.backward";
  bool guarded = false;
  {
    Tensor<double> dkv(Shape{rows, 2 * n * d}), dx(Shape{rows, d}), dw(Shape{2 * n * d, d}), db(Shape{2 * n * d});
    model::PackedKvGradients<double> acc(dkv.view(), n, g);
    acc.deposit(2, Tensor<double>(g.split_shape()).view(), Tensor<double>(g.split_shape()).view());
    try {
      model::packed_kv_backward<double>(acc, x.view(), pw.w.view(), dx.view(), false, dw.view(), db.view());
    } catch (const Error& e) {
      guarded = e.code() == ErrorCode::IncompleteGradientSet;
    }
  }
  const double fd = check::run_op("packed_kv_backward", 100, 99, false).max_rel_error;
  return {fwd <= 1e-6 && ordered && guarded && fd <= 1e-5,
          fmt("packed vs %zu projections %.3g <= 1e-6; encoder gradient after dec0 backward: %s; early use refused: %s; "
              "FD %.3g <= 1e-5",
              n, fwd, ordered ? "yes" : "no", guarded ? "yes" : "no", fd)};
}

// ---------------------------------------------------------------- 6

Verdict planner() {
  std::size_t shapes = 0, bad = 0;
  for (std::size_t b = 1; b <= 8; ++b)
    for (std::size_t h = 4; h <= 64; ++h)
      for (std::size_t l = 2; l <= 32; ++l)
        for (std::size_t n = 1; n <= 8; ++n) {
          const auto lt = memplan::attention_backward_lifetimes({b, h, l, n});
          const std::size_t peak = memplan::plan(lt).peak;
          const std::size_t bhl = b * h * l, bl2n = b * l * l * n;
          ++shapes;
          if (peak != 3 * bhl + std::max(3 * bhl, bl2n) || peak > 9 * bhl + bl2n) ++bad;
        }
  std::size_t unsafe = 0;
  for (std::uint64_t k = 0; k < 1000; ++k) {
    const CounterRng r{derive_seed(31, k, 0)};
    const std::size_t count = 1 + r.below(0, 40);
    std::vector<memplan::Lifetime> lt;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t first = r.below(3 * i + 1, 50);
      lt.push_back({i, 1 + r.below(3 * i + 2, 500), first, first + r.below(3 * i + 3, 12), ""});
    }
    const auto p = memplan::plan(lt);
    if (!memplan::simulate_plan_safety(p, lt).ok || p.peak > memplan::naive_peak(lt)) ++unsafe;
  }
  return {bad == 0 && unsafe == 0,
          fmt("%zu shapes, %zu off the closed form; 1000 fuzzed sets, %zu unsafe", shapes, bad, unsafe)};
}

// ---------------------------------------------------------------- 7

Verdict trainer_equivalence() {
  std::size_t mismatches = 0, skipped = 0;
  for (std::uint64_t k = 0; k < 10000; ++k) {
    const CounterRng r{derive_seed(8, k, 0)};
    std::uint64_t c = 0;
    const std::size_t n = 1 + r.below(c++, 64);
    trainer::OptimConfig oc;
    oc.algorithm = k % 2 ? trainer::Algorithm::SGD : trainer::Algorithm::Adam;
    oc.lr = static_cast<float>(std::pow(10.0, -4 + 3 * r(c++)));
    oc.beta1 = static_cast<float>(0.8 + 0.19 * r(c++));
    oc.beta2 = static_cast<float>(0.9 + 0.0999 * r(c++));
    oc.eps = r(c++) < 0.5 ? 1e-8f : 1e-6f;
    oc.weight_decay = r(c++) < 0.5 ? 0.0f : 0.01f;
    oc.momentum = static_cast<float>(0.95 * r(c++));
    oc.loss_scale = std::ldexp(1.0f, static_cast<int>(r.below(c++, 11)));
    const std::size_t t = 1 + r.below(c++, 2000);
    const bool poison = r.below(c++, 50) == 0;

    std::vector<Half> p16(n), g16(n);
    std::vector<float> m(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
      p16[i] = float_to_half(static_cast<float>(8 * r(c++) - 4));
      g16[i] = float_to_half(static_cast<float>((2 * r(c++) - 1)) * oc.loss_scale);
      m[i] = static_cast<float>(0.2 * r(c++) - 0.1);
      v[i] = static_cast<float>(0.01 * r(c++));
    }
    if (poison) g16[n / 2] = Half::from_bits(0x7C00);

    trainer::Workspace ws = trainer::Workspace::restore({trainer::Link{"p", 0, n, Shape{n}}}, p16, m, v);
    ws.grads16() = g16;
    oracle::ReferenceTrainer ref;
    ref.add("p", p16);
    ref.tensors()[0].g16 = g16;
    ref.tensors()[0].m = m;
    ref.tensors()[0].v = v;

    const bool a = trainer::optimizer_step(ws, oc, t).applied;
    const bool b = ref.step(oc, t);
    skipped += !a;
    const auto& rt = ref.tensors()[0];
    if (a != b || bits_of(ws.params16()) != bits_of(rt.p16) ||
        std::memcmp(ws.moments_m().data(), rt.m.data(), 4 * n) != 0 ||
        (oc.algorithm == trainer::Algorithm::Adam && std::memcmp(ws.moments_v().data(), rt.v.data(), 4 * n) != 0))
      ++mismatches;
  }

  // 100 steps of the tiny model, reference fed the same binary16 gradients
  io::RunConfig cfg;
  trainer::Session s(cfg);
  oracle::ReferenceTrainer ref;
  for (const auto& l : s.workspace().links()) {
    const auto p = s.workspace().param(l);
    ref.add(l.name, std::vector<Half>(p.data(), p.data() + p.numel()));
  }
  std::size_t run_mismatch = 0;
  for (std::size_t step = 0; step < 100; ++step) {
    s.train_step();
    const auto& ws = s.workspace();
    for (std::size_t i = 0; i < ws.links().size(); ++i) {
      const auto& l = ws.links()[i];
      std::copy(ws.grads16().begin() + static_cast<std::ptrdiff_t>(l.offset),
                ws.grads16().begin() + static_cast<std::ptrdiff_t>(l.offset + l.length), ref.tensors()[i].g16.begin());
    }
    trainer::OptimConfig oc = cfg.optim();
    oc.lr = s.learning_rate(step);
    ref.step(oc, step + 1);
    std::vector<Half> flat;
    for (const auto& t : ref.tensors()) flat.insert(flat.end(), t.p16.begin(), t.p16.end());
    if (bits_of(flat) != bits_of(ws.params16())) ++run_mismatch;
  }
  const auto wa = s.workspace().accounting(), ra = ref.accounting();
  const std::size_t P = s.workspace().size();
  const bool accounting = ra.float_elements - wa.float_elements == 2 * P && ra.half_elements == wa.half_elements;
  return {mismatches == 0 && run_mismatch == 0 && accounting,
          fmt("10000 states (%zu skipped for non-finite), %zu mismatches; 100-step run, %zu mismatched steps; "
              "P = %zu, saved %zu binary32 elements (2P = %zu)",
              skipped, mismatches, run_mismatch, P, ra.float_elements - wa.float_elements, 2 * P)};
}

// ---------------------------------------------------------------- 8, 9

struct CopyRun {
  std::size_t steps = 0, reached_at = 0;
  double accuracy = 0.0, seconds = 0.0;
  std::size_t reallocations = 0, high_water = 0, capacity = 0;
  bool within_capacity = true;
};

const CopyRun& copy_run() {
  static const CopyRun run = [] {
    CopyRun r;
    const auto t0 = Clock::now();
    io::RunConfig cfg;  // tiny 2e2d copy task, 2000 steps
    trainer::Session s(cfg);
    r.capacity = s.capacity();
    while (s.step() < cfg.train.steps) {
      s.train_step();
      r.within_capacity = r.within_capacity && s.arena().stats().high_water <= r.capacity;
      if (s.step() % 100 == 0 || s.step() == cfg.train.steps) {
        r.accuracy = s.evaluate().accuracy();
        if (r.accuracy >= 0.99) {
          r.reached_at = s.step();
          break;
        }
      }
    }
    r.steps = s.step();
    r.reallocations = s.arena().stats().reallocations;
    r.high_water = s.arena().stats().high_water;
    r.seconds = seconds_since(t0);
    return r;
  }();
  return run;
}

Verdict arena_discipline() {
  const auto& r = copy_run();
  return {r.reallocations == 0 && r.within_capacity,
          fmt("%zu steps: %zu reallocations, high water %zu <= capacity %zu", r.steps, r.reallocations, r.high_water,
              r.capacity)};
}

std::pair<std::vector<double>, std::vector<std::uint16_t>> short_run(std::uint64_t seed, std::size_t threads) {
  io::RunConfig cfg;
  cfg.train.seed = seed;
  cfg.train.threads = threads;
  trainer::Session s(cfg);
  std::vector<double> losses;
  for (int i = 0; i < 30; ++i) losses.push_back(s.train_step().loss);
  return {losses, bits_of(s.workspace().params16())};
}

Verdict end_to_end() {
  const auto& r = copy_run();
  const auto a = short_run(3, 1), b = short_run(3, 1), c = short_run(3, 4), d = short_run(4, 1);
  set_num_threads(1);
  const bool repro = a == b && a == c && a.first != d.first;
  return {r.reached_at > 0 && r.reached_at <= 2000 && r.seconds < 300.0 && repro,
          fmt("eval accuracy %.4f at step %zu (>= 0.99 within 2000), %.1f s < 300 s; 30-step runs bit-identical "
              "across reruns and 1/4 threads: %s",
              r.accuracy, r.steps, r.seconds, repro ? "yes" : "no")};
}

// ---------------------------------------------------------------- 10

// Independent bit-level reference: decode by formula, encode by nearest
// search over all finite patterns with ties to the even pattern.
double decode16(std::uint16_t h) {
  const int e = (h >> 10) & 0x1F, m = h & 0x3FF;
  const double s = (h & 0x8000) ? -1.0 : 1.0;
  if (e == 31) return m ? std::numeric_limits<double>::quiet_NaN() : s * std::numeric_limits<double>::infinity();
  return e ? s * std::ldexp(1024.0 + m, e - 25) : s * std::ldexp(static_cast<double>(m), -24);
}

std::uint16_t encode16(double x) {
  const std::uint16_t sign = std::signbit(x) ? 0x8000 : 0;
  const double a = std::abs(x);
  if (a >= 65520.0) return sign | 0x7C00;
  std::uint16_t best = 0;
  for (std::uint16_t h = 1; h <= 0x7BFF; ++h) {
    const double dh = std::abs(decode16(h) - a), db = std::abs(decode16(best) - a);
    if (dh < db || (dh == db && (h & 1) == 0)) best = h;
  }
  return sign | best;
}

Verdict binary16() {
  std::size_t bad = 0;
  for (std::uint32_t b = 0; b <= 0xFFFF; ++b) {
    const Half h = Half::from_bits(static_cast<std::uint16_t>(b));
    const double ref = decode16(h.bits);
    const float f = half_to_float(h);
    if (std::isnan(ref)) {
      bad += !std::isnan(f) || !std::isnan(half_to_float(float_to_half(f)));
      continue;
    }
    bad += static_cast<double>(f) != ref || float_to_half(f).bits != h.bits;
  }
  const std::vector<float> spots{1.0f, 0.1f, -0.1f, 65504.0f, 65519.0f, 65520.0f, 1e6f, -1e6f, 3.0e-8f,
                                 2.9802322e-8f, 6.1035156e-5f, 0.33333334f, 1.0009766f, 2049.0f};
  std::size_t spot_bad = 0;
  for (float f : spots) spot_bad += float_to_half(f).bits != encode16(f);
  spot_bad += float_to_half(1.0f).bits != 0x3C00 || half_to_float(Half::from_bits(0x3C00)) != 1.0f;
  spot_bad += float_to_half(0.1f).bits != 0x2E66;
  spot_bad += float_to_half(1e6f).bits != 0x7C00 || float_to_half(-1e6f).bits != 0xFC00;
  spot_bad += half_to_float(Half::from_bits(0x0001)) != std::ldexp(1.0f, -24);
  return {bad == 0 && spot_bad == 0,
          fmt("65536 patterns, %zu round-trip failures; %zu spot values off the bit-level reference", bad, spot_bad)};
}

}  // namespace

int main() {
  set_num_threads(1);
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"gradient fidelity", gradient_fidelity},
      {"layernorm rearrangement", layernorm_identity},
      {"criterion identities", criterion_identities},
      {"fused vs unfused parity", fused_parity},
      {"layer-batched cross attention", cross_attention},
      {"memory planner", planner},
      {"trainer equivalence", trainer_equivalence},
      {"arena discipline", arena_discipline},
      {"end-to-end learning", end_to_end},
      {"binary16 conversion", binary16},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %2zu %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed ? 1 : 0;
}
