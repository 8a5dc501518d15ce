#pragma once

// Unfused binary64 reference of the encoder-decoder model, composed from
// tape primitives. Per-layer cross-attention projections are separate
// GEMMs on row slices of the stacked key/value matrix; LayerNorm uses the
// two-pass statistics; softmax backward uses the explicit Jacobian.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "lsf/model/batch.hpp"
#include "lsf/model/config.hpp"
#include "lsf/model/params.hpp"
#include "lsf/numerics/rng.hpp"
#include "lsf/numerics/tensor.hpp"
#include "lsf/oracle/tape.hpp"

namespace lsf::oracle {

inline std::vector<double> dropout_multipliers(std::uint64_t seed, std::size_t n, double p) {
  std::vector<double> m(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool keep = p == 0.0 || rand_uniform(seed, i) >= p;
    m[i] = keep ? 1.0 / (1.0 - p) : 0.0;
  }
  return m;
}

inline Id leaf_of(Tape& t, const Tensor<double>& x) {
  const std::size_t cols = x.shape().back();
  return t.leaf(x.numel() / cols, cols, x.storage());
}

inline Tensor<double> grad_of(Tape& t, Id id, const Shape& shape) { return Tensor<double>(shape, t.grad(id)); }

inline Tensor<double> reference_sinusoid(std::size_t max_len, std::size_t dim) {
  Tensor<double> p(Shape{max_len, dim});
  for (std::size_t pos = 0; pos < max_len; ++pos)
    for (std::size_t i = 0; i < dim; ++i) {
      const double k = static_cast<double>(i - i % 2);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, k / static_cast<double>(dim));
      p.at(pos, i) = i % 2 ? std::cos(angle) : std::sin(angle);
    }
  return p;
}

// y = dropout(s * E[tokens] + P[position])
inline Id reference_embedding(Tape& t, Id table, Id positions, const std::vector<std::int32_t>& tokens,
                              std::size_t len, double s, double p, std::uint64_t seed) {
  std::vector<std::int32_t> pos(tokens.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<std::int32_t>(i % len);
  const Id e = scale(t, gather(t, table, tokens), s);
  const Id x = add(t, e, gather(t, positions, pos));
  return mul_const(t, x, dropout_multipliers(seed, t.value(x).size(), p));
}

// Multi-head attention on [B*Lq, d] queries and [B*Lk, d] keys/values,
// looping over sequences and heads.
inline Id reference_attention(Tape& t, Id q, Id k, Id v, std::size_t batch, std::size_t lq, std::size_t lk,
                              std::size_t heads, bool causal, const std::vector<std::int32_t>& valid) {
  const std::size_t d = t.cols(q), dh = d / heads;
  std::vector<Id> rows;
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<std::uint8_t> allowed(lq * lk, 0);
    for (std::size_t i = 0; i < lq; ++i)
      for (std::size_t j = 0; j < lk; ++j)
        allowed[i * lk + j] = (static_cast<std::int32_t>(j) < valid[b] && (!causal || j <= i)) ? 1 : 0;
    std::vector<Id> per_head;
    for (std::size_t h = 0; h < heads; ++h) {
      const Id qh = slice(t, q, b * lq, lq, h * dh, dh);
      const Id kh = slice(t, k, b * lk, lk, h * dh, dh);
      const Id vh = slice(t, v, b * lk, lk, h * dh, dh);
      const Id scores = scale(t, matmul(t, qh, kh, true), 1.0 / std::sqrt(static_cast<double>(dh)));
      per_head.push_back(matmul(t, softmax(t, scores, allowed), vh));
    }
    rows.push_back(concat_cols(t, per_head));
  }
  return concat_rows(t, rows);
}

// x W^T + b with W a row block [r0, r0 + n) of `w` and b the matching slice.
inline Id reference_linear(Tape& t, Id x, Id w, Id b, std::size_t r0, std::size_t n) {
  const Id wi = slice(t, w, r0, n, 0, t.cols(w));
  const Id bi = slice(t, b, 0, 1, r0, n);
  return add_row(t, matmul(t, x, wi, true), bi);
}

inline Id reference_ffn(Tape& t, Id u, Id w1, Id b1, Id w2, Id b2, double p, std::uint64_t seed_relu) {
  const Id f1 = add_row(t, matmul(t, u, w1, true), b1);
  const Id a = relu(t, f1);
  const Id ad = mul_const(t, a, dropout_multipliers(seed_relu, t.value(a).size(), p));
  return add_row(t, matmul(t, ad, w2, true), b2);
}

// residual + dropout(x)
inline Id reference_residual(Tape& t, Id residual, Id x, double p, std::uint64_t seed) {
  return add(t, residual, mul_const(t, x, dropout_multipliers(seed, t.value(x).size(), p)));
}

struct LayerContext {
  const model::ModelConfig& cfg;
  const model::Batch& batch;
  const model::StepOptions& opt;
  const std::vector<Id>& params;

  std::uint64_t seed(std::uint64_t site) const { return derive_seed(opt.seed, opt.step, site); }
  Id P(std::size_t i) const { return params.at(i); }
};

inline Id reference_encoder_layer(Tape& t, Id x, std::size_t l, const model::Schema& sc, const LayerContext& c) {
  const auto& ids = sc.enc.at(l);
  const std::size_t d = c.cfg.d_model;
  const double p = c.opt.p_drop;
  const Id u = layernorm(t, x, c.P(ids.ln1.w), c.P(ids.ln1.b), c.cfg.ln_eps);
  const Id q = reference_linear(t, u, c.P(ids.qkv_w), c.P(ids.qkv_b), 0, d);
  const Id k = reference_linear(t, u, c.P(ids.qkv_w), c.P(ids.qkv_b), d, d);
  const Id v = reference_linear(t, u, c.P(ids.qkv_w), c.P(ids.qkv_b), 2 * d, d);
  const Id ctx = reference_attention(t, q, k, v, c.batch.batch, c.batch.src_len, c.batch.src_len, c.cfg.n_heads,
                                     false, c.batch.src_valid);
  const Id o = add_row(t, matmul(t, ctx, c.P(ids.out_w), true), c.P(ids.out_b));
  const Id h = reference_residual(t, x, o, p, c.seed(model::site::enc(l, model::site::kEncAttn)));
  const Id u2 = layernorm(t, h, c.P(ids.ln2.w), c.P(ids.ln2.b), c.cfg.ln_eps);
  const Id f = reference_ffn(t, u2, c.P(ids.ffn.w1), c.P(ids.ffn.b1), c.P(ids.ffn.w2), c.P(ids.ffn.b2), p,
                             c.seed(model::site::enc(l, model::site::kEncRelu)));
  return reference_residual(t, h, f, p, c.seed(model::site::enc(l, model::site::kEncFfn)));
}

// `memory` is the normalized encoder output.
inline Id reference_decoder_layer(Tape& t, Id x, Id memory, std::size_t l, const model::Schema& sc,
                                  const LayerContext& c) {
  const auto& ids = sc.dec.at(l);
  const std::size_t d = c.cfg.d_model, n = c.cfg.n_dec;
  const double p = c.opt.p_drop;
  const auto& b = c.batch;
  const Id u = layernorm(t, x, c.P(ids.ln1.w), c.P(ids.ln1.b), c.cfg.ln_eps);
  const Id q = reference_linear(t, u, c.P(ids.qkv_w), c.P(ids.qkv_b), 0, d);
  const Id k = reference_linear(t, u, c.P(ids.qkv_w), c.P(ids.qkv_b), d, d);
  const Id v = reference_linear(t, u, c.P(ids.qkv_w), c.P(ids.qkv_b), 2 * d, d);
  const Id ctx = reference_attention(t, q, k, v, b.batch, b.tgt_len, b.tgt_len, c.cfg.n_heads, true, b.tgt_valid);
  const Id o = add_row(t, matmul(t, ctx, c.P(ids.out_w), true), c.P(ids.out_b));
  const Id h1 = reference_residual(t, x, o, p, c.seed(model::site::dec(l, model::site::kDecSelf)));

  const Id u2 = layernorm(t, h1, c.P(ids.ln2.w), c.P(ids.ln2.b), c.cfg.ln_eps);
  const Id cq = add_row(t, matmul(t, u2, c.P(ids.cq_w), true), c.P(ids.cq_b));
  const Id ck = reference_linear(t, memory, c.P(sc.kv_w), c.P(sc.kv_b), l * d, d);
  const Id cv = reference_linear(t, memory, c.P(sc.kv_w), c.P(sc.kv_b), (n + l) * d, d);
  const Id cctx = reference_attention(t, cq, ck, cv, b.batch, b.tgt_len, b.src_len, c.cfg.n_heads, false,
                                      b.src_valid);
  const Id co = add_row(t, matmul(t, cctx, c.P(ids.cout_w), true), c.P(ids.cout_b));
  const Id h2 = reference_residual(t, h1, co, p, c.seed(model::site::dec(l, model::site::kDecCross)));

  const Id u3 = layernorm(t, h2, c.P(ids.ln3.w), c.P(ids.ln3.b), c.cfg.ln_eps);
  const Id f = reference_ffn(t, u3, c.P(ids.ffn.w1), c.P(ids.ffn.b1), c.P(ids.ffn.w2), c.P(ids.ffn.b2), p,
                             c.seed(model::site::dec(l, model::site::kDecRelu)));
  return reference_residual(t, h2, f, p, c.seed(model::site::dec(l, model::site::kDecFfn)));
}

struct ReferenceResult {
  double loss = 0.0;
  std::size_t tokens = 0;
  std::size_t correct = 0;
  std::vector<Tensor<double>> grads;  // of grad_scale * loss, schema order
};

// Full forward (and backward when `with_grads`). `positions` overrides the
// fixed sinusoidal table when positions are not learned.
inline ReferenceResult reference_forward_backward(const model::ModelConfig& cfg,
                                                  const std::vector<Tensor<double>>& values,
                                                  const model::Batch& batch, const model::StepOptions& opt,
                                                  bool with_grads = true,
                                                  const Tensor<double>* positions = nullptr) {
  const model::Schema sc = model::make_schema(cfg);
  batch.validate(cfg);
  require(values.size() == sc.size(), "parameter count");
  Tape t;
  std::vector<Id> params;
  for (std::size_t i = 0; i < values.size(); ++i) {
    require(values[i].shape() == sc.specs[i].shape, "parameter shape");
    params.push_back(leaf_of(t, values[i]));
  }
  const Tensor<double> sinus = positions ? *positions : reference_sinusoid(cfg.max_len, cfg.d_model);
  const Id pos = sc.has_positions() ? params[sc.positions] : leaf_of(t, sinus);
  const LayerContext c{cfg, batch, opt, params};

  Id x = reference_embedding(t, params[sc.tokens], pos, batch.src, batch.src_len, cfg.scale(), opt.p_drop,
                             c.seed(model::site::kEncEmbed));
  for (std::size_t l = 0; l < cfg.n_enc; ++l) x = reference_encoder_layer(t, x, l, sc, c);
  const Id memory = layernorm(t, x, params[sc.enc_final.w], params[sc.enc_final.b], cfg.ln_eps);

  Id y = reference_embedding(t, params[sc.tokens], pos, batch.tgt_in, batch.tgt_len, cfg.scale(), opt.p_drop,
                             c.seed(model::site::kDecEmbed));
  for (std::size_t l = 0; l < cfg.n_dec; ++l) y = reference_decoder_layer(t, y, memory, l, sc, c);
  const Id out = layernorm(t, y, params[sc.dec_final.w], params[sc.dec_final.b], cfg.ln_eps);
  const Id w_out = params[sc.has_out_proj() ? sc.out_proj : sc.tokens];
  const Id logq = log_softmax(t, matmul(t, out, w_out, true));
  const Id loss = smoothed_nll(t, logq, batch.tgt_out, opt.alpha, cfg.pad_id);

  ReferenceResult r;
  r.loss = t.scalar(loss);
  const std::size_t v = cfg.vocab;
  for (std::size_t i = 0; i < batch.tgt_out.size(); ++i) {
    if (batch.tgt_out[i] == cfg.pad_id) continue;
    ++r.tokens;
    std::size_t best = 0;
    for (std::size_t j = 1; j < v; ++j)
      if (t.value(logq)[i * v + j] > t.value(logq)[i * v + best]) best = j;
    if (static_cast<std::int32_t>(best) == batch.tgt_out[i]) ++r.correct;
  }
  if (!with_grads) return r;
  t.backward(loss);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<double> g = grad_of(t, params[i], sc.specs[i].shape);
    for (double& e : g.storage()) e *= opt.grad_scale;
    r.grads.push_back(std::move(g));
  }
  return r;
}

}  // namespace lsf::oracle
