#pragma once

// Pre-LN encoder-decoder Transformer built from the fused kernels.
//
// T is the compute type of activations, P the storage type of parameters
// and gradients. Every temporary comes from a ScratchArena; per-layer
// forward state lives in stash entries that backward pops in reverse.
// Parameter gradients are accumulated, so callers zero them first.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lsf/gradients/criterion.hpp"
#include "lsf/gradients/elementwise.hpp"
#include "lsf/gradients/embedding.hpp"
#include "lsf/gradients/layernorm.hpp"
#include "lsf/kernels/criterion.hpp"
#include "lsf/kernels/elementwise.hpp"
#include "lsf/kernels/embedding.hpp"
#include "lsf/kernels/gemm.hpp"
#include "lsf/kernels/layernorm.hpp"
#include "lsf/memplan/arena.hpp"
#include "lsf/model/attention.hpp"
#include "lsf/model/batch.hpp"
#include "lsf/model/config.hpp"
#include "lsf/model/cross_kv.hpp"
#include "lsf/model/params.hpp"
#include "lsf/numerics/rng.hpp"

namespace lsf::model {

struct StepResult {
  double loss = 0.0;          // summed over target tokens
  std::size_t tokens = 0;     // non-pad targets
  std::size_t correct = 0;    // argmax hits among them

  double mean_loss() const { return tokens ? loss / static_cast<double>(tokens) : 0.0; }
};

template <class T, class P>
class Transformer {
 public:
  using Buf = memplan::Buffer<T>;
  using Mask = memplan::Buffer<std::uint8_t>;

  explicit Transformer(const ModelConfig& cfg)
      : cfg_(cfg), schema_(make_schema(cfg)), sinusoid_(kernels::sinusoidal_positions<P>(cfg.max_len, cfg.d_model)) {
    ecfg_.scale = cfg.scale();
    ecfg_.vocab = cfg.vocab;
    ecfg_.max_len = cfg.max_len;
    ecfg_.learned_positional = cfg.learned_positional;
  }

  const ModelConfig& config() const { return cfg_; }
  const Schema& schema() const { return schema_; }
  const Tensor<P>& sinusoid() const { return sinusoid_; }

  // Names of backward milestones of the last call, in order.
  const std::vector<std::string>& trace() const { return trace_; }
  // Stash entries left after the last call (0 after a full backward).
  std::size_t stash_remaining() const { return stash_left_; }

  StepResult forward_backward(const Batch& batch, const StepOptions& opt, const ParamTable<P>& params,
                              memplan::ScratchArena& arena, bool backward = true) {
    begin(batch, opt, params, backward);
    arena.begin_step();
    Run run(*this, batch, arena);
    StepResult res = run.forward();
    if (backward) run.backward();
    stash_left_ = run.enc.size() + run.dec.size();
    params_ = nullptr;
    return res;
  }

  // Single-layer probes: layer l forward on x, then backward of dy.
  // Parameter gradients accumulate as in a full step. The decoder probe
  // takes the encoder memory (final-LN output), projects the packed keys
  // and values and returns the memory gradient of layer l alone.
  struct LayerProbe {
    Tensor<T> y, dx, dmemory;
  };

  LayerProbe encoder_layer(const Batch& batch, const StepOptions& opt, const ParamTable<P>& params,
                           memplan::ScratchArena& arena, std::size_t l, TensorView<const T> x,
                           TensorView<const T> dy) {
    LSF_CHECK(l < cfg_.n_enc, ErrorCode::InvalidArgument, "no encoder layer " + std::to_string(l));
    begin(batch, opt, params, true);
    arena.begin_step();
    LayerProbe out;
    {
      Run run(*this, batch, arena);
      Buf y = run.encoder_forward(run.copy_in(x, Shape{run.rs, run.d}, "probe.x"), l);
      out.y = copy_out(y);
      y.reset();
      Buf dx = run.encoder_backward(run.copy_in(dy, Shape{run.rs, run.d}, "probe.dy"), l);
      out.dx = copy_out(dx);
    }
    params_ = nullptr;
    return out;
  }

  LayerProbe decoder_layer(const Batch& batch, const StepOptions& opt, const ParamTable<P>& params,
                           memplan::ScratchArena& arena, std::size_t l, TensorView<const T> x,
                           TensorView<const T> memory, TensorView<const T> dy) {
    LSF_CHECK(l < cfg_.n_dec, ErrorCode::InvalidArgument, "no decoder layer " + std::to_string(l));
    begin(batch, opt, params, true);
    arena.begin_step();
    LayerProbe out;
    {
      Run run(*this, batch, arena);
      const std::size_t d = run.d, n = cfg_.n_dec;
      Buf mem = run.copy_in(memory, Shape{run.rs, d}, "probe.memory");
      {
        Buf kv = run.buf(Shape{run.rs, 2 * n * d}, "cross.kv");
        packed_kv_project<T>(mem.cview(), W(schema_.kv_w), kv.view());
        for (std::size_t i = 0; i < n; ++i) {
          run.keys.push_back(run.buf(run.gs.split_shape(), "cross.k"));
          run.values.push_back(run.buf(run.gs.split_shape(), "cross.v"));
          packed_kv_split<T>(kv.cview(), W(schema_.kv_b), i, n, run.gs, run.keys.back().view(),
                             run.values.back().view());
        }
      }
      Buf y = run.decoder_forward(run.copy_in(x, Shape{run.rt, d}, "probe.x"), l);
      out.y = copy_out(y);
      y.reset();
      Buf dkv = run.buf(Shape{run.rs, 2 * n * d}, "cross.dkv");
      PackedKvGradients<T> acc(dkv.view(), n, run.gs);
      Buf dx = run.decoder_backward(run.copy_in(dy, Shape{run.rt, d}, "probe.dy"), l, acc);
      out.dx = copy_out(dx);
      {
        Buf zero = run.buf(run.gs.split_shape(), "probe.zero");
        zero.fill(T{});
        for (std::size_t i = 0; i < n; ++i)
          if (i != l) acc.deposit(i, zero.cview(), zero.cview());
      }
      Buf dmem = run.buf(Shape{run.rs, d}, "probe.dmemory");
      packed_kv_backward<T>(acc, mem.cview(), W(schema_.kv_w), dmem.view(), false, G(schema_.kv_w),
                            G(schema_.kv_b));
      out.dmemory = copy_out(dmem);
    }
    params_ = nullptr;
    return out;
  }

 private:
  static Tensor<T> copy_out(const Buf& b) {
    Tensor<T> t(b.shape());
    std::copy(b.data(), b.data() + b.numel(), t.data());
    return t;
  }

  void begin(const Batch& batch, const StepOptions& opt, const ParamTable<P>& params, bool backward) {
    batch.validate(cfg_);
    kernels::check_drop_probability(opt.p_drop);
    kernels::check_smoothing(opt.alpha);
    LSF_CHECK(params.size() == schema_.size(), ErrorCode::ShapeMismatch,
              "parameter table has " + std::to_string(params.size()) + " entries, schema " +
                  std::to_string(schema_.size()));
    for (std::size_t i = 0; i < params.size(); ++i)
      LSF_CHECK(params[i].value.shape() == schema_.specs[i].shape &&
                    (!backward || params[i].grad.shape() == schema_.specs[i].shape),
                ErrorCode::ShapeMismatch, "parameter " + schema_.specs[i].name);
    params_ = &params;
    opt_ = opt;
    trace_.clear();
  }
  struct EncStash {
    Buf x, mu1, sig1, u1, q, k, v, probs, ctx, h, mu2, sig2, u2, a;
    Mask keep_a, keep_r, relu, keep_f;
  };
  struct DecStash {
    Buf x, mu1, sig1, u1, q, k, v, probs, ctx, h1, mu2, sig2, u2, cq, cprobs, cctx, h2, mu3, sig3, u3, a;
    Mask keep_s, keep_c, keep_r, relu, keep_f;
  };

  TensorView<const P> W(std::size_t id) const { return (*params_)[id].value; }
  TensorView<P> G(std::size_t id) const { return (*params_)[id].grad; }
  TensorView<P> G(std::size_t id, std::size_t offset, std::size_t n) const {
    return TensorView<P>(G(id).data() + offset, Shape{n});
  }
  TensorView<const P> positions() const {
    return schema_.has_positions() ? W(schema_.positions) : TensorView<const P>(sinusoid_.view());
  }
  std::uint64_t seed(std::uint64_t site) const { return derive_seed(opt_.seed, opt_.step, site); }

  struct Run {
    Transformer& m;
    const Batch& b;
    memplan::ScratchArena& arena;
    std::size_t d, dff, heads, dh, rs, rt;
    HeadGeometry gs, gt;
    kernels::AttentionMask src_mask, self_mask;
    std::vector<EncStash> enc;
    std::vector<DecStash> dec;
    Mask keep_src, keep_tgt;
    Buf enc_last, enc_mu, enc_sig, enc_out;
    std::vector<Buf> keys, values;
    Buf dec_last, dec_mu, dec_sig, dec_out, logq;

    Run(Transformer& model, const Batch& batch, memplan::ScratchArena& a)
        : m(model), b(batch), arena(a), d(model.cfg_.d_model), dff(model.cfg_.d_ff), heads(model.cfg_.n_heads),
          dh(model.cfg_.head_dim()), rs(batch.src_rows()), rt(batch.tgt_rows()),
          gs{batch.batch, batch.src_len, heads, dh}, gt{batch.batch, batch.tgt_len, heads, dh},
          src_mask(kernels::AttentionMask::padding(batch.src_valid)),
          self_mask(kernels::AttentionMask::causal_padding(batch.tgt_valid)) {}

    Buf buf(Shape s, const char* label) { return Buf(arena, s, label); }
    Buf copy_in(TensorView<const T> src, Shape s, const char* label) {
      LSF_CHECK(src.numel() == s.numel(), ErrorCode::ShapeMismatch, std::string(label) + " has shape " + src.shape().str());
      Buf b = buf(s, label);
      std::copy(src.data(), src.data() + src.numel(), b.data());
      return b;
    }
    Mask mask(Shape s, const char* label) { return Mask(arena, s, label); }
    double p() const { return m.opt_.p_drop; }
    T eps() const { return T(m.cfg_.ln_eps); }

    void layer_norm(const Buf& x, const LayerNormIds& ln, Buf& y, Buf& mu, Buf& sig, std::size_t rows,
                    const char* label) {
      y = buf(Shape{rows, d}, label);
      mu = buf(Shape{rows}, "ln.mu");
      sig = buf(Shape{rows}, "ln.sigma");
      kernels::layernorm_forward_into<T>(x.cview(), m.W(ln.w), m.W(ln.b), m.cfg_.ln_eps, y.view(), mu.view(),
                                         sig.view());
    }

    // dx (+)= LN backward of dy; accumulates into dx when requested.
    void layer_norm_backward(const Buf& dy, const Buf& x, const LayerNormIds& ln, const Buf& mu, const Buf& sig,
                             const Buf& dx, bool accumulate) {
      grad::layernorm_backward_into<T>(dy.cview(), x.cview(), m.W(ln.w), mu.cview(), sig.cview(), dx.view(),
                                       accumulate, m.G(ln.w), m.G(ln.b), true);
    }

    // y = x W^T
    void linear(const Buf& x, std::size_t w, const Buf& y) { gemm<T>(x.cview(), false, m.W(w), true, y.view()); }

    // dx = dy W; dW += dy^T x
    void linear_backward(const Buf& dy, const Buf& x, std::size_t w, const Buf& dx) {
      gemm<T>(dy.cview(), false, m.W(w), false, dx.view());
      gemm<T>(dy.cview(), true, x.cview(), false, m.G(w), true);
    }

    // Self-attention block shared by encoder and decoder layers: from the
    // normalized input u to the merged context.
    void self_attention(const Buf& u, std::size_t qkv_w, std::size_t qkv_b, const HeadGeometry& g,
                        const kernels::AttentionMask& am, Buf& q, Buf& k, Buf& v, Buf& probs, Buf& ctx) {
      const std::size_t rows = g.batch * g.len;
      {
        Buf qkv = buf(Shape{rows, 3 * d}, "attn.qkv");
        linear(u, qkv_w, qkv);
        const P* bias = m.W(qkv_b).data();
        q = buf(g.split_shape(), "attn.q");
        k = buf(g.split_shape(), "attn.k");
        v = buf(g.split_shape(), "attn.v");
        split_heads<T>(qkv.cview(), 0, bias, g, q.view());
        split_heads<T>(qkv.cview(), d, bias + d, g, k.view());
        split_heads<T>(qkv.cview(), 2 * d, bias + 2 * d, g, v.view());
      }
      probs = buf(Shape{g.batch, heads, g.len, g.len}, "attn.probs");
      Buf ctxh = buf(g.split_shape(), "attn.ctx_heads");
      attention_forward<T>(q.cview(), k.cview(), v.cview(), g.batch, heads, g.len, g.len, dh, am, probs.view(),
                           ctxh.view());
      ctx = buf(Shape{rows, d}, "attn.ctx");
      merge_heads<T, T, T>(ctxh.cview(), g, ctx.view(), 0);
    }

    // Backward of self_attention; returns du (gradient at the normalized input).
    Buf self_attention_backward(const Buf& dctx, const Buf& u, std::size_t qkv_w, std::size_t qkv_b,
                                const HeadGeometry& g, Buf& q, Buf& k, Buf& v, Buf& probs) {
      const std::size_t rows = g.batch * g.len;
      Buf dqkv = buf(Shape{rows, 3 * d}, "attn.dqkv");
      {
        Buf dch = buf(g.split_shape(), "attn.dctx_heads");
        split_heads<T, T, P>(dctx.cview(), 0, nullptr, g, dch.view());
        Buf dprobs = buf(probs.shape(), "attn.dprobs");
        Buf dq = buf(g.split_shape(), "attn.dq");
        Buf dk = buf(g.split_shape(), "attn.dk");
        Buf dv = buf(g.split_shape(), "attn.dv");
        attention_backward<T>(dch.cview(), q.cview(), k.cview(), v.cview(), probs.cview(), g.batch, heads, g.len,
                              g.len, dh, dprobs.view(), dq.view(), dk.view(), dv.view());
        probs.reset();
        q.reset();
        k.reset();
        v.reset();
        merge_heads<T, T, P>(dq.cview(), g, dqkv.view(), 0, m.G(qkv_b, 0, d));
        merge_heads<T, T, P>(dk.cview(), g, dqkv.view(), d, m.G(qkv_b, d, d));
        merge_heads<T, T, P>(dv.cview(), g, dqkv.view(), 2 * d, m.G(qkv_b, 2 * d, d));
      }
      Buf du = buf(Shape{rows, d}, "attn.du");
      linear_backward(dqkv, u, qkv_w, du);
      return du;
    }

    // FFN tail: y = h + drop(W2 relu_drop(W1 u + b1) + b2).
    void ffn(const Buf& u, const Buf& h, const FfnIds& f, std::uint64_t seed_relu, std::uint64_t seed_out,
             std::size_t rows, Buf& a, Mask& keep_r, Mask& relu, Mask& keep_f, Buf& y) {
      {
        Buf f1 = buf(Shape{rows, dff}, "ffn.pre");
        linear(u, f.w1, f1);
        a = buf(Shape{rows, dff}, "ffn.act");
        keep_r = mask(Shape{rows, dff}, "ffn.keep_relu");
        relu = mask(Shape{rows, dff}, "ffn.relu");
        kernels::bias_relu_dropout_into<T>(f1.cview(), m.W(f.b1), p(), seed_relu, a.view(), keep_r.view(),
                                           relu.view());
      }
      Buf f2 = buf(Shape{rows, d}, "ffn.out");
      linear(a, f.w2, f2);
      y = buf(Shape{rows, d}, "layer.out");
      keep_f = mask(Shape{rows, d}, "ffn.keep_out");
      kernels::bias_dropout_residual_into<T>(f2.cview(), m.W(f.b2), h.cview(), p(), seed_out, y.view(),
                                             keep_f.view());
    }

    // Backward of ffn; dy carries the residual gradient and receives the
    // gradient at u (not yet through the layer norm). Returns du.
    Buf ffn_backward(const Buf& dy, const Buf& u, const FfnIds& f, std::size_t rows, Buf& a, Mask& keep_r,
                     Mask& relu, Mask& keep_f) {
      Buf da = buf(Shape{rows, dff}, "ffn.dact");
      {
        Buf df2 = buf(Shape{rows, d}, "ffn.dout");
        grad::bias_dropout_residual_backward_into<T>(dy.cview(), keep_f.cview(), p(), df2.view(), m.G(f.b2), true);
        keep_f.reset();
        linear_backward(df2, a, f.w2, da);
        a.reset();
      }
      Buf du = buf(Shape{rows, d}, "ffn.du");
      {
        Buf df1 = buf(Shape{rows, dff}, "ffn.dpre");
        grad::bias_relu_dropout_backward_into<T>(da.cview(), keep_r.cview(), relu.cview(), p(), df1.view(),
                                                 m.G(f.b1), true);
        keep_r.reset();
        relu.reset();
        da.reset();
        linear_backward(df1, u, f.w1, du);
      }
      return du;
    }

    // y = residual + drop(ctx W^T + b)
    void out_projection(const Buf& ctx, std::size_t w, std::size_t bias, const Buf& residual,
                        std::uint64_t seed_out, std::size_t rows, Mask& keep, Buf& y) {
      Buf o = buf(Shape{rows, d}, "attn.out");
      linear(ctx, w, o);
      y = buf(Shape{rows, d}, "attn.residual");
      keep = mask(Shape{rows, d}, "attn.keep");
      kernels::bias_dropout_residual_into<T>(o.cview(), m.W(bias), residual.cview(), p(), seed_out, y.view(),
                                             keep.view());
    }

    Buf out_projection_backward(const Buf& dy, const Buf& ctx, std::size_t w, std::size_t bias, std::size_t rows,
                                Mask& keep) {
      Buf dctx = buf(Shape{rows, d}, "attn.dctx");
      Buf dout = buf(Shape{rows, d}, "attn.dout");
      grad::bias_dropout_residual_backward_into<T>(dy.cview(), keep.cview(), p(), dout.view(), m.G(bias), true);
      keep.reset();
      linear_backward(dout, ctx, w, dctx);
      return dctx;
    }

    Buf encoder_forward(Buf x, std::size_t l) {
      const EncoderIds& ids = m.schema_.enc[l];
      EncStash s;
      s.x = std::move(x);
      layer_norm(s.x, ids.ln1, s.u1, s.mu1, s.sig1, rs, "enc.ln1");
      self_attention(s.u1, ids.qkv_w, ids.qkv_b, gs, src_mask, s.q, s.k, s.v, s.probs, s.ctx);
      out_projection(s.ctx, ids.out_w, ids.out_b, s.x, m.seed(site::enc(l, site::kEncAttn)), rs, s.keep_a, s.h);
      layer_norm(s.h, ids.ln2, s.u2, s.mu2, s.sig2, rs, "enc.ln2");
      Buf y;
      ffn(s.u2, s.h, ids.ffn, m.seed(site::enc(l, site::kEncRelu)), m.seed(site::enc(l, site::kEncFfn)), rs, s.a,
          s.keep_r, s.relu, s.keep_f, y);
      enc.push_back(std::move(s));
      return y;
    }

    // dy is the gradient at the layer output; it is reused for the residual
    // stream and returned as the gradient at the layer input.
    Buf encoder_backward(Buf dy, std::size_t l) {
      const EncoderIds& ids = m.schema_.enc[l];
      EncStash s = std::move(enc.back());
      enc.pop_back();
      {
        Buf du2 = ffn_backward(dy, s.u2, ids.ffn, rs, s.a, s.keep_r, s.relu, s.keep_f);
        s.u2.reset();
        layer_norm_backward(du2, s.h, ids.ln2, s.mu2, s.sig2, dy, true);
      }
      s.h.reset();
      {
        Buf dctx = out_projection_backward(dy, s.ctx, ids.out_w, ids.out_b, rs, s.keep_a);
        s.ctx.reset();
        Buf du1 = self_attention_backward(dctx, s.u1, ids.qkv_w, ids.qkv_b, gs, s.q, s.k, s.v, s.probs);
        dctx.reset();
        s.u1.reset();
        layer_norm_backward(du1, s.x, ids.ln1, s.mu1, s.sig1, dy, true);
      }
      return dy;
    }

    Buf decoder_forward(Buf x, std::size_t l) {
      const DecoderIds& ids = m.schema_.dec[l];
      DecStash s;
      s.x = std::move(x);
      layer_norm(s.x, ids.ln1, s.u1, s.mu1, s.sig1, rt, "dec.ln1");
      self_attention(s.u1, ids.qkv_w, ids.qkv_b, gt, self_mask, s.q, s.k, s.v, s.probs, s.ctx);
      out_projection(s.ctx, ids.out_w, ids.out_b, s.x, m.seed(site::dec(l, site::kDecSelf)), rt, s.keep_s, s.h1);

      layer_norm(s.h1, ids.ln2, s.u2, s.mu2, s.sig2, rt, "dec.ln2");
      {
        Buf cq = buf(Shape{rt, d}, "cross.qproj");
        linear(s.u2, ids.cq_w, cq);
        s.cq = buf(gt.split_shape(), "cross.q");
        split_heads<T>(cq.cview(), 0, m.W(ids.cq_b).data(), gt, s.cq.view());
      }
      s.cprobs = buf(Shape{b.batch, heads, b.tgt_len, b.src_len}, "cross.probs");
      {
        Buf ctxh = buf(gt.split_shape(), "cross.ctx_heads");
        attention_forward<T>(s.cq.cview(), keys[l].cview(), values[l].cview(), b.batch, heads, b.tgt_len,
                             b.src_len, dh, src_mask, s.cprobs.view(), ctxh.view());
        s.cctx = buf(Shape{rt, d}, "cross.ctx");
        merge_heads<T, T, T>(ctxh.cview(), gt, s.cctx.view(), 0);
      }
      out_projection(s.cctx, ids.cout_w, ids.cout_b, s.h1, m.seed(site::dec(l, site::kDecCross)), rt, s.keep_c,
                     s.h2);

      layer_norm(s.h2, ids.ln3, s.u3, s.mu3, s.sig3, rt, "dec.ln3");
      Buf y;
      ffn(s.u3, s.h2, ids.ffn, m.seed(site::dec(l, site::kDecRelu)), m.seed(site::dec(l, site::kDecFfn)), rt,
          s.a, s.keep_r, s.relu, s.keep_f, y);
      dec.push_back(std::move(s));
      return y;
    }

    Buf decoder_backward(Buf dy, std::size_t l, PackedKvGradients<T>& kv_acc) {
      const DecoderIds& ids = m.schema_.dec[l];
      DecStash s = std::move(dec.back());
      dec.pop_back();
      {
        Buf du3 = ffn_backward(dy, s.u3, ids.ffn, rt, s.a, s.keep_r, s.relu, s.keep_f);
        s.u3.reset();
        layer_norm_backward(du3, s.h2, ids.ln3, s.mu3, s.sig3, dy, true);
      }
      s.h2.reset();
      {
        Buf dctx = out_projection_backward(dy, s.cctx, ids.cout_w, ids.cout_b, rt, s.keep_c);
        s.cctx.reset();
        Buf dcq = buf(Shape{rt, d}, "cross.dqproj");
        {
          Buf dch = buf(gt.split_shape(), "cross.dctx_heads");
          split_heads<T, T, P>(dctx.cview(), 0, nullptr, gt, dch.view());
          dctx.reset();
          Buf dprobs = buf(s.cprobs.shape(), "cross.dprobs");
          Buf dq = buf(gt.split_shape(), "cross.dq");
          Buf dk = buf(gs.split_shape(), "cross.dk");
          Buf dv = buf(gs.split_shape(), "cross.dv");
          attention_backward<T>(dch.cview(), s.cq.cview(), keys[l].cview(), values[l].cview(), s.cprobs.cview(),
                                b.batch, heads, b.tgt_len, b.src_len, dh, dprobs.view(), dq.view(), dk.view(),
                                dv.view());
          s.cprobs.reset();
          s.cq.reset();
          kv_acc.deposit(l, dk.cview(), dv.cview());
          merge_heads<T, T, P>(dq.cview(), gt, dcq.view(), 0, m.G(ids.cq_b));
        }
        Buf du2 = buf(Shape{rt, d}, "cross.du");
        linear_backward(dcq, s.u2, ids.cq_w, du2);
        dcq.reset();
        s.u2.reset();
        layer_norm_backward(du2, s.h1, ids.ln2, s.mu2, s.sig2, dy, true);
      }
      s.h1.reset();
      {
        Buf dctx = out_projection_backward(dy, s.ctx, ids.out_w, ids.out_b, rt, s.keep_s);
        s.ctx.reset();
        Buf du1 = self_attention_backward(dctx, s.u1, ids.qkv_w, ids.qkv_b, gt, s.q, s.k, s.v, s.probs);
        dctx.reset();
        s.u1.reset();
        layer_norm_backward(du1, s.x, ids.ln1, s.mu1, s.sig1, dy, true);
      }
      return dy;
    }

    StepResult forward() {
      const ModelConfig& cfg = m.cfg_;
      const Schema& sc = m.schema_;
      Buf x = buf(Shape{rs, d}, "embed.src");
      keep_src = mask(Shape{rs, d}, "embed.src_keep");
      kernels::embedding_forward_into<T, P>(m.W(sc.tokens), m.positions(), b.src, b.batch, b.src_len, m.ecfg_, p(),
                                            m.seed(site::kEncEmbed), x.view(), keep_src.view());
      for (std::size_t l = 0; l < cfg.n_enc; ++l) x = encoder_forward(std::move(x), l);
      enc_last = std::move(x);
      layer_norm(enc_last, sc.enc_final, enc_out, enc_mu, enc_sig, rs, "enc.final");

      {
        Buf kv = buf(Shape{rs, 2 * cfg.n_dec * d}, "cross.kv");
        packed_kv_project<T>(enc_out.cview(), m.W(sc.kv_w), kv.view());
        for (std::size_t l = 0; l < cfg.n_dec; ++l) {
          keys.push_back(buf(gs.split_shape(), "cross.k"));
          values.push_back(buf(gs.split_shape(), "cross.v"));
          packed_kv_split<T>(kv.cview(), m.W(sc.kv_b), l, cfg.n_dec, gs, keys.back().view(), values.back().view());
        }
      }

      Buf y = buf(Shape{rt, d}, "embed.tgt");
      keep_tgt = mask(Shape{rt, d}, "embed.tgt_keep");
      kernels::embedding_forward_into<T, P>(m.W(sc.tokens), m.positions(), b.tgt_in, b.batch, b.tgt_len, m.ecfg_,
                                            p(), m.seed(site::kDecEmbed), y.view(), keep_tgt.view());
      for (std::size_t l = 0; l < cfg.n_dec; ++l) y = decoder_forward(std::move(y), l);
      dec_last = std::move(y);
      layer_norm(dec_last, sc.dec_final, dec_out, dec_mu, dec_sig, rt, "dec.final");

      logq = buf(Shape{rt, cfg.vocab}, "logits");
      gemm<T>(dec_out.cview(), false, m.W(output_weight()), true, logq.view());
      kernels::log_softmax_forward_into<T, T>(logq.cview(), logq.view());
      const auto ce = kernels::ls_cross_entropy_forward<T>(logq.cview(), b.tgt_out, m.opt_.alpha, cfg.pad_id);

      StepResult res{ce.loss, ce.token_count, 0};
      for (std::size_t r = 0; r < rt; ++r) {
        if (b.tgt_out[r] == cfg.pad_id) continue;
        const T* row = logq.data() + r * cfg.vocab;
        std::size_t best = 0;
        for (std::size_t j = 1; j < cfg.vocab; ++j)
          if (row[j] > row[best]) best = j;
        if (static_cast<std::int32_t>(best) == b.tgt_out[r]) ++res.correct;
      }
      return res;
    }

    std::size_t output_weight() const { return m.schema_.has_out_proj() ? m.schema_.out_proj : m.schema_.tokens; }

    void backward() {
      const ModelConfig& cfg = m.cfg_;
      const Schema& sc = m.schema_;
      Buf dy = buf(Shape{rt, d}, "dec.dfinal");
      {
        Buf dlogits = buf(Shape{rt, cfg.vocab}, "dlogits");
        grad::ls_cross_entropy_backward_into<T>(logq.cview(), b.tgt_out, m.opt_.alpha, cfg.pad_id, dlogits.view(),
                                                T(m.opt_.grad_scale), true);
        logq.reset();
        Buf dout = buf(Shape{rt, d}, "dec.dout");
        gemm<T>(dlogits.cview(), false, m.W(output_weight()), false, dout.view());
        gemm<T>(dlogits.cview(), true, dec_out.cview(), false, m.G(output_weight()), true);
        dec_out.reset();
        dlogits.reset();
        layer_norm_backward(dout, dec_last, sc.dec_final, dec_mu, dec_sig, dy, false);
      }
      dec_last.reset();
      dec_mu.reset();
      dec_sig.reset();

      Buf dkv = buf(Shape{rs, 2 * cfg.n_dec * d}, "cross.dkv");
      PackedKvGradients<T> kv_acc(dkv.view(), cfg.n_dec, gs);
      for (std::size_t l = cfg.n_dec; l-- > 0;) {
        dy = decoder_backward(std::move(dy), l, kv_acc);
        m.trace_.push_back("dec" + std::to_string(l) + ".backward");
      }
      keys.clear();
      values.clear();
      grad::embedding_backward_into<T>(dy.cview(), b.tgt_in, b.batch, b.tgt_len, keep_tgt.cview(), p(), m.ecfg_,
                                       m.G(sc.tokens), true, position_grad());
      keep_tgt.reset();
      dy.reset();

      Buf dx = buf(Shape{rs, d}, "enc.dfinal");
      {
        Buf denc = buf(Shape{rs, d}, "enc.dout");
        packed_kv_backward<T>(kv_acc, enc_out.cview(), m.W(sc.kv_w), denc.view(), false, m.G(sc.kv_w),
                              m.G(sc.kv_b));
        m.trace_.push_back("cross_kv.backward");
        dkv.reset();
        enc_out.reset();
        layer_norm_backward(denc, enc_last, sc.enc_final, enc_mu, enc_sig, dx, false);
      }
      enc_last.reset();
      enc_mu.reset();
      enc_sig.reset();
      for (std::size_t l = cfg.n_enc; l-- > 0;) dx = encoder_backward(std::move(dx), l);
      grad::embedding_backward_into<T>(dx.cview(), b.src, b.batch, b.src_len, keep_src.cview(), p(), m.ecfg_,
                                       m.G(sc.tokens), true, position_grad());
      keep_src.reset();
    }

    std::optional<TensorView<P>> position_grad() const {
      if (!m.schema_.has_positions()) return std::nullopt;
      return m.G(m.schema_.positions);
    }
  };

  ModelConfig cfg_;
  Schema schema_;
  Tensor<P> sinusoid_;
  kernels::EmbeddingConfig ecfg_;
  const ParamTable<P>* params_ = nullptr;
  StepOptions opt_;
  std::vector<std::string> trace_;
  std::size_t stash_left_ = 0;
};

}  // namespace lsf::model
