#pragma once

// Parameter schema of the encoder-decoder model.
//
// Every parameter has a fixed index in the schema; the model reads values
// and writes gradients through a table of views indexed the same way, so
// the storage can be individually owned tensors or regions of one
// workspace. Linear weights are [out, in] and applied as y = x W^T + b.

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "lsf/model/config.hpp"
#include "lsf/numerics/rng.hpp"
#include "lsf/numerics/tensor.hpp"

namespace lsf::model {

enum class Init { Uniform, Zeros, Ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init = Init::Uniform;
  double bound = 0.0;  // half-width for Uniform
};

struct LayerNormIds {
  std::size_t w, b;
};

struct FfnIds {
  std::size_t w1, b1, w2, b2;
};

struct EncoderIds {
  LayerNormIds ln1, ln2;
  std::size_t qkv_w, qkv_b, out_w, out_b;
  FfnIds ffn;
};

struct DecoderIds {
  LayerNormIds ln1, ln2, ln3;
  std::size_t qkv_w, qkv_b, out_w, out_b;
  std::size_t cq_w, cq_b, cout_w, cout_b;
  FfnIds ffn;
};

struct Schema {
  std::vector<ParamSpec> specs;
  std::size_t tokens = 0;
  std::size_t positions = static_cast<std::size_t>(-1);  // learned positions only
  std::size_t out_proj = static_cast<std::size_t>(-1);   // untied output only
  std::vector<EncoderIds> enc;
  std::vector<DecoderIds> dec;
  LayerNormIds enc_final{}, dec_final{};
  std::size_t kv_w = 0, kv_b = 0;  // packed cross-attention keys/values [2 n_dec d, d]

  bool has_positions() const { return positions != static_cast<std::size_t>(-1); }
  bool has_out_proj() const { return out_proj != static_cast<std::size_t>(-1); }
  std::size_t size() const { return specs.size(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& s : specs) n += s.shape.numel();
    return n;
  }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < specs.size(); ++i)
      if (specs[i].name == name) return i;
    throw Error(ErrorCode::UnknownName, "no parameter named '" + name + "'");
  }
};

inline Schema make_schema(const ModelConfig& cfg) {
  cfg.validate();
  Schema s;
  const std::size_t d = cfg.d_model, f = cfg.d_ff;
  auto add = [&](std::string name, Shape shape, Init init, double bound = 0.0) {
    s.specs.push_back({std::move(name), shape, init, bound});
    return s.specs.size() - 1;
  };
  auto glorot = [](std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  };
  auto layer_norm = [&](const std::string& p) {
    return LayerNormIds{add(p + ".w", Shape{d}, Init::Ones), add(p + ".b", Shape{d}, Init::Zeros)};
  };
  auto ffn = [&](const std::string& p) {
    FfnIds ids{};
    ids.w1 = add(p + ".w1", Shape{f, d}, Init::Uniform, glorot(d, f));
    ids.b1 = add(p + ".b1", Shape{f}, Init::Zeros);
    ids.w2 = add(p + ".w2", Shape{d, f}, Init::Uniform, glorot(f, d));
    ids.b2 = add(p + ".b2", Shape{d}, Init::Zeros);
    return ids;
  };

  // Scaled by s at lookup, so the table itself stays around 1/sqrt(d).
  const double embed_bound = std::sqrt(3.0 / static_cast<double>(d));
  s.tokens = add("embed.tokens", Shape{cfg.vocab, d}, Init::Uniform, embed_bound);
  if (cfg.learned_positional) s.positions = add("embed.positions", Shape{cfg.max_len, d}, Init::Uniform, 0.02);

  for (std::size_t l = 0; l < cfg.n_enc; ++l) {
    const std::string p = "enc" + std::to_string(l);
    EncoderIds e{};
    e.ln1 = layer_norm(p + ".ln1");
    e.qkv_w = add(p + ".self.qkv.w", Shape{3 * d, d}, Init::Uniform, glorot(d, d));
    e.qkv_b = add(p + ".self.qkv.b", Shape{3 * d}, Init::Zeros);
    e.out_w = add(p + ".self.out.w", Shape{d, d}, Init::Uniform, glorot(d, d));
    e.out_b = add(p + ".self.out.b", Shape{d}, Init::Zeros);
    e.ln2 = layer_norm(p + ".ln2");
    e.ffn = ffn(p + ".ffn");
    s.enc.push_back(e);
  }
  s.enc_final = layer_norm("enc.final_ln");

  s.kv_w = add("dec.cross_kv.w", Shape{2 * cfg.n_dec * d, d}, Init::Uniform, glorot(d, d));
  s.kv_b = add("dec.cross_kv.b", Shape{2 * cfg.n_dec * d}, Init::Zeros);
  for (std::size_t l = 0; l < cfg.n_dec; ++l) {
    const std::string p = "dec" + std::to_string(l);
    DecoderIds e{};
    e.ln1 = layer_norm(p + ".ln1");
    e.qkv_w = add(p + ".self.qkv.w", Shape{3 * d, d}, Init::Uniform, glorot(d, d));
    e.qkv_b = add(p + ".self.qkv.b", Shape{3 * d}, Init::Zeros);
    e.out_w = add(p + ".self.out.w", Shape{d, d}, Init::Uniform, glorot(d, d));
    e.out_b = add(p + ".self.out.b", Shape{d}, Init::Zeros);
    e.ln2 = layer_norm(p + ".ln2");
    e.cq_w = add(p + ".cross.q.w", Shape{d, d}, Init::Uniform, glorot(d, d));
    e.cq_b = add(p + ".cross.q.b", Shape{d}, Init::Zeros);
    e.cout_w = add(p + ".cross.out.w", Shape{d, d}, Init::Uniform, glorot(d, d));
    e.cout_b = add(p + ".cross.out.b", Shape{d}, Init::Zeros);
    e.ln3 = layer_norm(p + ".ln3");
    e.ffn = ffn(p + ".ffn");
    s.dec.push_back(e);
  }
  s.dec_final = layer_norm("dec.final_ln");
  if (!cfg.tie_embeddings) s.out_proj = add("out_proj.w", Shape{cfg.vocab, d}, Init::Uniform, embed_bound);
  return s;
}

// Deterministic initial values: parameter i, element j draws counter index
// (i << 32) + j from the seed.
inline std::vector<Tensor<double>> init_params(const Schema& schema, std::uint64_t seed) {
  std::vector<Tensor<double>> out;
  out.reserve(schema.size());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const ParamSpec& ps = schema.specs[i];
    Tensor<double> t(ps.shape);
    for (std::size_t j = 0; j < t.numel(); ++j) {
      switch (ps.init) {
        case Init::Zeros: t[j] = 0.0; break;
        case Init::Ones: t[j] = 1.0; break;
        case Init::Uniform:
          t[j] = ps.bound * (2.0 * rand_uniform(seed, (static_cast<std::uint64_t>(i) << 32) + j) - 1.0);
          break;
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

// One parameter as seen by the model: its value and the gradient region the
// backward pass accumulates into.
template <class P>
struct ParamRef {
  TensorView<const P> value;
  TensorView<P> grad;
};

template <class P>
using ParamTable = std::vector<ParamRef<P>>;

// Individually owned parameter and gradient tensors.
template <class P>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const Schema& schema, const std::vector<Tensor<double>>& init) {
    LSF_CHECK(init.size() == schema.size(), ErrorCode::ShapeMismatch, "initial values do not match the schema");
    for (std::size_t i = 0; i < schema.size(); ++i) {
      LSF_CHECK(init[i].shape() == schema.specs[i].shape, ErrorCode::ShapeMismatch,
                "initial value of " + schema.specs[i].name);
      values_.push_back(tensor_cast<P>(init[i]));
      grads_.emplace_back(schema.specs[i].shape);
    }
  }

  std::size_t size() const { return values_.size(); }
  Tensor<P>& value(std::size_t i) { return values_[i]; }
  const Tensor<P>& value(std::size_t i) const { return values_[i]; }
  Tensor<P>& grad(std::size_t i) { return grads_[i]; }
  const Tensor<P>& grad(std::size_t i) const { return grads_[i]; }

  void zero_grads() {
    for (auto& g : grads_) std::fill(g.storage().begin(), g.storage().end(), P{});
  }

  ParamTable<P> table() {
    ParamTable<P> t;
    for (std::size_t i = 0; i < values_.size(); ++i) t.push_back({values_[i].view(), grads_[i].view()});
    return t;
  }

 private:
  std::vector<Tensor<P>> values_;
  std::vector<Tensor<P>> grads_;
};

}  // namespace lsf::model
