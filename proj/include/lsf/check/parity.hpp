#pragma once

// Fused-versus-oracle comparisons of whole layers.
//
// The fused side runs a Transformer<double, double> layer probe; the oracle
// side builds the same layer from unfused tape primitives with per-layer
// (unpacked) cross-attention projections. Errors are relative_error per
// tensor, worst reported.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "lsf/memplan/arena.hpp"
#include "lsf/model/transformer.hpp"
#include "lsf/oracle/fd.hpp"
#include "lsf/oracle/reference.hpp"

namespace lsf::check {

struct ParityReport {
  double output = 0.0;   // layer output
  double input = 0.0;    // gradient at the layer input (and memory, decoder)
  double params = 0.0;   // worst parameter gradient
  std::string worst_param;

  double worst() const { return std::max({output, input, params}); }
};

struct LayerFixture {
  model::ModelConfig cfg;
  model::Batch batch;
  model::StepOptions opt;
  std::vector<Tensor<double>> values;
  Tensor<double> x, memory, dy;  // x and dy are [rows, d] of the probed stream
};

inline LayerFixture make_layer_fixture(const model::ModelConfig& cfg, const model::Batch& batch,
                                       const model::StepOptions& opt, std::uint64_t seed, bool decoder) {
  LayerFixture f{cfg, batch, opt, model::init_params(model::make_schema(cfg), seed), {}, {}, {}};
  const std::size_t rows = decoder ? batch.tgt_rows() : batch.src_rows();
  auto fill = [&](Tensor<double>& t, std::size_t r, std::uint64_t site) {
    t = Tensor<double>(Shape{r, cfg.d_model});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = 2.0 * rand_uniform(derive_seed(seed, 99, site), i) - 1.0;
  };
  fill(f.x, rows, 1);
  fill(f.dy, rows, 2);
  fill(f.memory, batch.src_rows(), 3);
  return f;
}

namespace detail {

inline void note(ParityReport& r, const std::string& name, double e) {
  if (e > r.params) {
    r.params = e;
    r.worst_param = name;
  }
}

}  // namespace detail

inline ParityReport encoder_layer_parity(const LayerFixture& f, std::size_t l) {
  model::Transformer<double, double> net(f.cfg);
  model::ParamStore<double> store(net.schema(), f.values);
  memplan::ScratchArena arena(sizeof(double));
  const auto probe = net.encoder_layer(f.batch, f.opt, store.table(), arena, l, f.x.view(), f.dy.view());

  oracle::Tape t;
  std::vector<oracle::Id> ids;
  for (const auto& v : f.values) ids.push_back(oracle::leaf_of(t, v));
  const oracle::LayerContext c{f.cfg, f.batch, f.opt, ids};
  const oracle::Id x = oracle::leaf_of(t, f.x);
  const oracle::Id y = oracle::reference_encoder_layer(t, x, l, net.schema(), c);
  t.backward(oracle::weighted_sum(t, y, f.dy.storage()));

  ParityReport r;
  r.output = oracle::relative_error(probe.y.storage(), t.value(y));
  r.input = oracle::relative_error(probe.dx.storage(), t.grad(x));
  for (std::size_t i = 0; i < ids.size(); ++i)
    detail::note(r, net.schema().specs[i].name, oracle::relative_error(store.grad(i).storage(), t.grad(ids[i])));
  return r;
}

inline ParityReport decoder_layer_parity(const LayerFixture& f, std::size_t l) {
  model::Transformer<double, double> net(f.cfg);
  model::ParamStore<double> store(net.schema(), f.values);
  memplan::ScratchArena arena(sizeof(double));
  const auto probe =
      net.decoder_layer(f.batch, f.opt, store.table(), arena, l, f.x.view(), f.memory.view(), f.dy.view());

  oracle::Tape t;
  std::vector<oracle::Id> ids;
  for (const auto& v : f.values) ids.push_back(oracle::leaf_of(t, v));
  const oracle::LayerContext c{f.cfg, f.batch, f.opt, ids};
  const oracle::Id x = oracle::leaf_of(t, f.x);
  const oracle::Id mem = oracle::leaf_of(t, f.memory);
  const oracle::Id y = oracle::reference_decoder_layer(t, x, mem, l, net.schema(), c);
  t.backward(oracle::weighted_sum(t, y, f.dy.storage()));

  ParityReport r;
  r.output = oracle::relative_error(probe.y.storage(), t.value(y));
  r.input = std::max(oracle::relative_error(probe.dx.storage(), t.grad(x)),
                     oracle::relative_error(probe.dmemory.storage(), t.grad(mem)));
  for (std::size_t i = 0; i < ids.size(); ++i)
    detail::note(r, net.schema().specs[i].name, oracle::relative_error(store.grad(i).storage(), t.grad(ids[i])));
  return r;
}

}  // namespace lsf::check
