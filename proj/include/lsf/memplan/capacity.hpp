#pragma once

// Arena sizing from a dataset scan: one planning pass of a full training
// step on a dummy batch of the worst-case shape (largest batch, longest
// source, longest target). Every buffer request of a real step has the
// same order and label and is no larger, so the plan covers all batches.

#include <cstddef>
#include <vector>

#include "lsf/data/tokens.hpp"
#include "lsf/memplan/arena.hpp"
#include "lsf/model/transformer.hpp"

namespace lsf::memplan {

inline model::Batch worst_case_batch(const data::DatasetStats& stats, const model::ModelConfig& cfg) {
  LSF_CHECK(stats.max_batch >= 1 && stats.max_src_len >= 1 && stats.max_tgt_len >= 2, ErrorCode::InvalidArgument,
            "dataset scan is empty");
  const auto sp = data::Specials::for_pad(cfg.pad_id);
  std::vector<data::Sequence> src(stats.max_batch, data::Sequence(stats.max_src_len, data::kFirstContentToken));
  std::vector<data::Sequence> tgt(stats.max_batch, data::Sequence(stats.max_tgt_len - 1, data::kFirstContentToken));
  return model::make_batch(src, tgt, sp.pad, sp.bos, sp.eos);
}

// Runs the planning pass inside `arena`, leaving it in execution mode.
template <class T, class P>
std::size_t plan_arena(model::Transformer<T, P>& net, const model::ParamTable<P>& params,
                       const data::DatasetStats& stats, ScratchArena& arena) {
  const model::Batch b = worst_case_batch(stats, net.config());
  model::StepOptions opt;
  opt.p_drop = 0.5;
  arena.begin_planning();
  net.forward_backward(b, opt, params, arena, true);
  return arena.finish_planning().peak;
}

// Arena element count (units of sizeof(T)) for a dataset.
template <class T = float, class P = Half>
std::size_t estimate_capacity(const data::DatasetStats& stats, const model::ModelConfig& cfg) {
  model::Transformer<T, P> net(cfg);
  model::ParamStore<P> store(net.schema(), model::init_params(net.schema(), 0));
  ScratchArena arena(sizeof(T));
  return plan_arena(net, store.table(), stats, arena);
}

}  // namespace lsf::memplan
