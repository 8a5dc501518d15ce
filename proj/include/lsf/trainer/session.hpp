#pragma once

// Training loop: data -> bucketed batches -> arena plan -> fused
// forward/backward on binary16 workspace params -> single-pass optimizer.
//
// Step s (0-based) trains on batch epoch_order(s / nb)[s % nb] with
// dropout seeds derived from (seed, s), so a run resumed from a
// checkpoint at step s replays exactly what an uninterrupted run does.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsf/data/tokens.hpp"
#include "lsf/io/checkpoint.hpp"
#include "lsf/io/config.hpp"
#include "lsf/memplan/capacity.hpp"
#include "lsf/model/transformer.hpp"
#include "lsf/numerics/parallel.hpp"
#include "lsf/trainer/optimizer.hpp"
#include "lsf/trainer/workspace.hpp"

namespace lsf::trainer {

struct StepMetrics {
  std::size_t step = 0;       // 1-based count of completed steps
  double loss = 0.0;          // mean per target token
  std::size_t tokens = 0;
  std::size_t correct = 0;
  bool applied = true;
  double seconds = 0.0;

  double accuracy() const { return tokens ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0; }
};

struct EvalMetrics {
  double loss = 0.0;
  std::size_t tokens = 0;
  std::size_t correct = 0;
  double accuracy() const { return tokens ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0; }
};

struct Dataset {
  std::vector<model::Batch> train, eval;
  data::DatasetStats stats;  // over train and eval
};

inline Dataset build_dataset(const io::RunConfig& c) {
  const auto sp = data::Specials::for_pad(c.data.pad_id);
  std::vector<data::Pair> train, eval;
  if (c.data.task == data::Task::File) {
    auto seqs = data::load_token_file(c.data.path, c.model.vocab);
    LSF_CHECK(!seqs.empty(), ErrorCode::ParseError, "token file '" + c.data.path + "' has no sequences");
    for (const auto& s : seqs)
      LSF_CHECK(s.size() + 1 <= c.model.max_len, ErrorCode::SequenceTooLong,
                "sequence of length " + std::to_string(s.size()) + " does not fit max_len");
    auto pairs = data::make_pairs(seqs, data::Task::File);
    // every eval_size-th pair is held out when there are enough of them
    const std::size_t stride = c.data.eval_size && pairs.size() > 2 * c.data.eval_size
                                   ? pairs.size() / c.data.eval_size
                                   : 0;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      (stride && i % stride == stride - 1 ? eval : train).push_back(pairs[i]);
    if (eval.empty()) eval = train;
  } else {
    const std::size_t hi = c.max_sequence();
    train = data::make_pairs(
        data::random_sequences(c.data.train_size, c.data.min_len, hi, c.model.vocab, c.train.seed), c.data.task);
    eval = data::make_pairs(data::random_sequences(std::max<std::size_t>(c.data.eval_size, 1), c.data.min_len, hi,
                                                   c.model.vocab, ~c.train.seed),
                            c.data.task);
  }
  Dataset d;
  d.train = data::bucket_batches(train, c.train.batch_tokens, sp);
  d.eval = data::bucket_batches(eval, c.train.batch_tokens, sp);
  const auto a = data::scan(d.train), b = data::scan(d.eval);
  d.stats = {std::max(a.max_batch, b.max_batch), std::max(a.max_src_len, b.max_src_len),
             std::max(a.max_tgt_len, b.max_tgt_len), a.batches};
  return d;
}

class Session {
 public:
  using Net = model::Transformer<float, Half>;

  explicit Session(io::RunConfig cfg) : cfg_(std::move(cfg)), data_(build_dataset(cfg_)), net_(cfg_.model) {
    set_num_threads(cfg_.train.threads);
    ws_ = Workspace::pack(net_.schema(), model::init_params(net_.schema(), cfg_.train.seed));
    table_ = ws_.table(net_.schema());
    capacity_ = memplan::plan_arena(net_, table_, data_.stats, arena_);
    ws_.zero_grads();
  }

  const io::RunConfig& config() const { return cfg_; }
  const Dataset& dataset() const { return data_; }
  Net& net() { return net_; }
  Workspace& workspace() { return ws_; }
  const memplan::ScratchArena& arena() const { return arena_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t step() const { return step_; }
  std::size_t skipped() const { return skipped_; }

  const model::Batch& batch_for(std::size_t s) {
    const std::size_t nb = data_.train.size();
    const std::size_t epoch = s / nb;
    if (order_epoch_ != epoch || order_.empty()) {
      order_ = data::epoch_order(nb, cfg_.train.seed, epoch);
      order_epoch_ = epoch;
    }
    return data_.train[order_[s % nb]];
  }

  float learning_rate(std::size_t s) const {
    const double w = static_cast<double>(cfg_.train.warmup_steps);
    double f = w > 0 ? std::min(1.0, static_cast<double>(s + 1) / w) : 1.0;
    if (cfg_.train.lr_decay && cfg_.train.steps > 0) {
      const double progress = std::min(1.0, static_cast<double>(s) / static_cast<double>(cfg_.train.steps));
      f *= 1.0 - 0.9 * progress;
    }
    return static_cast<float>(cfg_.train.lr * f);
  }

  StepMetrics train_step() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t s = step_;
    const model::Batch& b = batch_for(s);
    ws_.zero_grads();
    model::StepOptions opt{cfg_.train.p_drop, cfg_.train.alpha, cfg_.train.seed, s, cfg_.train.loss_scale};
    const auto r = net_.forward_backward(b, opt, table_, arena_);
    OptimConfig oc = cfg_.optim();
    oc.lr = learning_rate(s);
    const StepReport rep = optimizer_step(ws_, oc, s + 1);
    if (!rep.applied) {
      ++skipped_;
      LSF_CHECK(skipped_ <= cfg_.train.skip_budget, ErrorCode::NonFiniteGradient,
                "non-finite gradients on " + std::to_string(skipped_) + " steps, budget " +
                    std::to_string(cfg_.train.skip_budget));
    }
    ++step_;
    StepMetrics m{step_, r.mean_loss(), r.tokens, r.correct, rep.applied, 0.0};
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return m;
  }

  // Teacher-forced next-token accuracy on the held-out batches, no dropout.
  EvalMetrics evaluate() {
    EvalMetrics e;
    memplan::ScratchArena scratch(sizeof(float));
    model::StepOptions opt{0.0, cfg_.train.alpha, cfg_.train.seed, step_, 1.0};
    for (const auto& b : data_.eval) {
      const auto r = net_.forward_backward(b, opt, table_, scratch, false);
      e.loss += r.loss;
      e.tokens += r.tokens;
      e.correct += r.correct;
    }
    if (e.tokens) e.loss /= static_cast<double>(e.tokens);
    return e;
  }

  io::Checkpoint checkpoint() const { return io::to_checkpoint(ws_, step_); }

  void resume(const io::Checkpoint& ck) {
    Workspace ws = io::from_checkpoint(ck);
    LSF_CHECK(ws.size() == ws_.size(), ErrorCode::ShapeMismatch, "checkpoint does not match the model");
    ws.table(net_.schema());  // validates names and shapes
    ws_ = std::move(ws);
    table_ = ws_.table(net_.schema());
    step_ = static_cast<std::size_t>(ck.step);
  }

  nlohmann::json metrics_json(const StepMetrics& m) const {
    const double tps = m.seconds > 0 ? static_cast<double>(m.tokens) / m.seconds : 0.0;
    return {{"step", m.step},
            {"loss", m.loss},
            {"accuracy", m.accuracy()},
            {"tokens", m.tokens},
            {"applied", m.applied},
            {"tokens_per_sec", tps},
            {"high_water", arena_.stats().high_water},
            {"capacity", capacity_},
            {"reallocations", arena_.stats().reallocations}};
  }

 private:
  io::RunConfig cfg_;
  Dataset data_;
  Net net_;
  Workspace ws_;
  model::ParamTable<Half> table_;
  memplan::ScratchArena arena_{sizeof(float)};
  std::size_t capacity_ = 0;
  std::size_t step_ = 0;
  std::size_t skipped_ = 0;
  std::vector<std::size_t> order_;
  std::size_t order_epoch_ = 0;
};

}  // namespace lsf::trainer
