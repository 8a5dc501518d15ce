#pragma once

// JSON run configuration: {"model": {...}, "train": {...}, "data": {...}}.
// Missing keys keep their defaults; unknown keys are rejected.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "lsf/data/tokens.hpp"
#include "lsf/error.hpp"
#include "lsf/model/config.hpp"
#include "lsf/trainer/optimizer.hpp"

namespace lsf::io {

using nlohmann::json;

struct TrainConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps_opt = 1e-8;
  double weight_decay = 0.0;
  double momentum = 0.0;
  double alpha = 0.1;
  double p_drop = 0.1;
  std::uint64_t seed = 1;
  std::size_t batch_tokens = 256;
  std::size_t steps = 2000;
  std::size_t warmup_steps = 100;
  bool lr_decay = true;   // linear decay to lr/10 at `steps`
  trainer::Algorithm algorithm = trainer::Algorithm::Adam;
  double loss_scale = 1.0;
  std::size_t log_every = 50;
  std::size_t checkpoint_every = 0;  // 0 disables
  std::string checkpoint_path = "checkpoint.lsf";
  std::size_t skip_budget = 10;      // non-finite steps tolerated
  std::size_t threads = 1;
};

struct DataConfig {
  data::Task task = data::Task::Copy;
  std::string path;
  std::int32_t pad_id = 0;
  std::size_t train_size = 4096;
  std::size_t eval_size = 256;
  std::size_t min_len = 2;
  std::size_t max_len = 0;  // 0 selects model max_len - 1
};

struct RunConfig {
  model::ModelConfig model;
  TrainConfig train;
  DataConfig data;

  std::size_t max_sequence() const { return data.max_len ? data.max_len : model.max_len - 1; }

  trainer::OptimConfig optim() const {
    trainer::OptimConfig o;
    o.algorithm = train.algorithm;
    o.lr = static_cast<float>(train.lr);
    o.beta1 = static_cast<float>(train.beta1);
    o.beta2 = static_cast<float>(train.beta2);
    o.eps = static_cast<float>(train.eps_opt);
    o.weight_decay = static_cast<float>(train.weight_decay);
    o.momentum = static_cast<float>(train.momentum);
    o.loss_scale = static_cast<float>(train.loss_scale);
    return o;
  }

  void validate() const {
    model.validate();
    optim().validate();
    LSF_CHECK(train.alpha >= 0.0 && train.alpha <= 1.0, ErrorCode::InvalidArgument, "alpha must be in [0, 1]");
    LSF_CHECK(train.p_drop >= 0.0 && train.p_drop < 1.0, ErrorCode::InvalidArgument, "p_drop must be in [0, 1)");
    LSF_CHECK(train.batch_tokens >= model.max_len, ErrorCode::InvalidArgument, "batch_tokens must be >= max_len");
    LSF_CHECK(train.threads >= 1, ErrorCode::InvalidArgument, "threads must be >= 1");
    LSF_CHECK(data.pad_id == model.pad_id, ErrorCode::InvalidArgument, "pad_id mismatch");
    data::Specials::for_pad(data.pad_id);
    LSF_CHECK(data.task != data::Task::File || !data.path.empty(), ErrorCode::InvalidArgument,
              "file task needs data.path");
    LSF_CHECK(data.min_len >= 1 && data.min_len <= max_sequence(), ErrorCode::InvalidArgument,
              "data.min_len outside [1, max sequence length]");
    LSF_CHECK(max_sequence() + 1 <= model.max_len, ErrorCode::InvalidArgument,
              "data.max_len + 1 must fit model.max_len");
    LSF_CHECK(data.train_size >= 1, ErrorCode::InvalidArgument, "train_size must be >= 1");
  }
};

namespace detail {

inline void check_keys(const json& obj, const std::string& section, const std::set<std::string>& allowed) {
  LSF_CHECK(obj.is_object(), ErrorCode::ParseError, "'" + section + "' must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    LSF_CHECK(allowed.count(it.key()), ErrorCode::ParseError, "unknown key '" + section + "." + it.key() + "'");
}

template <class V>
void read(const json& obj, const char* key, V& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<V>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline RunConfig parse_config(const json& j) {
  RunConfig c;
  detail::check_keys(j, "config", {"model", "train", "data"});
  if (j.contains("model")) {
    const json& m = j["model"];
    detail::check_keys(m, "model", {"n_enc", "n_dec", "d_model", "n_heads", "d_ff", "vocab", "max_len", "pre_ln",
                                    "tie_embeddings", "learned_positional", "embed_scale", "ln_eps"});
    detail::read(m, "n_enc", c.model.n_enc);
    detail::read(m, "n_dec", c.model.n_dec);
    detail::read(m, "d_model", c.model.d_model);
    detail::read(m, "n_heads", c.model.n_heads);
    detail::read(m, "d_ff", c.model.d_ff);
    detail::read(m, "vocab", c.model.vocab);
    detail::read(m, "max_len", c.model.max_len);
    detail::read(m, "pre_ln", c.model.pre_ln);
    detail::read(m, "tie_embeddings", c.model.tie_embeddings);
    detail::read(m, "learned_positional", c.model.learned_positional);
    detail::read(m, "embed_scale", c.model.embed_scale);
    detail::read(m, "ln_eps", c.model.ln_eps);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    detail::check_keys(t, "train", {"lr", "beta1", "beta2", "eps_opt", "weight_decay", "momentum", "alpha", "p_drop",
                                    "seed", "batch_tokens", "steps", "warmup_steps", "lr_decay", "algorithm", "loss_scale",
                                    "log_every", "checkpoint_every", "checkpoint_path", "skip_budget", "threads"});
    detail::read(t, "lr", c.train.lr);
    detail::read(t, "beta1", c.train.beta1);
    detail::read(t, "beta2", c.train.beta2);
    detail::read(t, "eps_opt", c.train.eps_opt);
    detail::read(t, "weight_decay", c.train.weight_decay);
    detail::read(t, "momentum", c.train.momentum);
    detail::read(t, "alpha", c.train.alpha);
    detail::read(t, "p_drop", c.train.p_drop);
    detail::read(t, "seed", c.train.seed);
    detail::read(t, "batch_tokens", c.train.batch_tokens);
    detail::read(t, "steps", c.train.steps);
    detail::read(t, "warmup_steps", c.train.warmup_steps);
    detail::read(t, "lr_decay", c.train.lr_decay);
    detail::read(t, "loss_scale", c.train.loss_scale);
    detail::read(t, "log_every", c.train.log_every);
    detail::read(t, "checkpoint_every", c.train.checkpoint_every);
    detail::read(t, "checkpoint_path", c.train.checkpoint_path);
    detail::read(t, "skip_budget", c.train.skip_budget);
    detail::read(t, "threads", c.train.threads);
    if (t.contains("algorithm")) {
      std::string a;
      detail::read(t, "algorithm", a);
      if (a == "adam") c.train.algorithm = trainer::Algorithm::Adam;
      else if (a == "sgd") c.train.algorithm = trainer::Algorithm::SGD;
      else throw Error(ErrorCode::ParseError, "algorithm must be 'adam' or 'sgd'");
    }
  }
  if (j.contains("data")) {
    const json& d = j["data"];
    detail::check_keys(d, "data", {"task", "path", "pad_id", "train_size", "eval_size", "min_len", "max_len"});
    if (d.contains("task")) {
      std::string task;
      detail::read(d, "task", task);
      try {
        c.data.task = data::parse_task(task);
      } catch (const Error& e) {
        throw Error(ErrorCode::ParseError, e.what());
      }
    }
    detail::read(d, "path", c.data.path);
    detail::read(d, "pad_id", c.data.pad_id);
    detail::read(d, "train_size", c.data.train_size);
    detail::read(d, "eval_size", c.data.eval_size);
    detail::read(d, "min_len", c.data.min_len);
    detail::read(d, "max_len", c.data.max_len);
  }
  c.model.pad_id = c.data.pad_id;
  c.validate();
  return c;
}

inline RunConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  LSF_CHECK(in.good(), ErrorCode::IoError, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline json to_json(const RunConfig& c) {
  return json{
      {"model",
       {{"n_enc", c.model.n_enc}, {"n_dec", c.model.n_dec}, {"d_model", c.model.d_model},
        {"n_heads", c.model.n_heads}, {"d_ff", c.model.d_ff}, {"vocab", c.model.vocab},
        {"max_len", c.model.max_len}, {"pre_ln", c.model.pre_ln}, {"tie_embeddings", c.model.tie_embeddings},
        {"learned_positional", c.model.learned_positional}, {"embed_scale", c.model.scale()},
        {"ln_eps", c.model.ln_eps}}},
      {"train",
       {{"lr", c.train.lr}, {"beta1", c.train.beta1}, {"beta2", c.train.beta2}, {"eps_opt", c.train.eps_opt},
        {"weight_decay", c.train.weight_decay}, {"momentum", c.train.momentum}, {"alpha", c.train.alpha},
        {"p_drop", c.train.p_drop}, {"seed", c.train.seed}, {"batch_tokens", c.train.batch_tokens},
        {"steps", c.train.steps}, {"warmup_steps", c.train.warmup_steps},
        {"lr_decay", c.train.lr_decay},
        {"algorithm", trainer::to_string(c.train.algorithm)}, {"loss_scale", c.train.loss_scale},
        {"log_every", c.train.log_every}, {"checkpoint_every", c.train.checkpoint_every},
        {"checkpoint_path", c.train.checkpoint_path}, {"skip_budget", c.train.skip_budget},
        {"threads", c.train.threads}}},
      {"data",
       {{"task", data::to_string(c.data.task)}, {"path", c.data.path}, {"pad_id", c.data.pad_id},
        {"train_size", c.data.train_size}, {"eval_size", c.data.eval_size}, {"min_len", c.data.min_len},
        {"max_len", c.max_sequence()}}}};
}

}  // namespace lsf::io
