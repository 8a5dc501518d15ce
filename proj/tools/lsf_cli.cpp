// lsf: train / gradcheck / plan / bench / export.
// Machine output is line-delimited JSON on stdout; diagnostics go to stderr.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lsf/check/bench.hpp"
#include "lsf/check/gradcheck.hpp"
#include "lsf/io/checkpoint.hpp"
#include "lsf/io/config.hpp"
#include "lsf/memplan/attention_bwd.hpp"
#include "lsf/memplan/planner.hpp"
#include "lsf/memplan/simulate.hpp"
#include "lsf/trainer/session.hpp"

using nlohmann::json;
using namespace lsf;

namespace {

enum Exit { kOk = 0, kConfig = 1, kData = 2, kNonFinite = 3, kCheckFailed = 4 };

void emit(const json& j) {
  std::cout << j.dump() << '\n';
  std::cout.flush();
}

int fail(int code, const std::string& msg) {
  std::cerr << "lsf: " << msg << '\n';
  return code;
}

// ---- train ------------------------------------------------------------

struct TrainArgs {
  std::string config, checkpoint, resume;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads, steps, checkpoint_every;
  bool json = false, no_timing = false;
};

int run_train(const TrainArgs& a) {
  io::RunConfig cfg;
  try {
    if (!a.config.empty()) cfg = io::load_config(a.config);
    if (a.seed) cfg.train.seed = *a.seed;
    if (a.threads) cfg.train.threads = *a.threads;
    if (a.steps) cfg.train.steps = *a.steps;
    if (a.checkpoint_every) cfg.train.checkpoint_every = *a.checkpoint_every;
    if (!a.checkpoint.empty()) cfg.train.checkpoint_path = a.checkpoint;
    cfg.validate();
  } catch (const std::exception& e) {
    return fail(kConfig, e.what());
  }

  std::optional<trainer::Session> session;
  try {
    session.emplace(cfg);
    if (!a.resume.empty()) session->resume(io::load_checkpoint(a.resume));
  } catch (const std::exception& e) {
    return fail(kData, e.what());
  }
  trainer::Session& s = *session;

  if (cfg.train.steps == 0) {
    emit({{"kind", "config"}, {"config", io::to_json(cfg)}, {"arena_capacity", s.capacity()},
          {"train_batches", s.dataset().train.size()}, {"eval_batches", s.dataset().eval.size()}});
    return kOk;
  }
  if (!a.json)
    std::cerr << "training " << cfg.train.steps << " steps, " << s.dataset().train.size() << " batches, arena "
              << s.capacity() << " units\n";

  auto save = [&] { io::save_checkpoint(cfg.train.checkpoint_path, s.checkpoint()); };
  try {
    double loss = 0.0, seconds = 0.0;
    std::size_t tokens = 0, correct = 0, n = 0;
    while (s.step() < cfg.train.steps) {
      const trainer::StepMetrics m = s.train_step();
      // window averages over the log interval
      loss += m.loss * static_cast<double>(m.tokens);
      tokens += m.tokens;
      correct += m.correct;
      seconds += m.seconds;
      ++n;
      if (m.step % cfg.train.log_every == 0 || m.step == cfg.train.steps) {
        trainer::StepMetrics w{m.step, tokens ? loss / static_cast<double>(tokens) : 0.0, tokens, correct,
                               m.applied, seconds};
        json j = s.metrics_json(w);
        j["kind"] = "step";
        j["skipped"] = s.skipped();
        if (a.no_timing) j.erase("tokens_per_sec");
        emit(j);
        loss = seconds = 0.0;
        tokens = correct = n = 0;
      }
      if (cfg.train.checkpoint_every && m.step % cfg.train.checkpoint_every == 0) save();
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NonFiniteGradient) return fail(kNonFinite, e.what());
    return fail(kData, e.what());
  }
  if (cfg.train.checkpoint_every || !a.checkpoint.empty()) save();

  const trainer::EvalMetrics e = s.evaluate();
  emit({{"kind", "eval"}, {"step", s.step()}, {"loss", e.loss}, {"accuracy", e.accuracy()}, {"tokens", e.tokens},
        {"reallocations", s.arena().stats().reallocations}, {"high_water", s.arena().stats().high_water},
        {"capacity", s.capacity()}});
  return kOk;
}

// ---- gradcheck --------------------------------------------------------

struct GradcheckArgs {
  std::string config, fault;
  std::optional<std::uint64_t> seed;
  std::size_t instances = 100;
};

int run_gradcheck(const GradcheckArgs& a) {
  io::RunConfig cfg;
  try {
    if (!a.config.empty()) cfg = io::load_config(a.config);
    if (a.seed) cfg.train.seed = *a.seed;
  } catch (const std::exception& e) {
    return fail(kConfig, e.what());
  }
  const auto& ops = check::op_names();
  if (!a.fault.empty() && a.fault != "model" && std::find(ops.begin(), ops.end(), a.fault) == ops.end())
    return fail(kConfig, "unknown op '" + a.fault + "'");

  std::vector<std::string> failed;
  for (const auto& op : ops) {
    const auto r = check::run_op(op, a.instances, cfg.train.seed, op == a.fault);
    emit({{"op", op}, {"max_rel_error", r.max_rel_error}, {"tolerance", r.tolerance}, {"instances", r.instances},
          {"pass", r.pass()}});
    if (!r.pass()) failed.push_back(op);
  }
  // whole model: tiny fixed shape so the oracle FD sweep stays cheap
  const model::StepOptions opt{0.1, cfg.train.alpha, cfg.train.seed, 0, 1.0};
  const double err = check::check_model(check::gradcheck_model_config(), check::gradcheck_batch(), opt,
                                        cfg.train.seed, a.fault == "model");
  const bool ok = std::isfinite(err) && err <= check::kModelTolerance;
  emit({{"op", "model"}, {"max_rel_error", err}, {"tolerance", check::kModelTolerance}, {"instances", 1},
        {"pass", ok}});
  if (!ok) failed.push_back("model");

  if (failed.empty()) return kOk;
  std::string names;
  for (const auto& f : failed) names += (names.empty() ? "" : ", ") + f;
  return fail(kCheckFailed, "gradient check failed: " + names);
}

// ---- plan -------------------------------------------------------------

std::vector<memplan::Lifetime> read_lifetimes(const std::string& path) {
  std::ifstream in(path);
  LSF_CHECK(in.good(), ErrorCode::IoError, "cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
  LSF_CHECK(j.is_array(), ErrorCode::ParseError, "lifetime table must be a JSON array");
  std::vector<memplan::Lifetime> out;
  for (const auto& e : j) {
    LSF_CHECK(e.is_object(), ErrorCode::ParseError, "lifetime entries must be objects");
    auto field = [&](const char* k) {
      LSF_CHECK(e.contains(k) && e[k].is_number_unsigned(), ErrorCode::ParseError,
                std::string("entry needs non-negative integer '") + k + "'");
      return e[k].get<std::uint64_t>();
    };
    memplan::Lifetime t;
    t.id = field("id");
    t.size = field("size");
    t.first = field("first");
    t.last = field("last");
    if (e.contains("label")) t.label = e["label"].get<std::string>();
    for (const auto& o : out) LSF_CHECK(o.id != t.id, ErrorCode::ParseError, "duplicate id " + std::to_string(t.id));
    memplan::validate(t);
    out.push_back(t);
  }
  return out;
}

// One text row per step; columns are arena address bands.
std::string diagram(const memplan::MemoryPlan& p, const std::vector<memplan::Lifetime>& ts) {
  if (ts.empty() || p.peak == 0) return "";
  const std::size_t cols = std::min<std::size_t>(p.peak, 64);
  std::size_t lo = ts[0].first, hi = ts[0].last;
  for (const auto& t : ts) {
    lo = std::min(lo, t.first);
    hi = std::max(hi, t.last);
  }
  const std::string glyphs = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
  std::string out = "step | arena 0.." + std::to_string(p.peak) + "\n";
  for (std::size_t s = lo; s <= hi; ++s) {
    std::string row(cols, '.');
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const auto& t = ts[i];
      if (s < t.first || s > t.last) continue;
      const std::size_t off = p.offset_of(t.id);
      const std::size_t c0 = off * cols / p.peak, c1 = std::max(c0 + 1, (off + t.size) * cols / p.peak);
      for (std::size_t c = c0; c < c1 && c < cols; ++c) row[c] = glyphs[i % glyphs.size()];
    }
    char buf[16];
    std::snprintf(buf, sizeof buf, "%4zu | ", s);
    out += buf + row + "\n";
  }
  for (std::size_t i = 0; i < ts.size(); ++i) {
    out += "  ";
    out += glyphs[i % glyphs.size()];
    out += " id=" + std::to_string(ts[i].id) + " size=" + std::to_string(ts[i].size) + " offset=" +
           std::to_string(p.offset_of(ts[i].id));
    if (!ts[i].label.empty()) out += " " + ts[i].label;
    out += "\n";
  }
  return out;
}

struct PlanArgs {
  std::vector<std::size_t> attn;
  std::string file;
  bool json = false;
};

int run_plan(const PlanArgs& a) {
  std::vector<memplan::Lifetime> ts;
  json extra;
  try {
    if (!a.attn.empty() == !a.file.empty()) throw Error(ErrorCode::InvalidArgument, "give --attn-bwd or a lifetime file");
    if (!a.attn.empty()) {
      const memplan::PlanShape s{a.attn[0], a.attn[1], a.attn[2], a.attn[3]};
      ts = memplan::attention_backward_lifetimes(s);
      extra = {{"B", s.batch}, {"H", s.hidden}, {"L", s.length}, {"N", s.heads}};
    } else {
      ts = read_lifetimes(a.file);
    }
  } catch (const std::exception& e) {
    return fail(kConfig, e.what());
  }
  const memplan::MemoryPlan p = memplan::plan(ts);
  const std::size_t naive = memplan::naive_peak(ts);
  const auto safety = memplan::simulate_plan_safety(p, ts);

  json blocks = json::array();
  for (const auto& b : p.blocks) blocks.push_back({{"id", b.id}, {"size", b.size}, {"offset", b.offset}, {"tensors", b.tensors}});
  json j{{"peak", p.peak},
         {"naive_peak", naive},
         {"savings", naive ? 1.0 - static_cast<double>(p.peak) / static_cast<double>(naive) : 0.0},
         {"blocks", blocks},
         {"safe", safety.ok}};
  if (!extra.is_null()) j["shape"] = extra;
  emit(j);
  if (!a.json) std::cout << diagram(p, ts);
  return safety.ok ? kOk : fail(kCheckFailed, "plan failed the overlap replay");
}

// ---- bench ------------------------------------------------------------

struct BenchArgs {
  std::string config;
  std::optional<std::size_t> threads;
  check::BenchConfig bc;
  bool json = false;
};

int run_bench(const BenchArgs& a) {
  std::size_t threads = 1;
  try {
    if (!a.config.empty()) threads = io::load_config(a.config).train.threads;
  } catch (const std::exception& e) {
    return fail(kConfig, e.what());
  }
  if (a.threads) threads = *a.threads;
  std::vector<std::size_t> counts{1};
  if (threads > 1) counts.push_back(threads);

  const auto entries = check::run_bench(a.bc, counts);
  if (a.json) {
    for (const auto& e : entries)
      emit({{"op", e.op},
            {"threads", e.threads},
            {"fused_mean_ms", e.fused.mean_ms},
            {"fused_stddev_ms", e.fused.stddev_ms},
            {"unfused_mean_ms", e.unfused.mean_ms},
            {"unfused_stddev_ms", e.unfused.stddev_ms},
            {"speedup", e.speedup()},
            {"parity_error", e.parity_error},
            {"parity_ok", e.parity_ok()},
            {"runs", a.bc.runs},
            {"warmup", a.bc.warmup}});
    return kOk;
  }
  std::printf("%-32s %3s %12s %12s %8s %10s\n", "op", "thr", "fused ms", "unfused ms", "speedup", "parity");
  for (const auto& e : entries)
    std::printf("%-32s %3zu %6.3f±%-5.3f %6.3f±%-5.3f %8.2f %10.2e%s\n", e.op.c_str(), e.threads, e.fused.mean_ms,
                e.fused.stddev_ms, e.unfused.mean_ms, e.unfused.stddev_ms, e.speedup(), e.parity_error,
                e.parity_ok() ? "" : " MISMATCH");
  return kOk;
}

// ---- export -----------------------------------------------------------

int run_export(const std::string& path) {
  io::Checkpoint c;
  try {
    c = io::load_checkpoint(path);
  } catch (const std::exception& e) {
    return fail(kData, e.what());
  }
  json recs = json::array();
  std::size_t params = 0;
  for (const auto& r : c.records) {
    double lo = INFINITY, hi = -INFINITY, sum = 0.0, sq = 0.0;
    const std::size_t n = r.numel();
    for (std::size_t i = 0; i < n; ++i) {
      double v;
      if (r.dtype == DType::B16) {
        std::uint16_t bits;
        std::memcpy(&bits, r.bytes.data() + 2 * i, 2);
        v = static_cast<double>(half_to_float(Half::from_bits(bits)));
      } else {
        float f;
        std::memcpy(&f, r.bytes.data() + 4 * i, 4);
        v = f;
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
      sq += v * v;
    }
    if (r.name.rfind("param/", 0) == 0) params += n;
    recs.push_back({{"name", r.name},
                    {"dtype", r.dtype == DType::B16 ? "binary16" : "binary32"},
                    {"dims", r.dims},
                    {"numel", n},
                    {"min", n ? lo : 0.0},
                    {"max", n ? hi : 0.0},
                    {"mean", n ? sum / static_cast<double>(n) : 0.0},
                    {"l2", std::sqrt(sq)}});
  }
  emit({{"format", "LSF2"}, {"version", io::kVersion}, {"step", c.step}, {"parameters", params}, {"records", recs}});
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lsf: mixed-precision Transformer training engine"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train on a synthetic or file task");
  train->add_option("--config", ta.config, "JSON run config (default: tiny copy task)");
  train->add_option("--seed", ta.seed, "override train.seed");
  train->add_option("--threads", ta.threads, "override train.threads")->check(CLI::PositiveNumber);
  train->add_option("--steps", ta.steps, "override train.steps (0: dry run)");
  train->add_option("--checkpoint", ta.checkpoint, "checkpoint path; also saves at the end");
  train->add_option("--checkpoint-every", ta.checkpoint_every, "override train.checkpoint_every");
  train->add_option("--resume", ta.resume, "resume from a checkpoint");
  train->add_flag("--json", ta.json, "JSON lines only, no stderr progress");
  train->add_flag("--no-timing", ta.no_timing, "drop wall-clock fields so logs are reproducible");

  GradcheckArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every fused op and a tiny model");
  gc->add_option("--config", ga.config, "JSON run config (seed, alpha)");
  gc->add_option("--seed", ga.seed, "override seed");
  gc->add_option("--instances", ga.instances, "random instances per op")->check(CLI::PositiveNumber);
  gc->add_option("--inject-fault", ga.fault, "flip the sign of one op's analytic gradient (op name or 'model')");
  gc->add_flag("--json", "accepted for uniformity; output is always JSON");

  PlanArgs pa;
  auto* plan = app.add_subcommand("plan", "static memory plan for attention backward or a lifetime table");
  plan->add_option("--attn-bwd", pa.attn, "B H L N")->expected(4);
  plan->add_option("lifetimes", pa.file, "JSON lifetime table");
  plan->add_flag("--json", pa.json, "JSON only, no diagram");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "fused vs unfused timings with parity check");
  bench->add_option("--config", ba.config, "JSON run config (threads)");
  bench->add_option("--threads", ba.threads, "pool size for the second timing pass")->check(CLI::PositiveNumber);
  bench->add_option("--rows", ba.bc.rows, "activation rows")->check(CLI::PositiveNumber);
  bench->add_option("--width", ba.bc.width, "hidden width (multiple of 4)")->check(CLI::PositiveNumber);
  bench->add_option("--runs", ba.bc.runs, "timed runs")->check(CLI::PositiveNumber);
  bench->add_flag("--json", ba.json, "JSON lines only");

  std::string ck;
  auto* exp = app.add_subcommand("export", "summarize an LSF2 checkpoint as JSON");
  exp->add_option("checkpoint", ck, "checkpoint file")->required();
  exp->add_flag("--json", "accepted for uniformity; output is always JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfig;
  }
  if (pa.attn.size() != 0 && pa.attn.size() != 4) return fail(kConfig, "--attn-bwd takes B H L N");
  if (ba.bc.width % 4 != 0) return fail(kConfig, "--width must be a multiple of 4");

  try {
    if (*train) return run_train(ta);
    if (*gc) return run_gradcheck(ga);
    if (*plan) return run_plan(pa);
    if (*bench) return run_bench(ba);
    if (*exp) return run_export(ck);
  } catch (const std::exception& e) {
    return fail(kConfig, e.what());
  }
  return kOk;
}
