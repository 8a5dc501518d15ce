#include <gtest/gtest.h>

#include <sstream>
#include <vector>

#include "lsf/data/tokens.hpp"
#include "lsf/io/checkpoint.hpp"
#include "lsf/io/config.hpp"
#include "lsf/trainer/session.hpp"

using namespace lsf;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

const char* kSmallRun = R"({
  "model": {"n_enc": 1, "n_dec": 1, "d_model": 16, "n_heads": 2, "d_ff": 24, "vocab": 12, "max_len": 8},
  "train": {"steps": 12, "batch_tokens": 48, "warmup_steps": 4, "seed": 5, "log_every": 4},
  "data": {"task": "reverse", "train_size": 64, "eval_size": 16, "min_len": 2}
})";

std::vector<std::uint16_t> bits(const trainer::Workspace& ws) {
  std::vector<std::uint16_t> out;
  for (Half h : ws.params16()) out.push_back(h.bits);
  return out;
}

}  // namespace

// ---- token files ----

TEST(Tokens, ParsesLines) {
  std::istringstream in("1 2 3\n4 5\n");
  EXPECT_EQ(data::parse_token_text(in, 10), (std::vector<data::Sequence>{{1, 2, 3}, {4, 5}}));
  std::istringstream blank("\n  7\t8 \n\n");
  EXPECT_EQ(data::parse_token_text(blank, 10), (std::vector<data::Sequence>{{7, 8}}));
}

TEST(Tokens, BadWordIsAParseErrorNamingTheLine) {
  std::istringstream in("1 x 3");
  try {
    data::parse_token_text(in, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
  std::istringstream neg("2\n-1\n");
  EXPECT_EQ(code_of([&] { data::parse_token_text(neg, 10); }), ErrorCode::ParseError);
}

TEST(Tokens, IdEqualToVocabIsOutOfRange) {
  std::istringstream in("1 2\n3 10\n");
  EXPECT_EQ(code_of([&] { data::parse_token_text(in, 10); }), ErrorCode::TokenOutOfRange);
  EXPECT_EQ(code_of([] { data::load_token_file("/nonexistent/tokens.txt", 10); }), ErrorCode::IoError);
}

TEST(Data, SpecialsAvoidThePadId) {
  const auto s = data::Specials::for_pad(1);
  EXPECT_EQ(s.bos, 0);
  EXPECT_EQ(s.eos, 2);
  EXPECT_THROW(data::Specials::for_pad(3), Error);
}

TEST(Data, SyntheticSequencesAndBatches) {
  const auto seqs = data::random_sequences(200, 2, 9, 20, 7);
  for (const auto& s : seqs) {
    ASSERT_GE(s.size(), 2u);
    ASSERT_LE(s.size(), 9u);
    for (auto t : s) ASSERT_TRUE(t >= 3 && t < 20);
  }
  EXPECT_EQ(seqs, data::random_sequences(200, 2, 9, 20, 7));
  const auto pairs = data::make_pairs(seqs, data::Task::Reverse);
  EXPECT_EQ(pairs[0].target, data::Sequence(seqs[0].rbegin(), seqs[0].rend()));

  const auto batches = data::bucket_batches(pairs, 40, data::Specials{});
  std::size_t n = 0;
  for (const auto& b : batches) {
    n += b.batch;
    EXPECT_LE(b.batch * std::max(b.src_len, b.tgt_len), 40u);
    for (std::size_t i = 0; i < b.batch; ++i) {
      EXPECT_EQ(b.tgt_in[i * b.tgt_len], 1);
      EXPECT_EQ(b.tgt_out[i * b.tgt_len + b.tgt_valid[i] - 1], 2);
    }
  }
  EXPECT_EQ(n, 200u);

  auto order = data::epoch_order(50, 3, 1);
  EXPECT_EQ(order, data::epoch_order(50, 3, 1));
  EXPECT_NE(order, data::epoch_order(50, 3, 2));
  std::sort(order.begin(), order.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(order[i], i);
}

// ---- config ----

TEST(Config, DefaultsAreTheTinyCopyRun) {
  const auto c = io::parse_config_text("{}");
  EXPECT_EQ(c.model.n_enc, 2u);
  EXPECT_EQ(c.model.n_dec, 2u);
  EXPECT_EQ(c.model.d_model, 32u);
  EXPECT_EQ(c.model.vocab, 32u);
  EXPECT_EQ(c.model.max_len, 16u);
  EXPECT_EQ(c.data.task, data::Task::Copy);
  EXPECT_EQ(c.train.steps, 2000u);
}

TEST(Config, EchoRoundTrips) {
  const auto c = io::parse_config_text(kSmallRun);
  const auto again = io::parse_config(io::to_json(c));
  EXPECT_EQ(io::to_json(again), io::to_json(c));
  EXPECT_EQ(again.data.task, data::Task::Reverse);
  EXPECT_EQ(again.max_sequence(), 7u);
}

TEST(Config, ErrorsAreParseOrArgumentErrors) {
  EXPECT_EQ(code_of([] { io::parse_config_text("{"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { io::parse_config_text(R"({"model": {"depth": 3}})"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { io::parse_config_text(R"({"train": {"lr": "fast"}})"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { io::parse_config_text(R"({"train": {"algorithm": "lion"}})"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { io::parse_config_text(R"({"data": {"task": "sort"}})"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { io::parse_config_text(R"({"model": {"d_model": 30, "n_heads": 4}})"); }),
            ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { io::parse_config_text(R"({"train": {"p_drop": 1.0}})"); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { io::parse_config_text(R"({"data": {"task": "file"}})"); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { io::load_config("/nonexistent.json"); }), ErrorCode::IoError);
}

// ---- checkpoints ----

TEST(Checkpoint, RoundTripPreservesEveryBit) {
  const Tensor<float> a(Shape{2, 3}, {1, -2, 3.5f, 0.1f, 65504, -0.0f}), b(Shape{5}, {9, 8, 7, 6, 5});
  trainer::Workspace ws = trainer::Workspace::pack<float>({{"a", a.view()}, {"b", b.view()}});
  for (std::size_t i = 0; i < ws.size(); ++i) {
    ws.moments_m()[i] = 0.25f * static_cast<float>(i);
    ws.moments_v()[i] = 1e-7f * static_cast<float>(i);
  }
  std::stringstream buf;
  io::write_checkpoint(buf, io::to_checkpoint(ws, 42));
  const auto ck = io::read_checkpoint(buf);
  EXPECT_EQ(ck.step, 42u);
  ASSERT_EQ(ck.records.size(), 6u);
  EXPECT_EQ(ck.records[0].name, "param/a");
  EXPECT_EQ(ck.records[0].dtype, DType::B16);
  EXPECT_EQ(ck.records[0].dims, (std::vector<std::uint64_t>{2, 3}));
  const auto back = io::from_checkpoint(ck);
  EXPECT_EQ(bits(back), bits(ws));
  EXPECT_EQ(back.moments_m(), ws.moments_m());
  EXPECT_EQ(back.moments_v(), ws.moments_v());
  EXPECT_EQ(back.resolve("b").offset, 6u);
}

TEST(Checkpoint, HeaderLayout) {
  const Tensor<float> a(Shape{1}, {1.0f});
  std::stringstream buf;
  io::write_checkpoint(buf, io::to_checkpoint(trainer::Workspace::pack<float>({{"w", a.view()}}, false), 7));
  const std::string s = buf.str();
  ASSERT_GE(s.size(), 20u);
  EXPECT_EQ(s.substr(0, 4), "LSF2");
  EXPECT_EQ(static_cast<unsigned char>(s[4]), 1u);   // version
  EXPECT_EQ(static_cast<unsigned char>(s[8]), 7u);   // step
  EXPECT_EQ(static_cast<unsigned char>(s[16]), 1u);  // record count
  // the only payload is binary16 1.0 at the end
  EXPECT_EQ(static_cast<unsigned char>(s[s.size() - 1]), 0x3Cu);
  EXPECT_EQ(static_cast<unsigned char>(s[s.size() - 2]), 0x00u);
}

TEST(Checkpoint, CorruptInputsAreRejected) {
  std::stringstream bad_magic("LSF1xxxxxxxxxxxxxxxx");
  EXPECT_EQ(code_of([&] { io::read_checkpoint(bad_magic); }), ErrorCode::ParseError);

  const Tensor<float> a(Shape{4}, {1, 2, 3, 4});
  std::stringstream buf;
  io::write_checkpoint(buf, io::to_checkpoint(trainer::Workspace::pack<float>({{"w", a.view()}}), 1));
  const std::string s = buf.str();
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, s.size() / 2, s.size() - 1}) {
    std::stringstream part(s.substr(0, cut));
    EXPECT_EQ(code_of([&] { io::read_checkpoint(part); }), ErrorCode::ParseError) << cut;
  }
  EXPECT_EQ(code_of([] { io::load_checkpoint("/nonexistent.lsf"); }), ErrorCode::IoError);
}

// ---- sessions ----

TEST(Session, ResumedRunMatchesUninterruptedRun) {
  const auto cfg = io::parse_config_text(kSmallRun);
  trainer::Session full(cfg);
  std::vector<double> losses;
  for (int i = 0; i < 8; ++i) losses.push_back(full.train_step().loss);

  trainer::Session first(cfg);
  for (int i = 0; i < 5; ++i) first.train_step();
  std::stringstream buf;
  io::write_checkpoint(buf, first.checkpoint());

  trainer::Session second(cfg);
  second.resume(io::read_checkpoint(buf));
  EXPECT_EQ(second.step(), 5u);
  for (int i = 5; i < 8; ++i) EXPECT_EQ(second.train_step().loss, losses[i]);
  EXPECT_EQ(bits(second.workspace()), bits(full.workspace()));
  EXPECT_EQ(second.workspace().moments_v(), full.workspace().moments_v());
}

TEST(Session, NoReallocationsAndHighWaterWithinCapacity) {
  trainer::Session s(io::parse_config_text(kSmallRun));
  for (int i = 0; i < 12; ++i) s.train_step();
  s.evaluate();
  EXPECT_EQ(s.arena().stats().reallocations, 0u);
  EXPECT_LE(s.arena().stats().high_water, s.capacity());
  EXPECT_GT(s.arena().stats().high_water, 0u);
}

TEST(Session, LearningRateWarmsUpThenDecays) {
  trainer::Session s(io::parse_config_text(kSmallRun));
  const float lr = static_cast<float>(s.config().train.lr);
  EXPECT_LT(s.learning_rate(0), s.learning_rate(2));
  EXPECT_NEAR(s.learning_rate(3), lr * (1 - 0.9 * 3.0 / 12), 1e-7);
  EXPECT_NEAR(s.learning_rate(12), lr * 0.1, 1e-7);
}

TEST(Session, ResumeRejectsAForeignCheckpoint) {
  trainer::Session s(io::parse_config_text(kSmallRun));
  const Tensor<float> a(Shape{3}, {1, 2, 3});
  EXPECT_THROW(s.resume(io::to_checkpoint(trainer::Workspace::pack<float>({{"w", a.view()}}), 0)), Error);
}
