#pragma once

// Token data: file ingestion, synthetic copy/reverse tasks and
// length-bucketed batching.
//
// Ids 0, 1, 2 are reserved. pad_id must be one of them; the other two
// serve as begin- and end-of-sequence markers in that order. Content
// tokens are drawn from [3, vocab).

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "lsf/error.hpp"
#include "lsf/model/batch.hpp"
#include "lsf/numerics/rng.hpp"

namespace lsf::data {

using Sequence = std::vector<std::int32_t>;

inline constexpr std::int32_t kFirstContentToken = 3;

struct Specials {
  std::int32_t pad = 0, bos = 1, eos = 2;

  static Specials for_pad(std::int32_t pad_id) {
    LSF_CHECK(pad_id >= 0 && pad_id < kFirstContentToken, ErrorCode::InvalidArgument,
              "pad_id must be one of the reserved ids 0, 1, 2");
    Specials s{pad_id, 0, 0};
    std::int32_t next = 0;
    for (std::int32_t* slot : {&s.bos, &s.eos}) {
      if (next == pad_id) ++next;
      *slot = next++;
    }
    return s;
  }
};

// One sequence per line, whitespace-separated non-negative ids. Empty
// lines are skipped. Errors name the 1-based line.
inline std::vector<Sequence> parse_token_text(std::istream& in, std::size_t vocab) {
  std::vector<Sequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string word;
    Sequence seq;
    while (ls >> word) {
      const bool digits = !word.empty() && std::all_of(word.begin(), word.end(), [](char c) { return c >= '0' && c <= '9'; });
      LSF_CHECK(digits && word.size() <= 9, ErrorCode::ParseError,
                "line " + std::to_string(lineno) + ": '" + word + "' is not a token id");
      const long id = std::stol(word);
      LSF_CHECK(static_cast<std::size_t>(id) < vocab, ErrorCode::TokenOutOfRange,
                "line " + std::to_string(lineno) + ": token " + word + " >= vocab " + std::to_string(vocab));
      seq.push_back(static_cast<std::int32_t>(id));
    }
    if (!seq.empty()) out.push_back(std::move(seq));
  }
  return out;
}

inline std::vector<Sequence> load_token_file(const std::string& path, std::size_t vocab) {
  std::ifstream in(path);
  LSF_CHECK(in.good(), ErrorCode::IoError, "cannot open token file '" + path + "'");
  return parse_token_text(in, vocab);
}

enum class Task { Copy, Reverse, File };

inline Task parse_task(const std::string& s) {
  if (s == "copy") return Task::Copy;
  if (s == "reverse") return Task::Reverse;
  if (s == "file") return Task::File;
  throw Error(ErrorCode::InvalidArgument, "unknown task '" + s + "' (copy|reverse|file)");
}

inline const char* to_string(Task t) {
  switch (t) {
    case Task::Copy: return "copy";
    case Task::Reverse: return "reverse";
    case Task::File: return "file";
  }
  return "?";
}

struct Pair {
  Sequence source, target;
};

// Random content sequences with lengths in [min_len, max_len]; sequence i
// uses counter indices derived from i only.
inline std::vector<Sequence> random_sequences(std::size_t count, std::size_t min_len, std::size_t max_len,
                                              std::size_t vocab, std::uint64_t seed) {
  LSF_CHECK(min_len >= 1 && min_len <= max_len, ErrorCode::InvalidArgument, "bad synthetic length range");
  LSF_CHECK(vocab > static_cast<std::size_t>(kFirstContentToken), ErrorCode::InvalidArgument,
            "vocab leaves no content tokens");
  const CounterRng rng{seed};
  const std::uint64_t span = vocab - static_cast<std::size_t>(kFirstContentToken);
  std::vector<Sequence> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t base = static_cast<std::uint64_t>(i) << 8;
    const std::size_t len = min_len + rng.below(base, max_len - min_len + 1);
    for (std::size_t j = 0; j < len; ++j)
      out[i].push_back(kFirstContentToken + static_cast<std::int32_t>(rng.below(base + 1 + j, span)));
  }
  return out;
}

// Copy and file tasks reproduce the source; reverse reverses it.
inline std::vector<Pair> make_pairs(const std::vector<Sequence>& seqs, Task task) {
  std::vector<Pair> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) {
    Pair p{s, s};
    if (task == Task::Reverse) std::reverse(p.target.begin(), p.target.end());
    out.push_back(std::move(p));
  }
  return out;
}

// Longest model-side length a pair occupies: source, or target plus the
// start/end marker.
inline std::size_t footprint(const Pair& p) { return std::max(p.source.size(), p.target.size() + 1); }

struct DatasetStats {
  std::size_t max_batch = 0;
  std::size_t max_src_len = 0;
  std::size_t max_tgt_len = 0;
  std::size_t batches = 0;
};

// Sorts pairs by footprint and cuts consecutive runs so that
// batch * max footprint <= batch_tokens.
inline std::vector<model::Batch> bucket_batches(const std::vector<Pair>& pairs, std::size_t batch_tokens,
                                                const Specials& sp) {
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return footprint(pairs[a]) < footprint(pairs[b]); });
  std::vector<model::Batch> out;
  std::vector<Sequence> src, tgt;
  std::size_t longest = 0;
  auto flush = [&] {
    if (src.empty()) return;
    out.push_back(model::make_batch(src, tgt, sp.pad, sp.bos, sp.eos));
    src.clear();
    tgt.clear();
    longest = 0;
  };
  for (std::size_t i : order) {
    const std::size_t f = footprint(pairs[i]);
    LSF_CHECK(f <= batch_tokens, ErrorCode::InvalidArgument,
              "sequence of length " + std::to_string(f) + " exceeds batch_tokens");
    if ((src.size() + 1) * std::max(longest, f) > batch_tokens) flush();
    src.push_back(pairs[i].source);
    tgt.push_back(pairs[i].target);
    longest = std::max(longest, f);
  }
  flush();
  return out;
}

inline DatasetStats scan(const std::vector<model::Batch>& batches) {
  DatasetStats s;
  s.batches = batches.size();
  for (const auto& b : batches) {
    s.max_batch = std::max(s.max_batch, b.batch);
    s.max_src_len = std::max(s.max_src_len, b.src_len);
    s.max_tgt_len = std::max(s.max_tgt_len, b.tgt_len);
  }
  return s;
}

// Batch order of an epoch: Fisher-Yates driven by the counter generator.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const CounterRng rng{derive_seed(seed, epoch, 0xE0C)};
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i, i)]);
  return order;
}

}  // namespace lsf::data
