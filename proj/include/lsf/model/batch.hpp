#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "lsf/error.hpp"
#include "lsf/model/config.hpp"

namespace lsf::model {

// Padded token batch. Sequences are right-padded with pad_id; valid
// lengths give the unpadded prefix of each row.
struct Batch {
  std::size_t batch = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<std::int32_t> src;      // [batch * src_len]
  std::vector<std::int32_t> tgt_in;   // [batch * tgt_len] decoder input
  std::vector<std::int32_t> tgt_out;  // [batch * tgt_len] next-token targets
  std::vector<std::int32_t> src_valid;
  std::vector<std::int32_t> tgt_valid;

  std::size_t src_rows() const { return batch * src_len; }
  std::size_t tgt_rows() const { return batch * tgt_len; }

  void validate(const ModelConfig& cfg) const {
    LSF_CHECK(batch >= 1 && src_len >= 1 && tgt_len >= 1, ErrorCode::ShapeMismatch, "empty batch");
    LSF_CHECK(src_len <= cfg.max_len && tgt_len <= cfg.max_len, ErrorCode::SequenceTooLong,
              "batch length exceeds max_len " + std::to_string(cfg.max_len));
    LSF_CHECK(src.size() == src_rows() && tgt_in.size() == tgt_rows() && tgt_out.size() == tgt_rows(),
              ErrorCode::ShapeMismatch, "token arrays do not match batch shape");
    LSF_CHECK(src_valid.size() == batch && tgt_valid.size() == batch, ErrorCode::ShapeMismatch,
              "valid lengths must be given per sequence");
    for (std::size_t b = 0; b < batch; ++b) {
      LSF_CHECK(src_valid[b] >= 1 && static_cast<std::size_t>(src_valid[b]) <= src_len &&
                    tgt_valid[b] >= 1 && static_cast<std::size_t>(tgt_valid[b]) <= tgt_len,
                ErrorCode::ShapeMismatch, "valid length out of range in sequence " + std::to_string(b));
    }
  }
};

// Builds a batch from (source, target) pairs. The decoder reads
// [bos, target...] and predicts [target..., eos]; the caller includes eos
// handling by passing bos/eos ids.
inline Batch make_batch(const std::vector<std::vector<std::int32_t>>& sources,
                        const std::vector<std::vector<std::int32_t>>& targets, std::int32_t pad, std::int32_t bos,
                        std::int32_t eos) {
  LSF_CHECK(!sources.empty() && sources.size() == targets.size(), ErrorCode::ShapeMismatch,
            "need matching non-empty source and target lists");
  Batch b;
  b.batch = sources.size();
  for (std::size_t i = 0; i < b.batch; ++i) {
    LSF_CHECK(!sources[i].empty(), ErrorCode::ShapeMismatch, "empty source sequence");
    b.src_len = std::max(b.src_len, sources[i].size());
    b.tgt_len = std::max(b.tgt_len, targets[i].size() + 1);
  }
  b.src.assign(b.src_rows(), pad);
  b.tgt_in.assign(b.tgt_rows(), pad);
  b.tgt_out.assign(b.tgt_rows(), pad);
  for (std::size_t i = 0; i < b.batch; ++i) {
    const auto& s = sources[i];
    const auto& t = targets[i];
    std::copy(s.begin(), s.end(), b.src.begin() + static_cast<std::ptrdiff_t>(i * b.src_len));
    b.tgt_in[i * b.tgt_len] = bos;
    for (std::size_t j = 0; j < t.size(); ++j) {
      b.tgt_in[i * b.tgt_len + j + 1] = t[j];
      b.tgt_out[i * b.tgt_len + j] = t[j];
    }
    b.tgt_out[i * b.tgt_len + t.size()] = eos;
    b.src_valid.push_back(static_cast<std::int32_t>(s.size()));
    b.tgt_valid.push_back(static_cast<std::int32_t>(t.size() + 1));
  }
  return b;
}

}  // namespace lsf::model
