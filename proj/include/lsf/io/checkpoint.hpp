#pragma once

// LSF2 checkpoints.
//
//   "LSF2" | version u32 | step u64 | count u32 |
//   count x { name_len u32, name, dtype u8, rank u8, dims u64..., raw bytes }
//
// Integers little-endian. binary16 values are stored as their bit patterns.
// A workspace maps to param/<name> (b16) plus m/<name>, v/<name> (b32).

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lsf/error.hpp"
#include "lsf/numerics/tensor.hpp"
#include "lsf/trainer/workspace.hpp"

namespace lsf::io {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline constexpr char kMagic[4] = {'L', 'S', 'F', '2'};
inline constexpr std::uint32_t kVersion = 1;

struct Record {
  std::string name;
  DType dtype = DType::B32;
  std::vector<std::uint64_t> dims;
  std::vector<std::uint8_t> bytes;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

struct Checkpoint {
  std::uint64_t step = 0;
  std::vector<Record> records;
};

namespace detail {

template <class U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class U>
U get(std::istream& in, const char* what) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  LSF_CHECK(in.gcount() == static_cast<std::streamsize>(sizeof v), ErrorCode::ParseError,
            std::string("truncated checkpoint reading ") + what);
  return v;
}

template <class E>
Record make_record(std::string name, const E* data, const Shape& shape) {
  Record r{std::move(name), dtype_of<E>(), {}, {}};
  for (auto d : shape.dims()) r.dims.push_back(d);
  r.bytes.resize(shape.numel() * sizeof(E));
  if (!r.bytes.empty()) std::memcpy(r.bytes.data(), data, r.bytes.size());
  return r;
}

template <class E>
void copy_out(const Record& r, E* dst, std::size_t n) {
  LSF_CHECK(r.dtype == dtype_of<E>() && r.numel() == n && r.bytes.size() == n * sizeof(E), ErrorCode::ShapeMismatch,
            "record '" + r.name + "' has unexpected type or size");
  if (n) std::memcpy(dst, r.bytes.data(), r.bytes.size());
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  out.write(kMagic, 4);
  detail::put<std::uint32_t>(out, kVersion);
  detail::put<std::uint64_t>(out, c.step);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(c.records.size()));
  for (const auto& r : c.records) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(r.dtype));
    detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(r.dims.size()));
    for (auto d : r.dims) detail::put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(r.bytes.data()), static_cast<std::streamsize>(r.bytes.size()));
  }
}

inline Checkpoint read_checkpoint(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  LSF_CHECK(in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0, ErrorCode::ParseError, "not an LSF2 checkpoint");
  const auto version = detail::get<std::uint32_t>(in, "version");
  LSF_CHECK(version == kVersion, ErrorCode::ParseError, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.step = detail::get<std::uint64_t>(in, "step");
  const auto count = detail::get<std::uint32_t>(in, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    Record r;
    const auto len = detail::get<std::uint32_t>(in, "name length");
    LSF_CHECK(len <= 4096, ErrorCode::ParseError, "implausible tensor name length");
    r.name.resize(len);
    in.read(r.name.data(), len);
    LSF_CHECK(in.gcount() == static_cast<std::streamsize>(len), ErrorCode::ParseError, "truncated tensor name");
    const auto tag = detail::get<std::uint8_t>(in, "dtype");
    LSF_CHECK(tag <= 1, ErrorCode::ParseError, "bad dtype tag for '" + r.name + "'");
    r.dtype = static_cast<DType>(tag);
    const auto rank = detail::get<std::uint8_t>(in, "rank");
    LSF_CHECK(rank <= kMaxRank, ErrorCode::ParseError, "rank too large for '" + r.name + "'");
    for (std::uint8_t k = 0; k < rank; ++k) r.dims.push_back(detail::get<std::uint64_t>(in, "dims"));
    r.bytes.resize(r.numel() * dtype_width(r.dtype));
    in.read(reinterpret_cast<char*>(r.bytes.data()), static_cast<std::streamsize>(r.bytes.size()));
    LSF_CHECK(in.gcount() == static_cast<std::streamsize>(r.bytes.size()), ErrorCode::ParseError,
              "truncated data for '" + r.name + "'");
    c.records.push_back(std::move(r));
  }
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  LSF_CHECK(out.good(), ErrorCode::IoError, "cannot write '" + path + "'");
  write_checkpoint(out, c);
  out.flush();
  LSF_CHECK(out.good(), ErrorCode::IoError, "write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  LSF_CHECK(in.good(), ErrorCode::IoError, "cannot open '" + path + "'");
  return read_checkpoint(in);
}

inline Checkpoint to_checkpoint(const trainer::Workspace& ws, std::uint64_t step) {
  Checkpoint c{step, {}};
  for (const auto& l : ws.links())
    c.records.push_back(detail::make_record("param/" + l.name, ws.params16().data() + l.offset, l.shape));
  if (!ws.moments_m().empty())
    for (const auto& l : ws.links()) {
      c.records.push_back(detail::make_record("m/" + l.name, ws.moments_m().data() + l.offset, l.shape));
      c.records.push_back(detail::make_record("v/" + l.name, ws.moments_v().data() + l.offset, l.shape));
    }
  return c;
}

// Rebuilds the workspace. Parameter order follows the file.
inline trainer::Workspace from_checkpoint(const Checkpoint& c) {
  std::vector<trainer::Link> links;
  std::vector<const Record*> params;
  std::size_t total = 0;
  for (const auto& r : c.records) {
    if (r.name.rfind("param/", 0) != 0) continue;
    LSF_CHECK(!r.dims.empty() || r.numel() == 1, ErrorCode::ParseError, "bad dims");
    std::vector<std::size_t> dims(r.dims.begin(), r.dims.end());
    const Shape shape{std::span<const std::size_t>(dims)};
    links.push_back(trainer::Link{r.name.substr(6), total, shape.numel(), shape});
    params.push_back(&r);
    total += shape.numel();
  }
  std::vector<Half> p16(total);
  for (std::size_t i = 0; i < links.size(); ++i) detail::copy_out(*params[i], p16.data() + links[i].offset, links[i].length);

  auto find = [&](const std::string& name) -> const Record* {
    for (const auto& r : c.records)
      if (r.name == name) return &r;
    return nullptr;
  };
  std::vector<float> m, v;
  if (!links.empty() && find("m/" + links[0].name)) {
    m.resize(total);
    v.resize(total);
    for (const auto& l : links) {
      const Record* rm = find("m/" + l.name);
      const Record* rv = find("v/" + l.name);
      LSF_CHECK(rm && rv, ErrorCode::ParseError, "missing moments for '" + l.name + "'");
      detail::copy_out(*rm, m.data() + l.offset, l.length);
      detail::copy_out(*rv, v.data() + l.offset, l.length);
    }
  }
  return trainer::Workspace::restore(std::move(links), std::move(p16), std::move(m), std::move(v));
}

}  // namespace lsf::io
