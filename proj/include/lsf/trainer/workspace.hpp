#pragma once

// Contiguous binary16 parameter/gradient workspace.
//
// All parameters are concatenated in registration order into params16 and
// mirrored by grads16; each logical parameter is a named (offset, length)
// link. The model reads and writes through link views, so no per-parameter
// copies exist. Optimizer moments share the layout in binary32.

#include <algorithm>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lsf/error.hpp"
#include "lsf/model/params.hpp"
#include "lsf/numerics/half.hpp"
#include "lsf/numerics/tensor.hpp"

namespace lsf::trainer {

struct Link {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
  Shape shape;
};

struct ByteAccount {
  std::size_t half_elements = 0;
  std::size_t float_elements = 0;
  std::size_t bytes() const { return 2 * half_elements + 4 * float_elements; }
};

class Workspace {
 public:
  Workspace() = default;

  // Converts each tensor to binary16 (round to nearest even) and copies it
  // into place. `with_moments` allocates Adam's m and v; SGD uses m only
  // as its velocity.
  template <class E>
  static Workspace pack(const std::vector<std::pair<std::string, TensorView<const E>>>& named,
                        bool with_moments = true) {
    Workspace ws;
    std::size_t total = 0;
    for (const auto& [name, t] : named) {
      LSF_CHECK(!ws.index_.count(name), ErrorCode::DuplicateName, "parameter '" + name + "' registered twice");
      ws.index_[name] = ws.links_.size();
      ws.links_.push_back(Link{name, total, t.numel(), t.shape()});
      total += t.numel();
    }
    ws.params16_.resize(total);
    ws.grads16_.assign(total, Half{});
    for (std::size_t i = 0; i < named.size(); ++i) {
      const auto& t = named[i].second;
      Half* dst = ws.params16_.data() + ws.links_[i].offset;
      for (std::size_t j = 0; j < t.numel(); ++j) dst[j] = store_as<Half>(load_as<float>(t[j]));
    }
    if (with_moments) {
      ws.m_.assign(total, 0.0f);
      ws.v_.assign(total, 0.0f);
    }
    return ws;
  }

  template <class E>
  static Workspace pack(const model::Schema& schema, const std::vector<Tensor<E>>& values, bool with_moments = true) {
    LSF_CHECK(values.size() == schema.size(), ErrorCode::ShapeMismatch, "values do not match the schema");
    std::vector<std::pair<std::string, TensorView<const E>>> named;
    for (std::size_t i = 0; i < values.size(); ++i) named.emplace_back(schema.specs[i].name, values[i].view());
    return pack<E>(named, with_moments);
  }

  // Rebuilds a workspace from stored links and raw buffers (checkpoint load).
  static Workspace restore(std::vector<Link> links, std::vector<Half> params16, std::vector<float> m,
                           std::vector<float> v) {
    Workspace ws;
    std::size_t total = 0;
    for (std::size_t i = 0; i < links.size(); ++i) {
      LSF_CHECK(links[i].offset == total && links[i].length == links[i].shape.numel(), ErrorCode::ShapeMismatch,
                "link '" + links[i].name + "' is not contiguous");
      LSF_CHECK(!ws.index_.count(links[i].name), ErrorCode::DuplicateName, links[i].name);
      ws.index_[links[i].name] = i;
      total += links[i].length;
    }
    LSF_CHECK(params16.size() == total, ErrorCode::ShapeMismatch, "parameter buffer length");
    LSF_CHECK(m.size() == v.size() && (m.empty() || m.size() == total), ErrorCode::ShapeMismatch,
              "moment buffer length");
    ws.links_ = std::move(links);
    ws.params16_ = std::move(params16);
    ws.grads16_.assign(total, Half{});
    ws.m_ = std::move(m);
    ws.v_ = std::move(v);
    return ws;
  }

  std::size_t size() const { return params16_.size(); }
  const std::vector<Link>& links() const { return links_; }

  const Link& resolve(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error(ErrorCode::UnknownName, "no workspace link '" + name + "'");
    return links_[it->second];
  }

  TensorView<Half> param(const Link& l) { return {params16_.data() + l.offset, l.shape}; }
  TensorView<Half> grad(const Link& l) { return {grads16_.data() + l.offset, l.shape}; }
  TensorView<const Half> param(const Link& l) const { return {params16_.data() + l.offset, l.shape}; }
  TensorView<const Half> grad(const Link& l) const { return {grads16_.data() + l.offset, l.shape}; }

  // Views in schema order for the model.
  model::ParamTable<Half> table(const model::Schema& schema) {
    model::ParamTable<Half> t;
    for (const auto& spec : schema.specs) {
      const Link& l = resolve(spec.name);
      LSF_CHECK(l.shape == spec.shape, ErrorCode::ShapeMismatch, "link '" + spec.name + "' has shape " + l.shape.str());
      t.push_back({param(l), grad(l)});
    }
    return t;
  }

  std::vector<Half>& params16() { return params16_; }
  std::vector<Half>& grads16() { return grads16_; }
  std::vector<float>& moments_m() { return m_; }
  std::vector<float>& moments_v() { return v_; }
  const std::vector<Half>& params16() const { return params16_; }
  const std::vector<Half>& grads16() const { return grads16_; }
  const std::vector<float>& moments_m() const { return m_; }
  const std::vector<float>& moments_v() const { return v_; }

  // Trainer-owned state: binary16 params and grads plus binary32 moments.
  ByteAccount accounting() const { return {params16_.size() + grads16_.size(), m_.size() + v_.size()}; }

  void zero_grads() { std::fill(grads16_.begin(), grads16_.end(), Half{}); }

 private:
  std::vector<Link> links_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<Half> params16_;
  std::vector<Half> grads16_;
  std::vector<float> m_;
  std::vector<float> v_;
};

inline void zero_grads(Workspace& ws) { ws.zero_grads(); }

}  // namespace lsf::trainer
