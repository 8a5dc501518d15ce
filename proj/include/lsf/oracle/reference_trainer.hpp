#pragma once

// Conventional per-tensor mixed-precision trainer: each binary16 parameter
// and gradient has its own binary32 partner tensor, copied in before and
// out after every update. Used to check the workspace trainer bit for bit.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "lsf/numerics/half.hpp"
#include "lsf/trainer/optimizer.hpp"
#include "lsf/trainer/workspace.hpp"

namespace lsf::oracle {

struct ReferenceTensor {
  std::string name;
  std::vector<Half> p16, g16;     // model-facing shadows
  std::vector<float> p32, g32;    // binary32 partners
  std::vector<float> m, v;        // moments (velocity in m for SGD)
};

class ReferenceTrainer {
 public:
  void add(std::string name, std::vector<Half> params16) {
    const std::size_t n = params16.size();
    tensors_.push_back(ReferenceTensor{std::move(name), std::move(params16), std::vector<Half>(n),
                                       std::vector<float>(n), std::vector<float>(n), std::vector<float>(n, 0.0f),
                                       std::vector<float>(n, 0.0f)});
  }

  std::vector<ReferenceTensor>& tensors() { return tensors_; }
  const std::vector<ReferenceTensor>& tensors() const { return tensors_; }

  std::size_t elements() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.p16.size();
    return n;
  }

  // binary16 params and grads, binary32 params, grads and two moments.
  trainer::ByteAccount accounting() const { return {2 * elements(), 4 * elements()}; }

  // Returns false when the step was skipped for a non-finite gradient.
  bool step(const trainer::OptimConfig& cfg, std::size_t t) {
    for (auto& ts : tensors_)
      for (std::size_t i = 0; i < ts.g16.size(); ++i) {
        ts.g32[i] = half_to_float(ts.g16[i]) / cfg.loss_scale;
        if (!std::isfinite(ts.g32[i])) return false;
      }
    for (auto& ts : tensors_) {
      for (std::size_t i = 0; i < ts.p16.size(); ++i) ts.p32[i] = half_to_float(ts.p16[i]);
      if (cfg.algorithm == trainer::Algorithm::Adam)
        adam(ts, cfg, t);
      else
        sgd(ts, cfg);
      for (std::size_t i = 0; i < ts.p16.size(); ++i) ts.p16[i] = float_to_half(ts.p32[i]);
    }
    return true;
  }

 private:
  static void adam(ReferenceTensor& ts, const trainer::OptimConfig& cfg, std::size_t t) {
    const float bc1 = 1.0f - std::pow(cfg.beta1, static_cast<float>(t));
    const float bc2 = 1.0f - std::pow(cfg.beta2, static_cast<float>(t));
    for (std::size_t i = 0; i < ts.p32.size(); ++i) {
      const float g = ts.g32[i];
      ts.m[i] = cfg.beta1 * ts.m[i] + (1.0f - cfg.beta1) * g;
      ts.v[i] = cfg.beta2 * ts.v[i] + (1.0f - cfg.beta2) * g * g;
      const float mhat = ts.m[i] / bc1;
      const float vhat = ts.v[i] / bc2;
      ts.p32[i] = ts.p32[i] - cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * ts.p32[i]);
    }
  }

  static void sgd(ReferenceTensor& ts, const trainer::OptimConfig& cfg) {
    for (std::size_t i = 0; i < ts.p32.size(); ++i) {
      ts.m[i] = cfg.momentum * ts.m[i] + ts.g32[i];
      ts.p32[i] = ts.p32[i] - cfg.lr * ts.m[i];
    }
  }

  std::vector<ReferenceTensor> tensors_;
};

}  // namespace lsf::oracle
