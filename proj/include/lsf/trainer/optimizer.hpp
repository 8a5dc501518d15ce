#pragma once

// Single-pass mixed-precision optimizer over the whole workspace.
//
// Each element is widened to binary32 in registers, updated, and narrowed
// back with round-to-nearest-even. Moments stay binary32. A step whose
// unscaled gradient contains any non-finite value is skipped entirely.

#include <cmath>
#include <cstddef>
#include <string>

#include "lsf/error.hpp"
#include "lsf/numerics/half.hpp"
#include "lsf/numerics/parallel.hpp"
#include "lsf/trainer/workspace.hpp"

namespace lsf::trainer {

enum class Algorithm { Adam, SGD };

inline const char* to_string(Algorithm a) { return a == Algorithm::Adam ? "adam" : "sgd"; }

struct OptimConfig {
  Algorithm algorithm = Algorithm::Adam;
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.98f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
  float momentum = 0.0f;
  float loss_scale = 1.0f;

  void validate() const {
    LSF_CHECK(lr > 0.0f, ErrorCode::InvalidArgument, "lr must be > 0");
    LSF_CHECK(beta1 >= 0.0f && beta1 < 1.0f && beta2 >= 0.0f && beta2 < 1.0f, ErrorCode::InvalidArgument,
              "beta1 and beta2 must be in [0, 1)");
    LSF_CHECK(eps > 0.0f, ErrorCode::InvalidArgument, "eps must be > 0");
    LSF_CHECK(weight_decay >= 0.0f && momentum >= 0.0f, ErrorCode::InvalidArgument,
              "weight_decay and momentum must be >= 0");
    int e = 0;
    LSF_CHECK(loss_scale >= 1.0f && std::frexp(loss_scale, &e) == 0.5f, ErrorCode::InvalidArgument,
              "loss_scale must be a power of two >= 1");
  }
};

struct StepReport {
  bool applied = true;
  std::size_t nonfinite = 0;  // offending gradient elements when skipped
};

inline constexpr std::size_t kUpdateGrain = 4096;

// Counts gradient elements that are non-finite after unscaling.
inline std::size_t count_nonfinite(const Workspace& ws, float loss_scale) {
  const auto& g = ws.grads16();
  std::size_t bad = 0;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!std::isfinite(half_to_float(g[i]) / loss_scale)) ++bad;
  return bad;
}

inline StepReport adam_step(Workspace& ws, const OptimConfig& cfg, std::size_t t) {
  cfg.validate();
  LSF_CHECK(t >= 1, ErrorCode::InvalidArgument, "Adam step counter starts at 1");
  LSF_CHECK(ws.moments_m().size() == ws.size() && ws.moments_v().size() == ws.size(), ErrorCode::InvalidArgument,
            "workspace has no Adam moments");
  if (const std::size_t bad = count_nonfinite(ws, cfg.loss_scale)) return {false, bad};

  const float b1 = cfg.beta1, b2 = cfg.beta2, lr = cfg.lr, eps = cfg.eps, wd = cfg.weight_decay;
  const float scale = cfg.loss_scale;
  const float bc1 = 1.0f - std::pow(b1, static_cast<float>(t));
  const float bc2 = 1.0f - std::pow(b2, static_cast<float>(t));
  Half* p16 = ws.params16().data();
  const Half* g16 = ws.grads16().data();
  float* m = ws.moments_m().data();
  float* v = ws.moments_v().data();
  parallel_for(ws.size(), kUpdateGrain, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      float p = half_to_float(p16[i]);
      const float g = half_to_float(g16[i]) / scale;
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      const float mhat = m[i] / bc1;
      const float vhat = v[i] / bc2;
      p = p - lr * (mhat / (std::sqrt(vhat) + eps) + wd * p);
      p16[i] = float_to_half(p);
    }
  });
  return {};
}

// velocity = momentum * velocity + g; p -= lr * velocity. Velocity lives in
// the m buffer.
inline StepReport sgd_step(Workspace& ws, const OptimConfig& cfg) {
  cfg.validate();
  LSF_CHECK(ws.moments_m().size() == ws.size(), ErrorCode::InvalidArgument, "workspace has no velocity buffer");
  if (const std::size_t bad = count_nonfinite(ws, cfg.loss_scale)) return {false, bad};

  const float mu = cfg.momentum, lr = cfg.lr, scale = cfg.loss_scale;
  Half* p16 = ws.params16().data();
  const Half* g16 = ws.grads16().data();
  float* vel = ws.moments_m().data();
  parallel_for(ws.size(), kUpdateGrain, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const float g = half_to_float(g16[i]) / scale;
      vel[i] = mu * vel[i] + g;
      const float p = half_to_float(p16[i]) - lr * vel[i];
      p16[i] = float_to_half(p);
    }
  });
  return {};
}

inline StepReport optimizer_step(Workspace& ws, const OptimConfig& cfg, std::size_t t) {
  return cfg.algorithm == Algorithm::Adam ? adam_step(ws, cfg, t) : sgd_step(ws, cfg);
}

}  // namespace lsf::trainer
