#pragma once

// Minimal reverse-mode differentiation tape over binary64 matrices.
//
// Every op is the plain textbook primitive with its own textbook backward;
// nothing here is fused or rearranged. Used only as the reference that the
// fused kernels are measured against, so clarity wins over speed.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lsf::oracle {

class Tape {
 public:
  using Id = std::size_t;

  struct Node {
    std::size_t rows = 0, cols = 0;
    std::vector<double> val, grad;
    std::function<void(Tape&)> back;
  };

  Id leaf(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (values.size() != rows * cols) throw std::invalid_argument("oracle leaf size mismatch");
    return push(rows, cols, std::move(values), nullptr);
  }

  Id push(std::size_t rows, std::size_t cols, std::vector<double> values, std::function<void(Tape&)> back) {
    nodes_.push_back(Node{rows, cols, std::move(values), std::vector<double>(rows * cols, 0.0), std::move(back)});
    return nodes_.size() - 1;
  }

  Node& node(Id i) { return nodes_.at(i); }
  const Node& node(Id i) const { return nodes_.at(i); }
  const std::vector<double>& value(Id i) const { return nodes_.at(i).val; }
  std::vector<double>& grad(Id i) { return nodes_.at(i).grad; }
  std::size_t rows(Id i) const { return nodes_.at(i).rows; }
  std::size_t cols(Id i) const { return nodes_.at(i).cols; }
  double scalar(Id i) const { return nodes_.at(i).val.at(0); }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d root = 1 and propagates to every node created before it.
  void backward(Id root) {
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    nodes_.at(root).grad.assign(nodes_.at(root).grad.size(), 1.0);
    for (Id i = root + 1; i-- > 0;)
      if (nodes_[i].back) nodes_[i].back(*this);
  }

 private:
  std::vector<Node> nodes_;
};

using Id = Tape::Id;

inline void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("oracle: ") + what);
}

// c = a b, or a b^T when trans_b.
inline Id matmul(Tape& t, Id a, Id b, bool trans_b = false) {
  const std::size_t m = t.rows(a), k = t.cols(a);
  const std::size_t n = trans_b ? t.rows(b) : t.cols(b);
  require((trans_b ? t.cols(b) : t.rows(b)) == k, "matmul inner dims");
  auto bv = [&t, b, trans_b, n, k](std::size_t kk, std::size_t j) {
    return trans_b ? t.value(b)[j * k + kk] : t.value(b)[kk * n + j];
  };
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) s += t.value(a)[i * k + kk] * bv(kk, j);
      c[i * n + j] = s;
    }
  const Id out = t.size();
  return t.push(m, n, std::move(c), [=](Tape& tp) {
    const auto& g = tp.grad(out);
    auto& ga = tp.grad(a);
    auto& gb = tp.grad(b);
    const auto& av = tp.value(a);
    const auto& bvals = tp.value(b);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double gij = g[i * n + j];
        for (std::size_t kk = 0; kk < k; ++kk) {
          const std::size_t bi = trans_b ? j * k + kk : kk * n + j;
          ga[i * k + kk] += gij * bvals[bi];
          gb[bi] += gij * av[i * k + kk];
        }
      }
  });
}

inline Id add(Tape& t, Id a, Id b) {
  require(t.rows(a) == t.rows(b) && t.cols(a) == t.cols(b), "add shapes");
  std::vector<double> c(t.value(a));
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += t.value(b)[i];
  const Id out = t.size();
  return t.push(t.rows(a), t.cols(a), std::move(c), [=](Tape& tp) {
    for (std::size_t i = 0; i < tp.grad(out).size(); ++i) {
      tp.grad(a)[i] += tp.grad(out)[i];
      tp.grad(b)[i] += tp.grad(out)[i];
    }
  });
}

// a + bias broadcast over rows; bias has cols(a) elements.
inline Id add_row(Tape& t, Id a, Id bias) {
  const std::size_t r = t.rows(a), c = t.cols(a);
  require(t.value(bias).size() == c, "add_row bias length");
  std::vector<double> v(t.value(a));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] += t.value(bias)[j];
  const Id out = t.size();
  return t.push(r, c, std::move(v), [=](Tape& tp) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        tp.grad(a)[i * c + j] += tp.grad(out)[i * c + j];
        tp.grad(bias)[j] += tp.grad(out)[i * c + j];
      }
  });
}

inline Id scale(Tape& t, Id a, double s) {
  std::vector<double> v(t.value(a));
  for (double& x : v) x *= s;
  const Id out = t.size();
  return t.push(t.rows(a), t.cols(a), std::move(v), [=](Tape& tp) {
    for (std::size_t i = 0; i < tp.grad(out).size(); ++i) tp.grad(a)[i] += s * tp.grad(out)[i];
  });
}

// Element-wise product with a constant (dropout multipliers).
inline Id mul_const(Tape& t, Id a, std::vector<double> m) {
  require(m.size() == t.value(a).size(), "mul_const size");
  std::vector<double> v(t.value(a));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= m[i];
  const Id out = t.size();
  return t.push(t.rows(a), t.cols(a), std::move(v), [=](Tape& tp) {
    for (std::size_t i = 0; i < m.size(); ++i) tp.grad(a)[i] += m[i] * tp.grad(out)[i];
  });
}

inline Id relu(Tape& t, Id a) {
  std::vector<double> v(t.value(a));
  for (double& x : v) x = x > 0.0 ? x : 0.0;
  const Id out = t.size();
  return t.push(t.rows(a), t.cols(a), std::move(v), [=](Tape& tp) {
    for (std::size_t i = 0; i < tp.grad(out).size(); ++i)
      if (tp.value(a)[i] > 0.0) tp.grad(a)[i] += tp.grad(out)[i];
  });
}

// Row-wise LayerNorm with two-pass mean/variance; backward is the direct
// form dx = (1/sigma)(g - mean(g) - xhat mean(g xhat)), g = w dy.
inline Id layernorm(Tape& t, Id x, Id w, Id b, double eps) {
  const std::size_t r = t.rows(x), m = t.cols(x);
  require(t.value(w).size() == m && t.value(b).size() == m, "layernorm params");
  std::vector<double> y(r * m), xhat(r * m), sig(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = t.value(x).data() + i * m;
    double mean = 0.0;
    for (std::size_t j = 0; j < m; ++j) mean += xr[j];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(m);
    sig[i] = std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) {
      xhat[i * m + j] = (xr[j] - mean) / sig[i];
      y[i * m + j] = t.value(w)[j] * xhat[i * m + j] + t.value(b)[j];
    }
  }
  const Id out = t.size();
  return t.push(r, m, std::move(y), [=](Tape& tp) {
    const auto& dy = tp.grad(out);
    for (std::size_t i = 0; i < r; ++i) {
      double mg = 0.0, mgx = 0.0;
      std::vector<double> g(m);
      for (std::size_t j = 0; j < m; ++j) {
        g[j] = tp.value(w)[j] * dy[i * m + j];
        mg += g[j];
        mgx += g[j] * xhat[i * m + j];
        tp.grad(w)[j] += dy[i * m + j] * xhat[i * m + j];
        tp.grad(b)[j] += dy[i * m + j];
      }
      mg /= static_cast<double>(m);
      mgx /= static_cast<double>(m);
      for (std::size_t j = 0; j < m; ++j)
        tp.grad(x)[i * m + j] += (g[j] - mg - xhat[i * m + j] * mgx) / sig[i];
    }
  });
}

// Row softmax over allowed entries (allowed[i] != 0); disallowed outputs are
// 0. Backward multiplies by the explicit Jacobian p_i (delta_ij - p_j).
inline Id softmax(Tape& t, Id a, const std::vector<std::uint8_t>& allowed) {
  const std::size_t r = t.rows(a), c = t.cols(a);
  require(allowed.size() == r * c, "softmax mask size");
  std::vector<double> p(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (allowed[i * c + j]) mx = std::max(mx, t.value(a)[i * c + j]);
    require(mx > -std::numeric_limits<double>::infinity(), "softmax row fully masked");
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j)
      if (allowed[i * c + j]) z += std::exp(t.value(a)[i * c + j] - mx);
    for (std::size_t j = 0; j < c; ++j)
      if (allowed[i * c + j]) p[i * c + j] = std::exp(t.value(a)[i * c + j] - mx) / z;
  }
  const Id out = t.size();
  return t.push(r, c, p, [=](Tape& tp) {
    const auto& dy = tp.grad(out);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          const double jac = p[i * c + j] * ((j == k ? 1.0 : 0.0) - p[i * c + k]);  // d p_j / d a_k
          s += jac * dy[i * c + j];
        }
        tp.grad(a)[i * c + k] += s;
      }
  });
}

inline Id log_softmax(Tape& t, Id a) {
  const std::size_t r = t.rows(a), c = t.cols(a);
  std::vector<double> y(r * c), p(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, t.value(a)[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(t.value(a)[i * c + j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) {
      y[i * c + j] = t.value(a)[i * c + j] - lz;
      p[i * c + j] = std::exp(y[i * c + j]);
    }
  }
  const Id out = t.size();
  return t.push(r, c, std::move(y), [=](Tape& tp) {
    const auto& dy = tp.grad(out);
    for (std::size_t i = 0; i < r; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += dy[i * c + j];
      for (std::size_t j = 0; j < c; ++j) tp.grad(a)[i * c + j] += dy[i * c + j] - p[i * c + j] * s;
    }
  });
}

// Rows of `table` selected by `ids`.
inline Id gather(Tape& t, Id table, const std::vector<std::int32_t>& ids) {
  const std::size_t c = t.cols(table);
  std::vector<double> v(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < t.rows(table), "gather index");
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] = t.value(table)[static_cast<std::size_t>(ids[i]) * c + j];
  }
  const Id out = t.size();
  return t.push(ids.size(), c, std::move(v), [=](Tape& tp) {
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < c; ++j)
        tp.grad(table)[static_cast<std::size_t>(ids[i]) * c + j] += tp.grad(out)[i * c + j];
  });
}

inline Id slice(Tape& t, Id a, std::size_t r0, std::size_t nr, std::size_t c0, std::size_t nc) {
  const std::size_t c = t.cols(a);
  require(r0 + nr <= t.rows(a) && c0 + nc <= c, "slice bounds");
  std::vector<double> v(nr * nc);
  for (std::size_t i = 0; i < nr; ++i)
    for (std::size_t j = 0; j < nc; ++j) v[i * nc + j] = t.value(a)[(r0 + i) * c + c0 + j];
  const Id out = t.size();
  return t.push(nr, nc, std::move(v), [=](Tape& tp) {
    for (std::size_t i = 0; i < nr; ++i)
      for (std::size_t j = 0; j < nc; ++j) tp.grad(a)[(r0 + i) * c + c0 + j] += tp.grad(out)[i * nc + j];
  });
}

// Reinterprets a 1 x n (or n x 1) vector as a rows x cols matrix and back.
inline Id reshape(Tape& t, Id a, std::size_t rows, std::size_t cols) {
  require(rows * cols == t.value(a).size(), "reshape size");
  const Id out = t.size();
  return t.push(rows, cols, t.value(a), [=](Tape& tp) {
    for (std::size_t i = 0; i < tp.grad(out).size(); ++i) tp.grad(a)[i] += tp.grad(out)[i];
  });
}

inline Id concat_cols(Tape& t, const std::vector<Id>& parts) {
  require(!parts.empty(), "concat of nothing");
  const std::size_t r = t.rows(parts[0]);
  std::size_t c = 0;
  for (Id p : parts) {
    require(t.rows(p) == r, "concat_cols rows");
    c += t.cols(p);
  }
  std::vector<double> v(r * c);
  std::size_t off = 0;
  for (Id p : parts) {
    const std::size_t pc = t.cols(p);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < pc; ++j) v[i * c + off + j] = t.value(p)[i * pc + j];
    off += pc;
  }
  const Id out = t.size();
  return t.push(r, c, std::move(v), [=](Tape& tp) {
    std::size_t o = 0;
    for (Id p : parts) {
      const std::size_t pc = tp.cols(p);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < pc; ++j) tp.grad(p)[i * pc + j] += tp.grad(out)[i * c + o + j];
      o += pc;
    }
  });
}

inline Id concat_rows(Tape& t, const std::vector<Id>& parts) {
  require(!parts.empty(), "concat of nothing");
  const std::size_t c = t.cols(parts[0]);
  std::vector<double> v;
  for (Id p : parts) {
    require(t.cols(p) == c, "concat_rows cols");
    v.insert(v.end(), t.value(p).begin(), t.value(p).end());
  }
  const std::size_t r = v.size() / c;
  const Id out = t.size();
  return t.push(r, c, std::move(v), [=](Tape& tp) {
    std::size_t o = 0;
    for (Id p : parts) {
      for (std::size_t i = 0; i < tp.grad(p).size(); ++i) tp.grad(p)[i] += tp.grad(out)[o + i];
      o += tp.grad(p).size();
    }
  });
}

// Sum of w * a over all elements.
inline Id weighted_sum(Tape& t, Id a, std::vector<double> w) {
  require(w.size() == t.value(a).size(), "weighted_sum size");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * t.value(a)[i];
  const Id out = t.size();
  return t.push(1, 1, {s}, [=](Tape& tp) {
    for (std::size_t i = 0; i < w.size(); ++i) tp.grad(a)[i] += w[i] * tp.grad(out)[0];
  });
}

// Summed label-smoothed cross entropy of log-probabilities:
//   -(1 - alpha) logq[k] - (alpha / V) sum_i logq[i]   per non-pad row.
inline Id smoothed_nll(Tape& t, Id logq, const std::vector<std::int32_t>& targets, double alpha,
                       std::optional<std::int32_t> pad) {
  const std::size_t r = t.rows(logq), v = t.cols(logq);
  require(targets.size() == r, "one target per row");
  std::vector<double> coef(r * v, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    if (pad && targets[i] == *pad) continue;
    require(targets[i] >= 0 && static_cast<std::size_t>(targets[i]) < v, "target out of range");
    for (std::size_t j = 0; j < v; ++j) coef[i * v + j] = -alpha / static_cast<double>(v);
    coef[i * v + static_cast<std::size_t>(targets[i])] -= 1.0 - alpha;
  }
  return weighted_sum(t, logq, std::move(coef));
}

}  // namespace lsf::oracle
