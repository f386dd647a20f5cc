#include "hublab/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace hublab {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using StridedMat = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMat = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

using ImplPtr = std::shared_ptr<detail::TensorImpl>;

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

ConstMapMat cmap(const std::vector<float>& v, std::size_t rows, std::size_t cols) {
  return ConstMapMat(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MapMat mmap(std::vector<float>& v, std::size_t rows, std::size_t cols) {
  return MapMat(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<float> out(m * n);
  mmap(out, m, n).noalias() = cmap(a.impl()->data, m, k) * cmap(b.impl()->data, k, n);
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result({m, n}, std::move(out), {a, b}, [ai, bi, m, k, n](const detail::TensorImpl& o) {
    auto dout = cmap(o.grad, m, n);
    if (ai->requires_grad) mmap(ai->grad_buffer(), m, k).noalias() += dout * cmap(bi->data, k, n).transpose();
    if (bi->requires_grad) mmap(bi->grad_buffer(), k, n).noalias() += cmap(ai->data, m, k).transpose() * dout;
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  std::vector<float> out(m * n);
  mmap(out, m, n).noalias() = cmap(a.impl()->data, m, k) * cmap(b.impl()->data, n, k).transpose();
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result({m, n}, std::move(out), {a, b}, [ai, bi, m, k, n](const detail::TensorImpl& o) {
    auto dout = cmap(o.grad, m, n);
    if (ai->requires_grad) mmap(ai->grad_buffer(), m, k).noalias() += dout * cmap(bi->data, n, k);
    if (bi->requires_grad) mmap(bi->grad_buffer(), n, k).noalias() += dout.transpose() * cmap(ai->data, m, k);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto n = a.numel();
  std::vector<float> out(n);
  const auto& x = a.impl()->data;
  const auto& y = b.impl()->data;
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), {a, b}, [ai, bi, n](const detail::TensorImpl& o) {
    for (auto* t : {ai.get(), bi.get()}) {
      if (!t->requires_grad) continue;
      auto& g = t->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto n = a.numel();
  std::vector<float> out(n);
  const auto& x = a.impl()->data;
  const auto& y = b.impl()->data;
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), {a, b}, [ai, bi, n](const detail::TensorImpl& o) {
    if (ai->requires_grad) {
      auto& g = ai->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      auto& g = bi->grad_buffer();
      for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i] * ai->data[i];
    }
  });
}

Tensor scale(const Tensor& x, float factor) {
  const auto n = x.numel();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.impl()->data[i] * factor;
  ImplPtr xi = x.impl();
  return make_result(x.shape(), std::move(out), {x}, [xi, n, factor](const detail::TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) g[i] += o.grad[i] * factor;
  });
}

Tensor add_tiled_rows(const Tensor& x, const Tensor& table, std::size_t period) {
  require_rank2(x, "add_tiled_rows");
  require_rank2(table, "add_tiled_rows");
  const auto rows = x.dim(0), d = x.dim(1);
  if (table.dim(1) != d || period == 0 || period > table.dim(0) || rows % period != 0) {
    throw DimensionError("add_tiled_rows: incompatible shapes " + shape_str(x.shape()) + " and " +
                         shape_str(table.shape()) + " with period " + std::to_string(period));
  }
  std::vector<float> out(x.impl()->data);
  const auto& t = table.impl()->data;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* src = t.data() + (r % period) * d;
    float* dst = out.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
  ImplPtr xi = x.impl(), ti = table.impl();
  return make_result(x.shape(), std::move(out), {x, table},
                     [xi, ti, rows, d, period](const detail::TensorImpl& o) {
                       if (xi->requires_grad) {
                         auto& g = xi->grad_buffer();
                         for (std::size_t i = 0; i < rows * d; ++i) g[i] += o.grad[i];
                       }
                       if (ti->requires_grad) {
                         auto& g = ti->grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r) {
                           float* dst = g.data() + (r % period) * d;
                           const float* src = o.grad.data() + r * d;
                           for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                         }
                       }
                     });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  ImplPtr xi = x.impl();
  return make_result({1}, {static_cast<float>(acc)}, {x}, [xi](const detail::TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (auto& v : g) v += o.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0f / static_cast<float>(x.numel())); }

Tensor softmax(const Tensor& x) {
  const auto n = last_dim(x);
  const auto rows = x.numel() / n;
  std::vector<float> out(x.numel());
  const auto& in = x.impl()->data;
  for (std::size_t r = 0; r < rows; ++r) {
    const float* src = in.data() + r * n;
    float* dst = out.data() + r * n;
    const double mx = *std::max_element(src, src + n);
    double total = 0.0;
    std::vector<double> e(n);
    for (std::size_t j = 0; j < n; ++j) total += (e[j] = std::exp(static_cast<double>(src[j]) - mx));
    for (std::size_t j = 0; j < n; ++j) dst[j] = static_cast<float>(e[j] / total);
  }
  ImplPtr xi = x.impl();
  return make_result(x.shape(), std::move(out), {x}, [xi, rows, n](const detail::TensorImpl& o) {
    auto& g = xi->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const float* y = o.data.data() + r * n;
      const float* dy = o.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += static_cast<double>(y[j]) * dy[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += static_cast<float>(y[j] * (dy[j] - dot));
    }
  });
}

Tensor rms_norm(const Tensor& x, const Tensor& weight, float eps) {
  const auto d = last_dim(x);
  if (weight.numel() != d) {
    throw DimensionError("rms_norm: weight has " + std::to_string(weight.numel()) +
                         " entries for last dimension " + std::to_string(d));
  }
  const auto rows = x.numel() / d;
  const auto& in = x.impl()->data;
  const auto& w = weight.impl()->data;
  std::vector<float> out(x.numel());
  auto inv_rms = std::make_shared<std::vector<float>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* src = in.data() + r * d;
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += static_cast<double>(src[j]) * src[j];
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    (*inv_rms)[r] = static_cast<float>(inv);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = static_cast<float>(w[j] * src[j] * inv);
  }
  ImplPtr xi = x.impl(), wi = weight.impl();
  return make_result(x.shape(), std::move(out), {x, weight},
                     [xi, wi, inv_rms, rows, d](const detail::TensorImpl& o) {
                       const auto& in = xi->data;
                       const auto& w = wi->data;
                       if (xi->requires_grad) {
                         auto& g = xi->grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r) {
                           const float* src = in.data() + r * d;
                           const float* dy = o.grad.data() + r * d;
                           const double inv = (*inv_rms)[r];
                           double dot = 0.0;
                           for (std::size_t j = 0; j < d; ++j) dot += static_cast<double>(dy[j]) * w[j] * src[j];
                           const double coef = dot * inv * inv * inv / static_cast<double>(d);
                           for (std::size_t j = 0; j < d; ++j) {
                             g[r * d + j] += static_cast<float>(dy[j] * w[j] * inv - src[j] * coef);
                           }
                         }
                       }
                       if (wi->requires_grad) {
                         auto& g = wi->grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r) {
                           const float* src = in.data() + r * d;
                           const float* dy = o.grad.data() + r * d;
                           const float inv = (*inv_rms)[r];
                           for (std::size_t j = 0; j < d; ++j) g[j] += dy[j] * src[j] * inv;
                         }
                       }
                     });
}

Tensor gelu(const Tensor& x) {
  static constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
  const auto n = static_cast<Eigen::Index>(x.numel());
  using Arr = Eigen::Array<float, Eigen::Dynamic, 1>;
  Eigen::Map<const Arr> in(x.impl()->data.data(), n);
  // tanh is stored for the backward pass.
  auto t = std::make_shared<std::vector<float>>(x.numel());
  Eigen::Map<Arr> tm(t->data(), n);
  tm = (kC * (in + 0.044715f * in.cube())).tanh();
  std::vector<float> out(x.numel());
  Eigen::Map<Arr>(out.data(), n) = 0.5f * in * (1.0f + tm);
  ImplPtr xi = x.impl();
  return make_result(x.shape(), std::move(out), {x}, [xi, t, n](const detail::TensorImpl& o) {
    Eigen::Map<const Arr> v(xi->data.data(), n);
    Eigen::Map<const Arr> th(t->data(), n);
    Eigen::Map<const Arr> dy(o.grad.data(), n);
    Eigen::Map<Arr> g(xi->grad_buffer().data(), n);
    g += dy * (0.5f * (1.0f + th) + 0.5f * v * (1.0f - th.square()) * (kC * (1.0f + 3.0f * 0.044715f * v.square())));
  });
}

Tensor embedding(const Tensor& table, std::span<const TokenId> ids) {
  require_rank2(table, "embedding");
  const auto vocab = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  std::vector<float> out(ids.size() * d);
  const auto& t = table.impl()->data;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("token id " + std::to_string(ids[i]) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
    std::copy_n(t.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  ImplPtr ti = table.impl();
  std::vector<TokenId> idv(ids.begin(), ids.end());
  return make_result({ids.size(), d}, std::move(out), {table},
                     [ti, idv = std::move(idv), d](const detail::TensorImpl& o) {
                       auto& g = ti->grad_buffer();
                       for (std::size_t i = 0; i < idv.size(); ++i) {
                         float* dst = g.data() + static_cast<std::size_t>(idv[i]) * d;
                         const float* src = o.grad.data() + i * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets) {
  require_rank2(logits, "cross_entropy");
  const auto rows = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
  }
  auto probs = std::make_shared<std::vector<float>>(rows * vocab);
  const auto& in = logits.impl()->data;
  double total = 0.0;
  std::vector<double> e(vocab);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto tgt = targets[r];
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(tgt) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
    const float* src = in.data() + r * vocab;
    const double mx = *std::max_element(src, src + vocab);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += (e[j] = std::exp(static_cast<double>(src[j]) - mx));
    for (std::size_t j = 0; j < vocab; ++j) (*probs)[r * vocab + j] = static_cast<float>(e[j] / z);
    total += std::log(z) + mx - static_cast<double>(src[tgt]);
  }
  ImplPtr li = logits.impl();
  std::vector<TokenId> tv(targets.begin(), targets.end());
  return make_result({1}, {static_cast<float>(total / static_cast<double>(rows))}, {logits},
                     [li, probs, tv = std::move(tv), rows, vocab](const detail::TensorImpl& o) {
                       auto& g = li->grad_buffer();
                       const float s = o.grad[0] / static_cast<float>(rows);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const float* p = probs->data() + r * vocab;
                         float* dst = g.data() + r * vocab;
                         for (std::size_t j = 0; j < vocab; ++j) dst[j] += s * p[j];
                         dst[tv[r]] -= s;
                       }
                     });
}

Tensor causal_attention(const Tensor& qkv, std::size_t batch, std::size_t n_heads) {
  require_rank2(qkv, "causal_attention");
  const auto rows = qkv.dim(0);
  const auto d3 = qkv.dim(1);
  if (batch == 0 || rows % batch != 0 || d3 % 3 != 0 || (d3 / 3) % n_heads != 0) {
    throw DimensionError("causal_attention: bad layout " + shape_str(qkv.shape()));
  }
  const auto seq = rows / batch;
  const auto d = d3 / 3;
  const auto hd = d / n_heads;
  const float sc = 1.0f / std::sqrt(static_cast<float>(hd));
  const auto S = static_cast<Eigen::Index>(seq);
  const auto H = static_cast<Eigen::Index>(hd);
  const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(d3));
  const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(d));

  auto probs = std::make_shared<std::vector<float>>(batch * n_heads * seq * seq, 0.0f);
  std::vector<float> out(rows * d);
  const float* src = qkv.impl()->data.data();
  RowMat scores(S, S);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const float* base = src + b * seq * d3 + h * hd;
      ConstStridedMat q(base, S, H, in_stride);
      ConstStridedMat k(base + d, S, H, in_stride);
      ConstStridedMat v(base + 2 * d, S, H, in_stride);
      scores.noalias() = q * k.transpose();
      MapMat p(probs->data() + (b * n_heads + h) * seq * seq, S, S);
      for (Eigen::Index i = 0; i < S; ++i) {
        float mx = scores(i, 0) * sc;
        for (Eigen::Index j = 1; j <= i; ++j) mx = std::max(mx, scores(i, j) * sc);
        double z = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          const float e = std::exp(scores(i, j) * sc - mx);
          p(i, j) = e;
          z += e;
        }
        const float inv = static_cast<float>(1.0 / z);
        for (Eigen::Index j = 0; j <= i; ++j) p(i, j) *= inv;
      }
      StridedMat o(out.data() + b * seq * d + h * hd, S, H, out_stride);
      o.noalias() = p * v;
    }
  }

  ImplPtr qi = qkv.impl();
  return make_result({rows, d}, std::move(out), {qkv},
                     [qi, probs, batch, n_heads, seq, d, d3, hd, sc](const detail::TensorImpl& o) {
                       const auto S = static_cast<Eigen::Index>(seq);
                       const auto H = static_cast<Eigen::Index>(hd);
                       const Eigen::OuterStride<> in_stride(static_cast<Eigen::Index>(d3));
                       const Eigen::OuterStride<> out_stride(static_cast<Eigen::Index>(d));
                       auto& g = qi->grad_buffer();
                       const float* src = qi->data.data();
                       RowMat dp(S, S);
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t h = 0; h < n_heads; ++h) {
                           const std::size_t off = b * seq * d3 + h * hd;
                           ConstStridedMat q(src + off, S, H, in_stride);
                           ConstStridedMat k(src + off + d, S, H, in_stride);
                           ConstStridedMat v(src + off + 2 * d, S, H, in_stride);
                           StridedMat dq(g.data() + off, S, H, in_stride);
                           StridedMat dk(g.data() + off + d, S, H, in_stride);
                           StridedMat dv(g.data() + off + 2 * d, S, H, in_stride);
                           ConstStridedMat dout(o.grad.data() + b * seq * d + h * hd, S, H, out_stride);
                           ConstMapMat p(probs->data() + (b * n_heads + h) * seq * seq, S, S);
                           dv.noalias() += p.transpose() * dout;
                           dp.noalias() = dout * v.transpose();
                           for (Eigen::Index i = 0; i < S; ++i) {
                             double dot = 0.0;
                             for (Eigen::Index j = 0; j <= i; ++j) dot += static_cast<double>(p(i, j)) * dp(i, j);
                             for (Eigen::Index j = 0; j <= i; ++j) {
                               dp(i, j) = p(i, j) * (dp(i, j) - static_cast<float>(dot)) * sc;
                             }
                             for (Eigen::Index j = i + 1; j < S; ++j) dp(i, j) = 0.0f;
                           }
                           dq.noalias() += dp * k;
                           dk.noalias() += dp.transpose() * q;
                         }
                       }
                     });
}

void check_finite(const Tensor& x, const char* what) {
  for (float v : x.data()) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what);
  }
}

}  // namespace hublab
