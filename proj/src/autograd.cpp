#include "tfm/autograd.hpp"

#include <Eigen/Core>
#include <cmath>
#include <memory>

namespace tfm::nn {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

std::int64_t spatial_size(const Shape& s) {
  std::int64_t n = 1;
  for (std::size_t i = 2; i < s.size(); ++i) n *= s[i];
  return n;
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_string(s));
  }
}

// Column matrix for a 3x3x3 same-padded convolution restricted to the voxel
// rows r = d * H + h in [r0, r1): rows (c, kd, kh, kw), columns voxels of the chunk.
template <class T>
void im2col3(const T* x, std::int64_t channels, std::int64_t D, std::int64_t H, std::int64_t W, std::int64_t r0,
             std::int64_t r1, T* col) {
  const std::int64_t n = (r1 - r0) * W;
  for (std::int64_t c = 0; c < channels; ++c) {
    for (int kd = 0; kd < 3; ++kd) {
      for (int kh = 0; kh < 3; ++kh) {
        for (int kw = 0; kw < 3; ++kw) {
          T* dst = col + (((c * 3 + kd) * 3 + kh) * 3 + kw) * n;
          const std::int64_t lo = std::max<std::int64_t>(0, 1 - kw);
          const std::int64_t hi = std::min<std::int64_t>(W, W + 1 - kw);
          for (std::int64_t r = r0; r < r1; ++r) {
            T* row = dst + (r - r0) * W;
            const std::int64_t sd = r / H + kd - 1;
            const std::int64_t sh = r % H + kh - 1;
            if (sd < 0 || sd >= D || sh < 0 || sh >= H) {
              std::fill(row, row + W, T{0});
              continue;
            }
            const T* src = x + ((c * D + sd) * H + sh) * W + kw - 1;
            for (std::int64_t w = 0; w < lo; ++w) row[w] = T{0};
            std::copy(src + lo, src + hi, row + lo);
            for (std::int64_t w = hi; w < W; ++w) row[w] = T{0};
          }
        }
      }
    }
  }
}

template <class T>
void col2im3(const T* col, std::int64_t channels, std::int64_t D, std::int64_t H, std::int64_t W, std::int64_t r0,
             std::int64_t r1, T* x) {
  const std::int64_t n = (r1 - r0) * W;
  for (std::int64_t c = 0; c < channels; ++c) {
    for (int kd = 0; kd < 3; ++kd) {
      for (int kh = 0; kh < 3; ++kh) {
        for (int kw = 0; kw < 3; ++kw) {
          const T* src = col + (((c * 3 + kd) * 3 + kh) * 3 + kw) * n;
          const std::int64_t lo = std::max<std::int64_t>(0, 1 - kw);
          const std::int64_t hi = std::min<std::int64_t>(W, W + 1 - kw);
          for (std::int64_t r = r0; r < r1; ++r) {
            const std::int64_t sd = r / H + kd - 1;
            const std::int64_t sh = r % H + kh - 1;
            if (sd < 0 || sd >= D || sh < 0 || sh >= H) continue;
            const T* row = src + (r - r0) * W;
            T* dst = x + ((c * D + sd) * H + sh) * W + kw - 1;
            for (std::int64_t w = lo; w < hi; ++w) dst[w] += row[w];
          }
        }
      }
    }
  }
}

// Voxel rows per im2col chunk, sized so the chunk's column buffer stays cache resident.
std::int64_t chunk_rows(std::int64_t kdim, std::int64_t rows, std::int64_t W) {
  constexpr std::int64_t kBudget = 96 * 1024;
  return std::clamp<std::int64_t>(kBudget / std::max<std::int64_t>(kdim * W, 1), 1, rows);
}

template <class T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

}  // namespace

template <class T>
void Graph<T>::backward(Var<T> scalar) {
  if (scalar.graph != this) throw std::invalid_argument("backward: variable belongs to another graph");
  if (value(scalar.id).size() != 1) throw std::invalid_argument("backward: expected a scalar");
  grad(scalar.id).fill(T{1});
  for (int id = scalar.id; id >= 0; --id) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    if (node.backward && !node.grad.empty()) node.backward(*this, id);
  }
}

template <class T>
Var<T> conv3d(Var<T> x, Var<T> w, Var<T> b) {
  auto& g = *x.graph;
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  require_rank(xs, 5, "conv3d input");
  require_rank(ws, 5, "conv3d weight");
  const std::int64_t batch = xs[0], cin = xs[1], D = xs[2], H = xs[3], W = xs[4];
  const std::int64_t cout = ws[0], k = ws[2];
  if (ws[1] != cin || (k != 1 && k != 3) || ws[3] != k || ws[4] != k) {
    throw std::invalid_argument("conv3d: weight " + shape_string(ws) + " incompatible with input " +
                                shape_string(xs));
  }
  if (b.shape() != Shape{cout}) throw std::invalid_argument("conv3d: bias shape mismatch");
  const std::int64_t n = D * H * W;
  const std::int64_t kdim = cin * k * k * k;

  Tensor<T> out({batch, cout, D, H, W});
  ConstMatMap<T> wm(w.value().data(), cout, kdim);
  const auto bias = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(b.value().data(), cout);
  const std::int64_t rows = D * H, step = chunk_rows(kdim, rows, W);
  AlignedVector<T> col(k == 3 ? static_cast<std::size_t>(kdim * step * W) : 0);
  for (std::int64_t s = 0; s < batch; ++s) {
    const T* xin = x.value().data() + s * cin * n;
    MatMap<T> ym(out.data() + s * cout * n, cout, n);
    if (k == 3) {
      for (std::int64_t r0 = 0; r0 < rows; r0 += step) {
        const std::int64_t r1 = std::min(rows, r0 + step), len = (r1 - r0) * W;
        im2col3(xin, cin, D, H, W, r0, r1, col.data());
        StridedMap<T>(ym.data() + r0 * W, cout, len, Eigen::OuterStride<>(n)).noalias() =
            wm * ConstMatMap<T>(col.data(), kdim, len);
      }
    } else {
      ym.noalias() = wm * ConstMatMap<T>(xin, cin, n);
    }
    ym.colwise() += bias;
  }

  return g.record(std::move(out), {x, w, b}, [x, w, b, batch, cin, cout, D, H, W, n, k, kdim](Graph<T>& g, int self) {
    const Tensor<T>& dy = g.grad(self);
    const bool gx = g.requires_grad(x.id), gw = g.requires_grad(w.id), gb = g.requires_grad(b.id);
    ConstMatMap<T> wm(g.value(w.id).data(), cout, kdim);
    const std::int64_t rows = D * H, step = chunk_rows(kdim, rows, W);
    AlignedVector<T> col(k == 3 ? static_cast<std::size_t>(kdim * step * W) : 0);
    for (std::int64_t s = 0; s < batch; ++s) {
      ConstMatMap<T> dym(dy.data() + s * cout * n, cout, n);
      const T* xin = g.value(x.id).data() + s * cin * n;
      T* dx = gx ? g.grad(x.id).data() + s * cin * n : nullptr;
      if (gb) {
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(g.grad(b.id).data(), cout) += dym.rowwise().sum();
      }
      if (k == 1) {
        if (gw) MatMap<T>(g.grad(w.id).data(), cout, kdim).noalias() += dym * ConstMatMap<T>(xin, cin, n).transpose();
        if (gx) MatMap<T>(dx, cin, n).noalias() += wm.transpose() * dym;
        continue;
      }
      for (std::int64_t r0 = 0; r0 < rows; r0 += step) {
        const std::int64_t r1 = std::min(rows, r0 + step), len = (r1 - r0) * W;
        ConstStridedMap<T> dyc(dym.data() + r0 * W, cout, len, Eigen::OuterStride<>(n));
        MatMap<T> colm(col.data(), kdim, len);
        if (gw) {
          im2col3(xin, cin, D, H, W, r0, r1, col.data());
          MatMap<T>(g.grad(w.id).data(), cout, kdim).noalias() += dyc * colm.transpose();
        }
        if (gx) {
          colm.noalias() = wm.transpose() * dyc;
          col2im3(col.data(), cin, D, H, W, r0, r1, dx);
        }
      }
    }
  });
}

template <class T>
Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, int groups, double eps) {
  auto& g = *x.graph;
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw std::invalid_argument("group_norm: rank must be at least 2");
  const std::int64_t batch = xs[0], channels = xs[1], spatial = spatial_size(xs);
  if (groups <= 0 || channels % groups != 0) {
    throw std::invalid_argument("group_norm: " + std::to_string(groups) + " groups do not divide " +
                                std::to_string(channels) + " channels");
  }
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    throw std::invalid_argument("group_norm: affine parameter shape mismatch");
  }
  const std::int64_t per_group = channels / groups;
  const std::int64_t m = per_group * spatial;
  auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(2 * batch * groups));

  Tensor<T> out(xs);
  const T* xv = x.value().data();
  const T* gv = gamma.value().data();
  const T* bv = beta.value().data();
  for (std::int64_t s = 0; s < batch; ++s) {
    for (std::int64_t grp = 0; grp < groups; ++grp) {
      const std::int64_t offset = (s * channels + grp * per_group) * spatial;
      double sum = 0.0;
      for (std::int64_t i = 0; i < m; ++i) sum += static_cast<double>(xv[offset + i]);
      const double mean = sum / static_cast<double>(m);
      double sq = 0.0;
      for (std::int64_t i = 0; i < m; ++i) {
        const double d = static_cast<double>(xv[offset + i]) - mean;
        sq += d * d;
      }
      const double rstd = 1.0 / std::sqrt(sq / static_cast<double>(m) + eps);
      (*stats)[static_cast<std::size_t>(2 * (s * groups + grp))] = mean;
      (*stats)[static_cast<std::size_t>(2 * (s * groups + grp) + 1)] = rstd;
      for (std::int64_t c = 0; c < per_group; ++c) {
        const std::int64_t ch = grp * per_group + c;
        const T scale = static_cast<T>(rstd) * gv[ch];
        const T shift = bv[ch] - static_cast<T>(mean * rstd) * gv[ch];
        const std::int64_t base = offset + c * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) out[static_cast<std::size_t>(base + i)] = xv[base + i] * scale + shift;
      }
    }
  }

  return g.record(std::move(out), {x, gamma, beta},
                  [x, gamma, beta, stats, batch, channels, spatial, groups, per_group, m](Graph<T>& g, int self) {
    const T* dy = g.grad(self).data();
    const T* xv = g.value(x.id).data();
    const T* gv = g.value(gamma.id).data();
    const bool gx = g.requires_grad(x.id), gg = g.requires_grad(gamma.id), gb = g.requires_grad(beta.id);
    for (std::int64_t s = 0; s < batch; ++s) {
      for (std::int64_t grp = 0; grp < groups; ++grp) {
        const double mean = (*stats)[static_cast<std::size_t>(2 * (s * groups + grp))];
        const double rstd = (*stats)[static_cast<std::size_t>(2 * (s * groups + grp) + 1)];
        const std::int64_t offset = (s * channels + grp * per_group) * spatial;
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::int64_t c = 0; c < per_group; ++c) {
          const std::int64_t ch = grp * per_group + c;
          const std::int64_t base = offset + c * spatial;
          double dgamma = 0.0, dbeta = 0.0;
          for (std::int64_t i = 0; i < spatial; ++i) {
            const double xhat = (static_cast<double>(xv[base + i]) - mean) * rstd;
            const double d = static_cast<double>(dy[base + i]);
            dgamma += d * xhat;
            dbeta += d;
            const double dxhat = d * static_cast<double>(gv[ch]);
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
          }
          if (gg) g.grad(gamma.id)[static_cast<std::size_t>(ch)] += static_cast<T>(dgamma);
          if (gb) g.grad(beta.id)[static_cast<std::size_t>(ch)] += static_cast<T>(dbeta);
        }
        if (!gx) continue;
        T* dx = g.grad(x.id).data();
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::int64_t c = 0; c < per_group; ++c) {
          const std::int64_t ch = grp * per_group + c;
          const std::int64_t base = offset + c * spatial;
          for (std::int64_t i = 0; i < spatial; ++i) {
            const double xhat = (static_cast<double>(xv[base + i]) - mean) * rstd;
            const double dxhat = static_cast<double>(dy[base + i]) * static_cast<double>(gv[ch]);
            dx[base + i] += static_cast<T>(rstd * (dxhat - sum_dxhat * inv_m - xhat * sum_dxhat_xhat * inv_m));
          }
        }
      }
    }
  });
}

template <class T>
Var<T> silu(Var<T> x) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * sigmoid(xv[i]);
  return x.graph->record(std::move(out), {x}, [x](Graph<T>& g, int self) {
    const auto& dy = g.grad(self);
    const auto& xv = g.value(x.id);
    auto& dx = g.grad(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T s = sigmoid(xv[i]);
      dx[i] += dy[i] * s * (T{1} + xv[i] * (T{1} - s));
    }
  });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  require_rank(x.shape(), 2, "linear input");
  require_rank(w.shape(), 2, "linear weight");
  const std::int64_t rows = x.dim(0), in = x.dim(1), outs = w.dim(0);
  if (w.dim(1) != in || b.shape() != Shape{outs}) {
    throw std::invalid_argument("linear: weight " + shape_string(w.shape()) + " incompatible with input " +
                                shape_string(x.shape()));
  }
  Tensor<T> out({rows, outs});
  MatMap<T> ym(out.data(), rows, outs);
  ym.noalias() = ConstMatMap<T>(x.value().data(), rows, in) * ConstMatMap<T>(w.value().data(), outs, in).transpose();
  ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.value().data(), outs);
  return x.graph->record(std::move(out), {x, w, b}, [x, w, b, rows, in, outs](Graph<T>& g, int self) {
    ConstMatMap<T> dy(g.grad(self).data(), rows, outs);
    if (g.requires_grad(x.id)) {
      MatMap<T>(g.grad(x.id).data(), rows, in).noalias() += dy * ConstMatMap<T>(g.value(w.id).data(), outs, in);
    }
    if (g.requires_grad(w.id)) {
      MatMap<T>(g.grad(w.id).data(), outs, in).noalias() +=
          dy.transpose() * ConstMatMap<T>(g.value(x.id).data(), rows, in);
    }
    if (g.requires_grad(b.id)) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g.grad(b.id).data(), outs) += dy.colwise().sum();
    }
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph<T>& g, int self) {
    const auto& dy = g.grad(self);
    for (const auto& in : {a, b}) {
      if (!g.requires_grad(in.id)) continue;
      auto& dx = g.grad(in.id);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    }
  });
}

template <class T>
Var<T> add_channel_bias(Var<T> h, Var<T> e) {
  const Shape& hs = h.shape();
  if (hs.size() < 2 || e.shape() != Shape{hs[0], hs[1]}) {
    throw std::invalid_argument("add_channel_bias: " + shape_string(e.shape()) + " does not broadcast over " +
                                shape_string(hs));
  }
  const std::int64_t rows = hs[0] * hs[1], spatial = spatial_size(hs);
  Tensor<T> out(h.value());
  const auto& ev = e.value();
  for (std::int64_t r = 0; r < rows; ++r) {
    T* p = out.data() + r * spatial;
    for (std::int64_t i = 0; i < spatial; ++i) p[i] += ev[static_cast<std::size_t>(r)];
  }
  return h.graph->record(std::move(out), {h, e}, [h, e, rows, spatial](Graph<T>& g, int self) {
    const auto& dy = g.grad(self);
    if (g.requires_grad(h.id)) {
      auto& dh = g.grad(h.id);
      for (std::size_t i = 0; i < dh.size(); ++i) dh[i] += dy[i];
    }
    if (g.requires_grad(e.id)) {
      auto& de = g.grad(e.id);
      for (std::int64_t r = 0; r < rows; ++r) {
        T sum{0};
        const T* p = dy.data() + r * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) sum += p[i];
        de[static_cast<std::size_t>(r)] += sum;
      }
    }
  });
}

template <class T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || as.size() != bs.size() || as[0] != bs[0] ||
      !std::equal(as.begin() + 2, as.end(), bs.begin() + 2)) {
    throw std::invalid_argument("concat_channels: " + shape_string(as) + " vs " + shape_string(bs));
  }
  const std::int64_t batch = as[0], ca = as[1], cb = bs[1], spatial = spatial_size(as);
  Shape os = as;
  os[1] = ca + cb;
  Tensor<T> out(os);
  for (std::int64_t s = 0; s < batch; ++s) {
    const T* pa = a.value().data() + s * ca * spatial;
    const T* pb = b.value().data() + s * cb * spatial;
    T* po = out.data() + s * (ca + cb) * spatial;
    std::copy(pa, pa + ca * spatial, po);
    std::copy(pb, pb + cb * spatial, po + ca * spatial);
  }
  return a.graph->record(std::move(out), {a, b}, [a, b, batch, ca, cb, spatial](Graph<T>& g, int self) {
    const T* dy = g.grad(self).data();
    for (std::int64_t s = 0; s < batch; ++s) {
      const T* src = dy + s * (ca + cb) * spatial;
      if (g.requires_grad(a.id)) {
        T* da = g.grad(a.id).data() + s * ca * spatial;
        for (std::int64_t i = 0; i < ca * spatial; ++i) da[i] += src[i];
      }
      if (g.requires_grad(b.id)) {
        T* db = g.grad(b.id).data() + s * cb * spatial;
        for (std::int64_t i = 0; i < cb * spatial; ++i) db[i] += src[ca * spatial + i];
      }
    }
  });
}

template <class T>
Var<T> avg_pool2(Var<T> x) {
  const Shape& xs = x.shape();
  require_rank(xs, 5, "avg_pool2");
  if (xs[2] % 2 || xs[3] % 2 || xs[4] % 2) {
    throw std::invalid_argument("avg_pool2: odd spatial extent in " + shape_string(xs));
  }
  const std::int64_t planes = xs[0] * xs[1], D = xs[2] / 2, H = xs[3] / 2, W = xs[4] / 2;
  Tensor<T> out({xs[0], xs[1], D, H, W});
  const T* xv = x.value().data();
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t d = 0; d < D; ++d)
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t w = 0; w < W; ++w) {
          T sum{0};
          for (int i = 0; i < 8; ++i) {
            sum += xv[((p * 2 * D + 2 * d + (i >> 2)) * 2 * H + 2 * h + ((i >> 1) & 1)) * 2 * W + 2 * w + (i & 1)];
          }
          out[static_cast<std::size_t>(((p * D + d) * H + h) * W + w)] = sum / T{8};
        }
  }
  return x.graph->record(std::move(out), {x}, [x, planes, D, H, W](Graph<T>& g, int self) {
    const T* dy = g.grad(self).data();
    T* dx = g.grad(x.id).data();
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t d = 0; d < D; ++d)
        for (std::int64_t h = 0; h < H; ++h)
          for (std::int64_t w = 0; w < W; ++w) {
            const T v = dy[((p * D + d) * H + h) * W + w] / T{8};
            for (int i = 0; i < 8; ++i) {
              dx[((p * 2 * D + 2 * d + (i >> 2)) * 2 * H + 2 * h + ((i >> 1) & 1)) * 2 * W + 2 * w + (i & 1)] += v;
            }
          }
  });
}

template <class T>
Var<T> upsample_nearest2(Var<T> x) {
  const Shape& xs = x.shape();
  require_rank(xs, 5, "upsample_nearest2");
  const std::int64_t planes = xs[0] * xs[1], D = xs[2], H = xs[3], W = xs[4];
  Tensor<T> out({xs[0], xs[1], 2 * D, 2 * H, 2 * W});
  const T* xv = x.value().data();
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t d = 0; d < 2 * D; ++d)
      for (std::int64_t h = 0; h < 2 * H; ++h) {
        const T* src = xv + ((p * D + d / 2) * H + h / 2) * W;
        T* dst = out.data() + ((p * 2 * D + d) * 2 * H + h) * 2 * W;
        for (std::int64_t w = 0; w < 2 * W; ++w) dst[w] = src[w / 2];
      }
  return x.graph->record(std::move(out), {x}, [x, planes, D, H, W](Graph<T>& g, int self) {
    const T* dy = g.grad(self).data();
    T* dx = g.grad(x.id).data();
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t d = 0; d < 2 * D; ++d)
        for (std::int64_t h = 0; h < 2 * H; ++h) {
          T* dst = dx + ((p * D + d / 2) * H + h / 2) * W;
          const T* src = dy + ((p * 2 * D + d) * 2 * H + h) * 2 * W;
          for (std::int64_t w = 0; w < 2 * W; ++w) dst[w / 2] += src[w];
        }
  });
}

template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v) {
  require_rank(q.shape(), 3, "attention queries");
  require_rank(k.shape(), 3, "attention keys");
  require_same_shape(k.shape(), v.shape(), "attention keys/values");
  const std::int64_t batch = q.dim(0), channels = q.dim(1), n = q.dim(2), m = k.dim(1);
  if (k.dim(0) != batch || k.dim(2) != channels) {
    throw std::invalid_argument("attention: keys " + shape_string(k.shape()) + " incompatible with queries " +
                                shape_string(q.shape()));
  }
  const T scale = T{1} / std::sqrt(static_cast<T>(channels));
  auto probs = std::make_shared<AlignedVector<T>>(static_cast<std::size_t>(batch * n * m));
  Tensor<T> out({batch, channels, n});
  for (std::int64_t s = 0; s < batch; ++s) {
    ConstMatMap<T> qm(q.value().data() + s * channels * n, channels, n);
    ConstMatMap<T> km(k.value().data() + s * m * channels, m, channels);
    ConstMatMap<T> vm(v.value().data() + s * m * channels, m, channels);
    MatMap<T> pm(probs->data() + s * n * m, n, m);
    pm.noalias() = (qm.transpose() * km.transpose()) * scale;
    for (std::int64_t r = 0; r < n; ++r) {
      auto row = pm.row(r);
      const T mx = row.maxCoeff();
      row = (row.array() - mx).exp();
      row /= row.sum();
    }
    MatMap<T>(out.data() + s * channels * n, channels, n).noalias() = vm.transpose() * pm.transpose();
  }
  return q.graph->record(std::move(out), {q, k, v}, [q, k, v, probs, batch, channels, n, m, scale](Graph<T>& g, int self) {
    RowMat<T> dp(n, m);
    for (std::int64_t s = 0; s < batch; ++s) {
      ConstMatMap<T> dom(g.grad(self).data() + s * channels * n, channels, n);
      ConstMatMap<T> qm(g.value(q.id).data() + s * channels * n, channels, n);
      ConstMatMap<T> km(g.value(k.id).data() + s * m * channels, m, channels);
      ConstMatMap<T> vm(g.value(v.id).data() + s * m * channels, m, channels);
      ConstMatMap<T> pm(probs->data() + s * n * m, n, m);
      if (g.requires_grad(v.id)) {
        MatMap<T>(g.grad(v.id).data() + s * m * channels, m, channels).noalias() += pm.transpose() * dom.transpose();
      }
      dp.noalias() = dom.transpose() * vm.transpose();
      const Eigen::Matrix<T, Eigen::Dynamic, 1> inner = (pm.array() * dp.array()).rowwise().sum();
      dp = pm.array() * (dp.colwise() - inner).array();
      if (g.requires_grad(q.id)) {
        MatMap<T>(g.grad(q.id).data() + s * channels * n, channels, n).noalias() += scale * (km.transpose() * dp.transpose());
      }
      if (g.requires_grad(k.id)) {
        MatMap<T>(g.grad(k.id).data() + s * m * channels, m, channels).noalias() += scale * (dp.transpose() * qm.transpose());
      }
    }
  });
}

template <class T>
Var<T> broadcast_spatial(Var<T> e, std::int64_t depth, std::int64_t height, std::int64_t width) {
  require_rank(e.shape(), 2, "broadcast_spatial");
  const std::int64_t rows = e.dim(0) * e.dim(1), spatial = depth * height * width;
  Tensor<T> out({e.dim(0), e.dim(1), depth, height, width});
  for (std::int64_t r = 0; r < rows; ++r) {
    std::fill(out.data() + r * spatial, out.data() + (r + 1) * spatial, e.value()[static_cast<std::size_t>(r)]);
  }
  return e.graph->record(std::move(out), {e}, [e, rows, spatial](Graph<T>& g, int self) {
    const T* dy = g.grad(self).data();
    auto& de = g.grad(e.id);
    for (std::int64_t r = 0; r < rows; ++r) {
      T sum{0};
      for (std::int64_t i = 0; i < spatial; ++i) sum += dy[r * spatial + i];
      de[static_cast<std::size_t>(r)] += sum;
    }
  });
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (element_count(shape) != static_cast<std::int64_t>(x.value().size())) {
    throw std::invalid_argument("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  return x.graph->record(x.value().reshaped(std::move(shape)), {x}, [x](Graph<T>& g, int self) {
    const auto& dy = g.grad(self);
    auto& dx = g.grad(x.id);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
  });
}

template <class T>
Var<T> channel_mean(Var<T> x) {
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw std::invalid_argument("channel_mean: rank must be at least 2");
  const std::int64_t batch = xs[0], channels = xs[1], spatial = spatial_size(xs);
  Shape os = xs;
  os[1] = 1;
  Tensor<T> out(os);
  const T* xv = x.value().data();
  for (std::int64_t s = 0; s < batch; ++s) {
    T* dst = out.data() + s * spatial;
    for (std::int64_t c = 0; c < channels; ++c) {
      const T* src = xv + (s * channels + c) * spatial;
      for (std::int64_t i = 0; i < spatial; ++i) dst[i] += src[i];
    }
    for (std::int64_t i = 0; i < spatial; ++i) dst[i] /= static_cast<T>(channels);
  }
  return x.graph->record(std::move(out), {x}, [x, batch, channels, spatial](Graph<T>& g, int self) {
    const T* dy = g.grad(self).data();
    T* dx = g.grad(x.id).data();
    const T inv = T{1} / static_cast<T>(channels);
    for (std::int64_t s = 0; s < batch; ++s)
      for (std::int64_t c = 0; c < channels; ++c)
        for (std::int64_t i = 0; i < spatial; ++i) dx[(s * channels + c) * spatial + i] += dy[s * spatial + i] * inv;
  });
}

template <class T>
Var<T> mse_loss(Var<T> prediction, const Tensor<T>& target) {
  require_same_shape(prediction.shape(), target.shape(), "mse_loss");
  const auto& p = prediction.value();
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(p[i]) - static_cast<double>(target[i]);
    sum += d * d;
  }
  const double count = static_cast<double>(p.size());
  Tensor<T> out(Shape{}, static_cast<T>(sum / count));
  return prediction.graph->record(std::move(out), {prediction}, [prediction, target, count](Graph<T>& g, int self) {
    const T upstream = g.grad(self)[0];
    const auto& p = g.value(prediction.id);
    auto& dp = g.grad(prediction.id);
    const T factor = static_cast<T>(2.0 / count) * upstream;
    for (std::size_t i = 0; i < dp.size(); ++i) dp[i] += factor * (p[i] - target[i]);
  });
}

#define TFM_INSTANTIATE_AUTOGRAD(T)                                                          \
  template class Graph<T>;                                                                   \
  template Var<T> conv3d(Var<T>, Var<T>, Var<T>);                                            \
  template Var<T> group_norm(Var<T>, Var<T>, Var<T>, int, double);                           \
  template Var<T> silu(Var<T>);                                                              \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                            \
  template Var<T> add(Var<T>, Var<T>);                                                       \
  template Var<T> add_channel_bias(Var<T>, Var<T>);                                          \
  template Var<T> concat_channels(Var<T>, Var<T>);                                           \
  template Var<T> avg_pool2(Var<T>);                                                         \
  template Var<T> upsample_nearest2(Var<T>);                                                 \
  template Var<T> attention(Var<T>, Var<T>, Var<T>);                                         \
  template Var<T> broadcast_spatial(Var<T>, std::int64_t, std::int64_t, std::int64_t);       \
  template Var<T> reshape(Var<T>, Shape);                                                    \
  template Var<T> channel_mean(Var<T>);                                                      \
  template Var<T> mse_loss(Var<T>, const Tensor<T>&);

TFM_INSTANTIATE_AUTOGRAD(float)
TFM_INSTANTIATE_AUTOGRAD(double)

}  // namespace tfm::nn
