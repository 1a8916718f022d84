#include "hgd/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace hgd::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
ConstMatMap<T> as_mat(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(t.data().data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

template <typename T>
MatMap<T> as_mat(std::span<T> s, std::size_t rows, std::size_t cols) {
  return MatMap<T>(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
ConstMatMap<T> as_mat(std::span<const T> s, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(s.data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

void expect_rank(const Shape& dims, std::size_t rank, const char* op, const char* what) {
  if (dims.size() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                         std::to_string(rank) + ", got " + shape_str(dims));
  }
}

void expect_axis(const char* op, const char* axis, std::size_t got, std::size_t want) {
  if (got != want) {
    throw DimensionError(std::string(op) + ": axis '" + axis + "' has extent " +
                         std::to_string(got) + ", expected " + std::to_string(want));
  }
}

template <typename T>
void expect_same_graph(Var<T> a, Var<T> b, const char* op) {
  if (&a.graph() != &b.graph()) {
    throw std::invalid_argument(std::string(op) + ": operands belong to different graphs");
  }
}

template <typename T>
void accumulate(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Interpolation taps along one axis for half-pixel bilinear resampling.
struct LinearTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> w_hi;
};

LinearTaps bilinear_taps(std::size_t in, std::size_t out) {
  LinearTaps taps;
  taps.lo.resize(out);
  taps.hi.resize(out);
  taps.w_hi.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double max_src = static_cast<double>(in - 1);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, max_src);
    const auto lo = static_cast<std::size_t>(std::floor(src));
    taps.lo[d] = lo;
    taps.hi[d] = std::min(lo + 1, in - 1);
    taps.w_hi[d] = src - static_cast<double>(lo);
  }
  return taps;
}

}  // namespace

template <typename T>
Var<T> conv1x1(Var<T> input, Var<T> weight, Var<T> bias) {
  constexpr const char* op = "conv1x1";
  expect_same_graph(input, weight, op);
  expect_same_graph(input, bias, op);
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weight.value();
  const Tensor<T>& b = bias.value();
  expect_rank(x.dims(), 3, op, "input");
  expect_rank(w.dims(), 2, op, "weight");
  expect_rank(b.dims(), 1, op, "bias");
  const std::size_t c_in = x.dim(0), hw = x.dim(1) * x.dim(2), c_out = w.dim(0);
  expect_axis(op, "weight.in_channels", w.dim(1), c_in);
  expect_axis(op, "bias.channels", b.dim(0), c_out);

  Tensor<T> out({c_out, x.dim(1), x.dim(2)});
  auto y = as_mat(out.data(), c_out, hw);
  y.noalias() = as_mat(w, c_out, c_in) * as_mat(x, c_in, hw);
  y.colwise() += Eigen::Map<const Eigen::Vector<T, Eigen::Dynamic>>(
      b.data().data(), static_cast<Eigen::Index>(c_out));

  auto backward = [=](Graph<T>& g, typename Graph<T>::NodeId self) {
    auto dy = as_mat(std::span<const T>(g.grad(self)), c_out, hw);
    const auto xi = input.id(), wi = weight.id(), bi = bias.id();
    if (g.requires_grad(xi)) {
      as_mat(g.grad(xi), c_in, hw).noalias() += as_mat(g.value(wi), c_out, c_in).transpose() * dy;
    }
    if (g.requires_grad(wi)) {
      RowMat<T> dw = dy * as_mat(g.value(xi), c_in, hw).transpose();
      if (g.options().corrupt_backward) dw *= T(1.01);
      as_mat(g.grad(wi), c_out, c_in) += dw;
    }
    if (g.requires_grad(bi)) {
      auto db = g.grad(bi);
      for (std::size_t o = 0; o < c_out; ++o) db[o] += dy.row(static_cast<Eigen::Index>(o)).sum();
    }
  };
  return input.graph().record(op, std::move(out), {input.id(), weight.id(), bias.id()}, backward);
}

template <typename T>
Var<T> conv3x3(Var<T> input, Var<T> weight, Var<T> bias, std::size_t stride) {
  constexpr const char* op = "conv3x3";
  expect_same_graph(input, weight, op);
  expect_same_graph(input, bias, op);
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weight.value();
  const Tensor<T>& b = bias.value();
  expect_rank(x.dims(), 3, op, "input");
  expect_rank(w.dims(), 4, op, "weight");
  expect_rank(b.dims(), 1, op, "bias");
  if (stride == 0) throw DimensionError("conv3x3: stride must be >= 1");
  const std::size_t c_in = x.dim(0), h = x.dim(1), wd = x.dim(2), c_out = w.dim(0);
  expect_axis(op, "weight.in_channels", w.dim(1), c_in);
  expect_axis(op, "weight.kernel_h", w.dim(2), 3);
  expect_axis(op, "weight.kernel_w", w.dim(3), 3);
  expect_axis(op, "bias.channels", b.dim(0), c_out);
  const std::size_t oh = (h - 1) / stride + 1, ow = (wd - 1) / stride + 1;
  const std::size_t rows = c_in * 9, cols = oh * ow;

  // im2col: row (c, ky, kx), column (oy, ox); padding taps stay zero.
  std::vector<T> col(rows * cols, T{0});
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* dst = col.data() + ((c * 3 + ky) * 3 + kx) * cols;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - 1;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - 1;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
            dst[oy * ow + ox] = x.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
          }
        }
      }
    }
  }

  Tensor<T> out({c_out, oh, ow});
  auto y = as_mat(out.data(), c_out, cols);
  y.noalias() = as_mat(w, c_out, rows) * as_mat(std::span<const T>(col), rows, cols);
  y.colwise() += Eigen::Map<const Eigen::Vector<T, Eigen::Dynamic>>(
      b.data().data(), static_cast<Eigen::Index>(c_out));

  auto backward = [=, col = std::move(col)](Graph<T>& g, typename Graph<T>::NodeId self) {
    auto dy = as_mat(std::span<const T>(g.grad(self)), c_out, cols);
    const auto xi = input.id(), wi = weight.id(), bi = bias.id();
    if (g.requires_grad(wi)) {
      as_mat(g.grad(wi), c_out, rows).noalias() +=
          dy * as_mat(std::span<const T>(col), rows, cols).transpose();
    }
    if (g.requires_grad(bi)) {
      auto db = g.grad(bi);
      for (std::size_t o = 0; o < c_out; ++o) db[o] += dy.row(static_cast<Eigen::Index>(o)).sum();
    }
    if (g.requires_grad(xi)) {
      RowMat<T> dcol = as_mat(g.value(wi), c_out, rows).transpose() * dy;
      auto dx = g.grad(xi);
      for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t ky = 0; ky < 3; ++ky) {
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const T* src = dcol.data() + ((c * 3 + ky) * 3 + kx) * cols;
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - 1;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - 1;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                dx[(c * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)] +=
                    src[oy * ow + ox];
              }
            }
          }
        }
      }
    }
  };
  return input.graph().record(op, std::move(out), {input.id(), weight.id(), bias.id()}, backward);
}

template <typename T>
Var<T> bilinear_resize(Var<T> input, std::size_t out_h, std::size_t out_w) {
  constexpr const char* op = "bilinear_resize";
  const Tensor<T>& x = input.value();
  expect_rank(x.dims(), 3, op, "input");
  if (out_h == 0) throw DimensionError("bilinear_resize: target axis 'height' must be >= 1");
  if (out_w == 0) throw DimensionError("bilinear_resize: target axis 'width' must be >= 1");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == 0 || w == 0) throw DimensionError("bilinear_resize: empty source grid");
  const LinearTaps ty = bilinear_taps(h, out_h);
  const LinearTaps tx = bilinear_taps(w, out_w);

  Tensor<T> out({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const T wy1 = static_cast<T>(ty.w_hi[y]), wy0 = T(1) - wy1;
      for (std::size_t xo = 0; xo < out_w; ++xo) {
        const T wx1 = static_cast<T>(tx.w_hi[xo]), wx0 = T(1) - wx1;
        out.at(ch, y, xo) = wy0 * (wx0 * x.at(ch, ty.lo[y], tx.lo[xo]) +
                                   wx1 * x.at(ch, ty.lo[y], tx.hi[xo])) +
                            wy1 * (wx0 * x.at(ch, ty.hi[y], tx.lo[xo]) +
                                   wx1 * x.at(ch, ty.hi[y], tx.hi[xo]));
      }
    }
  }

  auto backward = [=](Graph<T>& g, typename Graph<T>::NodeId self) {
    auto dy = g.grad(self);
    auto dx = g.grad(input.id());
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < out_h; ++y) {
        const T wy1 = static_cast<T>(ty.w_hi[y]), wy0 = T(1) - wy1;
        for (std::size_t xo = 0; xo < out_w; ++xo) {
          const T wx1 = static_cast<T>(tx.w_hi[xo]), wx0 = T(1) - wx1;
          const T d = dy[(ch * out_h + y) * out_w + xo];
          const std::size_t base = ch * h;
          dx[(base + ty.lo[y]) * w + tx.lo[xo]] += wy0 * wx0 * d;
          dx[(base + ty.lo[y]) * w + tx.hi[xo]] += wy0 * wx1 * d;
          dx[(base + ty.hi[y]) * w + tx.lo[xo]] += wy1 * wx0 * d;
          dx[(base + ty.hi[y]) * w + tx.hi[xo]] += wy1 * wx1 * d;
        }
      }
    }
  };
  return input.graph().record(op, std::move(out), {input.id()}, backward);
}

template <typename T>
Var<T> nearest_resize(Var<T> input, std::size_t out_h, std::size_t out_w) {
  constexpr const char* op = "nearest_resize";
  const Tensor<T>& x = input.value();
  expect_rank(x.dims(), 3, op, "input");
  if (out_h == 0) throw DimensionError("nearest_resize: target axis 'height' must be >= 1");
  if (out_w == 0) throw DimensionError("nearest_resize: target axis 'width' must be >= 1");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<std::size_t> src(c * out_h * out_w);
  Tensor<T> out({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const std::size_t sy = y * h / out_h;
      for (std::size_t xo = 0; xo < out_w; ++xo) {
        const std::size_t sx = xo * w / out_w;
        const std::size_t o = (ch * out_h + y) * out_w + xo;
        src[o] = (ch * h + sy) * w + sx;
        out[o] = x[src[o]];
      }
    }
  }
  auto backward = [=, src = std::move(src)](Graph<T>& g, typename Graph<T>::NodeId self) {
    auto dy = g.grad(self);
    auto dx = g.grad(input.id());
    for (std::size_t o = 0; o < src.size(); ++o) dx[src[o]] += dy[o];
  };
  return input.graph().record(op, std::move(out), {input.id()}, backward);
}

template <typename T>
Var<T> maxpool2x2(Var<T> input) {
  constexpr const char* op = "maxpool2x2";
  const Tensor<T>& x = input.value();
  expect_rank(x.dims(), 3, op, "input");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == 0 || w == 0) throw DimensionError("maxpool2x2: empty spatial grid");
  const std::size_t oh = (h + 1) / 2, ow = (w + 1) / 2;
  Tensor<T> out({c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo) {
        std::size_t best = (ch * h + 2 * y) * w + 2 * xo;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          const std::size_t iy = 2 * y + dy;
          if (iy >= h) break;
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t ix = 2 * xo + dx;
            if (ix >= w) break;
            const std::size_t idx = (ch * h + iy) * w + ix;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (ch * oh + y) * ow + xo;
        argmax[o] = best;
        out[o] = x[best];
      }
    }
  }
  auto backward = [=, argmax = std::move(argmax)](Graph<T>& g, typename Graph<T>::NodeId self) {
    auto dy = g.grad(self);
    auto dx = g.grad(input.id());
    for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += dy[o];
  };
  return input.graph().record(op, std::move(out), {input.id()}, backward);
}

template <typename T>
Var<T> softmax_spatial(Var<T> logits) {
  constexpr const char* op = "softmax_spatial";
  const Tensor<T>& a = logits.value();
  expect_rank(a.dims(), 3, op, "logits");
  const std::size_t n = a.dim(0), hw = a.dim(1) * a.dim(2);
  if (hw == 0) throw DimensionError("softmax_spatial: empty spatial grid");
  Tensor<T> out(a.dims());
  for (std::size_t i = 0; i < n; ++i) {
    const T* src = a.data().data() + i * hw;
    T* dst = out.data().data() + i * hw;
    const T peak = *std::max_element(src, src + hw);
    T total = 0;
    for (std::size_t p = 0; p < hw; ++p) {
      dst[p] = std::exp(src[p] - peak);
      total += dst[p];
    }
    for (std::size_t p = 0; p < hw; ++p) dst[p] /= total;
  }
  auto backward = [=](Graph<T>& g, typename Graph<T>::NodeId self) {
    const Tensor<T>& y = g.value(self);
    auto dy = g.grad(self);
    auto dx = g.grad(logits.id());
    for (std::size_t i = 0; i < n; ++i) {
      T dot = 0;
      for (std::size_t p = 0; p < hw; ++p) dot += y[i * hw + p] * dy[i * hw + p];
      for (std::size_t p = 0; p < hw; ++p) {
        dx[i * hw + p] += y[i * hw + p] * (dy[i * hw + p] - dot);
      }
    }
  };
  return logits.graph().record(op, std::move(out), {logits.id()}, backward);
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  constexpr const char* op = "matmul";
  expect_same_graph(a, b, op);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  expect_rank(av.dims(), 2, op, "lhs");
  expect_rank(bv.dims(), 2, op, "rhs");
  const std::size_t p = av.dim(0), q = av.dim(1), r = bv.dim(1);
  expect_axis(op, "rhs.rows (inner)", bv.dim(0), q);
  Tensor<T> out({p, r});
  as_mat(out.data(), p, r).noalias() = as_mat(av, p, q) * as_mat(bv, q, r);
  auto backward = [=](Graph<T>& g, typename Graph<T>::NodeId self) {
    auto dc = as_mat(std::span<const T>(g.grad(self)), p, r);
    if (g.requires_grad(a.id())) {
      as_mat(g.grad(a.id()), p, q).noalias() += dc * as_mat(g.value(b.id()), q, r).transpose();
    }
    if (g.requires_grad(b.id())) {
      as_mat(g.grad(b.id()), q, r).noalias() += as_mat(g.value(a.id()), p, q).transpose() * dc;
    }
  };
  return a.graph().record(op, std::move(out), {a.id(), b.id()}, backward);
}

template <typename T>
Var<T> transpose(Var<T> a) {
  const Tensor<T>& av = a.value();
  expect_rank(av.dims(), 2, "transpose", "input");
  const std::size_t p = av.dim(0), q = av.dim(1);
  Tensor<T> out({q, p});
  as_mat(out.data(), q, p) = as_mat(av, p, q).transpose();
  auto backward = [=](Graph<T>& g, typename Graph<T>::NodeId self) {
    as_mat(g.grad(a.id()), p, q) += as_mat(std::span<const T>(g.grad(self)), q, p).transpose();
  };
  return a.graph().record("transpose", std::move(out), {a.id()}, backward);
}

template <typename T>
Var<T> reshape(Var<T> input, Shape dims) {
  Tensor<T> out = input.value().reshaped(std::move(dims));
  auto backward = [=](Graph<T>& g, typename Graph<T>::NodeId self) {
    accumulate(g.grad(input.id()), std::span<const T>(g.grad(self)));
  };
  return input.graph().record("reshape", std::move(out), {input.id()}, backward);
}

template <typename T>
Var<T> relu(Var<T> input) {
  const Tensor<T>& x = input.value();
  Tensor<T> out(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  auto backward = [=](Graph<T>& g, typename Graph<T>::NodeId self) {
    const Tensor<T>& xv = g.value(input.id());
    auto dy = g.grad(self);
    auto dx = g.grad(input.id());
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (xv[i] > T{0}) dx[i] += dy[i];
    }
  };
  return input.graph().record("relu", std::move(out), {input.id()}, backward);
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts) {
  constexpr const char* op = "concat_channels";
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const Shape& first = parts[0].dims();
  expect_rank(first, 3, op, "input 0");
  std::size_t channels = 0;
  std::vector<typename Graph<T>::NodeId> ids;
  std::vector<std::size_t> offsets;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    expect_same_graph(parts[0], parts[k], op);
    const Shape& d = parts[k].dims();
    expect_rank(d, 3, op, "input");
    expect_axis(op, "height", d[1], first[1]);
    expect_axis(op, "width", d[2], first[2]);
    offsets.push_back(channels * first[1] * first[2]);
    channels += d[0];
    ids.push_back(parts[k].id());
  }
  Tensor<T> out({channels, first[1], first[2]});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(offsets[k]));
  }
  auto backward = [=](Graph<T>& g, typename Graph<T>::NodeId self) {
    auto dy = g.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!g.requires_grad(ids[k])) continue;
      auto dx = g.grad(ids[k]);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[offsets[k] + i];
    }
  };
  return parts[0].graph().record(op, std::move(out), std::move(ids), backward);
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  expect_same_graph(a, b, "add");
  if (a.dims() != b.dims()) {
    throw DimensionError("add: operand dims " + shape_str(a.dims()) + " and " +
                         shape_str(b.dims()) + " differ");
  }
  Tensor<T> out(a.dims());
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto backward = [=](Graph<T>& g, typename Graph<T>::NodeId self) {
    std::span<const T> dy = g.grad(self);
    if (g.requires_grad(a.id())) accumulate(g.grad(a.id()), dy);
    if (g.requires_grad(b.id())) accumulate(g.grad(b.id()), dy);
  };
  return a.graph().record("add", std::move(out), {a.id(), b.id()}, backward);
}

template <typename T>
Var<T> scale(Var<T> input, T factor) {
  Tensor<T> out(input.dims());
  const auto& x = input.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x[i];
  auto backward = [=](Graph<T>& g, typename Graph<T>::NodeId self) {
    auto dy = g.grad(self);
    auto dx = g.grad(input.id());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * dy[i];
  };
  return input.graph().record("scale", std::move(out), {input.id()}, backward);
}

template <typename T>
Var<T> weighted_sum(std::span<const Var<T>> maps, Var<T> coeffs) {
  constexpr const char* op = "weighted_sum";
  if (maps.empty()) throw DimensionError("weighted_sum: no maps");
  const Tensor<T>& cv = coeffs.value();
  expect_rank(cv.dims(), 1, op, "coeffs");
  expect_axis(op, "coeffs.length", cv.dim(0), maps.size());
  const Shape& dims = maps[0].dims();
  std::vector<typename Graph<T>::NodeId> ids;
  for (const auto& m : maps) {
    expect_same_graph(m, coeffs, op);
    if (m.dims() != dims) {
      throw DimensionError("weighted_sum: map dims " + shape_str(m.dims()) + " differ from " +
                           shape_str(dims));
    }
    ids.push_back(m.id());
  }
  Tensor<T> out(dims);
  for (std::size_t j = 0; j < maps.size(); ++j) {
    const auto& m = maps[j].value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += cv[j] * m[i];
  }
  ids.push_back(coeffs.id());
  auto backward = [=](Graph<T>& g, typename Graph<T>::NodeId self) {
    auto dy = g.grad(self);
    const std::size_t k = ids.size() - 1;
    const auto cid = ids.back();
    const Tensor<T>& c = g.value(cid);
    for (std::size_t j = 0; j < k; ++j) {
      if (g.requires_grad(ids[j])) {
        auto dm = g.grad(ids[j]);
        for (std::size_t i = 0; i < dm.size(); ++i) dm[i] += c[j] * dy[i];
      }
      if (g.requires_grad(cid)) {
        const Tensor<T>& m = g.value(ids[j]);
        T dot = 0;
        for (std::size_t i = 0; i < m.size(); ++i) dot += m[i] * dy[i];
        g.grad(cid)[j] += dot;
      }
    }
  };
  return coeffs.graph().record(op, std::move(out), std::move(ids), backward);
}

template <typename T>
Var<T> global_avg_spatial(Var<T> input) {
  const Tensor<T>& x = input.value();
  expect_rank(x.dims(), 3, "global_avg_spatial", "input");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor<T> out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    T total = 0;
    for (std::size_t p = 0; p < hw; ++p) total += x[ch * hw + p];
    out[ch] = total / static_cast<T>(hw);
  }
  auto backward = [=](Graph<T>& g, typename Graph<T>::NodeId self) {
    auto dy = g.grad(self);
    auto dx = g.grad(input.id());
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T d = dy[ch] / static_cast<T>(hw);
      for (std::size_t p = 0; p < hw; ++p) dx[ch * hw + p] += d;
    }
  };
  return input.graph().record("global_avg_spatial", std::move(out), {input.id()}, backward);
}

template <typename T>
Var<T> broadcast_add_channel(Var<T> input, Var<T> vec) {
  constexpr const char* op = "broadcast_add_channel";
  expect_same_graph(input, vec, op);
  const Tensor<T>& x = input.value();
  const Tensor<T>& v = vec.value();
  expect_rank(x.dims(), 3, op, "input");
  expect_rank(v.dims(), 1, op, "vector");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  expect_axis(op, "vector.channels", v.dim(0), c);
  Tensor<T> out(x.dims());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] = x[ch * hw + p] + v[ch];
  }
  auto backward = [=](Graph<T>& g, typename Graph<T>::NodeId self) {
    auto dy = g.grad(self);
    if (g.requires_grad(input.id())) accumulate(g.grad(input.id()), std::span<const T>(dy));
    if (g.requires_grad(vec.id())) {
      auto dv = g.grad(vec.id());
      for (std::size_t ch = 0; ch < c; ++ch) {
        T total = 0;
        for (std::size_t p = 0; p < hw; ++p) total += dy[ch * hw + p];
        dv[ch] += total;
      }
    }
  };
  return input.graph().record(op, std::move(out), {input.id(), vec.id()}, backward);
}

template <typename T>
Var<T> sum(Var<T> input) {
  const Tensor<T>& x = input.value();
  T total = 0;
  for (T v : x.data()) total += v;
  auto backward = [=](Graph<T>& g, typename Graph<T>::NodeId self) {
    const T d = g.grad(self)[0];
    for (T& v : g.grad(input.id())) v += d;
  };
  return input.graph().record("sum", Tensor<T>({1}, std::vector<T>{total}), {input.id()},
                              backward);
}

template <typename T>
Var<T> mean(Var<T> input) {
  const std::size_t n = input.value().size();
  if (n == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(input), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::uint8_t> labels,
                     std::uint8_t ignore_index) {
  constexpr const char* op = "cross_entropy";
  const Tensor<T>& z = logits.value();
  expect_rank(z.dims(), 3, op, "logits");
  const std::size_t k = z.dim(0), hw = z.dim(1) * z.dim(2);
  expect_axis(op, "labels.length", labels.size(), hw);

  // Per-pixel softmax probabilities, kept for the backward pass.
  std::vector<T> prob(k * hw, T{0});
  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  std::size_t valid = 0;
  T total = 0;
  for (std::size_t p = 0; p < hw; ++p) {
    if (lab[p] == ignore_index) continue;
    if (lab[p] >= k) {
      throw DimensionError("cross_entropy: label " + std::to_string(lab[p]) +
                           " outside class axis of extent " + std::to_string(k));
    }
    T peak = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < k; ++c) peak = std::max(peak, z[c * hw + p]);
    T denom = 0;
    for (std::size_t c = 0; c < k; ++c) {
      prob[c * hw + p] = std::exp(z[c * hw + p] - peak);
      denom += prob[c * hw + p];
    }
    for (std::size_t c = 0; c < k; ++c) prob[c * hw + p] /= denom;
    total += -(z[lab[p] * hw + p] - peak - std::log(denom));
    ++valid;
  }
  if (valid == 0) throw std::invalid_argument("cross_entropy: every label is ignore_index");
  const T inv = T(1) / static_cast<T>(valid);
  auto backward = [=, prob = std::move(prob), lab = std::move(lab)](
                      Graph<T>& g, typename Graph<T>::NodeId self) {
    const T d = g.grad(self)[0] * inv;
    auto dz = g.grad(logits.id());
    for (std::size_t p = 0; p < hw; ++p) {
      if (lab[p] == ignore_index) continue;
      for (std::size_t c = 0; c < k; ++c) {
        const T target = c == lab[p] ? T(1) : T(0);
        dz[c * hw + p] += d * (prob[c * hw + p] - target);
      }
    }
  };
  return logits.graph().record(op, Tensor<T>({1}, std::vector<T>{total * inv}), {logits.id()},
                               backward);
}

#define HGD_INSTANTIATE_OPS(T)                                                              \
  template Var<T> conv1x1(Var<T>, Var<T>, Var<T>);                                          \
  template Var<T> conv3x3(Var<T>, Var<T>, Var<T>, std::size_t);                             \
  template Var<T> bilinear_resize(Var<T>, std::size_t, std::size_t);                        \
  template Var<T> nearest_resize(Var<T>, std::size_t, std::size_t);                         \
  template Var<T> maxpool2x2(Var<T>);                                                       \
  template Var<T> softmax_spatial(Var<T>);                                                  \
  template Var<T> matmul(Var<T>, Var<T>);                                                   \
  template Var<T> transpose(Var<T>);                                                        \
  template Var<T> reshape(Var<T>, Shape);                                                   \
  template Var<T> relu(Var<T>);                                                             \
  template Var<T> concat_channels(std::span<const Var<T>>);                                 \
  template Var<T> add(Var<T>, Var<T>);                                                      \
  template Var<T> scale(Var<T>, T);                                                         \
  template Var<T> weighted_sum(std::span<const Var<T>>, Var<T>);                            \
  template Var<T> global_avg_spatial(Var<T>);                                               \
  template Var<T> broadcast_add_channel(Var<T>, Var<T>);                                    \
  template Var<T> sum(Var<T>);                                                              \
  template Var<T> mean(Var<T>);                                                             \
  template Var<T> cross_entropy(Var<T>, std::span<const std::uint8_t>, std::uint8_t);

HGD_INSTANTIATE_OPS(float)
HGD_INSTANTIATE_OPS(double)

}  // namespace hgd::ops
