#include "mcam/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace mcam {
namespace {

// Upper bound on im2col buffer elements; larger images are processed in row bands.
constexpr std::size_t kColumnBudget = std::size_t{1} << 22;

// Row-major C = alpha * op(A) * op(B) + beta * C with explicit leading dimensions.
template <typename T>
void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a, std::size_t lda,
          const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Stride = Eigen::OuterStride<>;
  using ConstMap = Eigen::Map<const Mat, Eigen::Unaligned, Stride>;
  const auto em = static_cast<Eigen::Index>(m), en = static_cast<Eigen::Index>(n), ek = static_cast<Eigen::Index>(k);
  ConstMap A(a, ta ? ek : em, ta ? em : ek, Stride(static_cast<Eigen::Index>(lda)));
  ConstMap B(b, tb ? en : ek, tb ? ek : en, Stride(static_cast<Eigen::Index>(ldb)));
  Eigen::Map<Mat, Eigen::Unaligned, Stride> C(c, em, en, Stride(static_cast<Eigen::Index>(ldc)));
  if (beta == T{0}) {
    C.setZero();
  } else if (beta != T{1}) {
    C *= beta;
  }
  if (!ta && !tb) C.noalias() += alpha * A * B;
  else if (ta && !tb) C.noalias() += alpha * A.transpose() * B;
  else if (!ta && tb) C.noalias() += alpha * A * B.transpose();
  else C.noalias() += alpha * A.transpose() * B.transpose();
}

struct ConvGeom {
  std::size_t ci, co, h, w, k, dilation, pad;
  std::size_t rows_per_band;

  std::size_t kdim() const { return ci * k * k; }
  bool pointwise() const { return k == 1; }
};

ConvGeom conv_geometry(const Shape& in, const Shape& wt, std::size_t dilation) {
  if (dilation == 0) throw std::invalid_argument("conv2d: dilation must be positive");
  if (wt.h != wt.w) throw std::invalid_argument("conv2d: kernel must be square, got " + wt.str());
  if (wt.h % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd, got " + wt.str());
  if (in.c != wt.c) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(in.c) + " channels, weight expects " +
                                std::to_string(wt.c));
  }
  if (in.h == 0 || in.w == 0) throw std::invalid_argument("conv2d: zero-sized spatial input " + in.str());
  ConvGeom g{in.c, wt.n, in.h, in.w, wt.h, dilation, (wt.h - 1) * dilation / 2, in.h};
  const std::size_t per_row = g.kdim() * g.w;
  g.rows_per_band = std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(per_row, 1), 1, g.h);
  return g;
}

// col[(c*k+ky)*k+kx][(y-y0)*w + x] = in[c][y+ky*d-pad][x+kx*d-pad], zero outside.
template <typename T>
void im2col(const T* in, const ConvGeom& g, std::size_t y0, std::size_t y1, T* col) {
  const std::size_t band = (y1 - y0) * g.w;
  const auto H = static_cast<std::ptrdiff_t>(g.h);
  const auto W = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.ci; ++c) {
    const T* plane = in + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* dst = col + ((c * g.k + ky) * g.k + kx) * band;
        const auto oy = static_cast<std::ptrdiff_t>(ky * g.dilation) - static_cast<std::ptrdiff_t>(g.pad);
        const auto ox = static_cast<std::ptrdiff_t>(kx * g.dilation) - static_cast<std::ptrdiff_t>(g.pad);
        const std::ptrdiff_t x_lo = std::clamp<std::ptrdiff_t>(-ox, 0, W);
        const std::ptrdiff_t x_hi = std::clamp<std::ptrdiff_t>(W - ox, 0, W);
        // One fill per band; per-row padding fills of one or two elements were dominating.
        std::fill(dst, dst + band, T{0});
        if (x_lo >= x_hi) continue;
        for (std::size_t y = y0; y < y1; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) + oy;
          if (iy < 0 || iy >= H) continue;
          std::memcpy(dst + (y - y0) * g.w + x_lo, plane + iy * W + x_lo + ox,
                      sizeof(T) * static_cast<std::size_t>(x_hi - x_lo));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, std::size_t y0, std::size_t y1, T* out) {
  const std::size_t band = (y1 - y0) * g.w;
  const auto H = static_cast<std::ptrdiff_t>(g.h);
  const auto W = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.ci; ++c) {
    T* plane = out + c * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* src = col + ((c * g.k + ky) * g.k + kx) * band;
        const auto oy = static_cast<std::ptrdiff_t>(ky * g.dilation) - static_cast<std::ptrdiff_t>(g.pad);
        const auto ox = static_cast<std::ptrdiff_t>(kx * g.dilation) - static_cast<std::ptrdiff_t>(g.pad);
        const std::ptrdiff_t x_lo = std::clamp<std::ptrdiff_t>(-ox, 0, W);
        const std::ptrdiff_t x_hi = std::clamp<std::ptrdiff_t>(W - ox, 0, W);
        for (std::size_t y = y0; y < y1; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y) + oy;
          if (iy < 0 || iy >= H) continue;
          const T* row = src + (y - y0) * g.w;
          T* dst = plane + iy * W + ox;
          for (std::ptrdiff_t x = x_lo; x < x_hi; ++x) dst[x] += row[x];
        }
      }
    }
  }
}

// Convs with this few outputs skip im2col: the column buffer is k*k times the input and the
// GEMM is too thin to pay for it.
constexpr std::size_t kDirectMaxOutputs = 8;

// Planes copied into a zero border of width pad. In the padded row pitch every tap of the
// kernel is a fixed flat offset, so one tap over the whole image is a single contiguous run;
// columns past w in each output row are junk and get dropped.
struct PaddedGeom {
  std::size_t pitch, rows, plane, run, slack;
  explicit PaddedGeom(const ConvGeom& g)
      : pitch(g.w + 2 * g.pad), rows(g.h + 2 * g.pad), plane(pitch * rows), run(g.h * pitch), slack(2 * g.pad) {}
  std::size_t offset(const ConvGeom& g, std::size_t ky, std::size_t kx) const {
    return ky * g.dilation * pitch + kx * g.dilation;
  }
};

template <typename T>
std::vector<T> pad_planes(const T* x, std::size_t planes, const ConvGeom& g, const PaddedGeom& p) {
  std::vector<T> out(planes * p.plane + p.slack, T{0});
  for (std::size_t c = 0; c < planes; ++c)
    for (std::size_t y = 0; y < g.h; ++y)
      std::memcpy(out.data() + c * p.plane + (y + g.pad) * p.pitch + g.pad, x + (c * g.h + y) * g.w, sizeof(T) * g.w);
  return out;
}

template <typename T>
void axpy(T* __restrict y, const T* __restrict x, T a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  using Row = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>;
  return Row(a, static_cast<Eigen::Index>(n)).dot(Row(b, static_cast<Eigen::Index>(n)));
}

// One sample.
template <typename T>
void direct_conv(const T* x, const T* wt, std::span<const T> bias, const ConvGeom& g, T* y) {
  const PaddedGeom p(g);
  const std::vector<T> xp = pad_planes(x, g.ci, g, p);
  std::vector<T> acc(p.run);
  for (std::size_t o = 0; o < g.co; ++o) {
    std::fill(acc.begin(), acc.end(), bias[o]);
    for (std::size_t c = 0; c < g.ci; ++c)
      for (std::size_t ky = 0; ky < g.k; ++ky)
        for (std::size_t kx = 0; kx < g.k; ++kx)
          axpy(acc.data(), xp.data() + c * p.plane + p.offset(g, ky, kx), wt[((o * g.ci + c) * g.k + ky) * g.k + kx],
               p.run);
    for (std::size_t r = 0; r < g.h; ++r) std::memcpy(y + (o * g.h + r) * g.w, acc.data() + r * p.pitch, sizeof(T) * g.w);
  }
}

template <typename T>
void direct_conv_backward(const T* x, const T* wt, const T* dy, const ConvGeom& g, T* dw, T* dx) {
  const PaddedGeom p(g);
  // dy in the padded pitch with zero junk columns, so junk never leaks into dw or dx.
  std::vector<T> dyp(g.co * p.run, T{0});
  for (std::size_t o = 0; o < g.co; ++o)
    for (std::size_t r = 0; r < g.h; ++r)
      std::memcpy(dyp.data() + o * p.run + r * p.pitch, dy + (o * g.h + r) * g.w, sizeof(T) * g.w);
  const auto widx = [&](std::size_t o, std::size_t c, std::size_t ky, std::size_t kx) {
    return ((o * g.ci + c) * g.k + ky) * g.k + kx;
  };
  if (dw) {
    const std::vector<T> xp = pad_planes(x, g.ci, g, p);
    for (std::size_t o = 0; o < g.co; ++o)
      for (std::size_t c = 0; c < g.ci; ++c)
        for (std::size_t ky = 0; ky < g.k; ++ky)
          for (std::size_t kx = 0; kx < g.k; ++kx)
            dw[widx(o, c, ky, kx)] += dot(dyp.data() + o * p.run, xp.data() + c * p.plane + p.offset(g, ky, kx), p.run);
  }
  if (dx) {
    std::vector<T> dxp(p.plane + p.slack);
    for (std::size_t c = 0; c < g.ci; ++c) {
      std::fill(dxp.begin(), dxp.end(), T{0});
      for (std::size_t o = 0; o < g.co; ++o)
        for (std::size_t ky = 0; ky < g.k; ++ky)
          for (std::size_t kx = 0; kx < g.k; ++kx)
            axpy(dxp.data() + p.offset(g, ky, kx), dyp.data() + o * p.run, wt[widx(o, c, ky, kx)], p.run);
      for (std::size_t r = 0; r < g.h; ++r) {
        T* dst = dx + (c * g.h + r) * g.w;
        const T* src = dxp.data() + (r + g.pad) * p.pitch + g.pad;
        for (std::size_t i = 0; i < g.w; ++i) dst[i] += src[i];
      }
    }
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

}  // namespace

namespace kernels {

template <typename T>
void conv2d_forward(const Tensor<T>& input, const Tensor<T>& weight, std::span<const T> bias,
                    std::size_t dilation, Tensor<T>& out) {
  const Shape& is = input.shape();
  const ConvGeom g = conv_geometry(is, weight.shape(), dilation);
  if (bias.size() != g.co) throw std::invalid_argument("conv2d: bias length does not match output channels");
  out = Tensor<T>(Shape{is.n, g.co, g.h, g.w});
  const std::size_t hw = g.h * g.w;
  const std::size_t K = g.kdim();
  const bool direct = !g.pointwise() && g.co <= kDirectMaxOutputs;
  std::vector<T> col;
  if (!g.pointwise() && !direct) col.resize(K * g.rows_per_band * g.w);
  for (std::size_t n = 0; n < is.n; ++n) {
    const T* x = input.data().data() + n * g.ci * hw;
    T* y = out.data().data() + n * g.co * hw;
    if (direct) {
      direct_conv(x, weight.data().data(), bias, g, y);
      continue;
    }
    if (g.pointwise()) {
      gemm(false, false, g.co, hw, K, T{1}, weight.data().data(), K, x, hw, T{0}, y, hw);
    } else {
      for (std::size_t y0 = 0; y0 < g.h; y0 += g.rows_per_band) {
        const std::size_t y1 = std::min(g.h, y0 + g.rows_per_band);
        const std::size_t len = (y1 - y0) * g.w;
        im2col(x, g, y0, y1, col.data());
        gemm(false, false, g.co, len, K, T{1}, weight.data().data(), K, col.data(), len, T{0}, y + y0 * g.w, hw);
      }
    }
    for (std::size_t c = 0; c < g.co; ++c) {
      T* plane = y + c * hw;
      const T b = bias[c];
      for (std::size_t i = 0; i < hw; ++i) plane[i] += b;
    }
  }
}

template void conv2d_forward<float>(const Tensor<float>&, const Tensor<float>&, std::span<const float>,
                                     std::size_t, Tensor<float>&);
template void conv2d_forward<double>(const Tensor<double>&, const Tensor<double>&, std::span<const double>,
                                     std::size_t, Tensor<double>&);

}  // namespace kernels

template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias, std::size_t dilation) {
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& wt = tape.value(weight);
  const Tensor<T>& b = tape.value(bias);
  if (b.numel() != wt.shape().n) throw std::invalid_argument("conv2d: bias must have one value per output channel");
  Tensor<T> out;
  kernels::conv2d_forward(x, wt, b.data(), dilation, out);

  auto backward = [input, weight, bias, dilation, out_id = static_cast<std::uint32_t>(tape.size())](Tape<T>& t) {
    const Tensor<T>& x = t.value(input);
    const Tensor<T>& wt = t.value(weight);
    const Var outv{out_id};
    const ConvGeom g = conv_geometry(x.shape(), wt.shape(), dilation);
    const std::size_t hw = g.h * g.w;
    const std::size_t K = g.kdim();
    const T* dy_all = t.grad(outv).data();
    const bool want_x = t.needs_grad(input);
    const bool want_w = t.needs_grad(weight);
    const bool want_b = t.needs_grad(bias);
    T* dw = want_w ? t.grad_mut(weight).data() : nullptr;
    T* db = want_b ? t.grad_mut(bias).data() : nullptr;
    T* dx_all = want_x ? t.grad_mut(input).data() : nullptr;
    const bool direct = !g.pointwise() && g.co <= kDirectMaxOutputs;
    std::vector<T> col, dcol;
    if (!g.pointwise() && !direct) {
      col.resize(K * g.rows_per_band * g.w);
      if (want_x) dcol.resize(col.size());
    }
    for (std::size_t n = 0; n < x.shape().n; ++n) {
      const T* xn = x.data().data() + n * g.ci * hw;
      const T* dy = dy_all + n * g.co * hw;
      if (db) {
        for (std::size_t c = 0; c < g.co; ++c) {
          T acc{0};
          const T* plane = dy + c * hw;
          for (std::size_t i = 0; i < hw; ++i) acc += plane[i];
          db[c] += acc;
        }
      }
      if (direct) {
        direct_conv_backward(xn, wt.data().data(), dy, g, dw, dx_all ? dx_all + n * g.ci * hw : nullptr);
        continue;
      }
      if (g.pointwise()) {
        if (dw) gemm(false, true, g.co, K, hw, T{1}, dy, hw, xn, hw, T{1}, dw, K);
        if (dx_all) gemm(true, false, K, hw, g.co, T{1}, wt.data().data(), K, dy, hw, T{1}, dx_all + n * g.ci * hw, hw);
        continue;
      }
      for (std::size_t y0 = 0; y0 < g.h; y0 += g.rows_per_band) {
        const std::size_t y1 = std::min(g.h, y0 + g.rows_per_band);
        const std::size_t len = (y1 - y0) * g.w;
        const T* dyb = dy + y0 * g.w;
        if (dw) {
          im2col(xn, g, y0, y1, col.data());
          gemm(false, true, g.co, K, len, T{1}, dyb, hw, col.data(), len, T{1}, dw, K);
        }
        if (dx_all) {
          gemm(true, false, K, len, g.co, T{1}, wt.data().data(), K, dyb, hw, T{0}, dcol.data(), len);
          col2im_add(dcol.data(), g, y0, y1, dx_all + n * g.ci * hw);
        }
      }
    }
  };
  return tape.record(OpKind::conv2d, {input, weight, bias}, std::move(out), std::move(backward));
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  const Tensor<T>& in = tape.value(x);
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
  const auto out_id = static_cast<std::uint32_t>(tape.size());
  return tape.record(OpKind::relu, {x}, std::move(out), [x, out_id](Tape<T>& t) {
    const auto y = t.value(Var{out_id}).data();
    const auto dy = t.grad(Var{out_id});
    auto dx = t.grad_mut(x);
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (y[i] > T{0}) dx[i] += dy[i];
  });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var x) {
  const Tensor<T>& in = tape.value(x);
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) out[i] = T{1} / (T{1} + std::exp(-in[i]));
  const auto out_id = static_cast<std::uint32_t>(tape.size());
  return tape.record(OpKind::sigmoid, {x}, std::move(out), [x, out_id](Tape<T>& t) {
    const auto y = t.value(Var{out_id}).data();
    const auto dy = t.grad(Var{out_id});
    auto dx = t.grad_mut(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * y[i] * (T{1} - y[i]);
  });
}

namespace {

Shape pooled_shape(const Shape& s, const char* op) {
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw std::invalid_argument(std::string(op) + ": spatial size must be even, got " + s.str());
  }
  return Shape{s.n, s.c, s.h / 2, s.w / 2};
}

}  // namespace

template <typename T>
Var max_pool2(Tape<T>& tape, Var x) {
  const Tensor<T>& in = tape.value(x);
  const Shape os = pooled_shape(in.shape(), "max_pool2");
  Tensor<T> out(os);
  std::vector<std::uint32_t> argmax(os.numel());
  const std::size_t W = in.shape().w;
  for (std::size_t p = 0; p < os.n * os.c; ++p) {
    const T* src = in.data().data() + p * in.shape().plane();
    for (std::size_t oy = 0; oy < os.h; ++oy) {
      for (std::size_t ox = 0; ox < os.w; ++ox) {
        const std::size_t base = 2 * oy * W + 2 * ox;
        const std::size_t cand[4] = {base, base + 1, base + W, base + W + 1};
        std::size_t best = cand[0];
        for (std::size_t k = 1; k < 4; ++k)
          if (src[cand[k]] > src[best]) best = cand[k];
        const std::size_t o = p * os.plane() + oy * os.w + ox;
        out[o] = src[best];
        argmax[o] = static_cast<std::uint32_t>(p * in.shape().plane() + best);
      }
    }
  }
  const auto out_id = static_cast<std::uint32_t>(tape.size());
  return tape.record(OpKind::max_pool2, {x}, std::move(out),
                     [x, out_id, argmax = std::move(argmax)](Tape<T>& t) {
                       const auto dy = t.grad(Var{out_id});
                       auto dx = t.grad_mut(x);
                       for (std::size_t i = 0; i < dy.size(); ++i) dx[argmax[i]] += dy[i];
                     });
}

template <typename T>
Var avg_pool2(Tape<T>& tape, Var x) {
  const Tensor<T>& in = tape.value(x);
  const Shape is = in.shape();
  const Shape os = pooled_shape(is, "avg_pool2");
  Tensor<T> out(os);
  for (std::size_t p = 0; p < os.n * os.c; ++p) {
    const T* src = in.data().data() + p * is.plane();
    T* dst = out.data().data() + p * os.plane();
    for (std::size_t oy = 0; oy < os.h; ++oy)
      for (std::size_t ox = 0; ox < os.w; ++ox) {
        const std::size_t b = 2 * oy * is.w + 2 * ox;
        dst[oy * os.w + ox] = (src[b] + src[b + 1] + src[b + is.w] + src[b + is.w + 1]) / T{4};
      }
  }
  const auto out_id = static_cast<std::uint32_t>(tape.size());
  return tape.record(OpKind::avg_pool2, {x}, std::move(out), [x, out_id, is, os](Tape<T>& t) {
    const auto dy = t.grad(Var{out_id});
    auto dx = t.grad_mut(x);
    for (std::size_t p = 0; p < os.n * os.c; ++p)
      for (std::size_t oy = 0; oy < os.h; ++oy)
        for (std::size_t ox = 0; ox < os.w; ++ox) {
          const T g = dy[p * os.plane() + oy * os.w + ox] / T{4};
          const std::size_t b = p * is.plane() + 2 * oy * is.w + 2 * ox;
          dx[b] += g;
          dx[b + 1] += g;
          dx[b + is.w] += g;
          dx[b + is.w + 1] += g;
        }
  });
}

template <typename T>
Var unpool2(Tape<T>& tape, Var x) {
  const Tensor<T>& in = tape.value(x);
  const Shape is = in.shape();
  const Shape os{is.n, is.c, is.h * 2, is.w * 2};
  Tensor<T> out(os);
  for (std::size_t p = 0; p < is.n * is.c; ++p) {
    const T* src = in.data().data() + p * is.plane();
    T* dst = out.data().data() + p * os.plane();
    for (std::size_t y = 0; y < os.h; ++y)
      for (std::size_t xx = 0; xx < os.w; ++xx) dst[y * os.w + xx] = src[(y / 2) * is.w + xx / 2];
  }
  const auto out_id = static_cast<std::uint32_t>(tape.size());
  return tape.record(OpKind::unpool2, {x}, std::move(out), [x, out_id, is, os](Tape<T>& t) {
    const auto dy = t.grad(Var{out_id});
    auto dx = t.grad_mut(x);
    for (std::size_t p = 0; p < is.n * is.c; ++p)
      for (std::size_t y = 0; y < os.h; ++y)
        for (std::size_t xx = 0; xx < os.w; ++xx)
          dx[p * is.plane() + (y / 2) * is.w + xx / 2] += dy[p * os.plane() + y * os.w + xx];
  });
}

template <typename T>
Var concat_channels(Tape<T>& tape, std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: needs at least one input");
  if (xs.size() == 1) return xs[0];
  const Shape s0 = tape.value(xs[0]).shape();
  std::size_t channels = 0;
  std::vector<std::size_t> offsets;
  for (Var v : xs) {
    const Shape s = tape.value(v).shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw std::invalid_argument("concat_channels: spatial mismatch " + s0.str() + " vs " + s.str());
    }
    offsets.push_back(channels);
    channels += s.c;
  }
  const Shape os{s0.n, channels, s0.h, s0.w};
  Tensor<T> out(os);
  const std::size_t hw = s0.plane();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor<T>& in = tape.value(xs[i]);
    const std::size_t c = in.shape().c;
    for (std::size_t n = 0; n < os.n; ++n)
      std::copy_n(in.data().data() + n * c * hw, c * hw, out.data().data() + (n * channels + offsets[i]) * hw);
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  const auto out_id = static_cast<std::uint32_t>(tape.size());
  return tape.record(OpKind::concat, inputs, std::move(out),
                     [inputs, offsets, os, out_id](Tape<T>& t) {
                       const auto dy = t.grad(Var{out_id});
                       const std::size_t hw = os.plane();
                       for (std::size_t i = 0; i < inputs.size(); ++i) {
                         if (!t.needs_grad(inputs[i])) continue;
                         const std::size_t c = t.value(inputs[i]).shape().c;
                         auto dx = t.grad_mut(inputs[i]);
                         for (std::size_t n = 0; n < os.n; ++n) {
                           const T* src = dy.data() + (n * os.c + offsets[i]) * hw;
                           T* dst = dx.data() + n * c * hw;
                           for (std::size_t k = 0; k < c * hw; ++k) dst[k] += src[k];
                         }
                       }
                     });
}

template <typename T>
Var merge(Tape<T>& tape, std::span<const Var> xs, MergeMode mode) {
  if (mode == MergeMode::concat) return concat_channels(tape, xs);
  if (xs.empty()) throw std::invalid_argument("merge: needs at least one input");
  if (xs.size() == 1) return xs[0];
  const Shape s0 = tape.value(xs[0]).shape();
  for (Var v : xs) {
    const Shape s = tape.value(v).shape();
    if (!(s == s0)) {
      throw std::invalid_argument(std::string("merge: element-wise ") + (mode == MergeMode::sum ? "sum" : "max") +
                                  " needs equal shapes, got " + s0.str() + " vs " + s.str());
    }
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  Tensor<T> out = tape.value(xs[0]);
  out.set_requires_grad(false);
  const auto out_id = static_cast<std::uint32_t>(tape.size());
  if (mode == MergeMode::sum) {
    for (std::size_t i = 1; i < xs.size(); ++i) {
      const auto src = tape.value(xs[i]).data();
      for (std::size_t k = 0; k < out.numel(); ++k) out[k] += src[k];
    }
    return tape.record(OpKind::merge_sum, inputs, std::move(out), [inputs, out_id](Tape<T>& t) {
      const auto dy = t.grad(Var{out_id});
      for (Var in : inputs) {
        if (!t.needs_grad(in)) continue;
        auto dx = t.grad_mut(in);
        for (std::size_t k = 0; k < dx.size(); ++k) dx[k] += dy[k];
      }
    });
  }
  std::vector<std::uint8_t> winner(out.numel(), 0);
  for (std::size_t i = 1; i < xs.size(); ++i) {
    const auto src = tape.value(xs[i]).data();
    for (std::size_t k = 0; k < out.numel(); ++k) {
      if (src[k] > out[k]) {
        out[k] = src[k];
        winner[k] = static_cast<std::uint8_t>(i);
      }
    }
  }
  return tape.record(OpKind::merge_max, inputs, std::move(out),
                     [inputs, out_id, winner = std::move(winner)](Tape<T>& t) {
                       const auto dy = t.grad(Var{out_id});
                       for (std::size_t i = 0; i < inputs.size(); ++i) {
                         if (!t.needs_grad(inputs[i])) continue;
                         auto dx = t.grad_mut(inputs[i]);
                         for (std::size_t k = 0; k < dx.size(); ++k)
                           if (winner[k] == i) dx[k] += dy[k];
                       }
                     });
}

template <typename T>
Tensor<T> coord_channels(std::size_t n, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw std::invalid_argument("coord_channels: h and w must be positive");
  Tensor<T> out(Shape{n, 2, h, w});
  auto norm = [](std::size_t i, std::size_t extent) -> T {
    if (extent == 1) return T{0};
    return static_cast<T>(-1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(extent - 1));
  };
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        out.at(b, 0, y, x) = norm(x, w);
        out.at(b, 1, y, x) = norm(y, h);
      }
  return out;
}

template <typename T>
Var dropout(Tape<T>& tape, Var x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: probability must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  const Tensor<T>& in = tape.value(x);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(in.numel());
  for (auto& m : mask) m = rng.uniform() < p ? T{0} : keep_scale;
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) out[i] = in[i] * mask[i];
  const auto out_id = static_cast<std::uint32_t>(tape.size());
  return tape.record(OpKind::dropout, {x}, std::move(out), [x, out_id, mask = std::move(mask)](Tape<T>& t) {
    const auto dy = t.grad(Var{out_id});
    auto dx = t.grad_mut(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * mask[i];
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  const Tensor<T>& in = tape.value(x);
  T acc{0};
  for (T v : in.data()) acc += v;
  const auto out_id = static_cast<std::uint32_t>(tape.size());
  return tape.record(OpKind::sum, {x}, Tensor<T>(Shape{1, 1, 1, 1}, acc), [x, out_id](Tape<T>& t) {
    const T g = t.grad(Var{out_id})[0];
    for (T& d : t.grad_mut(x)) d += g;
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& va = tape.value(a);
  const Tensor<T>& vb = tape.value(b);
  require_same_shape(va.shape(), vb.shape(), "mul");
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = va[i] * vb[i];
  const auto out_id = static_cast<std::uint32_t>(tape.size());
  return tape.record(OpKind::mul, {a, b}, std::move(out), [a, b, out_id](Tape<T>& t) {
    const auto dy = t.grad(Var{out_id});
    const auto xa = t.value(a).data();
    const auto xb = t.value(b).data();
    if (t.needs_grad(a)) {
      auto da = t.grad_mut(a);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * xb[i];
    }
    if (t.needs_grad(b)) {
      auto db = t.grad_mut(b);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * xa[i];
    }
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& va = tape.value(a);
  const Tensor<T>& vb = tape.value(b);
  require_same_shape(va.shape(), vb.shape(), "add");
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = va[i] + vb[i];
  const auto out_id = static_cast<std::uint32_t>(tape.size());
  return tape.record(OpKind::add, {a, b}, std::move(out), [a, b, out_id](Tape<T>& t) {
    const auto dy = t.grad(Var{out_id});
    for (Var v : {a, b}) {
      if (!t.needs_grad(v)) continue;
      auto d = t.grad_mut(v);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor) {
  const Tensor<T>& in = tape.value(x);
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = in[i] * factor;
  const auto out_id = static_cast<std::uint32_t>(tape.size());
  return tape.record(OpKind::scale, {x}, std::move(out), [x, out_id, factor](Tape<T>& t) {
    const auto dy = t.grad(Var{out_id});
    auto dx = t.grad_mut(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * factor;
  });
}

#define MCAM_INSTANTIATE_OPS(T)                                                  \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var, std::size_t);                  \
  template Var relu<T>(Tape<T>&, Var);                                           \
  template Var sigmoid<T>(Tape<T>&, Var);                                        \
  template Var max_pool2<T>(Tape<T>&, Var);                                      \
  template Var avg_pool2<T>(Tape<T>&, Var);                                      \
  template Var unpool2<T>(Tape<T>&, Var);                                        \
  template Var concat_channels<T>(Tape<T>&, std::span<const Var>);               \
  template Var merge<T>(Tape<T>&, std::span<const Var>, MergeMode);              \
  template Tensor<T> coord_channels<T>(std::size_t, std::size_t, std::size_t);   \
  template Var dropout<T>(Tape<T>&, Var, double, bool, Rng&);                    \
  template Var sum<T>(Tape<T>&, Var);                                            \
  template Var mul<T>(Tape<T>&, Var, Var);                                       \
  template Var add<T>(Tape<T>&, Var, Var);                                       \
  template Var scale<T>(Tape<T>&, Var, T);

MCAM_INSTANTIATE_OPS(float)
MCAM_INSTANTIATE_OPS(double)

}  // namespace mcam
