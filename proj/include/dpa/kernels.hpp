#pragma once

// Raw forward/backward kernels on NCHW tensors. The autograd layer wraps these.

#include <Eigen/Core>
#include <algorithm>
#include <vector>

#include "dpa/tensor.hpp"

namespace dpa::kernels {

template <typename Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatMap = Eigen::Map<RowMatrix<Real>>;
template <typename Real>
using ConstMatMap = Eigen::Map<const RowMatrix<Real>>;

// --- convolution (square kernel, stride 1, zero "same" padding) -------------

template <typename Real>
void im2col(const Real* src, int channels, int height, int width, int k, Real* cols) {
  const int pad = k / 2;
  const int hw = height * width;
  for (int ci = 0; ci < channels; ++ci) {
    const Real* plane = src + static_cast<std::size_t>(ci) * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Real* row = cols + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * hw;
        const int dy = ky - pad, dx = kx - pad;
        for (int y = 0; y < height; ++y) {
          Real* out = row + y * width;
          const int sy = y + dy;
          if (sy < 0 || sy >= height) {
            std::fill(out, out + width, Real(0));
            continue;
          }
          const Real* in = plane + sy * width;
          const int x0 = std::max(0, -dx), x1 = std::min(width, width - dx);
          std::fill(out, out + x0, Real(0));
          std::copy(in + x0 + dx, in + x1 + dx, out + x0);
          std::fill(out + x1, out + width, Real(0));
        }
      }
    }
  }
}

template <typename Real>
void col2im_add(const Real* cols, int channels, int height, int width, int k, Real* dst) {
  const int pad = k / 2;
  const int hw = height * width;
  for (int ci = 0; ci < channels; ++ci) {
    Real* plane = dst + static_cast<std::size_t>(ci) * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Real* row = cols + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * hw;
        const int dy = ky - pad, dx = kx - pad;
        for (int y = 0; y < height; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= height) continue;
          const Real* in = row + y * width;
          Real* out = plane + sy * width;
          const int x0 = std::max(0, -dx), x1 = std::min(width, width - dx);
          for (int x = x0; x < x1; ++x) out[x + dx] += in[x];
        }
      }
    }
  }
}

/// weight: [out, in, k, k]; bias: [1, out, 1, 1].
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
  const int cout = weight.n(), cin = weight.c(), k = weight.h();
  if (x.c() != cin) throw ShapeError("conv2d: input has " + std::to_string(x.c()) + " channels, weight expects " + std::to_string(cin));
  const int hw = x.h() * x.w();
  const int kk = cin * k * k;
  Tensor<Real> y(x.n(), cout, x.h(), x.w());
  ConstMatMap<Real> w(weight.data(), cout, kk);
  Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>> b(bias.data(), cout);
  AlignedVector<Real> cols(k == 1 ? 0 : static_cast<std::size_t>(kk) * hw);
  for (int n = 0; n < x.n(); ++n) {
    const Real* src = x.item(n).data();
    if (k != 1) {
      im2col(src, cin, x.h(), x.w(), k, cols.data());
      src = cols.data();
    }
    MatMap<Real> out(y.item(n).data(), cout, hw);
    out.noalias() = w * ConstMatMap<Real>(src, kk, hw);
    out.colwise() += b;
  }
  return y;
}

/// Accumulates into the non-null gradient outputs.
template <typename Real>
void conv2d_backward(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& grad_y, Tensor<Real>* grad_x,
                     Tensor<Real>* grad_w, Tensor<Real>* grad_b) {
  const int cout = weight.n(), cin = weight.c(), k = weight.h();
  const int hw = x.h() * x.w();
  const int kk = cin * k * k;
  ConstMatMap<Real> w(weight.data(), cout, kk);
  AlignedVector<Real> cols(static_cast<std::size_t>(kk) * hw);
  for (int n = 0; n < x.n(); ++n) {
    ConstMatMap<Real> gy(grad_y.item(n).data(), cout, hw);
    if (grad_b) {
      Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>> gb(grad_b->data(), cout);
      gb += gy.rowwise().sum();
    }
    if (grad_w) {
      const Real* src = x.item(n).data();
      if (k != 1) {
        im2col(src, cin, x.h(), x.w(), k, cols.data());
        src = cols.data();
      }
      MatMap<Real> gw(grad_w->data(), cout, kk);
      gw.noalias() += gy * ConstMatMap<Real>(src, kk, hw).transpose();
    }
    if (grad_x) {
      if (k == 1) {
        MatMap<Real> gx(grad_x->item(n).data(), cin, hw);
        gx.noalias() += w.transpose() * gy;
      } else {
        MatMap<Real> gc(cols.data(), kk, hw);
        gc.noalias() = w.transpose() * gy;
        col2im_add(cols.data(), cin, x.h(), x.w(), k, grad_x->item(n).data());
      }
    }
  }
}

// --- dense ------------------------------------------------------------------

/// x: [n, d, 1, 1] (any trailing shape is flattened); weight: [out, d, 1, 1]; bias: [1, out, 1, 1].
template <typename Real>
Tensor<Real> dense(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
  const int out_dim = weight.n(), in_dim = weight.c();
  if (static_cast<int>(x.item_size()) != in_dim) throw ShapeError("dense: input size mismatch");
  Tensor<Real> y(x.n(), out_dim, 1, 1);
  MatMap<Real> ym(y.data(), x.n(), out_dim);
  ym.noalias() = ConstMatMap<Real>(x.data(), x.n(), in_dim) * ConstMatMap<Real>(weight.data(), out_dim, in_dim).transpose();
  ym.rowwise() += Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(bias.data(), out_dim);
  return y;
}

template <typename Real>
void dense_backward(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& grad_y, Tensor<Real>* grad_x,
                    Tensor<Real>* grad_w, Tensor<Real>* grad_b) {
  const int out_dim = weight.n(), in_dim = weight.c();
  ConstMatMap<Real> gy(grad_y.data(), x.n(), out_dim);
  if (grad_b) Eigen::Map<Eigen::Matrix<Real, 1, Eigen::Dynamic>>(grad_b->data(), out_dim) += gy.colwise().sum();
  if (grad_w) MatMap<Real>(grad_w->data(), out_dim, in_dim).noalias() += gy.transpose() * ConstMatMap<Real>(x.data(), x.n(), in_dim);
  if (grad_x) MatMap<Real>(grad_x->data(), x.n(), in_dim).noalias() += gy * ConstMatMap<Real>(weight.data(), out_dim, in_dim);
}

// --- resampling -------------------------------------------------------------

template <typename Real>
Tensor<Real> avg_pool2(const Tensor<Real>& x) {
  if (x.h() % 2 != 0 || x.w() % 2 != 0) throw ShapeError("down: odd spatial size " + shape_string(x));
  Tensor<Real> y(x.n(), x.c(), x.h() / 2, x.w() / 2);
  const int ow = y.w(), iw = x.w();
  for (int p = 0; p < x.n() * x.c(); ++p) {
    const Real* in = x.data() + static_cast<std::size_t>(p) * x.plane_size();
    Real* out = y.data() + static_cast<std::size_t>(p) * y.plane_size();
    for (int oy = 0; oy < y.h(); ++oy) {
      const Real* r0 = in + 2 * oy * iw;
      const Real* r1 = r0 + iw;
      for (int ox = 0; ox < ow; ++ox)
        out[oy * ow + ox] = Real(0.25) * ((r0[2 * ox] + r0[2 * ox + 1]) + (r1[2 * ox] + r1[2 * ox + 1]));
    }
  }
  return y;
}

template <typename Real>
void avg_pool2_backward(const Tensor<Real>& grad_y, Tensor<Real>& grad_x) {
  const int ow = grad_y.w(), iw = grad_x.w();
  for (int p = 0; p < grad_y.n() * grad_y.c(); ++p) {
    const Real* gy = grad_y.data() + static_cast<std::size_t>(p) * grad_y.plane_size();
    Real* gx = grad_x.data() + static_cast<std::size_t>(p) * grad_x.plane_size();
    for (int oy = 0; oy < grad_y.h(); ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const Real g = Real(0.25) * gy[oy * ow + ox];
        gx[2 * oy * iw + 2 * ox] += g;
        gx[2 * oy * iw + 2 * ox + 1] += g;
        gx[(2 * oy + 1) * iw + 2 * ox] += g;
        gx[(2 * oy + 1) * iw + 2 * ox + 1] += g;
      }
  }
}

template <typename Real>
Tensor<Real> upsample_nearest2(const Tensor<Real>& x) {
  Tensor<Real> y(x.n(), x.c(), x.h() * 2, x.w() * 2);
  const int iw = x.w(), ow = y.w();
  for (int p = 0; p < x.n() * x.c(); ++p) {
    const Real* in = x.data() + static_cast<std::size_t>(p) * x.plane_size();
    Real* out = y.data() + static_cast<std::size_t>(p) * y.plane_size();
    for (int oy = 0; oy < y.h(); ++oy)
      for (int ox = 0; ox < ow; ++ox) out[oy * ow + ox] = in[(oy / 2) * iw + ox / 2];
  }
  return y;
}

template <typename Real>
void upsample_nearest2_backward(const Tensor<Real>& grad_y, Tensor<Real>& grad_x) {
  const int iw = grad_x.w(), ow = grad_y.w();
  for (int p = 0; p < grad_y.n() * grad_y.c(); ++p) {
    const Real* gy = grad_y.data() + static_cast<std::size_t>(p) * grad_y.plane_size();
    Real* gx = grad_x.data() + static_cast<std::size_t>(p) * grad_x.plane_size();
    for (int oy = 0; oy < grad_y.h(); ++oy)
      for (int ox = 0; ox < ow; ++ox) gx[(oy / 2) * iw + ox / 2] += gy[oy * ow + ox];
  }
}

namespace detail {
// Half-pixel-centre bilinear x2 along one axis, clamped at the borders:
// out[2i] = 0.75 in[i] + 0.25 in[i-1], out[2i+1] = 0.75 in[i] + 0.25 in[i+1].
inline void bilinear_taps(int o, int n, int& a, int& b) {
  const int i = o / 2;
  a = i;
  b = (o % 2 == 0) ? std::max(i - 1, 0) : std::min(i + 1, n - 1);
}
}  // namespace detail

template <typename Real>
Tensor<Real> upsample_bilinear2(const Tensor<Real>& x) {
  const int ih = x.h(), iw = x.w(), oh = ih * 2, ow = iw * 2;
  Tensor<Real> y(x.n(), x.c(), oh, ow);
  std::vector<Real> tmp(static_cast<std::size_t>(ih) * ow);
  for (int p = 0; p < x.n() * x.c(); ++p) {
    const Real* in = x.data() + static_cast<std::size_t>(p) * x.plane_size();
    Real* out = y.data() + static_cast<std::size_t>(p) * y.plane_size();
    for (int r = 0; r < ih; ++r)
      for (int ox = 0; ox < ow; ++ox) {
        int a, b;
        detail::bilinear_taps(ox, iw, a, b);
        tmp[r * ow + ox] = Real(0.75) * in[r * iw + a] + Real(0.25) * in[r * iw + b];
      }
    for (int oy = 0; oy < oh; ++oy) {
      int a, b;
      detail::bilinear_taps(oy, ih, a, b);
      for (int ox = 0; ox < ow; ++ox) out[oy * ow + ox] = Real(0.75) * tmp[a * ow + ox] + Real(0.25) * tmp[b * ow + ox];
    }
  }
  return y;
}

template <typename Real>
void upsample_bilinear2_backward(const Tensor<Real>& grad_y, Tensor<Real>& grad_x) {
  const int ih = grad_x.h(), iw = grad_x.w(), oh = grad_y.h(), ow = grad_y.w();
  std::vector<Real> tmp(static_cast<std::size_t>(ih) * ow);
  for (int p = 0; p < grad_y.n() * grad_y.c(); ++p) {
    const Real* gy = grad_y.data() + static_cast<std::size_t>(p) * grad_y.plane_size();
    Real* gx = grad_x.data() + static_cast<std::size_t>(p) * grad_x.plane_size();
    std::fill(tmp.begin(), tmp.end(), Real(0));
    for (int oy = 0; oy < oh; ++oy) {
      int a, b;
      detail::bilinear_taps(oy, ih, a, b);
      for (int ox = 0; ox < ow; ++ox) {
        tmp[a * ow + ox] += Real(0.75) * gy[oy * ow + ox];
        tmp[b * ow + ox] += Real(0.25) * gy[oy * ow + ox];
      }
    }
    for (int r = 0; r < ih; ++r)
      for (int ox = 0; ox < ow; ++ox) {
        int a, b;
        detail::bilinear_taps(ox, iw, a, b);
        gx[r * iw + a] += Real(0.75) * tmp[r * ow + ox];
        gx[r * iw + b] += Real(0.25) * tmp[r * ow + ox];
      }
  }
}

}  // namespace dpa::kernels
