#pragma once

// Batch kernels shared by the autodiff engine and the attack transforms.
// All tensors are row-major with the batch as leading dimension.

#include <algorithm>
#include <cmath>
#include <vector>

#include "flatsurr/core/tensor.hpp"

namespace flatsurr::kernels {

struct ConvGeometry {
  Index batch, channels, height, width;
  int kernel, stride, padding;
  Index out_h, out_w;
  Index patch() const { return channels * kernel * kernel; }
  Index positions() const { return out_h * out_w; }
};

/// Unfolds (B,C,H,W) into a (C*k*k, B*Ho*Wo) matrix; zero padding.
template <typename Scalar>
MatrixRM<Scalar> im2col(const Scalar* x, const ConvGeometry& g) {
  const Index cols_n = g.batch * g.positions();
  MatrixRM<Scalar> cols = MatrixRM<Scalar>::Zero(g.patch(), cols_n);
  for (Index c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const Index row = (c * g.kernel + ky) * g.kernel + kx;
        Scalar* dst = cols.row(row).data();
        for (Index b = 0; b < g.batch; ++b) {
          const Scalar* plane = x + (b * g.channels + c) * g.height * g.width;
          for (Index oy = 0; oy < g.out_h; ++oy) {
            const Index iy = oy * g.stride - g.padding + ky;
            if (iy < 0 || iy >= g.height) continue;
            for (Index ox = 0; ox < g.out_w; ++ox) {
              const Index ix = ox * g.stride - g.padding + kx;
              if (ix < 0 || ix >= g.width) continue;
              dst[b * g.positions() + oy * g.out_w + ox] = plane[iy * g.width + ix];
            }
          }
        }
      }
  return cols;
}

/// Adjoint of im2col: scatter-adds columns back into (B,C,H,W).
template <typename Scalar>
void col2im(const MatrixRM<Scalar>& cols, const ConvGeometry& g, Scalar* dx) {
  for (Index c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const Index row = (c * g.kernel + ky) * g.kernel + kx;
        const Scalar* src = cols.row(row).data();
        for (Index b = 0; b < g.batch; ++b) {
          Scalar* plane = dx + (b * g.channels + c) * g.height * g.width;
          for (Index oy = 0; oy < g.out_h; ++oy) {
            const Index iy = oy * g.stride - g.padding + ky;
            if (iy < 0 || iy >= g.height) continue;
            for (Index ox = 0; ox < g.out_w; ++ox) {
              const Index ix = ox * g.stride - g.padding + kx;
              if (ix < 0 || ix >= g.width) continue;
              plane[iy * g.width + ix] += src[b * g.positions() + oy * g.out_w + ox];
            }
          }
        }
      }
}

/// (Cout, B*P) matrix <-> (B, Cout, P) tensor layout.
template <typename Scalar>
void channel_major_to_batch(const MatrixRM<Scalar>& y, Index batch, Index positions, Scalar* out) {
  const Index cout = y.rows();
  for (Index b = 0; b < batch; ++b)
    for (Index co = 0; co < cout; ++co)
      std::copy_n(y.row(co).data() + b * positions, positions, out + (b * cout + co) * positions);
}

template <typename Scalar>
MatrixRM<Scalar> batch_to_channel_major(const Scalar* in, Index batch, Index cout, Index positions) {
  MatrixRM<Scalar> y(cout, batch * positions);
  for (Index b = 0; b < batch; ++b)
    for (Index co = 0; co < cout; ++co)
      std::copy_n(in + (b * cout + co) * positions, positions, y.row(co).data() + b * positions);
  return y;
}

/// 2x2/stride-2 max pooling. Records the flat argmax of each window.
template <typename Scalar>
void max_pool2(const Scalar* x, Index planes, Index h, Index w, Scalar* out, std::vector<Index>& argmax) {
  const Index oh = h / 2, ow = w / 2;
  argmax.resize(static_cast<std::size_t>(planes * oh * ow));
  for (Index p = 0; p < planes; ++p) {
    const Scalar* plane = x + p * h * w;
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) {
        Index best = (2 * oy) * w + 2 * ox;
        for (Index dy = 0; dy < 2; ++dy)
          for (Index dx = 0; dx < 2; ++dx) {
            const Index idx = (2 * oy + dy) * w + 2 * ox + dx;
            if (plane[idx] > plane[best]) best = idx;
          }
        const Index o = (p * oh + oy) * ow + ox;
        out[o] = plane[best];
        argmax[static_cast<std::size_t>(o)] = p * h * w + best;
      }
  }
}

/// Nearest-neighbour resize of (B,C,H,W) to (B,C,oh,ow) followed by zero
/// padding into an (B,C,ph,pw) canvas at offset (top,left).
struct ResizePad {
  Index out_h, out_w;   // resized extent
  Index pad_h, pad_w;   // canvas extent
  Index top, left;      // placement of the resized image in the canvas
};

template <typename Scalar>
void resize_pad(const Scalar* x, Index planes, Index h, Index w, const ResizePad& r, Scalar* out) {
  std::fill_n(out, planes * r.pad_h * r.pad_w, Scalar(0));
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < r.out_h; ++y) {
      const Index sy = std::min(h - 1, (y * h) / r.out_h);
      for (Index xx = 0; xx < r.out_w; ++xx) {
        const Index sx = std::min(w - 1, (xx * w) / r.out_w);
        out[(p * r.pad_h + y + r.top) * r.pad_w + xx + r.left] = x[(p * h + sy) * w + sx];
      }
    }
}

/// Adjoint of resize_pad.
template <typename Scalar>
void resize_pad_backward(const Scalar* dout, Index planes, Index h, Index w, const ResizePad& r, Scalar* dx) {
  std::fill_n(dx, planes * h * w, Scalar(0));
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < r.out_h; ++y) {
      const Index sy = std::min(h - 1, (y * h) / r.out_h);
      for (Index xx = 0; xx < r.out_w; ++xx) {
        const Index sx = std::min(w - 1, (xx * w) / r.out_w);
        dx[(p * h + sy) * w + sx] += dout[(p * r.pad_h + y + r.top) * r.pad_w + xx + r.left];
      }
    }
}

}  // namespace flatsurr::kernels
