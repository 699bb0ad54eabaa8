#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "voxplain/nn/graph.hpp"

namespace voxplain::nn {

/// A batch of per-sample tensors: [batch][channel][z][y][x], x fastest.
struct Tensor {
  int batch = 0;
  Shape shape{};
  std::vector<double> data;

  Tensor() = default;
  Tensor(int n, Shape s, double fill = 0.0)
      : batch(n), shape(s), data(static_cast<std::size_t>(n) * s.count(), fill) {}

  std::size_t sample_size() const noexcept { return shape.count(); }
  double* sample(int n) noexcept { return data.data() + static_cast<std::size_t>(n) * sample_size(); }
  const double* sample(int n) const noexcept {
    return data.data() + static_cast<std::size_t>(n) * sample_size();
  }
  double* channel(int n, int c) noexcept { return sample(n) + static_cast<std::size_t>(c) * shape.spatial(); }
  const double* channel(int n, int c) const noexcept {
    return sample(n) + static_cast<std::size_t>(c) * shape.spatial();
  }
  bool empty() const noexcept { return data.empty(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

namespace kernels {

// Output index range [lo, hi) along one axis whose input coordinate
// o * stride + tap - pad falls inside [0, in_n).
struct Range {
  int lo;
  int hi;
};

inline Range valid_outputs(int out_n, int in_n, int tap, int stride, int pad) {
  // o * stride + tap - pad >= 0  ->  o >= ceil((pad - tap) / stride)
  const int num = pad - tap;
  int lo = num <= 0 ? 0 : (num + stride - 1) / stride;
  // o * stride + tap - pad <= in_n - 1
  const int top = in_n - 1 - tap + pad;
  int hi = top < 0 ? 0 : top / stride + 1;
  lo = std::max(lo, 0);
  hi = std::min(hi, out_n);
  return {lo, std::max(lo, hi)};
}

struct ConvGeometry {
  Dims3 in;
  Dims3 out;
  int kernel;
  int stride;
  int pad;
};

/// Layout used by the stride-1 kernels: the input zero-padded by `pad` on
/// every side, with outputs addressed in the same row and plane strides so
/// each tap becomes one contiguous loop over a flat range.
struct PaddedFrame {
  std::size_t row;      // padded x extent
  std::size_t plane;    // padded x * y extent
  std::size_t in_size;  // padded volume
  std::size_t span;     // flat length covering every output position

  explicit PaddedFrame(const ConvGeometry& g) {
    row = static_cast<std::size_t>(g.in.x + 2 * g.pad);
    plane = row * static_cast<std::size_t>(g.in.y + 2 * g.pad);
    in_size = plane * static_cast<std::size_t>(g.in.z + 2 * g.pad);
    span = (static_cast<std::size_t>(g.out.z) - 1) * plane + (static_cast<std::size_t>(g.out.y) - 1) * row +
           static_cast<std::size_t>(g.out.x);
  }
  std::size_t out_offset(int x, int y, int z) const {
    return static_cast<std::size_t>(z) * plane + static_cast<std::size_t>(y) * row + static_cast<std::size_t>(x);
  }
  std::size_t tap_offset(int kx, int ky, int kz) const { return out_offset(kx, ky, kz); }
};

// Copies one channel into the interior of a padded buffer.
inline void pad_channel(const ConvGeometry& g, const PaddedFrame& f, const double* src, double* dst) {
  for (int z = 0; z < g.in.z; ++z) {
    for (int y = 0; y < g.in.y; ++y) {
      const double* s = src + (static_cast<std::size_t>(z) * g.in.y + y) * g.in.x;
      std::copy(s, s + g.in.x, dst + f.out_offset(g.pad, y + g.pad, z + g.pad));
    }
  }
}

inline void conv3d_forward_unit_stride(const ConvGeometry& g, int cin, int cout, const double* in,
                                       const double* weight, const double* bias, double* out) {
  const PaddedFrame f(g);
  const int k = g.kernel;
  const int k3 = k * k * k;
  std::vector<double> padded(f.in_size * static_cast<std::size_t>(cin), 0.0);
  for (int ci = 0; ci < cin; ++ci) {
    pad_channel(g, f, in + static_cast<std::size_t>(ci) * g.in.count(), padded.data() + ci * f.in_size);
  }
  std::vector<double> acc(f.span);
  for (int co = 0; co < cout; ++co) {
    std::fill(acc.begin(), acc.end(), bias ? bias[co] : 0.0);
    double* a = acc.data();
    for (int ci = 0; ci < cin; ++ci) {
      const double* src = padded.data() + ci * f.in_size;
      const double* wk = weight + (static_cast<std::size_t>(co) * cin + ci) * k3;
      for (int kz = 0; kz < k; ++kz) {
        if (k == 3) {
          // All nine in-plane taps in one pass over the accumulator.
          const double* s0 = src + f.tap_offset(0, 0, kz);
          const double* s1 = s0 + f.row;
          const double* s2 = s1 + f.row;
          const double* w = wk + kz * 9;
          for (std::size_t q = 0; q < f.span; ++q) {
            a[q] += w[0] * s0[q] + w[1] * s0[q + 1] + w[2] * s0[q + 2] + w[3] * s1[q] + w[4] * s1[q + 1] +
                    w[5] * s1[q + 2] + w[6] * s2[q] + w[7] * s2[q + 1] + w[8] * s2[q + 2];
          }
          continue;
        }
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const double w = wk[(kz * k + ky) * k + kx];
            if (w == 0.0) continue;
            const double* sp = src + f.tap_offset(kx, ky, kz);
            for (std::size_t q = 0; q < f.span; ++q) a[q] += w * sp[q];
          }
        }
      }
    }
    double* o = out + static_cast<std::size_t>(co) * g.out.count();
    for (int oz = 0; oz < g.out.z; ++oz) {
      for (int oy = 0; oy < g.out.y; ++oy) {
        const double* row = a + f.out_offset(0, oy, oz);
        std::copy(row, row + g.out.x, o + (static_cast<std::size_t>(oz) * g.out.y + oy) * g.out.x);
      }
    }
  }
}

inline void conv3d_backward_unit_stride(const ConvGeometry& g, int cin, int cout, const double* in,
                                        const double* weight, const double* grad_out, double* grad_in,
                                        double* grad_w, double* grad_b) {
  const PaddedFrame f(g);
  const int k = g.kernel;
  const int k3 = k * k * k;
  const std::size_t out_sp = g.out.count();
  std::vector<double> padded;
  if (grad_w) {
    padded.assign(f.in_size * static_cast<std::size_t>(cin), 0.0);
    for (int ci = 0; ci < cin; ++ci) {
      pad_channel(g, f, in + static_cast<std::size_t>(ci) * g.in.count(), padded.data() + ci * f.in_size);
    }
  }
  std::vector<double> grad_padded;
  if (grad_in) grad_padded.assign(f.in_size * static_cast<std::size_t>(cin), 0.0);
  // Output gradient spread into the frame; positions outside the output stay 0.
  std::vector<double> gframe(f.span, 0.0);
  std::vector<double> gext;
  for (int co = 0; co < cout; ++co) {
    const double* go = grad_out + static_cast<std::size_t>(co) * out_sp;
    if (grad_b) {
      double s = 0.0;
      for (std::size_t i = 0; i < out_sp; ++i) s += go[i];
      grad_b[co] += s;
    }
    for (int oz = 0; oz < g.out.z; ++oz) {
      for (int oy = 0; oy < g.out.y; ++oy) {
        const double* row = go + (static_cast<std::size_t>(oz) * g.out.y + oy) * g.out.x;
        std::copy(row, row + g.out.x, gframe.data() + f.out_offset(0, oy, oz));
      }
    }
    const double* gf = gframe.data();
    if (k == 3) {
      // Zero-extended copy so the input gradient can be gathered:
      // grad_padded[p] = sum over taps of w * gframe[p - tap offset].
      const std::size_t lead = f.tap_offset(2, 2, 2);
      if (grad_in) {
        gext.assign(lead + f.in_size, 0.0);
        std::copy(gframe.begin(), gframe.end(), gext.begin() + static_cast<std::ptrdiff_t>(lead));
      }
      for (int ci = 0; ci < cin; ++ci) {
        const std::size_t wbase = (static_cast<std::size_t>(co) * cin + ci) * k3;
        for (int kz = 0; kz < 3; ++kz) {
          const std::size_t off = ci * f.in_size + f.tap_offset(0, 0, kz);
          if (grad_w) {
            const double* s0 = padded.data() + off;
            const double* s1 = s0 + f.row;
            const double* s2 = s1 + f.row;
            double a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0, a5 = 0, a6 = 0, a7 = 0, a8 = 0;
            for (std::size_t q = 0; q < f.span; ++q) {
              const double gq = gf[q];
              a0 += gq * s0[q];
              a1 += gq * s0[q + 1];
              a2 += gq * s0[q + 2];
              a3 += gq * s1[q];
              a4 += gq * s1[q + 1];
              a5 += gq * s1[q + 2];
              a6 += gq * s2[q];
              a7 += gq * s2[q + 1];
              a8 += gq * s2[q + 2];
            }
            double* gw = grad_w + wbase + kz * 9;
            gw[0] += a0, gw[1] += a1, gw[2] += a2, gw[3] += a3, gw[4] += a4;
            gw[5] += a5, gw[6] += a6, gw[7] += a7, gw[8] += a8;
          }
          if (grad_in) {
            const double* w = weight + wbase + kz * 9;
            double* gp = grad_padded.data() + ci * f.in_size;
            // gframe index p - (kz*plane + ky*row + kx), shifted by lead.
            const double* e0 = gext.data() + lead - f.tap_offset(0, 0, kz);
            const double* e1 = e0 - f.row;
            const double* e2 = e1 - f.row;
            for (std::size_t p = 0; p < f.in_size; ++p) {
              gp[p] += w[0] * e0[p] + w[3] * e1[p] + w[6] * e2[p];
            }
            for (std::size_t p = 1; p < f.in_size; ++p) {
              gp[p] += w[1] * e0[p - 1] + w[4] * e1[p - 1] + w[7] * e2[p - 1];
            }
            for (std::size_t p = 2; p < f.in_size; ++p) {
              gp[p] += w[2] * e0[p - 2] + w[5] * e1[p - 2] + w[8] * e2[p - 2];
            }
          }
        }
      }
      continue;
    }
    for (int ci = 0; ci < cin; ++ci) {
      const std::size_t wbase = (static_cast<std::size_t>(co) * cin + ci) * k3;
      for (int kz = 0; kz < k; ++kz) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const std::size_t widx = wbase + (kz * k + ky) * k + kx;
            const std::size_t off = ci * f.in_size + f.tap_offset(kx, ky, kz);
            if (grad_w) {
              const double* sp = padded.data() + off;
              double acc = 0.0;
              for (std::size_t q = 0; q < f.span; ++q) acc += gf[q] * sp[q];
              grad_w[widx] += acc;
            }
            const double w = weight[widx];
            if (grad_in && w != 0.0) {
              double* gp = grad_padded.data() + off;
              for (std::size_t q = 0; q < f.span; ++q) gp[q] += w * gf[q];
            }
          }
        }
      }
    }
  }
  if (grad_in) {
    for (int ci = 0; ci < cin; ++ci) {
      const double* gp = grad_padded.data() + ci * f.in_size;
      double* gi = grad_in + static_cast<std::size_t>(ci) * g.in.count();
      for (int z = 0; z < g.in.z; ++z) {
        for (int y = 0; y < g.in.y; ++y) {
          const double* row = gp + f.out_offset(g.pad, y + g.pad, z + g.pad);
          double* dst = gi + (static_cast<std::size_t>(z) * g.in.y + y) * g.in.x;
          for (int x = 0; x < g.in.x; ++x) dst[x] += row[x];
        }
      }
    }
  }
}

/// Direct convolution for any stride: out[co] = b[co] + sum over ci and
/// taps of w * in[ci] for one sample.
inline void conv3d_forward_direct(const ConvGeometry& g, int cin, int cout, const double* in,
                                  const double* weight, const double* bias, double* out) {
  const std::size_t in_sp = g.in.count();
  const std::size_t out_sp = g.out.count();
  const int k = g.kernel;
  const int k3 = k * k * k;
  for (int co = 0; co < cout; ++co) {
    double* o = out + static_cast<std::size_t>(co) * out_sp;
    std::fill(o, o + out_sp, bias ? bias[co] : 0.0);
    for (int ci = 0; ci < cin; ++ci) {
      const double* src = in + static_cast<std::size_t>(ci) * in_sp;
      const double* wk = weight + (static_cast<std::size_t>(co) * cin + ci) * k3;
      for (int kz = 0; kz < k; ++kz) {
        const Range rz = valid_outputs(g.out.z, g.in.z, kz, g.stride, g.pad);
        for (int ky = 0; ky < k; ++ky) {
          const Range ry = valid_outputs(g.out.y, g.in.y, ky, g.stride, g.pad);
          for (int kx = 0; kx < k; ++kx) {
            const double w = wk[(kz * k + ky) * k + kx];
            if (w == 0.0) continue;
            const Range rx = valid_outputs(g.out.x, g.in.x, kx, g.stride, g.pad);
            for (int oz = rz.lo; oz < rz.hi; ++oz) {
              const int iz = oz * g.stride + kz - g.pad;
              for (int oy = ry.lo; oy < ry.hi; ++oy) {
                const int iy = oy * g.stride + ky - g.pad;
                double* orow = o + (static_cast<std::size_t>(oz) * g.out.y + oy) * g.out.x;
                const double* irow = src + (static_cast<std::size_t>(iz) * g.in.y + iy) * g.in.x;
                if (g.stride == 1) {
                  const double* ip = irow + (kx - g.pad);
                  for (int ox = rx.lo; ox < rx.hi; ++ox) orow[ox] += w * ip[ox];
                } else {
                  for (int ox = rx.lo; ox < rx.hi; ++ox) orow[ox] += w * irow[ox * g.stride + kx - g.pad];
                }
              }
            }
          }
        }
      }
    }
  }
}

/// Accumulates input and parameter gradients of one sample, any stride.
/// grad_in, grad_w and grad_b may be null when not needed.
inline void conv3d_backward_direct(const ConvGeometry& g, int cin, int cout, const double* in,
                                   const double* weight, const double* grad_out, double* grad_in,
                                   double* grad_w, double* grad_b) {
  const std::size_t in_sp = g.in.count();
  const std::size_t out_sp = g.out.count();
  const int k = g.kernel;
  const int k3 = k * k * k;
  for (int co = 0; co < cout; ++co) {
    const double* go = grad_out + static_cast<std::size_t>(co) * out_sp;
    if (grad_b) {
      double s = 0.0;
      for (std::size_t i = 0; i < out_sp; ++i) s += go[i];
      grad_b[co] += s;
    }
    for (int ci = 0; ci < cin; ++ci) {
      const double* src = in + static_cast<std::size_t>(ci) * in_sp;
      double* gsrc = grad_in ? grad_in + static_cast<std::size_t>(ci) * in_sp : nullptr;
      const std::size_t wbase = (static_cast<std::size_t>(co) * cin + ci) * k3;
      for (int kz = 0; kz < k; ++kz) {
        const Range rz = valid_outputs(g.out.z, g.in.z, kz, g.stride, g.pad);
        for (int ky = 0; ky < k; ++ky) {
          const Range ry = valid_outputs(g.out.y, g.in.y, ky, g.stride, g.pad);
          for (int kx = 0; kx < k; ++kx) {
            const std::size_t widx = wbase + (kz * k + ky) * k + kx;
            const double w = weight[widx];
            const Range rx = valid_outputs(g.out.x, g.in.x, kx, g.stride, g.pad);
            double acc = 0.0;
            for (int oz = rz.lo; oz < rz.hi; ++oz) {
              const int iz = oz * g.stride + kz - g.pad;
              for (int oy = ry.lo; oy < ry.hi; ++oy) {
                const int iy = oy * g.stride + ky - g.pad;
                const double* grow = go + (static_cast<std::size_t>(oz) * g.out.y + oy) * g.out.x;
                const std::size_t ioff = (static_cast<std::size_t>(iz) * g.in.y + iy) * g.in.x;
                if (g.stride == 1) {
                  const int shift = kx - g.pad;
                  if (grad_w) {
                    const double* ip = src + ioff + shift;
                    for (int ox = rx.lo; ox < rx.hi; ++ox) acc += grow[ox] * ip[ox];
                  }
                  if (gsrc && w != 0.0) {
                    double* gp = gsrc + ioff + shift;
                    for (int ox = rx.lo; ox < rx.hi; ++ox) gp[ox] += w * grow[ox];
                  }
                } else {
                  for (int ox = rx.lo; ox < rx.hi; ++ox) {
                    const std::size_t ii = ioff + static_cast<std::size_t>(ox * g.stride + kx - g.pad);
                    if (grad_w) acc += grow[ox] * src[ii];
                    if (gsrc) gsrc[ii] += w * grow[ox];
                  }
                }
              }
            }
            if (grad_w) grad_w[widx] += acc;
          }
        }
      }
    }
  }
}

inline void conv3d_forward(const ConvGeometry& g, int cin, int cout, const double* in,
                           const double* weight, const double* bias, double* out) {
  if (g.stride == 1) {
    conv3d_forward_unit_stride(g, cin, cout, in, weight, bias, out);
  } else {
    conv3d_forward_direct(g, cin, cout, in, weight, bias, out);
  }
}

inline void conv3d_backward(const ConvGeometry& g, int cin, int cout, const double* in,
                            const double* weight, const double* grad_out, double* grad_in,
                            double* grad_w, double* grad_b) {
  if (g.stride == 1) {
    conv3d_backward_unit_stride(g, cin, cout, in, weight, grad_out, grad_in, grad_w, grad_b);
  } else {
    conv3d_backward_direct(g, cin, cout, in, weight, grad_out, grad_in, grad_w, grad_b);
  }
}

/// Max pooling over one channel; argmax receives the winning input offset.
inline void maxpool3d_forward(const Dims3& in_d, const Dims3& out_d, int kernel, int stride,
                              const double* in, double* out, std::uint32_t* argmax) {
  for (int oz = 0; oz < out_d.z; ++oz) {
    const int z0 = oz * stride;
    const int z1 = std::min(z0 + kernel, in_d.z);
    for (int oy = 0; oy < out_d.y; ++oy) {
      const int y0 = oy * stride;
      const int y1 = std::min(y0 + kernel, in_d.y);
      for (int ox = 0; ox < out_d.x; ++ox) {
        const int x0 = ox * stride;
        const int x1 = std::min(x0 + kernel, in_d.x);
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_i = linear_index(in_d, x0, y0, z0);
        for (int z = z0; z < z1; ++z) {
          for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
              const std::size_t i = linear_index(in_d, x, y, z);
              if (in[i] > best) {
                best = in[i];
                best_i = i;
              }
            }
          }
        }
        const std::size_t o = linear_index(out_d, ox, oy, oz);
        out[o] = best;
        argmax[o] = static_cast<std::uint32_t>(best_i);
      }
    }
  }
}

}  // namespace kernels
}  // namespace voxplain::nn
