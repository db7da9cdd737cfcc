#include "axiseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "node_record.hpp"

namespace axiseg {

using detail::make_result;

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!(a.shape() == b.shape())) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " +
                                b.shape().str());
  }
}

Tensor binary_op(const char* op, const Tensor& a, const Tensor& b,
                 const std::function<double(double, double)>& f,
                 const std::function<void(double, double, double, double&, double&)>& df) {
  require_same_shape(op, a, b);
  size_t n = static_cast<size_t>(a.numel());
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = f(a.data()[i], b.data()[i]);
  Tensor av = a, bv = b;
  const Tensor* operands[] = {&a, &b};
  return make_result(op, a.shape(), std::move(out), operands,
                     [av, bv, df, n](std::span<const double> dy, std::span<std::span<double>> din) {
                       for (size_t i = 0; i < n; ++i) {
                         double da = 0.0, db = 0.0;
                         df(av.data()[i], bv.data()[i], dy[i], da, db);
                         if (!din[0].empty()) din[0][i] += da;
                         if (!din[1].empty()) din[1][i] += db;
                       }
                     });
}

Tensor unary_op(const char* op, const Tensor& t, const std::function<double(double)>& f,
                const std::function<double(double, double)>& dfdx_times_dy) {
  size_t n = static_cast<size_t>(t.numel());
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = f(t.data()[i]);
  Tensor tv = t;
  const Tensor* operands[] = {&t};
  return make_result(op, t.shape(), std::move(out), operands,
                     [tv, dfdx_times_dy, n](std::span<const double> dy, std::span<std::span<double>> din) {
                       if (din[0].empty()) return;
                       for (size_t i = 0; i < n; ++i) din[0][i] += dfdx_times_dy(tv.data()[i], dy[i]);
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double dy, double& da, double& db) {
        da = dy;
        db = dy;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double dy, double& da, double& db) {
        da = dy;
        db = -dy;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double dy, double& da, double& db) {
        da = dy * y;
        db = dy * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double dy, double& da, double& db) {
        da = dy / y;
        db = -dy * x / (y * y);
      });
}

Tensor relu(const Tensor& t) {
  return unary_op(
      "relu", t, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double dy) { return x > 0.0 ? dy : 0.0; });
}

Tensor sigmoid(const Tensor& t) {
  auto sig = [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
  };
  return unary_op("sigmoid", t, sig, [sig](double x, double dy) {
    double y = sig(x);
    return dy * y * (1.0 - y);
  });
}

Tensor log_op(const Tensor& t) {
  return unary_op(
      "log", t, [](double x) { return std::log(x); },
      [](double x, double dy) { return dy / x; });
}

Tensor clamp(const Tensor& t, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: empty range");
  return unary_op(
      "clamp", t, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double dy) { return (x >= lo && x <= hi) ? dy : 0.0; });
}

Tensor scalar_mul(const Tensor& t, double c) {
  return unary_op(
      "scalar_mul", t, [c](double x) { return x * c; },
      [c](double, double dy) { return dy * c; });
}

Tensor scalar_add(const Tensor& t, double c) {
  return unary_op(
      "scalar_add", t, [c](double x) { return x + c; },
      [](double, double dy) { return dy; });
}

Tensor sum(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.values()) acc += v;
  size_t n = static_cast<size_t>(t.numel());
  const Tensor* operands[] = {&t};
  return make_result("sum", Shape{1}, {acc}, operands,
                     [n](std::span<const double> dy, std::span<std::span<double>> din) {
                       if (din[0].empty()) return;
                       for (size_t i = 0; i < n; ++i) din[0][i] += dy[0];
                     });
}

Tensor mean(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.values()) acc += v;
  size_t n = static_cast<size_t>(t.numel());
  double inv = 1.0 / static_cast<double>(n);
  const Tensor* operands[] = {&t};
  return make_result("mean", Shape{1}, {acc * inv}, operands,
                     [n, inv](std::span<const double> dy, std::span<std::span<double>> din) {
                       if (din[0].empty()) return;
                       for (size_t i = 0; i < n; ++i) din[0][i] += dy[0] * inv;
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().rank() != 2 || b.shape().rank() != 2 || a.shape().dim(1) != b.shape().dim(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + a.shape().str() + " and " +
                                b.shape().str());
  }
  int m = a.shape().dim(0), k = a.shape().dim(1), n = b.shape().dim(1);
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      double av = a.data()[i * k + p];
      for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] += av * b.data()[p * n + j];
    }
  }
  Tensor av = a, bv = b;
  const Tensor* operands[] = {&a, &b};
  return make_result("matmul", Shape{m, n}, std::move(out), operands,
                     [av, bv, m, k, n](std::span<const double> dy, std::span<std::span<double>> din) {
                       if (!din[0].empty()) {  // dA = dY * B^T
                         for (int i = 0; i < m; ++i)
                           for (int p = 0; p < k; ++p) {
                             double acc = 0.0;
                             for (int j = 0; j < n; ++j) acc += dy[static_cast<size_t>(i) * n + j] * bv.data()[p * n + j];
                             din[0][static_cast<size_t>(i) * k + p] += acc;
                           }
                       }
                       if (!din[1].empty()) {  // dB = A^T * dY
                         for (int p = 0; p < k; ++p)
                           for (int j = 0; j < n; ++j) {
                             double acc = 0.0;
                             for (int i = 0; i < m; ++i) acc += av.data()[i * k + p] * dy[static_cast<size_t>(i) * n + j];
                             din[1][static_cast<size_t>(p) * n + j] += acc;
                           }
                       }
                     });
}

Tensor softmax_lastdim(const Tensor& t) {
  if (t.shape().rank() < 1) throw std::invalid_argument("softmax_lastdim: rank-0 tensor");
  int last = t.shape().dim(t.shape().rank() - 1);
  size_t slices = static_cast<size_t>(t.numel()) / last;
  std::vector<double> out(static_cast<size_t>(t.numel()));
  for (size_t s = 0; s < slices; ++s) {
    const double* in = t.data() + s * last;
    double* o = out.data() + s * last;
    double mx = in[0];
    for (int i = 1; i < last; ++i) mx = std::max(mx, in[i]);
    double denom = 0.0;
    for (int i = 0; i < last; ++i) {
      o[i] = std::exp(in[i] - mx);
      denom += o[i];
    }
    for (int i = 0; i < last; ++i) o[i] /= denom;
  }
  Tensor y = Tensor::from_values(t.shape(), out);  // captured for the gradient rule
  const Tensor* operands[] = {&t};
  return make_result("softmax_lastdim", t.shape(), std::move(out), operands,
                     [y, slices, last](std::span<const double> dy, std::span<std::span<double>> din) {
                       if (din[0].empty()) return;
                       for (size_t s = 0; s < slices; ++s) {
                         const double* yv = y.data() + s * last;
                         const double* g = dy.data() + s * last;
                         double dot = 0.0;
                         for (int i = 0; i < last; ++i) dot += yv[i] * g[i];
                         for (int i = 0; i < last; ++i) din[0][s * last + i] += yv[i] * (g[i] - dot);
                       }
                     });
}

namespace {

struct ConvDims {
  int c_in, h, w, c_out, k, oh, ow, pad_top, pad_left;
};

ConvDims conv_dims(const Tensor& x, const Tensor& weights, const Tensor& bias, int stride) {
  if (x.shape().rank() != 3) throw std::invalid_argument("conv2d: input must be CxHxW");
  if (weights.shape().rank() != 4) throw std::invalid_argument("conv2d: weights must be [C_out x C_in x k x k]");
  ConvDims d;
  d.c_in = x.shape().dim(0);
  d.h = x.shape().dim(1);
  d.w = x.shape().dim(2);
  d.c_out = weights.shape().dim(0);
  d.k = weights.shape().dim(2);
  if (weights.shape().dim(1) != d.c_in) {
    throw std::invalid_argument("conv2d: weight channels " + weights.shape().str() +
                                " do not match input " + x.shape().str());
  }
  if (weights.shape().dim(3) != d.k || (d.k != 1 && d.k != 3)) {
    throw std::invalid_argument("conv2d: kernel must be 1x1 or 3x3");
  }
  if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
  if (bias.shape().rank() != 1 || bias.shape().dim(0) != d.c_out) {
    throw std::invalid_argument("conv2d: bias must be [C_out]");
  }
  d.oh = (d.h + stride - 1) / stride;
  d.ow = (d.w + stride - 1) / stride;
  int pad_h = std::max((d.oh - 1) * stride + d.k - d.h, 0);
  int pad_w = std::max((d.ow - 1) * stride + d.k - d.w, 0);
  d.pad_top = pad_h / 2;
  d.pad_left = pad_w / 2;
  return d;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weights, const Tensor& bias, int stride) {
  ConvDims d = conv_dims(x, weights, bias, stride);
  std::vector<double> out(static_cast<size_t>(d.c_out) * d.oh * d.ow, 0.0);
  for (int co = 0; co < d.c_out; ++co) {
    for (int oy = 0; oy < d.oh; ++oy) {
      for (int ox = 0; ox < d.ow; ++ox) {
        double acc = bias.data()[co];
        for (int ci = 0; ci < d.c_in; ++ci) {
          for (int ky = 0; ky < d.k; ++ky) {
            int iy = oy * stride + ky - d.pad_top;
            if (iy < 0 || iy >= d.h) continue;
            for (int kx = 0; kx < d.k; ++kx) {
              int ix = ox * stride + kx - d.pad_left;
              if (ix < 0 || ix >= d.w) continue;
              acc += weights.data()[((static_cast<size_t>(co) * d.c_in + ci) * d.k + ky) * d.k + kx] *
                     x.data()[(static_cast<size_t>(ci) * d.h + iy) * d.w + ix];
            }
          }
        }
        out[(static_cast<size_t>(co) * d.oh + oy) * d.ow + ox] = acc;
      }
    }
  }
  Tensor xv = x, wv = weights;
  const Tensor* operands[] = {&x, &weights, &bias};
  return make_result(
      "conv2d", Shape{d.c_out, d.oh, d.ow}, std::move(out), operands,
      [xv, wv, d, stride](std::span<const double> dy, std::span<std::span<double>> din) {
        for (int co = 0; co < d.c_out; ++co) {
          for (int oy = 0; oy < d.oh; ++oy) {
            for (int ox = 0; ox < d.ow; ++ox) {
              double g = dy[(static_cast<size_t>(co) * d.oh + oy) * d.ow + ox];
              if (!din[2].empty()) din[2][static_cast<size_t>(co)] += g;
              for (int ci = 0; ci < d.c_in; ++ci) {
                for (int ky = 0; ky < d.k; ++ky) {
                  int iy = oy * stride + ky - d.pad_top;
                  if (iy < 0 || iy >= d.h) continue;
                  for (int kx = 0; kx < d.k; ++kx) {
                    int ix = ox * stride + kx - d.pad_left;
                    if (ix < 0 || ix >= d.w) continue;
                    size_t wi = ((static_cast<size_t>(co) * d.c_in + ci) * d.k + ky) * d.k + kx;
                    size_t xi = (static_cast<size_t>(ci) * d.h + iy) * d.w + ix;
                    if (!din[0].empty()) din[0][xi] += g * wv.data()[wi];
                    if (!din[1].empty()) din[1][wi] += g * xv.data()[xi];
                  }
                }
              }
            }
          }
        }
      });
}

Tensor layer_norm_channels(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  if (x.shape().rank() != 3) throw std::invalid_argument("layer_norm_channels: input must be CxHxW");
  int c = x.shape().dim(0), h = x.shape().dim(1), w = x.shape().dim(2);
  if (gain.shape().rank() != 1 || gain.shape().dim(0) != c || !(gain.shape() == bias.shape())) {
    throw std::invalid_argument("layer_norm_channels: gain/bias must be [C]");
  }
  constexpr double kEps = 1e-5;
  int hw = h * w;
  std::vector<double> out(static_cast<size_t>(x.numel()));
  std::vector<double> xhat(static_cast<size_t>(x.numel()));
  std::vector<double> inv_sigma(static_cast<size_t>(hw));
  for (int p = 0; p < hw; ++p) {
    double mu = 0.0;
    for (int ci = 0; ci < c; ++ci) mu += x.data()[static_cast<size_t>(ci) * hw + p];
    mu /= c;
    double var = 0.0;
    for (int ci = 0; ci < c; ++ci) {
      double dv = x.data()[static_cast<size_t>(ci) * hw + p] - mu;
      var += dv * dv;
    }
    var /= c;
    double is = 1.0 / std::sqrt(var + kEps);
    inv_sigma[static_cast<size_t>(p)] = is;
    for (int ci = 0; ci < c; ++ci) {
      size_t idx = static_cast<size_t>(ci) * hw + p;
      xhat[idx] = (x.data()[idx] - mu) * is;
      out[idx] = gain.data()[ci] * xhat[idx] + bias.data()[ci];
    }
  }
  Tensor gv = gain;
  auto xh = std::make_shared<const std::vector<double>>(std::move(xhat));
  auto isg = std::make_shared<const std::vector<double>>(std::move(inv_sigma));
  const Tensor* operands[] = {&x, &gain, &bias};
  return make_result(
      "layer_norm_channels", x.shape(), std::move(out), operands,
      [gv, xh, isg, c, hw](std::span<const double> dy, std::span<std::span<double>> din) {
        for (int p = 0; p < hw; ++p) {
          // dx = (g*dy - mean(g*dy) - xhat*mean(g*dy*xhat)) / sigma
          double m1 = 0.0, m2 = 0.0;
          for (int ci = 0; ci < c; ++ci) {
            size_t idx = static_cast<size_t>(ci) * hw + p;
            double gd = gv.data()[ci] * dy[idx];
            m1 += gd;
            m2 += gd * (*xh)[idx];
          }
          m1 /= c;
          m2 /= c;
          for (int ci = 0; ci < c; ++ci) {
            size_t idx = static_cast<size_t>(ci) * hw + p;
            if (!din[0].empty()) {
              double gd = gv.data()[ci] * dy[idx];
              din[0][idx] += (gd - m1 - (*xh)[idx] * m2) * (*isg)[static_cast<size_t>(p)];
            }
            if (!din[1].empty()) din[1][static_cast<size_t>(ci)] += dy[idx] * (*xh)[idx];
            if (!din[2].empty()) din[2][static_cast<size_t>(ci)] += dy[idx];
          }
        }
      });
}

Tensor upsample_nearest2x(const Tensor& x) {
  if (x.shape().rank() != 3) throw std::invalid_argument("upsample_nearest2x: input must be CxHxW");
  int c = x.shape().dim(0), h = x.shape().dim(1), w = x.shape().dim(2);
  int oh = 2 * h, ow = 2 * w;
  std::vector<double> out(static_cast<size_t>(c) * oh * ow);
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx)
        out[(static_cast<size_t>(ci) * oh + y) * ow + xx] =
            x.data()[(static_cast<size_t>(ci) * h + y / 2) * w + xx / 2];
  const Tensor* operands[] = {&x};
  return make_result("upsample_nearest2x", Shape{c, oh, ow}, std::move(out), operands,
                     [c, h, w, oh, ow](std::span<const double> dy, std::span<std::span<double>> din) {
                       if (din[0].empty()) return;
                       for (int ci = 0; ci < c; ++ci)
                         for (int y = 0; y < oh; ++y)
                           for (int xx = 0; xx < ow; ++xx)
                             din[0][(static_cast<size_t>(ci) * h + y / 2) * w + xx / 2] +=
                                 dy[(static_cast<size_t>(ci) * oh + y) * ow + xx];
                     });
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape.numel() != t.numel()) {
    throw std::invalid_argument("reshape: cannot view " + t.shape().str() + " as " + shape.str());
  }
  std::vector<double> out(t.values().begin(), t.values().end());
  size_t n = static_cast<size_t>(t.numel());
  const Tensor* operands[] = {&t};
  return make_result("reshape", std::move(shape), std::move(out), operands,
                     [n](std::span<const double> dy, std::span<std::span<double>> din) {
                       if (din[0].empty()) return;
                       for (size_t i = 0; i < n; ++i) din[0][i] += dy[i];
                     });
}

Tensor slice_channels(const Tensor& t, int c_begin, int c_end) {
  if (t.shape().rank() != 3) throw std::invalid_argument("slice_channels: input must be CxHxW");
  int c = t.shape().dim(0), h = t.shape().dim(1), w = t.shape().dim(2);
  if (c_begin < 0 || c_end > c || c_begin >= c_end) {
    throw std::invalid_argument("slice_channels: bad range [" + std::to_string(c_begin) + ", " +
                                std::to_string(c_end) + ") for " + t.shape().str());
  }
  int hw = h * w;
  size_t count = static_cast<size_t>(c_end - c_begin) * hw;
  std::vector<double> out(t.data() + static_cast<size_t>(c_begin) * hw,
                          t.data() + static_cast<size_t>(c_begin) * hw + count);
  const Tensor* operands[] = {&t};
  return make_result("slice_channels", Shape{c_end - c_begin, h, w}, std::move(out), operands,
                     [c_begin, hw, count](std::span<const double> dy, std::span<std::span<double>> din) {
                       if (din[0].empty()) return;
                       size_t base = static_cast<size_t>(c_begin) * hw;
                       for (size_t i = 0; i < count; ++i) din[0][base + i] += dy[i];
                     });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no parts");
  int h = parts[0].shape().dim(1), w = parts[0].shape().dim(2);
  int c_total = 0;
  for (const Tensor& p : parts) {
    if (p.shape().rank() != 3 || p.shape().dim(1) != h || p.shape().dim(2) != w) {
      throw std::invalid_argument("concat_channels: spatial extents differ");
    }
    c_total += p.shape().dim(0);
  }
  std::vector<double> out;
  out.reserve(static_cast<size_t>(c_total) * h * w);
  std::vector<size_t> sizes;
  for (const Tensor& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
    sizes.push_back(static_cast<size_t>(p.numel()));
  }
  std::vector<const Tensor*> operands;
  for (const Tensor& p : parts) operands.push_back(&p);
  return make_result("concat_channels", Shape{c_total, h, w}, std::move(out), operands,
                     [sizes](std::span<const double> dy, std::span<std::span<double>> din) {
                       size_t off = 0;
                       for (size_t k = 0; k < sizes.size(); ++k) {
                         if (!din[k].empty())
                           for (size_t i = 0; i < sizes[k]; ++i) din[k][i] += dy[off + i];
                         off += sizes[k];
                       }
                     });
}

Tensor spatial_pick(const Tensor& t, int i, int j) {
  if (t.shape().rank() != 3) throw std::invalid_argument("spatial_pick: input must be CxHxW");
  int c = t.shape().dim(0), h = t.shape().dim(1), w = t.shape().dim(2);
  if (i < 0 || i >= h || j < 0 || j >= w) {
    throw std::invalid_argument("spatial_pick: position (" + std::to_string(i) + ", " +
                                std::to_string(j) + ") outside " + t.shape().str());
  }
  std::vector<double> out(static_cast<size_t>(c));
  for (int ci = 0; ci < c; ++ci) out[static_cast<size_t>(ci)] = t.data()[(static_cast<size_t>(ci) * h + i) * w + j];
  const Tensor* operands[] = {&t};
  return make_result("spatial_pick", Shape{c}, std::move(out), operands,
                     [c, h, w, i, j](std::span<const double> dy, std::span<std::span<double>> din) {
                       if (din[0].empty()) return;
                       for (int ci = 0; ci < c; ++ci)
                         din[0][(static_cast<size_t>(ci) * h + i) * w + j] += dy[static_cast<size_t>(ci)];
                     });
}

}  // namespace axiseg
