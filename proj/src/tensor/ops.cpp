// Copyright 2026 The DeltaDistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "dd/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace dd {

namespace {

thread_local std::uint64_t* t_reference_counter = nullptr;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " +
                     std::to_string(rank) + ", got shape " +
                     shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " +
                     shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, ho, wo;
  Conv2dOptions opt;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight,
                           const std::optional<Tensor>& bias,
                           const Conv2dOptions& options) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (input.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(1)) +
                     " channels but weight expects " +
                     std::to_string(weight.dim(1)) + " (input " +
                     shape_to_string(input.shape()) + ", weight " +
                     shape_to_string(weight.shape()) + ")");
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != weight.dim(0))) {
    throw ShapeError("conv2d: bias shape " + shape_to_string(bias->shape()) +
                     " does not match " + std::to_string(weight.dim(0)) +
                     " output channels");
  }
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.opt = options;
  const auto extent = conv_output_extent(g.h, g.w, g.kh, g.kw, options);
  g.ho = extent[0];
  g.wo = extent[1];
  return g;
}

// Lowers one batch item into a [cin*kh*kw, ho*wo] column matrix.
void im2col(const double* x, const ConvGeometry& g, double* col) {
  const std::size_t p = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = col + ((c * g.kh + i) * g.kw + j) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.opt.stride[0] + i) -
                          static_cast<std::ptrdiff_t>(g.opt.padding[0]);
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix =
                static_cast<std::ptrdiff_t>(ox * g.opt.stride[1] + j) -
                static_cast<std::ptrdiff_t>(g.opt.padding[1]);
            const bool inside = iy >= 0 && ix >= 0 &&
                                iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.wo + ox] =
                inside ? x[(c * g.h + static_cast<std::size_t>(iy)) * g.w +
                           static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeometry& g, double* dx) {
  const std::size_t p = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((c * g.kh + i) * g.kw + j) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.opt.stride[0] + i) -
                          static_cast<std::ptrdiff_t>(g.opt.padding[0]);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const auto ix =
                static_cast<std::ptrdiff_t>(ox * g.opt.stride[1] + j) -
                static_cast<std::ptrdiff_t>(g.opt.padding[1]);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dx[(c * g.h + static_cast<std::size_t>(iy)) * g.w +
               static_cast<std::size_t>(ix)] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

std::array<std::size_t, 2> conv_output_extent(std::size_t height,
                                              std::size_t width,
                                              std::size_t kernel_h,
                                              std::size_t kernel_w,
                                              const Conv2dOptions& options) {
  if (options.stride[0] == 0 || options.stride[1] == 0) {
    throw ConfigError("conv2d: stride must be positive");
  }
  const std::size_t ph = height + 2 * options.padding[0];
  const std::size_t pw = width + 2 * options.padding[1];
  if (kernel_h == 0 || kernel_w == 0 || ph < kernel_h || pw < kernel_w) {
    throw ConfigError("conv2d: kernel " + std::to_string(kernel_h) + "x" +
                      std::to_string(kernel_w) +
                      " yields a non-positive output extent on padded input " +
                      std::to_string(ph) + "x" + std::to_string(pw));
  }
  return {(ph - kernel_h) / options.stride[0] + 1,
          (pw - kernel_w) / options.stride[1] + 1};
}

Tensor conv2d(const Tensor& input, const Tensor& weight,
              const std::optional<Tensor>& bias, const Conv2dOptions& options) {
  if (t_reference_counter) {
    return conv2d_reference(input, weight, bias, options, t_reference_counter);
  }
  const ConvGeometry g = conv_geometry(input, weight, bias, options);
  const std::size_t k = g.cin * g.kh * g.kw;
  const std::size_t p = g.ho * g.wo;

  std::vector<double> cols(g.n * k * p);
  std::vector<double> out(g.n * g.cout * p, 0.0);
  const double* x = input.values().data();
  const double* wt = weight.values().data();
  for (std::size_t b = 0; b < g.n; ++b) {
    double* col = cols.data() + b * k * p;
    im2col(x + b * g.cin * g.h * g.w, g, col);
    double* y = out.data() + b * g.cout * p;
    for (std::size_t co = 0; co < g.cout; ++co) {
      double* yrow = y + co * p;
      if (bias) std::fill(yrow, yrow + p, bias->values()[co]);
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double wv = wt[co * k + kk];
        if (wv == 0.0) continue;
        const double* crow = col + kk * p;
        for (std::size_t q = 0; q < p; ++q) yrow[q] += wv * crow[q];
      }
    }
  }

  std::vector<Tensor> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  const bool need_cols = weight.requires_grad();
  auto saved_cols =
      std::make_shared<std::vector<double>>(need_cols ? std::move(cols)
                                                      : std::vector<double>{});
  return detail::make_result(
      "conv2d", {g.n, g.cout, g.ho, g.wo}, std::move(out), std::move(inputs),
      [g, k, p, saved_cols](std::span<const double> dy,
                            std::span<const TensorImplPtr> in) {
        const auto& x_impl = in[0];
        const auto& w_impl = in[1];
        if (w_impl->requires_grad) {
          auto& dw = w_impl->grad_buffer();
          for (std::size_t b = 0; b < g.n; ++b) {
            const double* col = saved_cols->data() + b * k * p;
            const double* dyb = dy.data() + b * g.cout * p;
            for (std::size_t co = 0; co < g.cout; ++co) {
              const double* dyrow = dyb + co * p;
              for (std::size_t kk = 0; kk < k; ++kk) {
                const double* crow = col + kk * p;
                double acc = 0.0;
                for (std::size_t q = 0; q < p; ++q) acc += dyrow[q] * crow[q];
                dw[co * k + kk] += acc;
              }
            }
          }
        }
        if (in.size() > 2 && in[2]->requires_grad) {
          auto& db = in[2]->grad_buffer();
          for (std::size_t b = 0; b < g.n; ++b) {
            for (std::size_t co = 0; co < g.cout; ++co) {
              const double* dyrow = dy.data() + (b * g.cout + co) * p;
              double acc = 0.0;
              for (std::size_t q = 0; q < p; ++q) acc += dyrow[q];
              db[co] += acc;
            }
          }
        }
        if (x_impl->requires_grad) {
          auto& dx = x_impl->grad_buffer();
          std::vector<double> dcol(k * p);
          const double* wt = w_impl->data.data();
          for (std::size_t b = 0; b < g.n; ++b) {
            std::fill(dcol.begin(), dcol.end(), 0.0);
            const double* dyb = dy.data() + b * g.cout * p;
            for (std::size_t co = 0; co < g.cout; ++co) {
              const double* dyrow = dyb + co * p;
              for (std::size_t kk = 0; kk < k; ++kk) {
                const double wv = wt[co * k + kk];
                if (wv == 0.0) continue;
                double* drow = dcol.data() + kk * p;
                for (std::size_t q = 0; q < p; ++q) drow[q] += wv * dyrow[q];
              }
            }
            col2im(dcol.data(), g, dx.data() + b * g.cin * g.h * g.w);
          }
        }
      });
}

Tensor conv2d_reference(const Tensor& input, const Tensor& weight,
                        const std::optional<Tensor>& bias,
                        const Conv2dOptions& options,
                        std::uint64_t* mac_counter) {
  const ConvGeometry g = conv_geometry(input, weight, bias, options);
  std::vector<double> out(g.n * g.cout * g.ho * g.wo, 0.0);
  const auto x = input.values();
  const auto w = weight.values();
  std::uint64_t macs = 0;
  for (std::size_t b = 0; b < g.n; ++b) {
    for (std::size_t co = 0; co < g.cout; ++co) {
      for (std::size_t oy = 0; oy < g.ho; ++oy) {
        for (std::size_t ox = 0; ox < g.wo; ++ox) {
          double acc = bias ? bias->values()[co] : 0.0;
          for (std::size_t ci = 0; ci < g.cin; ++ci) {
            for (std::size_t i = 0; i < g.kh; ++i) {
              for (std::size_t j = 0; j < g.kw; ++j) {
                ++macs;
                const auto iy =
                    static_cast<std::ptrdiff_t>(oy * g.opt.stride[0] + i) -
                    static_cast<std::ptrdiff_t>(g.opt.padding[0]);
                const auto ix =
                    static_cast<std::ptrdiff_t>(ox * g.opt.stride[1] + j) -
                    static_cast<std::ptrdiff_t>(g.opt.padding[1]);
                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) ||
                    ix >= static_cast<std::ptrdiff_t>(g.w)) {
                  continue;
                }
                acc += x[((b * g.cin + ci) * g.h + static_cast<std::size_t>(iy)) *
                             g.w +
                         static_cast<std::size_t>(ix)] *
                       w[((co * g.cin + ci) * g.kh + i) * g.kw + j];
              }
            }
          }
          out[((b * g.cout + co) * g.ho + oy) * g.wo + ox] = acc;
        }
      }
    }
  }
  if (mac_counter) *mac_counter += macs;
  return Tensor::from_values({g.n, g.cout, g.ho, g.wo}, std::move(out));
}

ReferenceConvScope::ReferenceConvScope(std::uint64_t* counter)
    : previous_(t_reference_counter) {
  t_reference_counter = counter;
}

ReferenceConvScope::~ReferenceConvScope() { t_reference_counter = previous_; }

Tensor pointwise_conv(const Tensor& input, const Tensor& weight,
                      std::size_t stride, const std::optional<Tensor>& bias) {
  require_rank(weight, 4, "pointwise_conv weight");
  if (weight.dim(2) != 1 || weight.dim(3) != 1) {
    throw ShapeError("pointwise_conv: weight must be 1x1, got " +
                     shape_to_string(weight.shape()));
  }
  Conv2dOptions opt;
  opt.stride = {stride, stride};
  return conv2d(input, weight, bias, opt);
}

Tensor pixel_shuffle(const Tensor& input, std::size_t factor) {
  require_rank(input, 4, "pixel_shuffle");
  if (factor == 0) throw ConfigError("pixel_shuffle: factor must be positive");
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  const std::size_t rr = factor * factor;
  if (cin % rr != 0) {
    throw ConfigError("pixel_shuffle: " + std::to_string(cin) +
                      " channels not divisible by factor^2 = " +
                      std::to_string(rr));
  }
  const std::size_t c = cin / rr;
  const std::size_t ho = h * factor, wo = w * factor;
  // index[o] = source element for output o
  auto index = std::make_shared<std::vector<std::size_t>>(input.numel());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < ho; ++y) {
        for (std::size_t x = 0; x < wo; ++x) {
          const std::size_t i = y % factor, j = x % factor;
          const std::size_t src_c = ch * rr + i * factor + j;
          const std::size_t src =
              ((b * cin + src_c) * h + y / factor) * w + x / factor;
          (*index)[((b * c + ch) * ho + y) * wo + x] = src;
        }
      }
    }
  }
  std::vector<double> out(input.numel());
  const auto xv = input.values();
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xv[(*index)[o]];
  return detail::make_result(
      "pixel_shuffle", {n, c, ho, wo}, std::move(out), {input},
      [index](std::span<const double> dy, std::span<const TensorImplPtr> in) {
        auto& dx = in[0]->grad_buffer();
        for (std::size_t o = 0; o < dy.size(); ++o) dx[(*index)[o]] += dy[o];
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return detail::make_result(
      "add", a.shape(), std::move(out), {a, b},
      [](std::span<const double> dy, std::span<const TensorImplPtr> in) {
        for (const auto& t : in) {
          if (t->requires_grad) t->accumulate(dy);
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return detail::make_result(
      "sub", a.shape(), std::move(out), {a, b},
      [](std::span<const double> dy, std::span<const TensorImplPtr> in) {
        if (in[0]->requires_grad) in[0]->accumulate(dy);
        if (in[1]->requires_grad) {
          auto& g = in[1]->grad_buffer();
          for (std::size_t i = 0; i < dy.size(); ++i) g[i] -= dy[i];
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return detail::make_result(
      "mul", a.shape(), std::move(out), {a, b},
      [](std::span<const double> dy, std::span<const TensorImplPtr> in) {
        for (int s = 0; s < 2; ++s) {
          if (!in[s]->requires_grad) continue;
          const auto& other = in[1 - s]->data;
          auto& g = in[s]->grad_buffer();
          for (std::size_t i = 0; i < dy.size(); ++i) g[i] += dy[i] * other[i];
        }
      });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, x.at(i));
  return detail::make_result(
      "relu", x.shape(), std::move(out), {x},
      [](std::span<const double> dy, std::span<const TensorImplPtr> in) {
        const auto& xv = in[0]->data;
        auto& g = in[0]->grad_buffer();
        for (std::size_t i = 0; i < dy.size(); ++i) {
          if (xv[i] > 0.0) g[i] += dy[i];
        }
      });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x.at(i);
  return detail::make_result(
      "scale", x.shape(), std::move(out), {x},
      [factor](std::span<const double> dy, std::span<const TensorImplPtr> in) {
        auto& g = in[0]->grad_buffer();
        for (std::size_t i = 0; i < dy.size(); ++i) g[i] += factor * dy[i];
      });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) {
    throw ShapeError("scale_by: factor must hold one element, got " +
                     shape_to_string(s.shape()));
  }
  const double f = s.at(0);
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f * x.at(i);
  return detail::make_result(
      "scale_by", x.shape(), std::move(out), {x, s},
      [](std::span<const double> dy, std::span<const TensorImplPtr> in) {
        const double f = in[1]->data[0];
        if (in[0]->requires_grad) {
          auto& g = in[0]->grad_buffer();
          for (std::size_t i = 0; i < dy.size(); ++i) g[i] += f * dy[i];
        }
        if (in[1]->requires_grad) {
          const auto& xv = in[0]->data;
          double acc = 0.0;
          for (std::size_t i = 0; i < dy.size(); ++i) acc += dy[i] * xv[i];
          in[1]->grad_buffer()[0] += acc;
        }
      });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: incompatible shapes " +
                     shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t plane = a.dim(2) * a.dim(3);
  std::vector<double> out(n * (ca + cb) * plane);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.values().data() + i * ca * plane, ca * plane,
                out.data() + i * (ca + cb) * plane);
    std::copy_n(b.values().data() + i * cb * plane, cb * plane,
                out.data() + (i * (ca + cb) + ca) * plane);
  }
  return detail::make_result(
      "concat_channels", {n, ca + cb, a.dim(2), a.dim(3)}, std::move(out),
      {a, b},
      [n, ca, cb, plane](std::span<const double> dy,
                         std::span<const TensorImplPtr> in) {
        for (std::size_t i = 0; i < n; ++i) {
          const double* src = dy.data() + i * (ca + cb) * plane;
          if (in[0]->requires_grad) {
            auto& g = in[0]->grad_buffer();
            for (std::size_t k = 0; k < ca * plane; ++k)
              g[i * ca * plane + k] += src[k];
          }
          if (in[1]->requires_grad) {
            auto& g = in[1]->grad_buffer();
            for (std::size_t k = 0; k < cb * plane; ++k)
              g[i * cb * plane + k] += src[ca * plane + k];
          }
        }
      });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return detail::make_result(
      "sum", {}, {acc}, {x},
      [](std::span<const double> dy, std::span<const TensorImplPtr> in) {
        auto& g = in[0]->grad_buffer();
        for (double& v : g) v += dy[0];
      });
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 1, "softmax");
  const auto z = logits.values();
  const double mx = *std::max_element(z.begin(), z.end());
  std::vector<double> out(z.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - mx);
    denom += out[i];
  }
  for (double& v : out) v /= denom;
  auto probs = std::make_shared<std::vector<double>>(out);
  return detail::make_result(
      "softmax", logits.shape(), std::move(out), {logits},
      [probs](std::span<const double> dy, std::span<const TensorImplPtr> in) {
        const auto& p = *probs;
        double dot = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) dot += dy[i] * p[i];
        auto& g = in[0]->grad_buffer();
        for (std::size_t i = 0; i < p.size(); ++i) g[i] += p[i] * (dy[i] - dot);
      });
}

Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  if (weights.size() != x.numel()) {
    throw ShapeError("weighted_sum: " + std::to_string(weights.size()) +
                     " weights for tensor of shape " +
                     shape_to_string(x.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += weights[i] * x.at(i);
  std::vector<double> w(weights.begin(), weights.end());
  return detail::make_result(
      "weighted_sum", {}, {acc}, {x},
      [w = std::move(w)](std::span<const double> dy,
                         std::span<const TensorImplPtr> in) {
        auto& g = in[0]->grad_buffer();
        for (std::size_t i = 0; i < w.size(); ++i) g[i] += dy[0] * w[i];
      });
}

Tensor l2_loss(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l2_loss");
  const std::size_t n = a.numel();
  if (n == 0) throw ShapeError("l2_loss: empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.at(i) - b.at(i);
    acc += d * d;
  }
  return detail::make_result(
      "l2_loss", {}, {acc / static_cast<double>(n)}, {a, b},
      [n](std::span<const double> dy, std::span<const TensorImplPtr> in) {
        const double c = 2.0 * dy[0] / static_cast<double>(n);
        const auto& av = in[0]->data;
        const auto& bv = in[1]->data;
        if (in[0]->requires_grad) {
          auto& g = in[0]->grad_buffer();
          for (std::size_t i = 0; i < n; ++i) g[i] += c * (av[i] - bv[i]);
        }
        if (in[1]->requires_grad) {
          auto& g = in[1]->grad_buffer();
          for (std::size_t i = 0; i < n; ++i) g[i] -= c * (av[i] - bv[i]);
        }
      });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                             int ignore_label) {
  require_rank(logits, 4, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const std::size_t plane = logits.dim(2) * logits.dim(3);
  if (labels.size() != n * plane) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for logits " + shape_to_string(logits.shape()));
  }
  const auto z = logits.values();
  // Softmax probabilities are saved for backward; ignored pixels keep zeros.
  auto probs = std::make_shared<std::vector<double>>(logits.numel(), 0.0);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t q = 0; q < plane; ++q) {
      const int label = labels[b * plane + q];
      if (label == ignore_label) continue;
      if (label < 0 || static_cast<std::size_t>(label) >= k) {
        throw ConfigError("softmax_cross_entropy: label " +
                          std::to_string(label) + " outside [0, " +
                          std::to_string(k) + ")");
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c)
        mx = std::max(mx, z[(b * k + c) * plane + q]);
      double denom = 0.0;
      for (std::size_t c = 0; c < k; ++c)
        denom += std::exp(z[(b * k + c) * plane + q] - mx);
      const double lse = mx + std::log(denom);
      total += lse - z[(b * k + static_cast<std::size_t>(label)) * plane + q];
      for (std::size_t c = 0; c < k; ++c)
        (*probs)[(b * k + c) * plane + q] =
            std::exp(z[(b * k + c) * plane + q] - lse);
      ++counted;
    }
  }
  const double loss = counted ? total / static_cast<double>(counted) : 0.0;
  std::vector<int> kept(labels.begin(), labels.end());
  return detail::make_result(
      "softmax_cross_entropy", {}, {loss}, {logits},
      [probs, kept = std::move(kept), n, k, plane, counted, ignore_label](
          std::span<const double> dy, std::span<const TensorImplPtr> in) {
        if (counted == 0) return;
        const double c = dy[0] / static_cast<double>(counted);
        auto& g = in[0]->grad_buffer();
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t q = 0; q < plane; ++q) {
            const int label = kept[b * plane + q];
            if (label == ignore_label) continue;
            for (std::size_t ch = 0; ch < k; ++ch) {
              const std::size_t idx = (b * k + ch) * plane + q;
              const double onehot =
                  ch == static_cast<std::size_t>(label) ? 1.0 : 0.0;
              g[idx] += c * ((*probs)[idx] - onehot);
            }
          }
        }
      });
}

}  // namespace dd
