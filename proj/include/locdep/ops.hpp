#pragma once

#include "locdep/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace locdep {

enum class Padding { Same, Valid };

enum class Activation { Identity, Sigmoid, Tanh, ReLU };

/// Probability clamp applied inside bce_loss.
inline constexpr double kBceEpsilon = 1e-7;

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (!t.defined() || t.rank() != rank) {
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
    }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

/// Geometry shared by a strided convolution and its adjoint: an "image" of
/// size image_h x image_w is sampled by a kernel with stride and zero padding
/// into a grid of size grid_h x grid_w.
struct ConvGeometry {
    std::int64_t channels;
    std::int64_t image_h, image_w;
    std::int64_t kernel_h, kernel_w;
    std::int64_t stride;
    std::int64_t pad_h, pad_w;
    std::int64_t grid_h, grid_w;

    std::int64_t rows() const { return channels * kernel_h * kernel_w; }
    std::int64_t cols() const { return grid_h * grid_w; }
};

/// Unfolds one image (channels x image_h x image_w) into columns
/// (channels*kh*kw) x (grid_h*grid_w).
inline void im2col(const double* image, const ConvGeometry& g, double* cols) {
    const std::int64_t ncols = g.cols();
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (std::int64_t i = 0; i < g.kernel_h; ++i) {
            for (std::int64_t j = 0; j < g.kernel_w; ++j) {
                double* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * ncols;
                const double* plane = image + c * g.image_h * g.image_w;
                for (std::int64_t y = 0; y < g.grid_h; ++y) {
                    const std::int64_t iy = y * g.stride + i - g.pad_h;
                    double* dst = row + y * g.grid_w;
                    if (iy < 0 || iy >= g.image_h) {
                        std::fill(dst, dst + g.grid_w, 0.0);
                        continue;
                    }
                    const double* src = plane + iy * g.image_w;
                    for (std::int64_t x = 0; x < g.grid_w; ++x) {
                        const std::int64_t ix = x * g.stride + j - g.pad_w;
                        dst[x] = (ix >= 0 && ix < g.image_w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatters columns back into an image, accumulating.
inline void col2im(const double* cols, const ConvGeometry& g, double* image) {
    const std::int64_t ncols = g.cols();
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (std::int64_t i = 0; i < g.kernel_h; ++i) {
            for (std::int64_t j = 0; j < g.kernel_w; ++j) {
                const double* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * ncols;
                double* plane = image + c * g.image_h * g.image_w;
                for (std::int64_t y = 0; y < g.grid_h; ++y) {
                    const std::int64_t iy = y * g.stride + i - g.pad_h;
                    if (iy < 0 || iy >= g.image_h) continue;
                    const double* src = row + y * g.grid_w;
                    double* dst = plane + iy * g.image_w;
                    for (std::int64_t x = 0; x < g.grid_w; ++x) {
                        const std::int64_t ix = x * g.stride + j - g.pad_w;
                        if (ix >= 0 && ix < g.image_w) dst[ix] += src[x];
                    }
                }
            }
        }
    }
}

/// Zero-padded copy of one image (channels x image_h x image_w).
inline std::vector<double> pad_image(const double* image, const ConvGeometry& g) {
    const std::int64_t ph = g.image_h + 2 * g.pad_h, pw = g.image_w + 2 * g.pad_w;
    std::vector<double> out(static_cast<std::size_t>(g.channels * ph * pw), 0.0);
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (std::int64_t y = 0; y < g.image_h; ++y) {
            const double* src = image + (c * g.image_h + y) * g.image_w;
            std::copy(src, src + g.image_w, out.data() + (c * ph + y + g.pad_h) * pw + g.pad_w);
        }
    }
    return out;
}

/// Stride-1 convolution by shifted row updates. Used when there are too few
/// output channels for im2col + GEMM to pay off.
inline void direct_conv(const double* padded, const double* weight, std::int64_t cout, const ConvGeometry& g,
                        double* out) {
    const std::int64_t pw = g.image_w + 2 * g.pad_w, ph = g.image_h + 2 * g.pad_h;
    for (std::int64_t co = 0; co < cout; ++co) {
        double* o = out + co * g.grid_h * g.grid_w;
        for (std::int64_t ci = 0; ci < g.channels; ++ci) {
            for (std::int64_t i = 0; i < g.kernel_h; ++i) {
                for (std::int64_t j = 0; j < g.kernel_w; ++j) {
                    const double wv = weight[((co * g.channels + ci) * g.kernel_h + i) * g.kernel_w + j];
                    for (std::int64_t y = 0; y < g.grid_h; ++y) {
                        const double* src = padded + (ci * ph + y + i) * pw + j;
                        double* dst = o + y * g.grid_w;
                        for (std::int64_t x = 0; x < g.grid_w; ++x) dst[x] += wv * src[x];
                    }
                }
            }
        }
    }
}

/// Backward of direct_conv: accumulates into the padded input gradient
/// and the weight gradient (either may be null).
inline void direct_conv_backward(const double* padded, const double* weight, const double* dy, std::int64_t cout,
                                 const ConvGeometry& g, double* dpadded, double* dweight) {
    const std::int64_t pw = g.image_w + 2 * g.pad_w, ph = g.image_h + 2 * g.pad_h;
    for (std::int64_t co = 0; co < cout; ++co) {
        const double* d = dy + co * g.grid_h * g.grid_w;
        for (std::int64_t ci = 0; ci < g.channels; ++ci) {
            for (std::int64_t i = 0; i < g.kernel_h; ++i) {
                for (std::int64_t j = 0; j < g.kernel_w; ++j) {
                    const std::int64_t widx = ((co * g.channels + ci) * g.kernel_h + i) * g.kernel_w + j;
                    const double wv = weight[widx];
                    double acc = 0.0;
                    for (std::int64_t y = 0; y < g.grid_h; ++y) {
                        const std::int64_t row = (ci * ph + y + i) * pw + j;
                        const double* drow = d + y * g.grid_w;
                        if (dweight != nullptr) {
                            const double* src = padded + row;
                            for (std::int64_t x = 0; x < g.grid_w; ++x) acc += drow[x] * src[x];
                        }
                        if (dpadded != nullptr) {
                            double* dst = dpadded + row;
                            for (std::int64_t x = 0; x < g.grid_w; ++x) dst[x] += wv * drow[x];
                        }
                    }
                    if (dweight != nullptr) dweight[widx] += acc;
                }
            }
        }
    }
}

/// Adds the interior of a padded gradient image into `image`.
inline void unpad_accumulate(const double* padded, const ConvGeometry& g, double* image) {
    const std::int64_t ph = g.image_h + 2 * g.pad_h, pw = g.image_w + 2 * g.pad_w;
    for (std::int64_t c = 0; c < g.channels; ++c) {
        for (std::int64_t y = 0; y < g.image_h; ++y) {
            const double* src = padded + (c * ph + y + g.pad_h) * pw + g.pad_w;
            double* dst = image + (c * g.image_h + y) * g.image_w;
            for (std::int64_t x = 0; x < g.image_w; ++x) dst[x] += src[x];
        }
    }
}

inline bool use_direct_conv(std::int64_t cout, const ConvGeometry& g) {
    return g.stride == 1 && cout <= 4;
}

inline void check_bias(const Tensor& bias, std::int64_t channels, const char* what) {
    if (!bias.defined()) return;
    if (bias.rank() != 1 || bias.dim(0) != channels) {
        throw ShapeError(std::string(what) + ": bias shape " + shape_str(bias.shape()) +
                         " does not match " + std::to_string(channels) + " output channels");
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

/// Cross-correlation of `input` [N,Cin,H,W] with `weight` [Cout,Cin,kH,kW].
/// Same padding zero-pads floor(k/2) per side (odd kernels only) and yields
/// ceil(H/stride); Valid padding yields (H-kH)/stride + 1. `bias` [Cout] may
/// be an undefined tensor.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     Padding padding, std::int64_t stride = 1) {
    detail::require_rank(input, 4, "conv2d input");
    detail::require_rank(weight, 4, "conv2d weight");
    if (stride < 1) throw ShapeError("conv2d: stride must be positive, got " + std::to_string(stride));
    const std::int64_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != cin) {
        throw ShapeError("conv2d: input " + shape_str(input.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
    }
    detail::check_bias(bias, cout, "conv2d");

    detail::ConvGeometry g{cin, h, w, kh, kw, stride, 0, 0, 0, 0};
    if (padding == Padding::Same) {
        if (kh % 2 == 0 || kw % 2 == 0) {
            throw ShapeError("conv2d: Same padding needs an odd kernel, got weight " + shape_str(weight.shape()));
        }
        g.pad_h = kh / 2;
        g.pad_w = kw / 2;
    } else if (h < kh || w < kw) {
        throw ShapeError("conv2d: Valid padding needs input " + shape_str(input.shape()) +
                         " at least as large as kernel " + shape_str(weight.shape()));
    }
    g.grid_h = (h + 2 * g.pad_h - kh) / stride + 1;
    g.grid_w = (w + 2 * g.pad_w - kw) / stride + 1;

    Tensor out(Shape{n, cout, g.grid_h, g.grid_w});
    const std::int64_t in_plane = cin * h * w;
    const std::int64_t out_plane = cout * g.cols();
    const bool direct = detail::use_direct_conv(cout, g);
    std::vector<double> cols(direct ? 0 : static_cast<std::size_t>(g.rows() * g.cols()));
    detail::ConstMatrixMap wmat(weight.data().data(), cout, g.rows());
    for (std::int64_t b = 0; b < n; ++b) {
        detail::MatrixMap o(out.data().data() + b * out_plane, cout, g.cols());
        if (direct) {
            const auto padded = detail::pad_image(input.data().data() + b * in_plane, g);
            detail::direct_conv(padded.data(), weight.data().data(), cout, g, o.data());
        } else {
            detail::im2col(input.data().data() + b * in_plane, g, cols.data());
            o.noalias() = wmat * detail::ConstMatrixMap(cols.data(), g.rows(), g.cols());
        }
        if (bias.defined()) {
            for (std::int64_t c = 0; c < cout; ++c) o.row(c).array() += bias[c];
        }
    }

    if (detail::should_record({&input, &weight, &bias})) {
        detail::record(out, {&input, &weight, &bias},
                       [input, weight, bias, g, n, cout, in_plane, out_plane](detail::TensorImpl& o) {
                           auto gin = detail::grad_sink(input);
                           auto gw = detail::grad_sink(weight);
                           auto gb = detail::grad_sink(bias);
                           const bool direct = detail::use_direct_conv(cout, g);
                           std::vector<double> cols(direct ? 0 : static_cast<std::size_t>(g.rows() * g.cols()));
                           detail::ConstMatrixMap wmat(weight.data().data(), cout, g.rows());
                           for (std::int64_t b = 0; b < n; ++b) {
                               detail::ConstMatrixMap dy(o.grad.data() + b * out_plane, cout, g.cols());
                               if (!gb.empty()) {
                                   // Plain loop: Eigen's vectorized sum peels by alignment, which
                                   // would make the result depend on the buffer address.
                                   for (std::int64_t c = 0; c < cout; ++c) {
                                       const double* row = o.grad.data() + b * out_plane + c * g.cols();
                                       gb[c] += std::accumulate(row, row + g.cols(), 0.0);
                                   }
                               }
                               if (direct) {
                                   const auto padded = detail::pad_image(input.data().data() + b * in_plane, g);
                                   std::vector<double> dpad(gin.empty() ? 0 : padded.size(), 0.0);
                                   detail::direct_conv_backward(padded.data(), weight.data().data(), dy.data(), cout, g,
                                                                gin.empty() ? nullptr : dpad.data(),
                                                                gw.empty() ? nullptr : gw.data());
                                   if (!gin.empty()) detail::unpad_accumulate(dpad.data(), g, gin.data() + b * in_plane);
                                   continue;
                               }
                               if (!gw.empty()) {
                                   detail::im2col(input.data().data() + b * in_plane, g, cols.data());
                                   detail::MatrixMap(gw.data(), cout, g.rows()).noalias() +=
                                       dy * detail::ConstMatrixMap(cols.data(), g.rows(), g.cols()).transpose();
                               }
                               if (!gin.empty()) {
                                   detail::MatrixMap(cols.data(), g.rows(), g.cols()).noalias() =
                                       wmat.transpose() * dy;
                                   detail::col2im(cols.data(), g, gin.data() + b * in_plane);
                               }
                           }
                       });
    }
    return out;
}

inline Tensor conv2d(const Tensor& input, const Tensor& weight, Padding padding, std::int64_t stride = 1) {
    return conv2d(input, weight, Tensor{}, padding, stride);
}

/// Transposed convolution: the adjoint of conv2d with the same kernel,
/// stride and padding. `weight` is [Cin,Cout,kH,kW], which is exactly the
/// weight layout of the forward conv2d being transposed, so a conv layer's
/// weight can be reused for tied decoding.
///
/// Same: output is H*stride (padding floor((k-1)/2)). Valid: output is
/// (H-1)*stride + k, the full correlation. In both cases conv2d of the
/// output with the same settings maps back to H.
inline Tensor conv2d_transpose(const Tensor& input, const Tensor& weight, const Tensor& bias,
                               Padding padding, std::int64_t stride = 1) {
    detail::require_rank(input, 4, "conv2d_transpose input");
    detail::require_rank(weight, 4, "conv2d_transpose weight");
    if (stride < 1) {
        throw ShapeError("conv2d_transpose: stride must be positive, got " + std::to_string(stride));
    }
    const std::int64_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::int64_t cout = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(0) != cin) {
        throw ShapeError("conv2d_transpose: input " + shape_str(input.shape()) +
                         " incompatible with weight " + shape_str(weight.shape()));
    }
    detail::check_bias(bias, cout, "conv2d_transpose");

    // Geometry of the forward conv whose adjoint this is: the output here is
    // that conv's image, the input here is its grid.
    detail::ConvGeometry g{cout, 0, 0, kh, kw, stride, 0, 0, h, w};
    if (padding == Padding::Same) {
        g.pad_h = (kh - 1) / 2;
        g.pad_w = (kw - 1) / 2;
        g.image_h = h * stride;
        g.image_w = w * stride;
    } else {
        g.image_h = (h - 1) * stride + kh;
        g.image_w = (w - 1) * stride + kw;
    }

    Tensor out(Shape{n, cout, g.image_h, g.image_w});
    const std::int64_t in_plane = cin * h * w;
    const std::int64_t out_plane = cout * g.image_h * g.image_w;
    std::vector<double> cols(static_cast<std::size_t>(g.rows() * g.cols()));
    detail::ConstMatrixMap wmat(weight.data().data(), cin, g.rows());
    for (std::int64_t b = 0; b < n; ++b) {
        detail::MatrixMap(cols.data(), g.rows(), g.cols()).noalias() =
            wmat.transpose() * detail::ConstMatrixMap(input.data().data() + b * in_plane, cin, g.cols());
        double* dst = out.data().data() + b * out_plane;
        detail::col2im(cols.data(), g, dst);
        if (bias.defined()) {
            const std::int64_t plane = g.image_h * g.image_w;
            for (std::int64_t c = 0; c < cout; ++c) {
                std::for_each(dst + c * plane, dst + (c + 1) * plane, [v = bias[c]](double& x) { x += v; });
            }
        }
    }

    if (detail::should_record({&input, &weight, &bias})) {
        detail::record(out, {&input, &weight, &bias},
                       [input, weight, bias, g, n, cin, in_plane, out_plane](detail::TensorImpl& o) {
                           auto gin = detail::grad_sink(input);
                           auto gw = detail::grad_sink(weight);
                           auto gb = detail::grad_sink(bias);
                           const std::int64_t plane = g.image_h * g.image_w;
                           std::vector<double> cols(static_cast<std::size_t>(g.rows() * g.cols()));
                           detail::ConstMatrixMap wmat(weight.data().data(), cin, g.rows());
                           for (std::int64_t b = 0; b < n; ++b) {
                               const double* dy = o.grad.data() + b * out_plane;
                               if (!gb.empty()) {
                                   for (std::int64_t c = 0; c < g.channels; ++c) {
                                       const double* p = dy + c * plane;
                                       gb[c] += std::accumulate(p, p + plane, 0.0);
                                   }
                               }
                               if (gin.empty() && gw.empty()) continue;
                               detail::im2col(dy, g, cols.data());
                               detail::ConstMatrixMap dcols(cols.data(), g.rows(), g.cols());
                               if (!gin.empty()) {
                                   detail::MatrixMap(gin.data() + b * in_plane, cin, g.cols()).noalias() +=
                                       wmat * dcols;
                               }
                               if (!gw.empty()) {
                                   detail::MatrixMap(gw.data(), cin, g.rows()).noalias() +=
                                       detail::ConstMatrixMap(input.data().data() + b * in_plane, cin, g.cols()) *
                                       dcols.transpose();
                               }
                           }
                       });
    }
    return out;
}

inline Tensor conv2d_transpose(const Tensor& input, const Tensor& weight, Padding padding,
                               std::int64_t stride = 1) {
    return conv2d_transpose(input, weight, Tensor{}, padding, stride);
}

// ---------------------------------------------------------------------------
// Broadcast additions
// ---------------------------------------------------------------------------

/// out(n,c,y,x) = in(n,c,y,x) + map(y,x). The map's gradient is the upstream
/// gradient summed over batch and channels.
inline Tensor add_location_map(const Tensor& input, const Tensor& map) {
    detail::require_rank(input, 4, "add_location_map input");
    detail::require_rank(map, 2, "add_location_map map");
    if (map.dim(0) != input.dim(2) || map.dim(1) != input.dim(3)) {
        throw ShapeError("add_location_map: map " + shape_str(map.shape()) +
                         " does not match spatial shape of input " + shape_str(input.shape()));
    }
    const std::int64_t planes = input.dim(0) * input.dim(1);
    const std::int64_t hw = map.dim(0) * map.dim(1);
    Tensor out(input.shape());
    for (std::int64_t p = 0; p < planes; ++p) {
        const double* src = input.data().data() + p * hw;
        double* dst = out.data().data() + p * hw;
        for (std::int64_t i = 0; i < hw; ++i) dst[i] = src[i] + map[i];
    }
    if (detail::should_record({&input, &map})) {
        detail::record(out, {&input, &map}, [input, map, planes, hw](detail::TensorImpl& o) {
            auto gin = detail::grad_sink(input);
            auto gmap = detail::grad_sink(map);
            for (std::int64_t p = 0; p < planes; ++p) {
                const double* dy = o.grad.data() + p * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                    if (!gin.empty()) gin[p * hw + i] += dy[i];
                    if (!gmap.empty()) gmap[i] += dy[i];
                }
            }
        });
    }
    return out;
}

/// out(n,c,y,x) = in(n,c,y,x) + bias(c).
inline Tensor add_channel_bias(const Tensor& input, const Tensor& bias) {
    detail::require_rank(input, 4, "add_channel_bias input");
    detail::check_bias(bias, input.dim(1), "add_channel_bias");
    const std::int64_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    Tensor out(input.shape());
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t k = 0; k < c; ++k) {
            const std::int64_t base = (b * c + k) * hw;
            for (std::int64_t i = 0; i < hw; ++i) out[base + i] = input[base + i] + bias[k];
        }
    }
    if (detail::should_record({&input, &bias})) {
        detail::record(out, {&input, &bias}, [input, bias, n, c, hw](detail::TensorImpl& o) {
            auto gin = detail::grad_sink(input);
            auto gb = detail::grad_sink(bias);
            for (std::int64_t b = 0; b < n; ++b) {
                for (std::int64_t k = 0; k < c; ++k) {
                    const std::int64_t base = (b * c + k) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) {
                        if (!gin.empty()) gin[base + i] += o.grad[base + i];
                        if (!gb.empty()) gb[k] += o.grad[base + i];
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

namespace detail {

// Eigen evaluates exp with a packet polynomial but falls back to std::exp
// for the unaligned head and the tail, so the same value could round
// differently depending on where it sits in memory. Working on fixed-size,
// aligned blocks sends every element through the packet path.
using Block = Eigen::Array<double, 64, 1>;

template <typename F>
void blockwise(std::span<const double> x, std::span<double> y, F&& f) {
    Block in, out;
    for (std::size_t start = 0; start < x.size(); start += Block::SizeAtCompileTime) {
        const std::size_t n = std::min<std::size_t>(Block::SizeAtCompileTime, x.size() - start);
        in.setZero();
        std::copy_n(x.data() + start, n, in.data());
        f(in, out);
        std::copy_n(out.data(), n, y.data() + start);
    }
}

// Vectorized through Eigen's exp; std::tanh/std::exp per element cost
// several times more and dominate the recurrent step otherwise.
inline void sigmoid_array(std::span<const double> x, std::span<double> y) {
    blockwise(x, y, [](const Block& in, Block& out) { out = 1.0 / (1.0 + (-in).exp()); });
}

/// tanh(|x|) = (1 - e^{-2|x|}) / (1 + e^{-2|x|}), with a short odd series
/// below |x| = 1/64 where the subtraction would lose digits.
inline void tanh_array(std::span<const double> x, std::span<double> y) {
    blockwise(x, y, [](const Block& in, Block& out) {
        const Block a = in.abs();
        const Block t = (-2.0 * a).exp();
        const Block big = (1.0 - t) / (1.0 + t);
        const Block a2 = a * a;
        const Block small = a * (1.0 + a2 * (-1.0 / 3.0 + a2 * (2.0 / 15.0 + a2 * (-17.0 / 315.0))));
        out = (a < 1.0 / 64.0).select(small, big) * in.sign();
    });
}

} // namespace detail

inline Tensor activate(const Tensor& input, Activation kind) {
    if (kind == Activation::Identity) return input;
    Tensor out(input.shape());
    const auto x = input.data();
    auto y = out.data();
    switch (kind) {
    case Activation::Sigmoid:
        detail::sigmoid_array(x, y);
        break;
    case Activation::Tanh:
        detail::tanh_array(x, y);
        break;
    case Activation::ReLU:
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
        break;
    case Activation::Identity:
        break;
    }
    if (detail::should_record({&input})) {
        detail::record(out, {&input}, [input, kind](detail::TensorImpl& o) {
            auto gin = detail::grad_sink(input);
            const auto& yv = o.data;
            const auto& xv = input.values();
            for (std::size_t i = 0; i < gin.size(); ++i) {
                double d = 0.0;
                switch (kind) {
                case Activation::Sigmoid: d = yv[i] * (1.0 - yv[i]); break;
                case Activation::Tanh: d = 1.0 - yv[i] * yv[i]; break;
                case Activation::ReLU: d = xv[i] > 0.0 ? 1.0 : 0.0; break;
                case Activation::Identity: d = 1.0; break;
                }
                gin[i] += d * o.grad[i];
            }
        });
    }
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
    if (detail::should_record({&a, &b})) {
        detail::record(out, {&a, &b}, [a, b](detail::TensorImpl& o) {
            auto ga = detail::grad_sink(a);
            auto gb = detail::grad_sink(b);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += o.grad[i];
        });
    }
    return out;
}

/// Hadamard product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
    if (detail::should_record({&a, &b})) {
        detail::record(out, {&a, &b}, [a, b](detail::TensorImpl& o) {
            auto ga = detail::grad_sink(a);
            auto gb = detail::grad_sink(b);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * b[i];
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += o.grad[i] * a[i];
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, double factor) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * factor;
    if (detail::should_record({&a})) {
        detail::record(out, {&a}, [a, factor](detail::TensorImpl& o) {
            auto ga = detail::grad_sink(a);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * factor;
        });
    }
    return out;
}

/// Sum of all elements as a scalar tensor.
inline Tensor sum(const Tensor& a) {
    Tensor out = Tensor::scalar(std::accumulate(a.data().begin(), a.data().end(), 0.0));
    if (detail::should_record({&a})) {
        detail::record(out, {&a}, [a](detail::TensorImpl& o) {
            auto ga = detail::grad_sink(a);
            for (double& g : ga) g += o.grad[0];
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Channel plumbing
// ---------------------------------------------------------------------------

inline Tensor concat_channels(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: nothing to concatenate");
    for (const auto& p : parts) detail::require_rank(p, 4, "concat_channels part");
    const std::int64_t n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
    std::int64_t channels = 0;
    for (const auto& p : parts) {
        if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
            throw ShapeError("concat_channels: " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
        }
        channels += p.dim(1);
    }
    const std::int64_t hw = h * w;
    Tensor out(Shape{n, channels, h, w});
    for (std::int64_t b = 0; b < n; ++b) {
        double* dst = out.data().data() + b * channels * hw;
        for (const auto& p : parts) {
            const double* src = p.data().data() + b * p.dim(1) * hw;
            dst = std::copy(src, src + p.dim(1) * hw, dst);
        }
    }
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (any && Graph::active() != nullptr) {
        out.set_requires_grad(true);
        Graph::Entry entry;
        for (const auto& p : parts) entry.operands.push_back(p.handle());
        entry.output = out.handle();
        entry.backward = [parts, n, channels, hw, o = out.impl()]() {
            for (std::int64_t b = 0; b < n; ++b) {
                const double* src = o->grad.data() + b * channels * hw;
                for (const auto& p : parts) {
                    const std::int64_t len = p.dim(1) * hw;
                    auto g = detail::grad_sink(p);
                    if (!g.empty()) {
                        double* dst = g.data() + b * len;
                        for (std::int64_t i = 0; i < len; ++i) dst[i] += src[i];
                    }
                    src += len;
                }
            }
        };
        Graph::active()->record(std::move(entry));
    }
    return out;
}

/// Channels [begin, begin+count) of a 4-D tensor.
inline Tensor slice_channels(const Tensor& input, std::int64_t begin, std::int64_t count) {
    detail::require_rank(input, 4, "slice_channels input");
    const std::int64_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    if (begin < 0 || count < 0 || begin + count > c) {
        throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," +
                         std::to_string(begin + count) + ") outside " + shape_str(input.shape()));
    }
    Tensor out(Shape{n, count, input.dim(2), input.dim(3)});
    for (std::int64_t b = 0; b < n; ++b) {
        const double* src = input.data().data() + (b * c + begin) * hw;
        std::copy(src, src + count * hw, out.data().data() + b * count * hw);
    }
    if (detail::should_record({&input})) {
        detail::record(out, {&input}, [input, n, c, hw, begin, count](detail::TensorImpl& o) {
            auto g = detail::grad_sink(input);
            for (std::int64_t b = 0; b < n; ++b) {
                double* dst = g.data() + (b * c + begin) * hw;
                const double* src = o.grad.data() + b * count * hw;
                for (std::int64_t i = 0; i < count * hw; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Binary cross-entropy summed over every element of a sample and averaged
/// over the leading (batch) axis. Predictions are clamped to
/// [kBceEpsilon, 1 - kBceEpsilon]; clamped elements pass no gradient.
inline Tensor bce_loss(const Tensor& pred, const Tensor& target) {
    detail::require_same_shape(pred, target, "bce_loss");
    if (pred.rank() == 0) throw ShapeError("bce_loss: prediction needs a batch axis");
    const double batch = static_cast<double>(pred.dim(0));
    double total = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double p = std::clamp(pred[i], kBceEpsilon, 1.0 - kBceEpsilon);
        const double t = target[i];
        total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    Tensor out = Tensor::scalar(total / batch);
    if (detail::should_record({&pred})) {
        detail::record(out, {&pred}, [pred, target, batch](detail::TensorImpl& o) {
            auto g = detail::grad_sink(pred);
            const double upstream = o.grad[0] / batch;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double raw = pred[i];
                if (raw < kBceEpsilon || raw > 1.0 - kBceEpsilon) continue;
                const double t = target[i];
                g[i] += upstream * ((1.0 - t) / (1.0 - raw) - t / raw);
            }
        });
    }
    return out;
}

} // namespace locdep
