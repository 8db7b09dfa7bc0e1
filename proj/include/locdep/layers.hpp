#pragma once

#include "locdep/ops.hpp"
#include "locdep/rng.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace locdep {

enum class Axis { X, Y };

/// A learnable tensor together with the name it is saved under.
struct NamedParameter {
    std::string name;
    Tensor tensor;
};

inline std::int64_t count_parameters(const std::vector<NamedParameter>& params) {
    std::int64_t total = 0;
    for (const auto& p : params) total += static_cast<std::int64_t>(p.tensor.numel());
    return total;
}

// ---------------------------------------------------------------------------
// Location encodings and input augmentation
// ---------------------------------------------------------------------------

/// Linear ramp from 0 to 1 (inclusive) along `axis`, constant along the
/// other axis. Only the ramp axis needs at least two samples.
inline Tensor make_location_gradient(std::int64_t height, std::int64_t width, Axis axis) {
    const std::int64_t ramp = axis == Axis::X ? width : height;
    if (height < 1 || width < 1 || ramp < 2) {
        throw ShapeError("make_location_gradient: ramp undefined for " + std::to_string(height) + "x" +
                         std::to_string(width) + " along " + (axis == Axis::X ? "x" : "y"));
    }
    Tensor out(Shape{height, width});
    const double denom = static_cast<double>(ramp - 1);
    for (std::int64_t y = 0; y < height; ++y) {
        for (std::int64_t x = 0; x < width; ++x) {
            out.at(y, x) = static_cast<double>(axis == Axis::X ? x : y) / denom;
        }
    }
    return out;
}

/// Fixed x/y ramps added inside a layer (never trained).
struct LocationEncodingMaps {
    Tensor lx;
    Tensor ly;

    static LocationEncodingMaps make(std::int64_t height, std::int64_t width) {
        return {make_location_gradient(height, width, Axis::X), make_location_gradient(height, width, Axis::Y)};
    }
};

/// The two learnable per-pixel bias surfaces of a location-dependent layer.
/// They enter the layer only through their sum; both are kept so the layer
/// has the reference parameter count.
struct LocationBiasMaps {
    Tensor w1;
    Tensor w2;

    static LocationBiasMaps zeros(std::int64_t height, std::int64_t width) {
        return {Tensor::zeros(Shape{height, width}, true), Tensor::zeros(Shape{height, width}, true)};
    }
};

namespace detail {

inline Tensor broadcast_plane(const Tensor& plane, std::int64_t batch) {
    const std::int64_t h = plane.dim(0), w = plane.dim(1);
    Tensor out(Shape{batch, 1, h, w});
    for (std::int64_t b = 0; b < batch; ++b) {
        std::copy(plane.data().begin(), plane.data().end(), out.data().begin() + b * h * w);
    }
    return out;
}

} // namespace detail

/// [frame, x-ramp, y-ramp, occlusion] along channels. `occlusion` is either a
/// shared [H,W] mask or a per-sample [N,1,H,W] mask with 1 on occluded
/// pixels. Only the frame channel carries gradients.
inline Tensor augment_input(const Tensor& frame, const Tensor& occlusion) {
    detail::require_rank(frame, 4, "augment_input frame");
    if (frame.dim(1) != 1) throw ShapeError("augment_input: expected one frame channel, got " + shape_str(frame.shape()));
    const std::int64_t n = frame.dim(0), h = frame.dim(2), w = frame.dim(3);
    Tensor mask;
    if (!occlusion.defined()) {
        throw ShapeError("augment_input: occlusion mask is undefined");
    }
    if (occlusion.rank() == 2 && occlusion.dim(0) == h && occlusion.dim(1) == w) {
        mask = detail::broadcast_plane(occlusion, n);
    } else if (occlusion.rank() == 4 && occlusion.shape() == Shape{n, 1, h, w}) {
        mask = occlusion;
    } else {
        throw ShapeError("augment_input: occlusion " +
                         (occlusion.defined() ? shape_str(occlusion.shape()) : std::string("<undefined>")) +
                         " does not match frame " + shape_str(frame.shape()));
    }
    return concat_channels({frame, detail::broadcast_plane(make_location_gradient(h, w, Axis::X), n),
                            detail::broadcast_plane(make_location_gradient(h, w, Axis::Y), n), mask});
}

/// Number of channels augment_input adds.
inline constexpr std::int64_t kAugmentedChannels = 3;

// ---------------------------------------------------------------------------
// Convolution layer parameters
// ---------------------------------------------------------------------------

struct ConvParams {
    Tensor weight; // [Cout, Cin, kH, kW]
    Tensor bias;   // [Cout]
    Padding padding = Padding::Same;
    std::int64_t stride = 1;

    std::int64_t out_channels() const { return weight.dim(0); }
    std::int64_t in_channels() const { return weight.dim(1); }
    std::int64_t kernel() const { return weight.dim(2); }

    /// Weights uniform in +-sqrt(1/fan_in), biases zero.
    static ConvParams init(std::int64_t cin, std::int64_t cout, std::int64_t kernel, Padding padding,
                           std::int64_t stride, SplitMix64& rng) {
        ConvParams p;
        p.weight = Tensor(Shape{cout, cin, kernel, kernel}, 0.0, true);
        const double bound = std::sqrt(1.0 / static_cast<double>(cin * kernel * kernel));
        for (double& v : p.weight.data()) v = rng.uniform(-bound, bound);
        p.bias = Tensor::zeros(Shape{cout}, true);
        p.padding = padding;
        p.stride = stride;
        return p;
    }

    void append(std::vector<NamedParameter>& out, const std::string& prefix) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

/// Spatial size a conv layer produces from an input of `extent`.
inline std::int64_t conv_output_extent(std::int64_t extent, std::int64_t kernel, Padding padding, std::int64_t stride) {
    const std::int64_t pad = padding == Padding::Same ? kernel / 2 : 0;
    return (extent + 2 * pad - kernel) / stride + 1;
}

inline Tensor conv_forward(const Tensor& input, const ConvParams& conv) {
    return conv2d(input, conv.weight, conv.bias, conv.padding, conv.stride);
}

// ---------------------------------------------------------------------------
// Location-dependent convolution
// ---------------------------------------------------------------------------

/// A( conv(input) + W1' + W2' ), bias maps broadcast over batch and channels.
inline Tensor ldc_forward(const Tensor& input, const ConvParams& conv, const LocationBiasMaps& maps,
                          Activation activation) {
    Tensor pre = conv_forward(input, conv);
    pre = add_location_map(pre, maps.w1);
    pre = add_location_map(pre, maps.w2);
    return activate(pre, activation);
}

/// A( conv(input) + (Lx + W1') + (Ly + W2') ).
inline Tensor ldcai_forward(const Tensor& input, const ConvParams& conv, const LocationBiasMaps& maps,
                            const LocationEncodingMaps& encodings, Activation activation) {
    detail::require_same_shape(encodings.lx, maps.w1, "ldcai_forward encodings");
    detail::require_same_shape(encodings.ly, maps.w2, "ldcai_forward encodings");
    Tensor pre = conv_forward(input, conv);
    pre = add_location_map(pre, add(encodings.lx, maps.w1));
    pre = add_location_map(pre, add(encodings.ly, maps.w2));
    return activate(pre, activation);
}

// ---------------------------------------------------------------------------
// ConvLSTM
// ---------------------------------------------------------------------------

struct ConvLstmState {
    Tensor hidden; // [N,Ch,H,W]
    Tensor cell;   // [N,Ch,H,W]
};

/// Convolutional LSTM cell without peepholes. One Same-padded convolution
/// over [x, hidden] produces the stacked input, forget, output and candidate
/// pre-activations.
struct ConvLstmCell {
    ConvParams gates; // [4*Ch, Cin+Ch, k, k]
    std::int64_t hidden_channels = 0;

    static ConvLstmCell init(std::int64_t input_channels, std::int64_t hidden_channels, std::int64_t kernel,
                             SplitMix64& rng) {
        return {ConvParams::init(input_channels + hidden_channels, 4 * hidden_channels, kernel, Padding::Same, 1, rng),
                hidden_channels};
    }

    ConvLstmState zero_state(std::int64_t batch, std::int64_t height, std::int64_t width) const {
        return {Tensor::zeros(Shape{batch, hidden_channels, height, width}),
                Tensor::zeros(Shape{batch, hidden_channels, height, width})};
    }

    std::pair<Tensor, ConvLstmState> step(const Tensor& x, const ConvLstmState& state) const {
        detail::require_same_shape(state.hidden, state.cell, "conv_lstm_step state");
        detail::require_rank(x, 4, "conv_lstm_step input");
        if (state.hidden.dim(0) != x.dim(0) || state.hidden.dim(1) != hidden_channels ||
            state.hidden.dim(2) != x.dim(2) || state.hidden.dim(3) != x.dim(3) ||
            x.dim(1) + hidden_channels != gates.in_channels()) {
            throw ShapeError("conv_lstm_step: input " + shape_str(x.shape()) + " and state " +
                             shape_str(state.hidden.shape()) + " do not fit gate weight " +
                             shape_str(gates.weight.shape()));
        }
        const Tensor pre = conv_forward(concat_channels({x, state.hidden}), gates);
        const std::int64_t ch = hidden_channels;
        const Tensor in_gate = activate(slice_channels(pre, 0, ch), Activation::Sigmoid);
        const Tensor forget_gate = activate(slice_channels(pre, ch, ch), Activation::Sigmoid);
        const Tensor out_gate = activate(slice_channels(pre, 2 * ch, ch), Activation::Sigmoid);
        const Tensor candidate = activate(slice_channels(pre, 3 * ch, ch), Activation::Tanh);
        Tensor cell = add(mul(forget_gate, state.cell), mul(in_gate, candidate));
        Tensor hidden = mul(out_gate, activate(cell, Activation::Tanh));
        return {hidden, ConvLstmState{hidden, cell}};
    }
};

inline std::pair<Tensor, ConvLstmState> conv_lstm_step(const Tensor& x, const ConvLstmState& state,
                                                       const ConvLstmCell& cell) {
    return cell.step(x, state);
}

} // namespace locdep
