#pragma once

#include "locdep/location_conv.hpp"

#include <utility>

namespace locdep {

struct GaeState {
    Tensor mapping; // [N,Cm,Hm,Wm], sigmoid activations
};

/// Convolutional gated autoencoder with tied decoding weights.
///
///   u = U(x_t), v = V(x_t1)                  Valid-padded factor convs
///   m = sigmoid(M(u * v))                    mapping units
///   x_t2 = sigmoid(V^T(M^T(m) * U(x_t1)) + b) prediction of the next frame
///
/// V^T is the adjoint of V and yields one channel per V input channel; only
/// the frame channel is used as the prediction. Under augmented-input
/// variants both frames are augmented before the factor convolutions, and
/// under LDC/LDCAI both factor convolutions carry location bias maps.
struct GatedAutoencoder {
    LocationConv factor_u;
    LocationConv factor_v;
    ConvParams mapping;
    Tensor output_bias; // [1]
    Variant variant = Variant::Base;

    struct Geometry {
        std::int64_t height, width;
        std::int64_t factors, factor_kernel;
        std::int64_t mapping_units, mapping_kernel, mapping_stride;
    };

    static GatedAutoencoder init(const Geometry& g, Variant variant, SplitMix64& rng) {
        const std::int64_t fh = g.height - g.factor_kernel + 1;
        const std::int64_t fw = g.width - g.factor_kernel + 1;
        if (fh < g.mapping_kernel || fw < g.mapping_kernel || (fh - g.mapping_kernel) % g.mapping_stride != 0 ||
            (fw - g.mapping_kernel) % g.mapping_stride != 0) {
            throw ShapeError("gated autoencoder: factor maps of " + std::to_string(fh) + "x" + std::to_string(fw) +
                             " cannot be tiled exactly by a mapping kernel of " + std::to_string(g.mapping_kernel) +
                             " with stride " + std::to_string(g.mapping_stride));
        }
        const std::int64_t cin = augments_input(variant) ? 1 + kAugmentedChannels : 1;
        GatedAutoencoder gae;
        gae.variant = variant;
        gae.factor_u = LocationConv::make(cin, g.factors, g.factor_kernel, Padding::Valid, 1, Activation::Identity,
                                          variant, g.height, g.width, rng);
        gae.factor_v = LocationConv::make(cin, g.factors, g.factor_kernel, Padding::Valid, 1, Activation::Identity,
                                          variant, g.height, g.width, rng);
        gae.mapping = ConvParams::init(g.factors, g.mapping_units, g.mapping_kernel, Padding::Valid, g.mapping_stride, rng);
        gae.output_bias = Tensor::zeros(Shape{1}, true);
        return gae;
    }

    Tensor prepare(const Tensor& frame, const Tensor& mask) const {
        return augments_input(variant) ? augment_input(frame, mask) : frame;
    }

    /// Infers the transformation from x_t to x_t1 and applies it to x_t1.
    /// Frames are [N,1,H,W]; `mask` is only read by augmented-input variants.
    std::pair<GaeState, Tensor> step(const Tensor& x_t, const Tensor& x_t1, const Tensor& mask = Tensor{}) const {
        detail::require_same_shape(x_t, x_t1, "gae_step frames");
        const Tensor a_t = prepare(x_t, mask);
        const Tensor a_t1 = prepare(x_t1, mask);
        const Tensor u = factor_u.forward(a_t);
        const Tensor v = factor_v.forward(a_t1);
        Tensor m = activate(conv_forward(mul(u, v), mapping), Activation::Sigmoid);
        const Tensor back = conv2d_transpose(m, mapping.weight, Padding::Valid, mapping.stride);
        const Tensor transformed = mul(back, factor_u.forward(a_t1));
        const Tensor decoded = conv2d_transpose(transformed, factor_v.conv.weight, Padding::Valid, 1);
        Tensor prediction =
            activate(add_channel_bias(slice_channels(decoded, 0, 1), output_bias), Activation::Sigmoid);
        return {GaeState{std::move(m)}, std::move(prediction)};
    }

    void append(std::vector<NamedParameter>& out) const {
        factor_u.append(out, "gae.u");
        factor_v.append(out, "gae.v");
        mapping.append(out, "gae.m");
        out.push_back({"gae.out_bias", output_bias});
    }
};

inline std::pair<GaeState, Tensor> gae_step(const Tensor& x_t, const Tensor& x_t1, const GatedAutoencoder& gae,
                                            const Tensor& mask = Tensor{}) {
    return gae.step(x_t, x_t1, mask);
}

} // namespace locdep
