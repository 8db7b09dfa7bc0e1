#pragma once

#include "locdep/layers.hpp"

#include <optional>
#include <string>
#include <string_view>

namespace locdep {

/// Which location-injection mechanism a model uses.
///   Base  - plain convolutions.
///   AI    - augmented input: x/y ramps and the occlusion mask as extra input channels.
///   LDC   - learnable location bias maps on the designated convolution.
///   LDCAI - bias maps plus fixed ramps inside the layer, on augmented input.
enum class Variant { Base, AI, LDC, LDCAI };

constexpr bool augments_input(Variant v) { return v == Variant::AI || v == Variant::LDCAI; }
constexpr bool has_bias_maps(Variant v) { return v == Variant::LDC || v == Variant::LDCAI; }
constexpr bool has_encodings(Variant v) { return v == Variant::LDCAI; }

inline std::string to_string(Variant v) {
    switch (v) {
    case Variant::Base: return "base";
    case Variant::AI: return "ai";
    case Variant::LDC: return "ldc";
    case Variant::LDCAI: return "ldcai";
    }
    return "base";
}

inline Variant parse_variant(std::string_view text) {
    if (text == "base") return Variant::Base;
    if (text == "ai") return Variant::AI;
    if (text == "ldc") return Variant::LDC;
    if (text == "ldcai") return Variant::LDCAI;
    throw std::invalid_argument("unknown variant '" + std::string(text) + "' (expected base|ai|ldc|ldcai)");
}

/// A convolution that becomes location dependent according to a variant:
/// plain conv + activation, ldc_forward, or ldcai_forward.
struct LocationConv {
    ConvParams conv;
    std::optional<LocationBiasMaps> maps;
    std::optional<LocationEncodingMaps> encodings;
    Activation activation = Activation::Identity;

    /// `in_h` x `in_w` is the spatial size of the layer's input; the bias
    /// maps take the size of its output.
    static LocationConv make(std::int64_t cin, std::int64_t cout, std::int64_t kernel, Padding padding,
                             std::int64_t stride, Activation activation, Variant variant, std::int64_t in_h,
                             std::int64_t in_w, SplitMix64& rng) {
        LocationConv layer;
        layer.conv = ConvParams::init(cin, cout, kernel, padding, stride, rng);
        layer.activation = activation;
        const std::int64_t out_h = conv_output_extent(in_h, kernel, padding, stride);
        const std::int64_t out_w = conv_output_extent(in_w, kernel, padding, stride);
        if (has_bias_maps(variant)) layer.maps = LocationBiasMaps::zeros(out_h, out_w);
        if (has_encodings(variant)) layer.encodings = LocationEncodingMaps::make(out_h, out_w);
        return layer;
    }

    Tensor forward(const Tensor& input) const {
        if (maps && encodings) return ldcai_forward(input, conv, *maps, *encodings, activation);
        if (maps) return ldc_forward(input, conv, *maps, activation);
        return activate(conv_forward(input, conv), activation);
    }

    void append(std::vector<NamedParameter>& out, const std::string& prefix) const {
        conv.append(out, prefix);
        if (maps) {
            out.push_back({prefix + ".w1", maps->w1});
            out.push_back({prefix + ".w2", maps->w2});
        }
    }
};

} // namespace locdep
