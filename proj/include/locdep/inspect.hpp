#pragma once

// Image dumps of learned maps and activations.

#include "locdep/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <span>
#include <string>
#include <vector>

namespace locdep {

struct MapStats {
    double mean = 0.0, stddev = 0.0, min = 0.0, max = 0.0;
};

inline MapStats map_stats(std::span<const double> v) {
    MapStats s;
    if (v.empty()) return s;
    s.min = s.max = v[0];
    double sum = 0.0;
    for (double x : v) {
        sum += x;
        s.min = std::min(s.min, x);
        s.max = std::max(s.max, x);
    }
    s.mean = sum / static_cast<double>(v.size());
    double sq = 0.0;
    for (double x : v) sq += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(v.size()));
    return s;
}

/// Symmetric 8-bit encoding: pixel = 128 + round(127 * v / scale) with
/// scale = max |v|, so zero is mid-gray and the sign survives. An all-zero
/// map has scale 0 and encodes as uniform 128.
struct EncodedImage {
    std::vector<std::uint8_t> pixels;
    double scale = 0.0;
};

inline EncodedImage encode_symmetric(std::span<const double> v) {
    EncodedImage img;
    for (double x : v) img.scale = std::max(img.scale, std::abs(x));
    img.pixels.reserve(v.size());
    for (double x : v) {
        const double p = img.scale > 0.0 ? 128.0 + std::round(127.0 * x / img.scale) : 128.0;
        img.pixels.push_back(static_cast<std::uint8_t>(p));
    }
    return img;
}

inline double decode_symmetric(std::uint8_t pixel, double scale) {
    return (static_cast<double>(pixel) - 128.0) / 127.0 * scale;
}

/// Writes `name`.pgm and `name`.scale.txt under `dir` for a height x width
/// map. Returns the statistics of the raw values.
inline MapStats dump_map(const std::filesystem::path& dir, const std::string& name, std::int64_t height,
                         std::int64_t width, std::span<const double> values) {
    const EncodedImage img = encode_symmetric(values);
    write_pgm(dir / (name + ".pgm"), width, height, img.pixels.data());
    const MapStats st = map_stats(values);
    std::ofstream side(dir / (name + ".scale.txt"));
    side << std::setprecision(17) << "scale " << img.scale << "\nzero 128\n"
         << "# value = (pixel - 128) / 127 * scale\n"
         << "mean " << st.mean << "\nstddev " << st.stddev << "\nmin " << st.min << "\nmax " << st.max << '\n';
    if (!side) throw FormatError("cannot write " + (dir / (name + ".scale.txt")).string());
    return st;
}

/// Frame in [0,1] to 8-bit gray, no normalization.
inline std::vector<std::uint8_t> to_gray(std::span<const double> v) {
    std::vector<std::uint8_t> out;
    out.reserve(v.size());
    for (double x : v) out.push_back(static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(x, 0.0, 1.0))));
    return out;
}

struct NamedMap {
    std::string name;
    Tensor map; // [H,W]
};

/// The learnable location-bias maps of a model, in declaration order.
inline std::vector<NamedMap> bias_maps(const AnyModel& model) {
    std::vector<NamedMap> out;
    auto add = [&](const std::string& prefix, const LocationConv& layer) {
        if (!layer.maps) return;
        out.push_back({prefix + ".w1", layer.maps->w1});
        out.push_back({prefix + ".w2", layer.maps->w2});
    };
    if (const auto* vln = std::get_if<VlnModel>(&model)) {
        add("conv1", vln->conv1());
    } else {
        const auto& pgp = std::get<ConvPgpModel>(model);
        add("gae.u", pgp.gae().factor_u);
        add("gae.v", pgp.gae().factor_v);
    }
    return out;
}

} // namespace locdep
