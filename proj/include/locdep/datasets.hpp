#pragma once

#include "locdep/models.hpp"
#include "locdep/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace locdep {

/// Malformed or unreadable data files.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Digit sources
// ---------------------------------------------------------------------------

/// A stack of equally sized grayscale images.
struct ImageSet {
    std::int64_t count = 0;
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<std::uint8_t> pixels; // count * rows * cols

    const std::uint8_t* image(std::int64_t i) const { return pixels.data() + i * rows * cols; }
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

} // namespace detail

/// Reads an MNIST image file (IDX, big-endian, magic 0x00000803, three dims).
inline ImageSet load_mnist_idx(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    if (bytes.size() < 16) {
        throw FormatError(path.string() + ": truncated IDX header (" + std::to_string(bytes.size()) + " bytes)");
    }
    const std::uint32_t magic = detail::read_be32(bytes, 0);
    if (magic != kIdxImageMagic) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "magic 0x%08x, expected 0x%08x", magic, kIdxImageMagic);
        throw FormatError(path.string() + ": not an IDX image file (" + buf + ")");
    }
    ImageSet set;
    set.count = detail::read_be32(bytes, 4);
    set.rows = detail::read_be32(bytes, 8);
    set.cols = detail::read_be32(bytes, 12);
    const std::size_t expected = 16 + static_cast<std::size_t>(set.count * set.rows * set.cols);
    if (bytes.size() < expected) {
        throw FormatError(path.string() + ": truncated, " + std::to_string(bytes.size()) + " bytes for " +
                          std::to_string(set.count) + " images needing " + std::to_string(expected));
    }
    set.pixels.assign(bytes.begin() + 16, bytes.begin() + static_cast<std::ptrdiff_t>(expected));
    return set;
}

/// Reads an MNIST label file (IDX, magic 0x00000801, one dim).
inline std::vector<std::uint8_t> load_mnist_labels(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    if (bytes.size() < 8) throw FormatError(path.string() + ": truncated IDX label header");
    if (detail::read_be32(bytes, 0) != kIdxLabelMagic) throw FormatError(path.string() + ": not an IDX label file");
    const std::size_t count = detail::read_be32(bytes, 4);
    if (bytes.size() < 8 + count) throw FormatError(path.string() + ": truncated label data");
    return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count)};
}

namespace detail {

struct Point {
    double x, y;
};

inline std::vector<std::vector<Point>> ellipse(double cx, double cy, double rx, double ry, int segments = 20) {
    std::vector<Point> pts;
    for (int i = 0; i <= segments; ++i) {
        const double a = 2.0 * std::numbers::pi * i / segments;
        pts.push_back({cx + rx * std::sin(a), cy - ry * std::cos(a)});
    }
    return {pts};
}

/// Stroke skeletons of the ten digits in a unit box (y down).
inline std::vector<std::vector<Point>> glyph(int digit) {
    switch (digit) {
    case 0: return ellipse(0.5, 0.5, 0.28, 0.4);
    case 1: return {{{0.35, 0.25}, {0.52, 0.1}, {0.52, 0.9}}};
    case 2: return {{{0.2, 0.3}, {0.35, 0.12}, {0.65, 0.12}, {0.8, 0.3}, {0.75, 0.45}, {0.2, 0.9}, {0.82, 0.9}}};
    case 3: return {{{0.2, 0.15}, {0.75, 0.15}, {0.45, 0.45}, {0.75, 0.6}, {0.7, 0.85}, {0.45, 0.92}, {0.2, 0.8}}};
    case 4: return {{{0.65, 0.9}, {0.65, 0.1}, {0.15, 0.65}, {0.85, 0.65}}};
    case 5:
        return {{{0.8, 0.1}, {0.25, 0.1}, {0.22, 0.45}, {0.6, 0.4}, {0.8, 0.6}, {0.7, 0.85}, {0.45, 0.92}, {0.2, 0.8}}};
    case 6:
        return {{{0.7, 0.1}, {0.35, 0.35}, {0.22, 0.65}, {0.35, 0.9}, {0.65, 0.9}, {0.78, 0.7}, {0.65, 0.5},
                 {0.35, 0.5}, {0.22, 0.65}}};
    case 7: return {{{0.2, 0.1}, {0.8, 0.1}, {0.4, 0.9}}};
    case 8: {
        auto top = ellipse(0.5, 0.3, 0.2, 0.18);
        auto bottom = ellipse(0.5, 0.7, 0.25, 0.2);
        top.push_back(bottom.front());
        return top;
    }
    default: {
        auto loop = ellipse(0.5, 0.33, 0.22, 0.2);
        loop.push_back({{0.72, 0.35}, {0.6, 0.9}});
        return loop;
    }
    }
}

inline double segment_distance(Point p, Point a, Point b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

} // namespace detail

/// Procedurally drawn 28x28 handwritten-style digits, for environments
/// without the MNIST files. Each image is a random digit class rendered
/// from a stroke skeleton with random scale, slant, offset and pen width,
/// placed like MNIST inside the central 20x20 box.
inline ImageSet synthetic_digits(std::int64_t count, std::uint64_t seed) {
    ImageSet set{count, 28, 28, std::vector<std::uint8_t>(static_cast<std::size_t>(count * 28 * 28), 0)};
    for (std::int64_t i = 0; i < count; ++i) {
        SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        const int digit = static_cast<int>(rng.below(10));
        const double scale = 20.0 * rng.uniform(0.85, 1.05);
        const double slant = rng.uniform(-0.25, 0.25);
        const double pen = rng.uniform(1.1, 1.9);
        const double ox = 14.0 + rng.uniform(-1.0, 1.0), oy = 14.0 + rng.uniform(-1.0, 1.0);
        auto strokes = detail::glyph(digit);
        for (auto& stroke : strokes) {
            for (auto& p : stroke) {
                const double ux = p.x - 0.5, uy = p.y - 0.5;
                p = {ox + scale * (ux - slant * uy), oy + scale * uy};
            }
        }
        std::uint8_t* img = set.pixels.data() + i * 28 * 28;
        for (int y = 0; y < 28; ++y) {
            for (int x = 0; x < 28; ++x) {
                const detail::Point c{x + 0.5, y + 0.5};
                double d = 1e9;
                for (const auto& stroke : strokes) {
                    for (std::size_t k = 0; k + 1 < stroke.size(); ++k) {
                        d = std::min(d, detail::segment_distance(c, stroke[k], stroke[k + 1]));
                    }
                }
                const double v = std::clamp(pen / 2.0 + 0.5 - d, 0.0, 1.0);
                img[y * 28 + x] = static_cast<std::uint8_t>(std::lround(255.0 * v));
            }
        }
    }
    return set;
}

/// Box-filter downsampling of every image by an integer factor.
inline ImageSet downsample(const ImageSet& set, std::int64_t factor) {
    if (factor == 1) return set;
    if (factor < 1 || set.rows % factor != 0 || set.cols % factor != 0) {
        throw std::invalid_argument("downsample: factor " + std::to_string(factor) + " does not divide " +
                                    std::to_string(set.rows) + "x" + std::to_string(set.cols));
    }
    ImageSet out{set.count, set.rows / factor, set.cols / factor, {}};
    out.pixels.resize(static_cast<std::size_t>(out.count * out.rows * out.cols));
    for (std::int64_t i = 0; i < set.count; ++i) {
        for (std::int64_t y = 0; y < out.rows; ++y) {
            for (std::int64_t x = 0; x < out.cols; ++x) {
                int acc = 0;
                for (std::int64_t dy = 0; dy < factor; ++dy) {
                    for (std::int64_t dx = 0; dx < factor; ++dx) {
                        acc += set.image(i)[(y * factor + dy) * set.cols + x * factor + dx];
                    }
                }
                out.pixels[static_cast<std::size_t>((i * out.rows + y) * out.cols + x)] =
                    static_cast<std::uint8_t>((acc + factor * factor / 2) / (factor * factor));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Motion and occlusion geometry
// ---------------------------------------------------------------------------

/// Top-left corner of the moving object's bounding box and its velocity, in
/// pixels and pixels per frame.
struct MotionState {
    double x = 0.0, y = 0.0;
    double vx = 0.0, vy = 0.0;

    double speed() const { return std::hypot(vx, vy); }
};

/// Invisible mirror lines `inset` pixels inside every border.
struct MirrorLineSpec {
    std::int64_t inset = 10;
};

/// Static occluding bars: vertical and horizontal bars of `bar_width`
/// pixels starting at `phase` and repeating every `spacing` pixels.
struct OcclusionGridSpec {
    std::int64_t spacing = 8;
    std::int64_t bar_width = 1;
    std::int64_t phase = 4;
};

namespace detail {

/// Advances one coordinate inside [lo, hi], folding any overshoot back.
inline void advance_axis(double& pos, double& vel, double lo, double hi) {
    pos += vel;
    while (pos < lo || pos > hi) {
        if (pos > hi) pos = 2.0 * hi - pos;
        else pos = 2.0 * lo - pos;
        vel = -vel;
    }
}

} // namespace detail

/// Moves an object of `extent` pixels one frame forward inside a
/// `frame_size` square. Whenever its bounding box would cross a mirror line
/// the matching velocity component flips and the overshoot is reflected.
inline MotionState step_motion(MotionState state, const MirrorLineSpec& mirrors, std::int64_t frame_size,
                               double extent) {
    const double lo = static_cast<double>(mirrors.inset);
    const double hi = static_cast<double>(frame_size - mirrors.inset) - extent;
    detail::advance_axis(state.x, state.vx, lo, hi);
    detail::advance_axis(state.y, state.vy, lo, hi);
    return state;
}

/// Occlusion mask (1 on bars) for a height x width frame.
inline std::vector<std::uint8_t> make_occlusion_mask(std::int64_t height, std::int64_t width,
                                                      const OcclusionGridSpec& grid) {
    if (grid.bar_width < 1 || grid.spacing <= grid.bar_width || grid.phase < 0) {
        throw std::invalid_argument("occlusion grid needs spacing > bar_width >= 1 and phase >= 0");
    }
    auto on_bar = [&](std::int64_t v) { return v >= grid.phase && (v - grid.phase) % grid.spacing < grid.bar_width; };
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(height * width), 0);
    for (std::int64_t y = 0; y < height; ++y) {
        for (std::int64_t x = 0; x < width; ++x) {
            mask[static_cast<std::size_t>(y * width + x)] = (on_bar(x) || on_bar(y)) ? 1 : 0;
        }
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Sequences
// ---------------------------------------------------------------------------

enum class DatasetKind : std::uint8_t { MovingMnist = 0, BouncingBall = 1 };

inline std::string to_string(DatasetKind kind) {
    return kind == DatasetKind::MovingMnist ? "moving-mnist" : "bouncing-ball";
}

inline DatasetKind parse_dataset_kind(const std::string& text) {
    if (text == "moving-mnist") return DatasetKind::MovingMnist;
    if (text == "bouncing-ball") return DatasetKind::BouncingBall;
    throw std::invalid_argument("unknown dataset '" + text + "' (expected moving-mnist|bouncing-ball)");
}

/// Generator-side record of how a sequence was produced. Not persisted.
struct SequenceMetadata {
    std::uint64_t seed = 0;
    std::int64_t source_index = -1;                  // digit index for Moving MNIST
    double extent = 0.0;                             // object bounding-box size in pixels
    std::vector<std::vector<MotionState>> trajectory; // [object][frame]
};

struct SequenceSample {
    std::int64_t frames = 0, height = 0, width = 0;
    std::vector<std::uint8_t> clean;    // frames * height * width
    std::vector<std::uint8_t> occluded; // clean with masked pixels zeroed
    std::vector<std::uint8_t> mask;     // height * width, 0/1
    SequenceMetadata metadata;

    std::int64_t plane() const { return height * width; }
    bool operator==(const SequenceSample& o) const {
        return frames == o.frames && height == o.height && width == o.width && clean == o.clean &&
               occluded == o.occluded && mask == o.mask;
    }
};

namespace detail {

inline void apply_occlusion(SequenceSample& s) {
    s.occluded = s.clean;
    for (std::int64_t t = 0; t < s.frames; ++t) {
        for (std::int64_t i = 0; i < s.plane(); ++i) {
            if (s.mask[static_cast<std::size_t>(i)] != 0) s.occluded[static_cast<std::size_t>(t * s.plane() + i)] = 0;
        }
    }
}

inline MotionState random_motion(SplitMix64& rng, double lo, double hi, double min_speed, double max_speed) {
    MotionState m;
    m.x = rng.uniform(lo, hi);
    m.y = rng.uniform(lo, hi);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double speed = rng.uniform(min_speed, max_speed);
    m.vx = speed * std::cos(angle);
    m.vy = speed * std::sin(angle);
    return m;
}

} // namespace detail

struct MovingMnistConfig {
    std::int64_t count = 1000;
    std::int64_t frames = 10;
    std::int64_t size = 64;
    OcclusionGridSpec grid{8, 1, 4};
    MirrorLineSpec mirrors{10};
    double min_speed = 1.0;
    double max_speed = 3.0;
    /// Integer factor by which source digits are shrunk (1 keeps 28x28).
    std::int64_t digit_downsample = 1;
};

/// Sequence `index` of an Occluded Moving MNIST set. `digits` must already
/// be at the size that will be pasted (see digit_downsample).
inline SequenceSample make_moving_mnist_sequence(std::uint64_t seed, std::int64_t index, const MovingMnistConfig& cfg,
                                                 const ImageSet& digits) {
    if (digits.count == 0) throw std::invalid_argument("moving mnist: no digits to draw from");
    const double extent = static_cast<double>(digits.rows);
    const double lo = static_cast<double>(cfg.mirrors.inset);
    const double hi = static_cast<double>(cfg.size - cfg.mirrors.inset) - extent;
    if (hi < lo || digits.rows != digits.cols) {
        throw std::invalid_argument("moving mnist: a " + std::to_string(digits.rows) + "px digit does not fit a " +
                                    std::to_string(cfg.size) + "px frame with mirror inset " +
                                    std::to_string(cfg.mirrors.inset));
    }
    SequenceSample s;
    s.frames = cfg.frames;
    s.height = s.width = cfg.size;
    s.metadata.seed = derive_seed(seed, static_cast<std::uint64_t>(index));
    s.metadata.extent = extent;
    SplitMix64 rng(s.metadata.seed);
    s.metadata.source_index = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(digits.count)));
    MotionState m = detail::random_motion(rng, lo, hi, cfg.min_speed, cfg.max_speed);

    s.clean.assign(static_cast<std::size_t>(s.frames * s.plane()), 0);
    s.metadata.trajectory.resize(1);
    const std::uint8_t* digit = digits.image(s.metadata.source_index);
    for (std::int64_t t = 0; t < s.frames; ++t) {
        if (t > 0) m = step_motion(m, cfg.mirrors, cfg.size, extent);
        s.metadata.trajectory[0].push_back(m);
        const auto left = static_cast<std::int64_t>(std::floor(m.x + 0.5));
        const auto top = static_cast<std::int64_t>(std::floor(m.y + 0.5));
        std::uint8_t* frame = s.clean.data() + t * s.plane();
        for (std::int64_t y = 0; y < digits.rows; ++y) {
            for (std::int64_t x = 0; x < digits.cols; ++x) {
                frame[(top + y) * s.width + left + x] = digit[y * digits.cols + x];
            }
        }
    }
    s.mask = make_occlusion_mask(s.height, s.width, cfg.grid);
    detail::apply_occlusion(s);
    return s;
}

inline std::vector<SequenceSample> gen_occluded_moving_mnist(std::uint64_t seed, const MovingMnistConfig& cfg,
                                                             const ImageSet& mnist) {
    const ImageSet digits = downsample(mnist, cfg.digit_downsample);
    std::vector<SequenceSample> out;
    out.reserve(static_cast<std::size_t>(cfg.count));
    for (std::int64_t i = 0; i < cfg.count; ++i) out.push_back(make_moving_mnist_sequence(seed, i, cfg, digits));
    return out;
}

struct BouncingBallConfig {
    std::int64_t count = 1000;
    std::int64_t frames = 10;
    std::int64_t size = 32;
    std::int64_t balls = 1;
    double radius = 4.0;
    OcclusionGridSpec grid{3, 1, 4};
    MirrorLineSpec mirrors{2};
    double min_speed = 1.0;
    double max_speed = 3.0;
};

/// Antialiased filled disc: coverage falls off linearly over one pixel at
/// the rim, and no pixel farther than radius + 0.5 from the centre is lit.
inline void draw_disc(std::uint8_t* frame, std::int64_t size, double cx, double cy, double radius) {
    const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(cx - radius - 1)));
    const auto x1 = std::min<std::int64_t>(size - 1, static_cast<std::int64_t>(std::ceil(cx + radius + 1)));
    const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(cy - radius - 1)));
    const auto y1 = std::min<std::int64_t>(size - 1, static_cast<std::int64_t>(std::ceil(cy + radius + 1)));
    for (std::int64_t y = y0; y <= y1; ++y) {
        for (std::int64_t x = x0; x <= x1; ++x) {
            const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
            const double cover = std::clamp(radius + 0.5 - d, 0.0, 1.0);
            auto& px = frame[y * size + x];
            px = std::max(px, static_cast<std::uint8_t>(std::lround(255.0 * cover)));
        }
    }
}

/// Sequence `index` of an Occluded Bouncing Ball set. Balls pass through
/// each other.
inline SequenceSample make_bouncing_ball_sequence(std::uint64_t seed, std::int64_t index, const BouncingBallConfig& cfg) {
    const double extent = 2.0 * cfg.radius;
    const double lo = static_cast<double>(cfg.mirrors.inset);
    const double hi = static_cast<double>(cfg.size - cfg.mirrors.inset) - extent;
    if (hi < lo) throw std::invalid_argument("bouncing ball: ball does not fit inside the mirror lines");
    SequenceSample s;
    s.frames = cfg.frames;
    s.height = s.width = cfg.size;
    s.metadata.seed = derive_seed(seed, static_cast<std::uint64_t>(index));
    s.metadata.extent = extent;
    SplitMix64 rng(s.metadata.seed);
    std::vector<MotionState> balls;
    for (std::int64_t b = 0; b < cfg.balls; ++b) {
        balls.push_back(detail::random_motion(rng, lo, hi, cfg.min_speed, cfg.max_speed));
    }
    s.clean.assign(static_cast<std::size_t>(s.frames * s.plane()), 0);
    s.metadata.trajectory.resize(static_cast<std::size_t>(cfg.balls));
    for (std::int64_t t = 0; t < s.frames; ++t) {
        std::uint8_t* frame = s.clean.data() + t * s.plane();
        for (std::size_t b = 0; b < balls.size(); ++b) {
            if (t > 0) balls[b] = step_motion(balls[b], cfg.mirrors, cfg.size, extent);
            s.metadata.trajectory[b].push_back(balls[b]);
            draw_disc(frame, cfg.size, balls[b].x + cfg.radius, balls[b].y + cfg.radius, cfg.radius);
        }
    }
    s.mask = make_occlusion_mask(s.height, s.width, cfg.grid);
    detail::apply_occlusion(s);
    return s;
}

inline std::vector<SequenceSample> gen_occluded_bouncing_ball(std::uint64_t seed, const BouncingBallConfig& cfg) {
    std::vector<SequenceSample> out;
    out.reserve(static_cast<std::size_t>(cfg.count));
    for (std::int64_t i = 0; i < cfg.count; ++i) out.push_back(make_bouncing_ball_sequence(seed, i, cfg));
    return out;
}

// ---------------------------------------------------------------------------
// Sequence container
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 8> kSequenceMagic{'O', 'M', 'M', 'V', '0', '0', '0', '1'};
inline constexpr std::size_t kSequenceHeaderBytes = 8 + 4 + 3 * 2 + 1;

struct SequenceFile {
    DatasetKind kind = DatasetKind::MovingMnist;
    std::vector<SequenceSample> samples;
};

inline std::size_t sequence_file_size(std::size_t count, std::int64_t frames, std::int64_t height, std::int64_t width) {
    return kSequenceHeaderBytes + count * static_cast<std::size_t>(2 * frames * height * width + height * width);
}

namespace detail {

inline void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_le(const std::vector<std::uint8_t>& in, std::size_t offset, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= std::uint64_t{in[offset + static_cast<std::size_t>(i)]} << (8 * i);
    return v;
}

} // namespace detail

/// Serializes sequences in the OMMV0001 container layout. All samples must
/// share one T x H x W geometry.
inline std::vector<std::uint8_t> encode_sequences(DatasetKind kind, const std::vector<SequenceSample>& samples) {
    const std::int64_t t = samples.empty() ? 0 : samples[0].frames;
    const std::int64_t h = samples.empty() ? 0 : samples[0].height;
    const std::int64_t w = samples.empty() ? 0 : samples[0].width;
    if (t > 0xFFFF || h > 0xFFFF || w > 0xFFFF || samples.size() > 0xFFFFFFFFu) {
        throw std::invalid_argument("sequence container: geometry exceeds field widths");
    }
    std::vector<std::uint8_t> out(kSequenceMagic.begin(), kSequenceMagic.end());
    out.reserve(sequence_file_size(samples.size(), t, h, w));
    detail::put_le(out, samples.size(), 4);
    detail::put_le(out, static_cast<std::uint64_t>(t), 2);
    detail::put_le(out, static_cast<std::uint64_t>(h), 2);
    detail::put_le(out, static_cast<std::uint64_t>(w), 2);
    out.push_back(static_cast<std::uint8_t>(kind));
    for (const auto& s : samples) {
        if (s.frames != t || s.height != h || s.width != w) {
            throw std::invalid_argument("sequence container: mixed sequence geometry");
        }
        out.insert(out.end(), s.clean.begin(), s.clean.end());
        out.insert(out.end(), s.occluded.begin(), s.occluded.end());
        out.insert(out.end(), s.mask.begin(), s.mask.end());
    }
    return out;
}

inline SequenceFile decode_sequences(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>") {
    if (bytes.size() < kSequenceHeaderBytes) throw FormatError(origin + ": truncated sequence header");
    if (!std::equal(kSequenceMagic.begin(), kSequenceMagic.end(), bytes.begin())) {
        throw FormatError(origin + ": bad magic, not an OMMV0001 sequence file");
    }
    const std::size_t count = detail::get_le(bytes, 8, 4);
    const auto t = static_cast<std::int64_t>(detail::get_le(bytes, 12, 2));
    const auto h = static_cast<std::int64_t>(detail::get_le(bytes, 14, 2));
    const auto w = static_cast<std::int64_t>(detail::get_le(bytes, 16, 2));
    const std::uint8_t kind = bytes[18];
    if (kind > 1) throw FormatError(origin + ": unknown dataset kind " + std::to_string(kind));
    const std::size_t expected = sequence_file_size(count, t, h, w);
    if (bytes.size() != expected) {
        throw FormatError(origin + ": " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(expected) + (bytes.size() < expected ? " (truncated)" : " (trailing data)"));
    }
    SequenceFile file;
    file.kind = static_cast<DatasetKind>(kind);
    std::size_t at = kSequenceHeaderBytes;
    const auto frames_bytes = static_cast<std::ptrdiff_t>(t * h * w);
    const auto mask_bytes = static_cast<std::ptrdiff_t>(h * w);
    for (std::size_t i = 0; i < count; ++i) {
        SequenceSample s;
        s.frames = t;
        s.height = h;
        s.width = w;
        auto it = bytes.begin() + static_cast<std::ptrdiff_t>(at);
        s.clean.assign(it, it + frames_bytes);
        s.occluded.assign(it + frames_bytes, it + 2 * frames_bytes);
        s.mask.assign(it + 2 * frames_bytes, it + 2 * frames_bytes + mask_bytes);
        if (std::any_of(s.mask.begin(), s.mask.end(), [](std::uint8_t v) { return v > 1; })) {
            throw FormatError(origin + ": sequence " + std::to_string(i) + " has a non-binary mask");
        }
        at += static_cast<std::size_t>(2 * frames_bytes + mask_bytes);
        file.samples.push_back(std::move(s));
    }
    return file;
}

inline void write_sequences(const std::filesystem::path& path, DatasetKind kind,
                            const std::vector<SequenceSample>& samples) {
    const auto bytes = encode_sequences(kind, samples);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + path.string());
}

inline SequenceFile read_sequences(const std::filesystem::path& path) {
    return decode_sequences(detail::read_file(path), path.string());
}

/// 64-bit FNV-1a digest, printed by gen-data for reproducibility checks.
inline std::uint64_t fnv1a64(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001B3ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Images and batches
// ---------------------------------------------------------------------------

inline void write_pgm(const std::filesystem::path& path, std::int64_t width, std::int64_t height,
                      const std::uint8_t* pixels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out << "P5\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels), static_cast<std::streamsize>(width * height));
}

/// Stacks samples[indices] into a batch scaled to [0,1]: occluded frames as
/// inputs, clean frames as targets.
inline SequenceBatch make_batch(const std::vector<SequenceSample>& samples, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
    const auto& first = samples.at(indices[0]);
    const std::int64_t n = static_cast<std::int64_t>(indices.size());
    const std::int64_t t = first.frames, h = first.height, w = first.width;
    SequenceBatch batch{Tensor(Shape{n, t, 1, h, w}), Tensor(Shape{n, t, 1, h, w}), Tensor(Shape{n, 1, h, w})};
    for (std::int64_t b = 0; b < n; ++b) {
        const auto& s = samples.at(indices[static_cast<std::size_t>(b)]);
        if (s.frames != t || s.height != h || s.width != w) throw std::invalid_argument("make_batch: mixed geometry");
        const std::int64_t len = t * h * w;
        for (std::int64_t i = 0; i < len; ++i) {
            batch.inputs[static_cast<std::size_t>(b * len + i)] = s.occluded[static_cast<std::size_t>(i)] / 255.0;
            batch.targets[static_cast<std::size_t>(b * len + i)] = s.clean[static_cast<std::size_t>(i)] / 255.0;
        }
        for (std::int64_t i = 0; i < h * w; ++i) {
            batch.mask[static_cast<std::size_t>(b * h * w + i)] = s.mask[static_cast<std::size_t>(i)];
        }
    }
    return batch;
}

inline SequenceBatch make_batch(const std::vector<SequenceSample>& samples) {
    std::vector<std::size_t> all(samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return make_batch(samples, all);
}

} // namespace locdep
