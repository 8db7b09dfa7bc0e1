#pragma once

#include "locdep/gated_autoencoder.hpp"
#include "locdep/location_conv.hpp"

#include <concepts>
#include <cstdint>
#include <string>
#include <vector>

namespace locdep {

/// Number of frames predicted from ground-truth inputs, followed by frames
/// predicted from the model's own previous outputs.
struct RolloutSchedule {
    std::int64_t given_frames = 8;
    std::int64_t closed_loop_frames = 2;

    std::int64_t horizon() const { return given_frames + closed_loop_frames; }
    bool operator==(const RolloutSchedule&) const = default;
};

/// A batch of clips. `inputs` are the frames shown to the network (occluded),
/// `targets` the frames to predict (clean); both [N,T,1,H,W] in [0,1].
/// `mask` is [N,1,H,W] with 1 on occluded pixels.
struct SequenceBatch {
    Tensor inputs;
    Tensor targets;
    Tensor mask;

    std::int64_t size() const { return inputs.dim(0); }
    std::int64_t frames() const { return inputs.dim(1); }
};

/// predictions[k] estimates frame first_frame + k; closed_loop[k] tells
/// whether its most recent input was a previous prediction.
struct Rollout {
    std::vector<Tensor> predictions;
    std::int64_t first_frame = 0;
    std::vector<bool> closed_loop;
};

/// Frame t of a [N,T,C,H,W] tensor as a [N,C,H,W] constant.
inline Tensor frame_at(const Tensor& frames, std::int64_t t) {
    detail::require_rank(frames, 5, "frame_at");
    const std::int64_t n = frames.dim(0), steps = frames.dim(1);
    const std::int64_t plane = frames.dim(2) * frames.dim(3) * frames.dim(4);
    if (t < 0 || t >= steps) throw ShapeError("frame_at: frame " + std::to_string(t) + " outside " + shape_str(frames.shape()));
    Tensor out(Shape{n, frames.dim(2), frames.dim(3), frames.dim(4)});
    for (std::int64_t b = 0; b < n; ++b) {
        const double* src = frames.data().data() + (b * steps + t) * plane;
        std::copy(src, src + plane, out.data().data() + b * plane);
    }
    return out;
}

namespace detail {

inline void check_schedule(const SequenceBatch& batch, const RolloutSchedule& schedule, std::int64_t min_given,
                           const char* model) {
    require_rank(batch.inputs, 5, "rollout inputs");
    require_same_shape(batch.inputs, batch.targets, "rollout inputs/targets");
    if (schedule.given_frames < min_given || schedule.closed_loop_frames < 0) {
        throw ShapeError(std::string(model) + ": schedule (" + std::to_string(schedule.given_frames) + "," +
                         std::to_string(schedule.closed_loop_frames) + ") needs at least " +
                         std::to_string(min_given) + " given frames");
    }
    if (schedule.horizon() > batch.frames()) {
        throw ShapeError(std::string(model) + ": schedule of " + std::to_string(schedule.horizon()) +
                         " frames is longer than the " + std::to_string(batch.frames()) + "-frame sequence");
    }
}

/// Input fed at step t: blank for t = 0, the ground-truth frame t-1 while
/// t < given, otherwise the prediction of frame t-1.
inline Tensor step_input(const SequenceBatch& batch, const RolloutSchedule& schedule,
                         const std::vector<Tensor>& predicted, std::int64_t first_frame, std::int64_t t) {
    if (t == 0) {
        return Tensor::zeros(Shape{batch.inputs.dim(0), batch.inputs.dim(2), batch.inputs.dim(3), batch.inputs.dim(4)});
    }
    if (t < schedule.given_frames) return frame_at(batch.inputs, t - 1);
    return predicted.at(static_cast<std::size_t>(t - 1 - first_frame));
}

} // namespace detail

template <typename M>
concept VideoPredictor = requires(M& model, const M& cmodel, const SequenceBatch& batch,
                                  const RolloutSchedule& schedule) {
    { cmodel.rollout(batch, schedule) } -> std::same_as<Rollout>;
    { cmodel.parameters() } -> std::same_as<std::vector<NamedParameter>>;
    { M::kind() } -> std::convertible_to<std::string>;
};

template <VideoPredictor M>
std::int64_t param_count(const M& model) {
    return count_parameters(model.parameters());
}

// ---------------------------------------------------------------------------
// Video Ladder Network, one layer
// ---------------------------------------------------------------------------

struct VlnConfig {
    std::int64_t height = 64;
    std::int64_t width = 64;
    std::int64_t conv1_channels = 16;
    std::int64_t conv1_kernel = 5;
    std::int64_t conv2_channels = 32;
    std::int64_t conv2_kernel = 3;
    std::int64_t conv2_stride = 2;
    std::int64_t lstm_channels = 32;
    std::int64_t lstm_kernel = 3;
    std::int64_t deconv_channels = 16;
    std::int64_t deconv_kernel = 3;
    std::int64_t deconv_stride = 2;
    std::int64_t output_kernel = 5;
    Variant variant = Variant::Base;

    bool operator==(const VlnConfig&) const = default;
};

/// Activations of one rollout, kept for inspection.
struct VlnTrace {
    std::vector<Tensor> conv1;
    std::vector<Tensor> conv2;
    std::vector<Tensor> hidden;
};

/// Encoder (conv1 -> conv2 stride 2) -> ConvLSTM -> decoder (transposed conv
/// back to full resolution, plus a lateral shortcut from conv1, then an
/// output conv with sigmoid). The location mechanism of the variant attaches
/// to conv1.
class VlnModel {
public:
    explicit VlnModel(const VlnConfig& config, std::uint64_t seed = 1) : config_(config) {
        const auto& c = config;
        if (c.deconv_channels != c.conv1_channels) {
            throw ShapeError("vln: the shortcut needs deconv_channels == conv1_channels");
        }
        if (c.height % c.conv2_stride != 0 || c.width % c.conv2_stride != 0 || c.deconv_stride != c.conv2_stride) {
            throw ShapeError("vln: input " + std::to_string(c.height) + "x" + std::to_string(c.width) +
                             " must be divisible by the encoder stride, which the decoder must mirror");
        }
        SplitMix64 rng(seed);
        const std::int64_t cin = augments_input(c.variant) ? 1 + kAugmentedChannels : 1;
        conv1_ = LocationConv::make(cin, c.conv1_channels, c.conv1_kernel, Padding::Same, 1, Activation::ReLU,
                                    c.variant, c.height, c.width, rng);
        conv2_ = ConvParams::init(c.conv1_channels, c.conv2_channels, c.conv2_kernel, Padding::Same, c.conv2_stride, rng);
        lstm_ = ConvLstmCell::init(c.conv2_channels, c.lstm_channels, c.lstm_kernel, rng);
        deconv_weight_ = Tensor(Shape{c.lstm_channels, c.deconv_channels, c.deconv_kernel, c.deconv_kernel}, 0.0, true);
        const double bound = std::sqrt(1.0 / static_cast<double>(c.lstm_channels * c.deconv_kernel * c.deconv_kernel));
        for (double& v : deconv_weight_.data()) v = rng.uniform(-bound, bound);
        deconv_bias_ = Tensor::zeros(Shape{c.deconv_channels}, true);
        output_ = ConvParams::init(c.deconv_channels, 1, c.output_kernel, Padding::Same, 1, rng);
    }

    static std::string kind() { return "vln"; }
    const VlnConfig& config() const { return config_; }
    Variant variant() const { return config_.variant; }

    const LocationConv& conv1() const { return conv1_; }
    LocationConv& conv1() { return conv1_; }
    const ConvLstmCell& lstm() const { return lstm_; }

    /// Parameters in declaration (and checkpoint) order.
    std::vector<NamedParameter> parameters() const {
        std::vector<NamedParameter> out;
        conv1_.append(out, "conv1");
        conv2_.append(out, "conv2");
        lstm_.gates.append(out, "lstm.gates");
        out.push_back({"deconv.weight", deconv_weight_});
        out.push_back({"deconv.bias", deconv_bias_});
        output_.append(out, "output");
        return out;
    }

    /// One recurrent step: frame [N,1,H,W] -> prediction [N,1,H,W].
    Tensor step(const Tensor& frame, const Tensor& mask, ConvLstmState& state, VlnTrace* trace = nullptr) const {
        const Tensor input = augments_input(config_.variant) ? augment_input(frame, mask) : frame;
        const Tensor e1 = conv1_.forward(input);
        const Tensor e2 = activate(conv_forward(e1, conv2_), Activation::ReLU);
        auto [hidden, next] = lstm_.step(e2, state);
        state = std::move(next);
        Tensor d = conv2d_transpose(hidden, deconv_weight_, deconv_bias_, Padding::Same, config_.deconv_stride);
        d = activate(add(d, e1), Activation::ReLU);
        if (trace != nullptr) {
            trace->conv1.push_back(e1);
            trace->conv2.push_back(e2);
            trace->hidden.push_back(hidden);
        }
        return activate(conv_forward(d, output_), Activation::Sigmoid);
    }

    /// Predicts frames 0..horizon-1. The recurrent state starts at zero for
    /// every call, so clips never leak into each other.
    Rollout rollout(const SequenceBatch& batch, const RolloutSchedule& schedule, VlnTrace* trace = nullptr) const {
        detail::check_schedule(batch, schedule, 1, "vln");
        if (batch.inputs.dim(3) != config_.height || batch.inputs.dim(4) != config_.width) {
            throw ShapeError("vln: frames " + shape_str(batch.inputs.shape()) + " do not match model size " +
                             std::to_string(config_.height) + "x" + std::to_string(config_.width));
        }
        Rollout out;
        out.first_frame = 0;
        ConvLstmState state = lstm_.zero_state(batch.size(), config_.height / config_.conv2_stride,
                                               config_.width / config_.conv2_stride);
        for (std::int64_t t = 0; t < schedule.horizon(); ++t) {
            const Tensor input = detail::step_input(batch, schedule, out.predictions, 0, t);
            out.predictions.push_back(step(input, batch.mask, state, trace));
            out.closed_loop.push_back(t >= schedule.given_frames);
        }
        return out;
    }

private:
    VlnConfig config_;
    LocationConv conv1_;
    ConvParams conv2_;
    ConvLstmCell lstm_;
    Tensor deconv_weight_;
    Tensor deconv_bias_;
    ConvParams output_;
};

// ---------------------------------------------------------------------------
// Convolutional predictive gating pyramid, one layer
// ---------------------------------------------------------------------------

struct ConvPgpConfig {
    std::int64_t height = 32;
    std::int64_t width = 32;
    std::int64_t factors = 16;
    std::int64_t factor_kernel = 5;
    std::int64_t mapping_units = 168;
    std::int64_t mapping_kernel = 4;
    std::int64_t mapping_stride = 2;
    Variant variant = Variant::Base;

    bool operator==(const ConvPgpConfig&) const = default;
};

class ConvPgpModel {
public:
    explicit ConvPgpModel(const ConvPgpConfig& config, std::uint64_t seed = 1) : config_(config) {
        SplitMix64 rng(seed);
        gae_ = GatedAutoencoder::init({config.height, config.width, config.factors, config.factor_kernel,
                                       config.mapping_units, config.mapping_kernel, config.mapping_stride},
                                      config.variant, rng);
    }

    static std::string kind() { return "conv-pgp"; }
    const ConvPgpConfig& config() const { return config_; }
    Variant variant() const { return config_.variant; }
    const GatedAutoencoder& gae() const { return gae_; }
    GatedAutoencoder& gae() { return gae_; }

    std::vector<NamedParameter> parameters() const {
        std::vector<NamedParameter> out;
        gae_.append(out);
        return out;
    }

    /// Predicts frames 2..horizon-1, each from the two preceding inputs. The
    /// first two frames have no preceding pair and are not predicted.
    Rollout rollout(const SequenceBatch& batch, const RolloutSchedule& schedule,
                    std::vector<GaeState>* mappings = nullptr) const {
        detail::check_schedule(batch, schedule, 3, "conv-pgp");
        if (batch.inputs.dim(3) != config_.height || batch.inputs.dim(4) != config_.width) {
            throw ShapeError("conv-pgp: frames " + shape_str(batch.inputs.shape()) + " do not match model size " +
                             std::to_string(config_.height) + "x" + std::to_string(config_.width));
        }
        Rollout out;
        out.first_frame = 2;
        Tensor previous = detail::step_input(batch, schedule, out.predictions, 2, 1);
        for (std::int64_t t = 2; t < schedule.horizon(); ++t) {
            Tensor current = detail::step_input(batch, schedule, out.predictions, 2, t);
            auto [state, prediction] = gae_.step(previous, current, batch.mask);
            if (mappings != nullptr) mappings->push_back(std::move(state));
            out.predictions.push_back(std::move(prediction));
            out.closed_loop.push_back(t >= schedule.given_frames);
            previous = std::move(current);
        }
        return out;
    }

private:
    ConvPgpConfig config_;
    GatedAutoencoder gae_;
};

static_assert(VideoPredictor<VlnModel>);
static_assert(VideoPredictor<ConvPgpModel>);

} // namespace locdep
