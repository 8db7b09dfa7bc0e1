#pragma once

#include "locdep/models.hpp"
#include "locdep/train.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace locdep {

struct GradCheckResult {
    std::string name;
    std::size_t checked = 0;
    double max_rel_error = 0.0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool passed = true;
};

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    /// Denominator floor, per unit of loss. Gradient entries smaller than
    /// floor * max(1, |loss|) are compared absolutely against that value,
    /// since finite-difference rounding noise grows with |loss| / step.
    double floor = 1e-6;
};

inline double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences for every element of every tensor in `inputs`.
inline std::vector<GradCheckResult> check_gradients(const std::vector<NamedParameter>& inputs,
                                                    const std::function<Tensor()>& loss_fn,
                                                    const GradCheckOptions& opt = {}) {
    for (const auto& p : inputs) {
        Tensor t = p.tensor;
        t.zero_grad();
    }
    double loss_scale = 1.0;
    {
        Graph graph;
        const Tensor loss = loss_fn();
        loss_scale = std::max(1.0, std::abs(loss.item()));
        graph.backward(loss);
    }
    const double floor = opt.floor * loss_scale;
    std::vector<GradCheckResult> results;
    for (const auto& p : inputs) {
        Tensor t = p.tensor;
        const std::vector<double> analytic(t.grad().begin(), t.grad().end());
        GradCheckResult r;
        r.name = p.name;
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double saved = t[i];
            t[i] = saved + opt.step;
            const double plus = loss_fn().item();
            t[i] = saved - opt.step;
            const double minus = loss_fn().item();
            t[i] = saved;
            const double numeric = (plus - minus) / (2.0 * opt.step);
            const double err = relative_error(analytic[i], numeric, floor);
            if (err > r.max_rel_error) {
                r.max_rel_error = err;
                r.worst_analytic = analytic[i];
                r.worst_numeric = numeric;
            }
            ++r.checked;
        }
        r.passed = r.max_rel_error < opt.tolerance;
        results.push_back(r);
    }
    return results;
}

/// Fills every parameter (including bias maps and biases) with small random
/// values so that no gradient path is trivially zero.
inline void randomize_parameters(const std::vector<NamedParameter>& params, std::uint64_t seed, double amplitude = 0.5) {
    SplitMix64 rng(seed);
    for (const auto& p : params) {
        Tensor t = p.tensor;
        for (double& v : t.data()) v = rng.uniform(-amplitude, amplitude);
    }
}

inline Tensor random_tensor(Shape shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
    Tensor t(std::move(shape), 0.0, requires_grad);
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

/// Toy-size configurations (8x8 frames) used for gradient checks.
inline VlnConfig toy_vln_config(Variant variant) {
    VlnConfig c;
    c.height = c.width = 8;
    c.conv1_channels = c.deconv_channels = 3;
    c.conv1_kernel = 3;
    c.conv2_channels = 4;
    c.conv2_kernel = 3;
    c.lstm_channels = 3;
    c.lstm_kernel = 3;
    c.deconv_kernel = 3;
    c.output_kernel = 3;
    c.variant = variant;
    return c;
}

inline ConvPgpConfig toy_pgp_config(Variant variant) {
    ConvPgpConfig c;
    c.height = c.width = 8;
    c.factors = 3;
    c.factor_kernel = 3;
    c.mapping_units = 4;
    c.mapping_kernel = 2;
    c.mapping_stride = 2;
    c.variant = variant;
    return c;
}

/// Random toy clip with an 8-px-spaced style occlusion mask.
inline SequenceBatch toy_batch(std::int64_t batch, std::int64_t frames, std::int64_t size, std::uint64_t seed) {
    SplitMix64 rng(seed);
    SequenceBatch b{random_tensor(Shape{batch, frames, 1, size, size}, rng, 0.0, 1.0),
                    random_tensor(Shape{batch, frames, 1, size, size}, rng, 0.05, 0.95), Tensor(Shape{batch, 1, size, size})};
    const auto mask = make_occlusion_mask(size, size, OcclusionGridSpec{3, 1, 1});
    for (std::int64_t n = 0; n < batch; ++n) {
        for (std::int64_t i = 0; i < size * size; ++i) {
            b.mask[static_cast<std::size_t>(n * size * size + i)] = mask[static_cast<std::size_t>(i)];
        }
    }
    return b;
}

/// Gradient checks for one model family and variant: the location layer
/// (when the variant has one), the recurrent or gating block, and the full
/// model's rollout loss, all at toy size. Returns one result per checked
/// tensor, prefixed with the check name.
inline std::vector<GradCheckResult> run_gradcheck_suite(const std::string& model, Variant variant,
                                                        const GradCheckOptions& opt = {}, std::uint64_t seed = 7) {
    std::vector<GradCheckResult> all;
    auto collect = [&](const std::string& prefix, std::vector<GradCheckResult> rs) {
        for (auto& r : rs) {
            r.name = prefix + "/" + r.name;
            all.push_back(std::move(r));
        }
    };
    SplitMix64 rng(seed);

    if (has_bias_maps(variant)) {
        ConvParams conv = ConvParams::init(2, 3, 3, model == "vln" ? Padding::Same : Padding::Valid, 1, rng);
        const std::int64_t out = model == "vln" ? 8 : 6;
        LocationBiasMaps maps{random_tensor(Shape{out, out}, rng, -0.5, 0.5, true),
                              random_tensor(Shape{out, out}, rng, -0.5, 0.5, true)};
        const auto enc = LocationEncodingMaps::make(out, out);
        Tensor x = random_tensor(Shape{2, 2, 8, 8}, rng, -1.0, 1.0, true);
        randomize_parameters({{"w", conv.weight}, {"b", conv.bias}}, seed + 1);
        const Tensor proj = random_tensor(Shape{2, 3, out, out}, rng);
        const Activation act = model == "vln" ? Activation::Tanh : Activation::Identity;
        const bool with_enc = has_encodings(variant);
        collect(with_enc ? "ldcai_forward" : "ldc_forward",
                check_gradients({{"input", x}, {"weight", conv.weight}, {"bias", conv.bias}, {"w1", maps.w1}, {"w2", maps.w2}},
                                [&] {
                                    const Tensor y = with_enc ? ldcai_forward(x, conv, maps, enc, act)
                                                              : ldc_forward(x, conv, maps, act);
                                    return sum(mul(y, proj));
                                },
                                opt));
    }

    if (model == "vln") {
        const ConvLstmCell cell = ConvLstmCell::init(2, 3, 3, rng);
        randomize_parameters({{"g", cell.gates.weight}, {"b", cell.gates.bias}}, seed + 2);
        std::vector<Tensor> xs;
        for (int t = 0; t < 3; ++t) xs.push_back(random_tensor(Shape{2, 2, 4, 4}, rng, -1.0, 1.0, true));
        const Tensor proj = random_tensor(Shape{2, 3, 4, 4}, rng);
        collect("conv_lstm_rollout",
                check_gradients({{"gates.weight", cell.gates.weight}, {"gates.bias", cell.gates.bias}, {"x0", xs[0]}},
                                [&] {
                                    ConvLstmState state = cell.zero_state(2, 4, 4);
                                    Tensor h;
                                    for (const auto& x : xs) std::tie(h, state) = cell.step(x, state);
                                    return add(sum(mul(h, proj)), sum(state.cell));
                                },
                                opt));
        VlnModel net(toy_vln_config(variant), seed);
        randomize_parameters(net.parameters(), seed + 3, 0.4);
        const SequenceBatch batch = toy_batch(2, 4, 8, seed + 4);
        collect("vln_" + to_string(variant),
                check_gradients(net.parameters(), [&] { return sequence_loss(net, batch, RolloutSchedule{2, 2}); }, opt));
    } else {
        const GatedAutoencoder gae = GatedAutoencoder::init({8, 8, 3, 3, 4, 2, 2}, variant, rng);
        std::vector<NamedParameter> params;
        gae.append(params);
        randomize_parameters(params, seed + 5, 0.5);
        const SequenceBatch batch = toy_batch(2, 3, 8, seed + 6);
        Tensor x0 = frame_at(batch.inputs, 0);
        Tensor x1 = frame_at(batch.inputs, 1);
        x0.set_requires_grad(true);
        x1.set_requires_grad(true);
        const Tensor proj = random_tensor(Shape{2, 1, 8, 8}, rng);
        const Tensor proj_m = random_tensor(Shape{2, 4, 3, 3}, rng);
        params.push_back({"x_t", x0});
        params.push_back({"x_t1", x1});
        collect("gae_step", check_gradients(params,
                                            [&] {
                                                auto [state, pred] = gae.step(x0, x1, batch.mask);
                                                return add(sum(mul(pred, proj)), sum(mul(state.mapping, proj_m)));
                                            },
                                            opt));
        ConvPgpModel net(toy_pgp_config(variant), seed);
        randomize_parameters(net.parameters(), seed + 7, 0.5);
        const SequenceBatch clip = toy_batch(2, 6, 8, seed + 8);
        collect("conv_pgp_" + to_string(variant),
                check_gradients(net.parameters(), [&] { return sequence_loss(net, clip, RolloutSchedule{3, 3}); }, opt));
    }
    return all;
}

} // namespace locdep
