#include "locdep/gradcheck.hpp"
#include "locdep/models.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

using namespace locdep;

namespace {

constexpr Variant kVariants[] = {Variant::Base, Variant::AI, Variant::LDC, Variant::LDCAI};

VlnConfig small_vln(Variant v) {
    VlnConfig c = toy_vln_config(v);
    c.height = c.width = 16;
    return c;
}

ConvPgpConfig small_pgp(Variant v) {
    ConvPgpConfig c = toy_pgp_config(v);
    c.height = c.width = 16;
    return c;
}

// Clips whose frames past `keep` are replaced by zeros.
SequenceBatch truncated(const SequenceBatch& b, std::int64_t keep) {
    SequenceBatch out{b.inputs.clone(), b.targets.clone(), b.mask.clone()};
    const std::int64_t plane = b.inputs.dim(2) * b.inputs.dim(3) * b.inputs.dim(4);
    for (std::int64_t n = 0; n < b.size(); ++n)
        for (std::int64_t t = keep; t < b.frames(); ++t)
            for (std::int64_t i = 0; i < plane; ++i) {
                const auto k = static_cast<std::size_t>((n * b.frames() + t) * plane + i);
                out.inputs[k] = 0.0;
                out.targets[k] = 0.0;
            }
    return out;
}

void expect_identical(const Rollout& a, const Rollout& b) {
    ASSERT_EQ(a.predictions.size(), b.predictions.size());
    for (std::size_t k = 0; k < a.predictions.size(); ++k) EXPECT_EQ(a.predictions[k].values(), b.predictions[k].values());
}

// Batch element n of a [N,...] tensor.
std::vector<double> element(const Tensor& t, std::int64_t n) {
    const auto per = static_cast<std::ptrdiff_t>(t.numel() / static_cast<std::size_t>(t.dim(0)));
    const auto v = t.values();
    return {v.begin() + n * per, v.begin() + (n + 1) * per};
}

} // namespace

TEST(DefaultConfigs, ParameterCounts) {
    const std::int64_t vln[] = {83937, 85137, 92129, 93329};
    const std::int64_t pgp[] = {44009, 46409, 47145, 49545};
    const double vln_reference[] = {90e3, 91e3, 103e3, 103e3};
    const double pgp_reference[] = {39e3, 40e3, 56e3, 56e3};
    for (int i = 0; i < 4; ++i) {
        VlnConfig vc;
        vc.variant = kVariants[i];
        ConvPgpConfig pc;
        pc.variant = kVariants[i];
        const auto nv = param_count(VlnModel(vc));
        const auto np = param_count(ConvPgpModel(pc));
        EXPECT_EQ(nv, vln[i]) << to_string(kVariants[i]);
        EXPECT_EQ(np, pgp[i]) << to_string(kVariants[i]);
        EXPECT_LE(std::abs(static_cast<double>(nv) / vln_reference[i] - 1.0), 0.2);
        EXPECT_LE(std::abs(static_cast<double>(np) / pgp_reference[i] - 1.0), 0.2);
    }
}

TEST(DefaultConfigs, VariantDeltas) {
    VlnConfig vc;
    const auto vln = [&](Variant v) {
        vc.variant = v;
        return param_count(VlnModel(vc));
    };
    const std::int64_t first_conv = vc.conv1_channels * vc.conv1_kernel * vc.conv1_kernel;
    EXPECT_EQ(vln(Variant::AI) - vln(Variant::Base), 3 * first_conv);
    EXPECT_EQ(vln(Variant::LDC) - vln(Variant::Base), 2 * 64 * 64);
    EXPECT_EQ(vln(Variant::LDCAI) - vln(Variant::Base), 3 * first_conv + 2 * 64 * 64);

    // Both factor layers see the frames, so both gain the extra channels and
    // both carry a pair of bias maps over their valid-padded output.
    ConvPgpConfig pc;
    const auto pgp = [&](Variant v) {
        pc.variant = v;
        return param_count(ConvPgpModel(pc));
    };
    const std::int64_t factor_conv = pc.factors * pc.factor_kernel * pc.factor_kernel;
    const std::int64_t fh = pc.height - pc.factor_kernel + 1;
    EXPECT_EQ(pgp(Variant::AI) - pgp(Variant::Base), 2 * 3 * factor_conv);
    EXPECT_EQ(pgp(Variant::LDC) - pgp(Variant::Base), 2 * (2 * fh * fh));
}

TEST(DefaultConfigs, EncodingsAreNotParameters) {
    VlnConfig c;
    c.variant = Variant::LDCAI;
    for (const auto& p : VlnModel(c).parameters()) {
        EXPECT_EQ(p.name.find("enc"), std::string::npos) << p.name;
    }
}

TEST(DefaultConfigs, ParameterNamesAreUnique) {
    for (auto v : kVariants) {
        VlnConfig vc;
        vc.variant = v;
        ConvPgpConfig pc;
        pc.variant = v;
        for (const auto& params : {VlnModel(vc).parameters(), ConvPgpModel(pc).parameters()}) {
            std::set<std::string> names;
            for (const auto& p : params) EXPECT_TRUE(names.insert(p.name).second) << p.name;
        }
    }
}

TEST(Vln, DefaultRolloutShapeAndRange) {
    for (auto v : kVariants) {
        VlnConfig c;
        c.variant = v;
        const VlnModel net(c, 3);
        const SequenceBatch b = toy_batch(1, 10, 64, 4);
        const Rollout r = net.rollout(b, RolloutSchedule{8, 2});
        ASSERT_EQ(r.predictions.size(), 10u);
        EXPECT_EQ(r.first_frame, 0);
        for (std::size_t k = 0; k < 10; ++k) {
            EXPECT_EQ(r.closed_loop[k], k >= 8);
            EXPECT_EQ(r.predictions[k].shape(), (Shape{1, 1, 64, 64}));
        }
        const auto last = r.predictions.back().values();
        const auto [lo, hi] = std::minmax_element(last.begin(), last.end());
        EXPECT_GT(*lo, 0.0);
        EXPECT_LT(*hi, 1.0);
        EXPECT_LT(*lo, *hi) << "prediction should vary over the image";
    }
}

TEST(Vln, ScheduleInvariance) {
    for (auto v : kVariants) {
        const VlnModel net(small_vln(v), 5);
        const SequenceBatch b = toy_batch(2, 10, 16, 6);
        const RolloutSchedule s{8, 2};
        expect_identical(net.rollout(b, s), net.rollout(truncated(b, 8), s));
    }
}

TEST(Vln, TeacherForcedPrefixIgnoresLaterFrames) {
    const VlnModel net(small_vln(Variant::LDCAI), 7);
    const SequenceBatch b = toy_batch(2, 10, 16, 8);
    const Rollout full = net.rollout(b, RolloutSchedule{10, 0});
    const Rollout cut = net.rollout(truncated(b, 5), RolloutSchedule{10, 0});
    for (std::size_t k = 0; k <= 5; ++k) EXPECT_EQ(full.predictions[k].values(), cut.predictions[k].values());
    EXPECT_NE(full.predictions[6].values(), cut.predictions[6].values());
}

TEST(Vln, ClosedLoopUsesOwnPredictions) {
    const VlnModel net(small_vln(Variant::Base), 9);
    const SequenceBatch b = toy_batch(1, 10, 16, 10);
    const Rollout open = net.rollout(b, RolloutSchedule{10, 0});
    const Rollout closed = net.rollout(b, RolloutSchedule{8, 2});
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(open.predictions[k].values(), closed.predictions[k].values());
    EXPECT_NE(open.predictions[9].values(), closed.predictions[9].values());
}

TEST(Vln, ZeroMapsEqualBaseAtInit) {
    const SequenceBatch b = toy_batch(2, 6, 16, 11);
    const Rollout base = VlnModel(small_vln(Variant::Base), 12).rollout(b, RolloutSchedule{4, 2});
    const Rollout ldc = VlnModel(small_vln(Variant::LDC), 12).rollout(b, RolloutSchedule{4, 2});
    expect_identical(base, ldc);
}

TEST(Vln, BatchOrderDoesNotMatter) {
    const VlnModel net(small_vln(Variant::LDCAI), 13);
    const SequenceBatch b = toy_batch(3, 6, 16, 14);
    SequenceBatch swapped{b.inputs.clone(), b.targets.clone(), b.mask.clone()};
    for (const Tensor* src : {&b.inputs, &b.targets, &b.mask}) {
        Tensor dst = src == &b.inputs ? swapped.inputs : src == &b.targets ? swapped.targets : swapped.mask;
        const auto per = static_cast<std::ptrdiff_t>(src->numel() / 3);
        const auto v = src->values();
        std::copy(v.begin() + 2 * per, v.end(), dst.data().begin());
        std::copy(v.begin(), v.begin() + 2 * per, dst.data().begin() + per);
    }
    const Rollout r1 = net.rollout(b, RolloutSchedule{4, 2});
    const Rollout r2 = net.rollout(swapped, RolloutSchedule{4, 2});
    for (std::size_t k = 0; k < r1.predictions.size(); ++k) {
        EXPECT_EQ(element(r1.predictions[k], 2), element(r2.predictions[k], 0));
        EXPECT_EQ(element(r1.predictions[k], 0), element(r2.predictions[k], 1));
    }
}

TEST(Vln, StateDoesNotLeakAcrossCalls) {
    const VlnModel net(small_vln(Variant::Base), 15);
    const SequenceBatch a = toy_batch(1, 6, 16, 16);
    const SequenceBatch other = toy_batch(1, 6, 16, 17);
    const Rollout first = net.rollout(a, RolloutSchedule{4, 2});
    (void)net.rollout(other, RolloutSchedule{4, 2});
    expect_identical(first, net.rollout(a, RolloutSchedule{4, 2}));
}

TEST(Vln, Errors) {
    const VlnModel net(small_vln(Variant::Base), 1);
    EXPECT_THROW(net.rollout(toy_batch(1, 9, 16, 1), RolloutSchedule{8, 2}), ShapeError);
    EXPECT_THROW(net.rollout(toy_batch(1, 10, 8, 1), RolloutSchedule{8, 2}), ShapeError);
    EXPECT_THROW(net.rollout(toy_batch(1, 10, 16, 1), RolloutSchedule{0, 2}), ShapeError);
    VlnConfig bad = small_vln(Variant::Base);
    bad.deconv_channels = bad.conv1_channels + 1;
    EXPECT_THROW(VlnModel{bad}, ShapeError);
    bad = small_vln(Variant::Base);
    bad.height = 15;
    EXPECT_THROW(VlnModel{bad}, ShapeError);
}

TEST(Vln, SameSeedSameModel) {
    const VlnModel a(small_vln(Variant::LDCAI), 21), b(small_vln(Variant::LDCAI), 21), c(small_vln(Variant::LDCAI), 22);
    const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i].tensor.values(), pb[i].tensor.values());
        any_diff |= pa[i].tensor.values() != pc[i].tensor.values();
    }
    EXPECT_TRUE(any_diff);
}

TEST(Pgp, DefaultRolloutShapeAndRange) {
    for (auto v : kVariants) {
        ConvPgpConfig c;
        c.variant = v;
        const ConvPgpModel net(c, 3);
        std::vector<GaeState> maps;
        const Rollout r = net.rollout(toy_batch(2, 10, 32, 4), RolloutSchedule{3, 7}, &maps);
        ASSERT_EQ(r.predictions.size(), 8u);
        EXPECT_EQ(r.first_frame, 2);
        EXPECT_EQ(std::count(r.closed_loop.begin(), r.closed_loop.end(), true), 7);
        EXPECT_FALSE(r.closed_loop.front());
        EXPECT_EQ(maps.size(), 8u);
        for (const auto& p : r.predictions) {
            EXPECT_EQ(p.shape(), (Shape{2, 1, 32, 32}));
            for (double x : p.values()) {
                EXPECT_GT(x, 0.0);
                EXPECT_LT(x, 1.0);
            }
        }
    }
}

TEST(Pgp, ScheduleInvariance) {
    for (auto v : kVariants) {
        const ConvPgpModel net(small_pgp(v), 5);
        const SequenceBatch b = toy_batch(2, 10, 16, 6);
        const RolloutSchedule s{3, 7};
        expect_identical(net.rollout(b, s), net.rollout(truncated(b, 3), s));
    }
}

TEST(Pgp, ZeroMapsEqualBaseAtInit) {
    const SequenceBatch b = toy_batch(2, 6, 16, 11);
    expect_identical(ConvPgpModel(small_pgp(Variant::Base), 12).rollout(b, RolloutSchedule{3, 3}),
                     ConvPgpModel(small_pgp(Variant::LDC), 12).rollout(b, RolloutSchedule{3, 3}));
}

TEST(Pgp, PredictionDependsOnBothFramesOfThePair) {
    const ConvPgpModel net(small_pgp(Variant::Base), 31);
    randomize_parameters(net.parameters(), 32);
    const SequenceBatch b = toy_batch(1, 3, 16, 33);
    const Tensor ref = net.rollout(b, RolloutSchedule{3, 0}).predictions[0];
    for (std::int64_t frame : {0, 1}) {
        SequenceBatch changed{b.inputs.clone(), b.targets, b.mask};
        for (std::int64_t i = 0; i < 256; ++i) changed.inputs[static_cast<std::size_t>(frame * 256 + i)] *= 0.5;
        EXPECT_NE(net.rollout(changed, RolloutSchedule{3, 0}).predictions[0].values(), ref.values()) << frame;
    }
}

TEST(Pgp, Errors) {
    const ConvPgpModel net(small_pgp(Variant::Base), 1);
    EXPECT_THROW(net.rollout(toy_batch(1, 10, 16, 1), RolloutSchedule{2, 7}), ShapeError);
    EXPECT_THROW(net.rollout(toy_batch(1, 9, 16, 1), RolloutSchedule{3, 7}), ShapeError);
    EXPECT_THROW(net.rollout(toy_batch(1, 10, 8, 1), RolloutSchedule{3, 7}), ShapeError);
}

TEST(GradCheck, FullModelsAtToySize) {
    for (const std::string model : {"vln", "conv-pgp"}) {
        for (auto v : kVariants) {
            for (const auto& r : run_gradcheck_suite(model, v)) {
                EXPECT_TRUE(r.passed) << model << " " << r.name << " rel " << r.max_rel_error << " analytic "
                                      << r.worst_analytic << " numeric " << r.worst_numeric;
            }
        }
    }
}
