#pragma once

#include "locdep/datasets.hpp"
#include "locdep/models.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace locdep {

/// Non-finite loss or a failed numerical check.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::int64_t epochs = 10;
    std::int64_t batch_size = 16;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 1;
    RolloutSchedule schedule{};
};

struct Metrics {
    std::int64_t epoch = 0;
    double train_bce = 0.0;
    double test_bce = 0.0;
    double seconds = 0.0;
    std::int64_t params = 0;

    bool operator==(const Metrics&) const = default;
};

/// Adam with bias correction.
class Adam {
public:
    Adam(std::vector<NamedParameter> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.emplace_back(p.tensor.numel(), 0.0);
            v_.emplace_back(p.tensor.numel(), 0.0);
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Tensor& p = params_[k].tensor;
            if (!p.has_grad()) continue;
            auto g = p.grad();
            auto w = p.data();
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
                w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
            }
        }
    }

private:
    std::vector<NamedParameter> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
};

/// BCE of a rollout: pixel-summed over every predicted frame, averaged over
/// the batch. Frames without a prediction (warm-up) contribute nothing.
inline Tensor rollout_loss(const Rollout& rollout, const SequenceBatch& batch) {
    Tensor total;
    for (std::size_t k = 0; k < rollout.predictions.size(); ++k) {
        const auto frame = rollout.first_frame + static_cast<std::int64_t>(k);
        Tensor term = bce_loss(rollout.predictions[k], frame_at(batch.targets, frame));
        total = total.defined() ? add(total, term) : term;
    }
    if (!total.defined()) throw ShapeError("rollout_loss: rollout has no predictions");
    return total;
}

template <VideoPredictor M>
Tensor sequence_loss(const M& model, const SequenceBatch& batch, const RolloutSchedule& schedule) {
    return rollout_loss(model.rollout(batch, schedule), batch);
}

/// Mean per-sequence test BCE. Runs without recording a graph and never
/// touches the parameters.
template <VideoPredictor M>
double evaluate(const M& model, const std::vector<SequenceSample>& samples, const RolloutSchedule& schedule,
                std::int64_t batch_size = 32) {
    if (samples.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(batch_size));
        std::vector<std::size_t> idx(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        const SequenceBatch batch = make_batch(samples, idx);
        total += sequence_loss(model, batch, schedule).item() * static_cast<double>(idx.size());
    }
    return total / static_cast<double>(samples.size());
}

namespace detail {

inline std::vector<std::size_t> shuffled_indices(std::size_t count, std::uint64_t seed) {
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), 0);
    SplitMix64 rng(seed);
    for (std::size_t i = count; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
}

} // namespace detail

/// Mini-batch Adam training with the rollout loss (closed-loop frames
/// included and differentiated through). Evaluates on `test` after every
/// epoch. `on_epoch` is optional.
template <VideoPredictor M>
std::vector<Metrics> train(M& model, const std::vector<SequenceSample>& train_set,
                           const std::vector<SequenceSample>& test_set, const TrainConfig& cfg,
                           const std::function<void(const Metrics&)>& on_epoch = {}) {
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");
    if (cfg.batch_size < 1) throw std::invalid_argument("train: batch size must be at least 1");
    if (!(cfg.learning_rate >= 0.0)) throw std::invalid_argument("train: learning rate must be non-negative");
    Adam optimizer(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    const std::int64_t params = param_count(model);
    std::vector<Metrics> history;
    for (std::int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        const auto order = detail::shuffled_indices(train_set.size(), derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        double epoch_loss = 0.0;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                               order.begin() + static_cast<std::ptrdiff_t>(end));
            const SequenceBatch batch = make_batch(train_set, idx);
            Graph graph;
            const Tensor loss = sequence_loss(model, batch, cfg.schedule);
            if (!std::isfinite(loss.item())) {
                throw NumericalError("train: loss became non-finite in epoch " + std::to_string(epoch));
            }
            optimizer.zero_grad();
            graph.backward(loss);
            optimizer.step();
            epoch_loss += loss.item() * static_cast<double>(idx.size());
        }
        Metrics m;
        m.epoch = epoch;
        m.train_bce = epoch_loss / static_cast<double>(train_set.size());
        m.test_bce = test_set.empty() ? 0.0 : evaluate(model, test_set, cfg.schedule);
        m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        m.params = params;
        if (!std::isfinite(m.test_bce)) throw NumericalError("train: test loss became non-finite");
        history.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    return history;
}

// ---------------------------------------------------------------------------
// Metrics CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kMetricsHeader = "epoch,train_bce,test_bce,seconds,params";

namespace detail {

/// Shortest decimal text that parses back to exactly `v`.
inline std::string exact_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& field) {
    double v = 0.0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
        throw FormatError("metrics csv: bad number '" + field + "'");
    }
    return v;
}

inline std::int64_t parse_int(const std::string& field) {
    std::int64_t v = 0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
        throw FormatError("metrics csv: bad integer '" + field + "'");
    }
    return v;
}

} // namespace detail

inline void write_metrics_csv(std::ostream& out, const std::vector<Metrics>& history) {
    out << kMetricsHeader << '\n';
    for (const auto& m : history) {
        out << m.epoch << ',' << detail::exact_double(m.train_bce) << ',' << detail::exact_double(m.test_bce) << ','
            << detail::exact_double(m.seconds) << ',' << m.params << '\n';
    }
}

inline std::vector<Metrics> read_metrics_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader) throw FormatError("metrics csv: missing header");
    std::vector<Metrics> history;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
        if (fields.size() != 5) throw FormatError("metrics csv: expected 5 fields in '" + line + "'");
        history.push_back({detail::parse_int(fields[0]), detail::parse_double(fields[1]), detail::parse_double(fields[2]),
                           detail::parse_double(fields[3]), detail::parse_int(fields[4])});
    }
    return history;
}

} // namespace locdep
