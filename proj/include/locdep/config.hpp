#pragma once

// JSON forms of the run configurations. Missing keys keep their defaults,
// unknown keys are rejected so that typos in config files do not go
// unnoticed.

#include "locdep/checkpoint.hpp"
#include "locdep/train.hpp"

#include <nlohmann/json.hpp>

#include <set>
#include <stdexcept>
#include <string>

namespace locdep {

/// Invalid or unknown configuration values.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Throws if `j` has a key that `reference` (a serialized default) lacks.
inline void require_known_keys(const nlohmann::json& j, const nlohmann::json& reference, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        if (!reference.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& field) {
    if (j.contains(key)) field = j.at(key).get<T>();
}

} // namespace detail

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"epsilon", c.epsilon},
         {"seed", c.seed},
         {"given_frames", c.schedule.given_frames},
         {"closed_loop_frames", c.schedule.closed_loop_frames}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    require_known_keys(j, nlohmann::json(TrainConfig{}), "train");
    detail::read_field(j, "epochs", c.epochs);
    detail::read_field(j, "batch_size", c.batch_size);
    detail::read_field(j, "learning_rate", c.learning_rate);
    detail::read_field(j, "beta1", c.beta1);
    detail::read_field(j, "beta2", c.beta2);
    detail::read_field(j, "epsilon", c.epsilon);
    detail::read_field(j, "seed", c.seed);
    detail::read_field(j, "given_frames", c.schedule.given_frames);
    detail::read_field(j, "closed_loop_frames", c.schedule.closed_loop_frames);
    if (c.epochs < 0) throw ConfigError("train: epochs must be non-negative");
    if (c.batch_size < 1) throw ConfigError("train: batch_size must be at least 1");
    if (!(c.learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be non-negative");
}

inline void to_json(nlohmann::json& j, const MovingMnistConfig& c) {
    j = {{"count", c.count},
         {"frames", c.frames},
         {"size", c.size},
         {"bar_spacing", c.grid.spacing},
         {"bar_width", c.grid.bar_width},
         {"bar_phase", c.grid.phase},
         {"mirror_inset", c.mirrors.inset},
         {"min_speed", c.min_speed},
         {"max_speed", c.max_speed},
         {"digit_downsample", c.digit_downsample}};
}

namespace detail {

inline void check_geometry(std::int64_t count, std::int64_t frames, std::int64_t size, const OcclusionGridSpec& grid,
                           const MirrorLineSpec& mirrors, double min_speed, double max_speed, const char* where) {
    const std::string w = where;
    if (count < 0) throw ConfigError(w + ": count must be non-negative");
    if (frames < 1 || size < 1) throw ConfigError(w + ": frames and size must be positive");
    if (!(grid.spacing > grid.bar_width && grid.bar_width >= 1)) {
        throw ConfigError(w + ": bars need spacing > bar_width >= 1");
    }
    if (grid.phase < 0) throw ConfigError(w + ": bar_phase must be non-negative");
    if (mirrors.inset < 0 || 2 * mirrors.inset >= size) throw ConfigError(w + ": mirror_inset must lie in [0, size/2)");
    if (!(min_speed >= 0.0 && min_speed <= max_speed)) throw ConfigError(w + ": need 0 <= min_speed <= max_speed");
}

} // namespace detail

inline void from_json(const nlohmann::json& j, MovingMnistConfig& c) {
    require_known_keys(j, nlohmann::json(MovingMnistConfig{}), "moving-mnist");
    detail::read_field(j, "count", c.count);
    detail::read_field(j, "frames", c.frames);
    detail::read_field(j, "size", c.size);
    detail::read_field(j, "bar_spacing", c.grid.spacing);
    detail::read_field(j, "bar_width", c.grid.bar_width);
    detail::read_field(j, "bar_phase", c.grid.phase);
    detail::read_field(j, "mirror_inset", c.mirrors.inset);
    detail::read_field(j, "min_speed", c.min_speed);
    detail::read_field(j, "max_speed", c.max_speed);
    detail::read_field(j, "digit_downsample", c.digit_downsample);
    detail::check_geometry(c.count, c.frames, c.size, c.grid, c.mirrors, c.min_speed, c.max_speed, "moving-mnist");
    if (c.digit_downsample < 1) throw ConfigError("moving-mnist: digit_downsample must be at least 1");
}

inline void to_json(nlohmann::json& j, const BouncingBallConfig& c) {
    j = {{"count", c.count},
         {"frames", c.frames},
         {"size", c.size},
         {"balls", c.balls},
         {"radius", c.radius},
         {"bar_spacing", c.grid.spacing},
         {"bar_width", c.grid.bar_width},
         {"bar_phase", c.grid.phase},
         {"mirror_inset", c.mirrors.inset},
         {"min_speed", c.min_speed},
         {"max_speed", c.max_speed}};
}

inline void from_json(const nlohmann::json& j, BouncingBallConfig& c) {
    require_known_keys(j, nlohmann::json(BouncingBallConfig{}), "bouncing-ball");
    detail::read_field(j, "count", c.count);
    detail::read_field(j, "frames", c.frames);
    detail::read_field(j, "size", c.size);
    detail::read_field(j, "balls", c.balls);
    detail::read_field(j, "radius", c.radius);
    detail::read_field(j, "bar_spacing", c.grid.spacing);
    detail::read_field(j, "bar_width", c.grid.bar_width);
    detail::read_field(j, "bar_phase", c.grid.phase);
    detail::read_field(j, "mirror_inset", c.mirrors.inset);
    detail::read_field(j, "min_speed", c.min_speed);
    detail::read_field(j, "max_speed", c.max_speed);
    detail::check_geometry(c.count, c.frames, c.size, c.grid, c.mirrors, c.min_speed, c.max_speed, "bouncing-ball");
    if (c.balls < 1 || !(c.radius > 0.0)) throw ConfigError("bouncing-ball: need balls >= 1 and radius > 0");
}

/// The schedule each model family was evaluated with.
inline RolloutSchedule default_schedule(const std::string& model) {
    if (model == "conv-pgp") return {3, 7};
    return {8, 2};
}

/// Model config JSON for `model` ("vln" or "conv-pgp") with defaults.
inline nlohmann::json default_model_config(const std::string& model) {
    if (model == "vln") return VlnConfig{};
    if (model == "conv-pgp") return ConvPgpConfig{};
    throw ConfigError("unknown model '" + model + "' (expected vln or conv-pgp)");
}

inline AnyModel make_model(const std::string& model, const nlohmann::json& config, std::uint64_t seed) {
    require_known_keys(config, default_model_config(model), model);
    if (model == "vln") return VlnModel(config.get<VlnConfig>(), seed);
    return ConvPgpModel(config.get<ConvPgpConfig>(), seed);
}

} // namespace locdep
