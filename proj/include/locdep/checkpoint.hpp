#pragma once

#include "locdep/datasets.hpp"
#include "locdep/models.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

namespace locdep {

using AnyModel = std::variant<VlnModel, ConvPgpModel>;

inline void to_json(nlohmann::json& j, const VlnConfig& c) {
    j = {{"height", c.height},
         {"width", c.width},
         {"conv1_channels", c.conv1_channels},
         {"conv1_kernel", c.conv1_kernel},
         {"conv2_channels", c.conv2_channels},
         {"conv2_kernel", c.conv2_kernel},
         {"conv2_stride", c.conv2_stride},
         {"lstm_channels", c.lstm_channels},
         {"lstm_kernel", c.lstm_kernel},
         {"deconv_channels", c.deconv_channels},
         {"deconv_kernel", c.deconv_kernel},
         {"deconv_stride", c.deconv_stride},
         {"output_kernel", c.output_kernel},
         {"variant", to_string(c.variant)}};
}

/// Missing keys keep their defaults so partial config files work.
inline void from_json(const nlohmann::json& j, VlnConfig& c) {
    auto get = [&](const char* key, std::int64_t& field) {
        if (j.contains(key)) field = j.at(key).get<std::int64_t>();
    };
    get("height", c.height);
    get("width", c.width);
    get("conv1_channels", c.conv1_channels);
    get("conv1_kernel", c.conv1_kernel);
    get("conv2_channels", c.conv2_channels);
    get("conv2_kernel", c.conv2_kernel);
    get("conv2_stride", c.conv2_stride);
    get("lstm_channels", c.lstm_channels);
    get("lstm_kernel", c.lstm_kernel);
    get("deconv_channels", c.deconv_channels);
    get("deconv_kernel", c.deconv_kernel);
    get("deconv_stride", c.deconv_stride);
    get("output_kernel", c.output_kernel);
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
}

inline void to_json(nlohmann::json& j, const ConvPgpConfig& c) {
    j = {{"height", c.height},
         {"width", c.width},
         {"factors", c.factors},
         {"factor_kernel", c.factor_kernel},
         {"mapping_units", c.mapping_units},
         {"mapping_kernel", c.mapping_kernel},
         {"mapping_stride", c.mapping_stride},
         {"variant", to_string(c.variant)}};
}

inline void from_json(const nlohmann::json& j, ConvPgpConfig& c) {
    auto get = [&](const char* key, std::int64_t& field) {
        if (j.contains(key)) field = j.at(key).get<std::int64_t>();
    };
    get("height", c.height);
    get("width", c.width);
    get("factors", c.factors);
    get("factor_kernel", c.factor_kernel);
    get("mapping_units", c.mapping_units);
    get("mapping_kernel", c.mapping_kernel);
    get("mapping_stride", c.mapping_stride);
    if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
}

inline constexpr std::array<char, 8> kCheckpointMagic{'L', 'D', 'V', 'P', '0', '0', '0', '1'};

inline std::vector<NamedParameter> model_parameters(const AnyModel& model) {
    return std::visit([](const auto& m) { return m.parameters(); }, model);
}

inline std::string model_kind(const AnyModel& model) {
    return std::visit([](const auto& m) { return std::decay_t<decltype(m)>::kind(); }, model);
}

inline nlohmann::json model_config_json(const AnyModel& model) {
    return std::visit([](const auto& m) { return nlohmann::json(m.config()); }, model);
}

/// Checkpoint layout: 8-byte magic "LDVP0001", u32 little-endian length of
/// a JSON header {model, config, parameters:[{name, shape}]}, the header,
/// then every parameter's values as little-endian IEEE-754 doubles in
/// declaration order.
inline std::vector<std::uint8_t> encode_checkpoint(const AnyModel& model) {
    nlohmann::json header;
    header["model"] = model_kind(model);
    header["config"] = model_config_json(model);
    header["parameters"] = nlohmann::json::array();
    const auto params = model_parameters(model);
    for (const auto& p : params) header["parameters"].push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    detail::put_le(out, text.size(), 4);
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& p : params) {
        for (double v : p.tensor.data()) detail::put_le(out, std::bit_cast<std::uint64_t>(v), 8);
    }
    return out;
}

inline AnyModel decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>") {
    if (bytes.size() < 12) throw FormatError(origin + ": truncated checkpoint header");
    if (!std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin())) {
        throw FormatError(origin + ": bad magic, not an LDVP0001 checkpoint");
    }
    const std::size_t header_len = detail::get_le(bytes, 8, 4);
    if (bytes.size() < 12 + header_len) throw FormatError(origin + ": truncated checkpoint header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(origin + ": unreadable checkpoint header: " + e.what());
    }
    const std::string kind = header.value("model", "");
    AnyModel model = kind == VlnModel::kind()       ? AnyModel(VlnModel(header.at("config").get<VlnConfig>()))
                     : kind == ConvPgpModel::kind() ? AnyModel(ConvPgpModel(header.at("config").get<ConvPgpConfig>()))
                                                    : throw FormatError(origin + ": unknown model '" + kind + "'");
    auto params = model_parameters(model);
    const auto& listed = header.at("parameters");
    if (listed.size() != params.size()) {
        throw FormatError(origin + ": checkpoint lists " + std::to_string(listed.size()) + " parameters, model has " +
                          std::to_string(params.size()));
    }
    std::size_t values = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto name = listed[i].at("name").get<std::string>();
        const auto shape = listed[i].at("shape").get<Shape>();
        if (name != params[i].name || shape != params[i].tensor.shape()) {
            throw FormatError(origin + ": parameter " + name + " " + shape_str(shape) + " does not match model's " +
                              params[i].name + " " + shape_str(params[i].tensor.shape()));
        }
        values += params[i].tensor.numel();
    }
    const std::size_t expected = 12 + header_len + 8 * values;
    if (bytes.size() != expected) {
        throw FormatError(origin + ": checkpoint has " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(expected) + (bytes.size() < expected ? " (truncated)" : " (trailing data)"));
    }
    std::size_t at = 12 + header_len;
    for (auto& p : params) {
        for (double& v : p.tensor.data()) {
            v = std::bit_cast<double>(detail::get_le(bytes, at, 8));
            at += 8;
        }
    }
    return model;
}

inline void save_checkpoint(const std::filesystem::path& path, const AnyModel& model) {
    const auto bytes = encode_checkpoint(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + path.string());
}

inline AnyModel load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(detail::read_file(path), path.string());
}

} // namespace locdep
