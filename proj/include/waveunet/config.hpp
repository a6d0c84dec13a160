#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "waveunet/errors.hpp"

namespace waveunet {

enum class Upsampling { linear, learned };

/// All hyperparameters of one network variant. `input_samples`/`output_samples`
/// are the window sizes the variant was designed for; with context enabled the
/// pair must be a fixed point of the size calculus (see sizes.hpp).
struct ModelConfig {
    int levels = 12;
    int extra_filters = 24;
    int down_filter_size = 15;
    int up_filter_size = 5;
    int num_sources = 2;
    int num_channels = 1;
    bool context = false;
    bool difference_output = false;
    Upsampling upsampling = Upsampling::linear;
    std::int64_t input_samples = 16384;
    std::int64_t output_samples = 16384;
    double leaky_slope = 0.2;
    int sample_rate = 22050;
    std::vector<std::string> source_names; // defaulted from num_sources when empty

    std::int64_t context_margin() const { return (input_samples - output_samples) / 2; }
};

inline std::vector<std::string> default_source_names(int num_sources) {
    if (num_sources == 2) return {"vocals", "accompaniment"};
    if (num_sources == 4) return {"bass", "drums", "other", "vocals"};
    std::vector<std::string> names;
    for (int k = 1; k <= num_sources; ++k) names.push_back("source_" + std::to_string(k));
    return names;
}

inline std::vector<std::string> source_names_of(const ModelConfig& config) {
    return config.source_names.empty() ? default_source_names(config.num_sources)
                                       : config.source_names;
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"levels", c.levels},
                       {"extra_filters", c.extra_filters},
                       {"down_filter_size", c.down_filter_size},
                       {"up_filter_size", c.up_filter_size},
                       {"num_sources", c.num_sources},
                       {"num_channels", c.num_channels},
                       {"context", c.context},
                       {"difference_output", c.difference_output},
                       {"upsampling", c.upsampling == Upsampling::learned ? "learned" : "linear"},
                       {"input_samples", c.input_samples},
                       {"output_samples", c.output_samples},
                       {"leaky_slope", c.leaky_slope},
                       {"sample_rate", c.sample_rate},
                       {"source_names", source_names_of(c)}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c = ModelConfig{};
    j.at("levels").get_to(c.levels);
    j.at("extra_filters").get_to(c.extra_filters);
    j.at("down_filter_size").get_to(c.down_filter_size);
    j.at("up_filter_size").get_to(c.up_filter_size);
    j.at("num_sources").get_to(c.num_sources);
    j.at("num_channels").get_to(c.num_channels);
    j.at("context").get_to(c.context);
    j.at("difference_output").get_to(c.difference_output);
    const std::string up = j.value("upsampling", "linear");
    if (up == "linear")
        c.upsampling = Upsampling::linear;
    else if (up == "learned")
        c.upsampling = Upsampling::learned;
    else
        throw ConfigError("unknown upsampling mode '" + up + "' (expected linear or learned)");
    j.at("input_samples").get_to(c.input_samples);
    j.at("output_samples").get_to(c.output_samples);
    c.leaky_slope = j.value("leaky_slope", 0.2);
    c.sample_rate = j.value("sample_rate", 22050);
    if (j.contains("source_names")) j.at("source_names").get_to(c.source_names);
}

} // namespace waveunet
