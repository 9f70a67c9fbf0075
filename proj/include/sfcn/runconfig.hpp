#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "sfcn/data.hpp"
#include "sfcn/model.hpp"
#include "sfcn/objective.hpp"
#include "sfcn/train.hpp"

namespace sfcn {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PathsConfig {
    std::string dataset_dir;
    std::string checkpoint_dir;
    std::string report_dir;
};

// One declarative file drives every command. Parsing is strict: any unknown
// key aborts before side effects.
struct RunConfig {
    std::uint64_t seed = 7;
    ModelConfig model = ModelConfig::desk_preset();
    ObjectiveConfig objective;
    SynthConfig synth;
    TrainConfig train;
    PathsConfig paths;

    static RunConfig from_file(const std::string& path);
    static RunConfig from_json_text(const std::string& text);
};

}  // namespace sfcn
