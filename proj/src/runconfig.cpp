#include "sfcn/runconfig.hpp"

#include <json.hpp>

#include <fstream>
#include <set>

using nlohmann::json;

namespace sfcn {

namespace {

void require_keys(const json& obj, const std::string& section,
                  const std::set<std::string>& known) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!known.count(it.key()))
            throw ConfigError("unknown key \"" + it.key() + "\" in section " + section);
    }
}

template <typename T>
void get_if(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

void parse_model(const json& obj, ModelConfig& m) {
    require_keys(obj, "model",
                 {"scale_preset", "image_height", "image_width", "base_channels",
                  "blocks_per_module", "num_categories"});
    if (obj.contains("scale_preset")) {
        const std::string preset = obj.at("scale_preset").get<std::string>();
        if (preset == "full") m = ModelConfig::full_preset();
        else if (preset == "desk") m = ModelConfig::desk_preset();
        else throw ConfigError("model.scale_preset must be \"full\" or \"desk\"");
    }
    get_if(obj, "image_height", m.image_height);
    get_if(obj, "image_width", m.image_width);
    get_if(obj, "base_channels", m.base_channels);
    get_if(obj, "blocks_per_module", m.blocks_per_module);
    get_if(obj, "num_categories", m.num_categories);
}

void parse_objective(const json& obj, ObjectiveConfig& o) {
    require_keys(obj, "objective",
                 {"t_p", "lambda", "beta", "alpha_mode", "gamma_mode", "alpha", "gamma"});
    get_if(obj, "t_p", o.t_p);
    get_if(obj, "lambda", o.lambda);
    get_if(obj, "beta", o.beta);
    if (obj.contains("alpha_mode")) {
        const std::string mode = obj.at("alpha_mode").get<std::string>();
        if (mode == "auto") o.alpha_auto = true;
        else if (mode == "fixed") o.alpha_auto = false;
        else throw ConfigError("objective.alpha_mode must be \"auto\" or \"fixed\"");
    }
    if (obj.contains("gamma_mode")) {
        const std::string mode = obj.at("gamma_mode").get<std::string>();
        if (mode == "auto") o.gamma_auto = true;
        else if (mode == "fixed") o.gamma_auto = false;
        else throw ConfigError("objective.gamma_mode must be \"auto\" or \"fixed\"");
    }
    get_if(obj, "alpha", o.alpha_fixed);
    if (obj.contains("gamma")) o.gamma_fixed = obj.at("gamma").get<std::vector<double>>();
}

void parse_synth(const json& obj, SynthConfig& s) {
    require_keys(obj, "synth",
                 {"image_height", "image_width", "nuclei_min", "nuclei_max", "min_separation",
                  "background_color", "background_texture", "background_noise",
                  "mixture_weights", "categories", "mask_radius", "split_ratio",
                  "distractor_min", "distractor_max", "distractor_colors", "color_jitter", "color_mix",
                  "wash_min", "wash_max", "wash_alpha", "wash_radius_min", "wash_radius_max"});
    get_if(obj, "image_height", s.image_height);
    get_if(obj, "image_width", s.image_width);
    get_if(obj, "nuclei_min", s.nuclei_min);
    get_if(obj, "nuclei_max", s.nuclei_max);
    get_if(obj, "min_separation", s.min_separation);
    get_if(obj, "background_texture", s.background_texture);
    get_if(obj, "background_noise", s.background_noise);
    get_if(obj, "mask_radius", s.mask_radius);
    get_if(obj, "distractor_min", s.distractor_min);
    get_if(obj, "distractor_max", s.distractor_max);
    get_if(obj, "color_jitter", s.color_jitter);
    get_if(obj, "color_mix", s.color_mix);
    get_if(obj, "wash_min", s.wash_min);
    get_if(obj, "wash_max", s.wash_max);
    get_if(obj, "wash_alpha", s.wash_alpha);
    get_if(obj, "wash_radius_min", s.wash_radius_min);
    get_if(obj, "wash_radius_max", s.wash_radius_max);
    if (obj.contains("distractor_colors")) {
        s.distractor_colors.clear();
        for (const auto& entry : obj.at("distractor_colors")) {
            auto v = entry.get<std::vector<double>>();
            if (v.size() != 3) throw ConfigError("each distractor color needs 3 values");
            s.distractor_colors.push_back({v[0], v[1], v[2]});
        }
    }
    if (obj.contains("background_color")) {
        auto v = obj.at("background_color").get<std::vector<double>>();
        if (v.size() != 3) throw ConfigError("synth.background_color needs 3 values");
        s.background_color = {v[0], v[1], v[2]};
    }
    if (obj.contains("mixture_weights"))
        s.mixture_weights = obj.at("mixture_weights").get<std::vector<double>>();
    if (obj.contains("split_ratio")) {
        auto v = obj.at("split_ratio").get<std::vector<int>>();
        if (v.size() != 3) throw ConfigError("synth.split_ratio needs 3 values");
        s.split_ratio = {v[0], v[1], v[2]};
    }
    if (obj.contains("categories")) {
        s.categories.clear();
        for (const auto& cat : obj.at("categories")) {
            require_keys(cat, "synth.categories",
                         {"color", "radius_min", "radius_max", "texture_amplitude"});
            CategoryAppearance app;
            if (cat.contains("color")) {
                auto v = cat.at("color").get<std::vector<double>>();
                if (v.size() != 3) throw ConfigError("category color needs 3 values");
                app.color = {v[0], v[1], v[2]};
            }
            get_if(cat, "radius_min", app.radius_min);
            get_if(cat, "radius_max", app.radius_max);
            get_if(cat, "texture_amplitude", app.texture_amplitude);
            s.categories.push_back(app);
        }
    }
}

void parse_train(const json& obj, TrainConfig& t) {
    require_keys(obj, "train",
                 {"batch_size", "stage_epochs", "momentum", "patch_size", "val_interval"});
    get_if(obj, "batch_size", t.batch_size);
    get_if(obj, "momentum", t.momentum);
    get_if(obj, "patch_size", t.patch_size);
    get_if(obj, "val_interval", t.val_interval);
    if (obj.contains("stage_epochs")) {
        t.stage_epochs = obj.at("stage_epochs").get<std::vector<int>>();
        if (t.stage_epochs.size() != 3)
            throw ConfigError("train.stage_epochs needs exactly 3 entries");
    }
}

void parse_paths(const json& obj, PathsConfig& p) {
    require_keys(obj, "paths", {"dataset_dir", "checkpoint_dir", "report_dir"});
    get_if(obj, "dataset_dir", p.dataset_dir);
    get_if(obj, "checkpoint_dir", p.checkpoint_dir);
    get_if(obj, "report_dir", p.report_dir);
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    require_keys(root, "(top level)", {"seed", "model", "objective", "synth", "train", "paths"});

    RunConfig cfg;
    try {
        if (root.contains("seed")) cfg.seed = root.at("seed").get<std::uint64_t>();
        if (root.contains("model")) parse_model(root.at("model"), cfg.model);
        if (root.contains("objective")) parse_objective(root.at("objective"), cfg.objective);
        if (root.contains("synth")) parse_synth(root.at("synth"), cfg.synth);
        if (root.contains("train")) parse_train(root.at("train"), cfg.train);
        if (root.contains("paths")) parse_paths(root.at("paths"), cfg.paths);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return from_json_text(text);
}

}  // namespace sfcn
