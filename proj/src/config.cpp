#include "mvps/config.hpp"

#include <fstream>

#include "mvps/errors.hpp"

namespace mvps::data {

using nlohmann::json;

json Config::defaults() {
    return json{
        {"seed", 0},
        {"data",
         {{"manifest", ""},
          {"image_height", 32},
          {"k_conditions", 2},
          {"attention_n", 20},
          {"resize_filter", "bilinear"},
          {"val_frac", 0.1},
          {"test_frac", 0.1},
          {"prompt", "A high-resolution street-view panorama"}}},
        {"gen",
         {{"scenes", 8},
          {"panos_per_scene", 5},
          {"extent", 160.0},
          {"blocks", 3},
          {"street_width", 8.0},
          {"building_density", 0.7},
          {"buildings_per_block", 2},
          {"min_building_size", 6.0},
          {"min_height", 6.0},
          {"max_height", 26.0},
          {"landmarks", 2},
          {"overhead_size", 128},
          {"gsd", 0.5},
          {"camera_height", 2.5},
          {"origin_lat", 40.70},
          {"origin_lon", -73.95}}},
        {"model",
         {{"base_channels", 64},
          {"channel_multipliers", {1, 2, 3, 4}},
          {"latent_codec", "s2d48"},
          {"text_vocab", 4096},
          {"text_dim", 128},
          {"time_dim", 256},
          {"fusion_channels", 128},
          {"distance_scale", 100.0},
          {"global_map_size", 256},
          {"norm_groups", 32}}},
        {"train",
         {{"lr", 2e-5},
          {"beta1", 0.9},
          {"beta2", 0.999},
          {"eps", 1e-8},
          {"weight_decay", 0.01},
          {"batch_size", 1},
          {"steps", 1000},
          {"timesteps", 1000},
          {"beta_start", 1e-4},
          {"beta_end", 0.02},
          {"p_keep_all", 0.3},
          {"p_drop_all", 0.1},
          {"p_each", 0.5},
          {"p_text_empty", 0.5},
          {"log_every", 10},
          {"ckpt_every", 200}}},
        {"sample", {{"steps", 50}, {"cfg_scale", 7.5}, {"eta", 0.0}}}};
}

Config::Config() : tree_(defaults()) {}

namespace {

bool type_compatible(const json& value, const json& def) {
    if (def.is_number() && value.is_number()) return true;  // int literals for doubles etc.
    return value.type() == def.type();
}

void merge_validate(json& dst, const json& src, const json& def, const std::string& prefix) {
    if (!src.is_object())
        throw SchemaError("config section '" + (prefix.empty() ? "<root>" : prefix) +
                          "' must be an object");
    for (const auto& [key, value] : src.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!def.contains(key)) throw SchemaError("unknown config key '" + path + "'");
        const json& dv = def.at(key);
        if (dv.is_object()) {
            merge_validate(dst[key], value, dv, path);
        } else if (!type_compatible(value, dv)) {
            throw SchemaError("config key '" + path + "' has wrong type (expected " +
                              std::string(dv.type_name()) + ")");
        } else {
            dst[key] = value;
        }
    }
}

}  // namespace

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    json parsed;
    try {
        parsed = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError("config file " + path + ": " + e.what());
    }
    Config cfg;
    merge_validate(cfg.tree_, parsed, defaults(), "");
    return cfg;
}

void Config::merge(const json& src) { merge_validate(tree_, src, defaults(), ""); }

void Config::apply_override(const std::string& dotted_assignment) {
    const auto eq = dotted_assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw SchemaError("config override must look like section.key=value, got '" +
                          dotted_assignment + "'");
    const std::string path = dotted_assignment.substr(0, eq);
    const std::string raw = dotted_assignment.substr(eq + 1);

    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;  // unquoted strings are taken literally
    }

    // build a nested single-key object and merge it through validation
    json nested = value;
    size_t end = path.size();
    while (true) {
        const size_t dot = path.rfind('.', end - 1);
        const std::string key =
            dot == std::string::npos ? path.substr(0, end) : path.substr(dot + 1, end - dot - 1);
        if (key.empty()) throw SchemaError("config override has an empty path segment: " + path);
        nested = json{{key, std::move(nested)}};
        if (dot == std::string::npos) break;
        end = dot;
    }
    merge(nested);
}

const nlohmann::json& Config::at(const std::string& dotted_path) const {
    const json* node = &tree_;
    size_t start = 0;
    while (start <= dotted_path.size()) {
        const size_t dot = dotted_path.find('.', start);
        const std::string key = dotted_path.substr(
            start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!node->is_object() || !node->contains(key))
            throw SchemaError("unknown config path '" + dotted_path + "'");
        node = &node->at(key);
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    return *node;
}

}  // namespace mvps::data
