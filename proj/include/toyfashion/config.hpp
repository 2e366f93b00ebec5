#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace toyfashion {

// Layered run configuration: file < TOYFASHION_OVERRIDES env < CLI --set.
// Overrides are dotted-key=value pairs ("train.stage1.steps=200").
nlohmann::json load_config_file(const std::string& path);
void apply_override(nlohmann::json& cfg, const std::string& dotted_key, const std::string& value);
nlohmann::json layered_config(const std::string& path, const std::vector<std::string>& cli_overrides);

uint64_t config_hash(const nlohmann::json& cfg);

// lookup with default; path is dotted
template <typename T>
T config_get(const nlohmann::json& cfg, const std::string& dotted, T def) {
    const nlohmann::json* cur = &cfg;
    size_t pos = 0;
    while (true) {
        size_t dot = dotted.find('.', pos);
        std::string key = dotted.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (!cur->is_object() || !cur->contains(key)) return def;
        cur = &(*cur)[key];
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    return cur->get<T>();
}

}  // namespace toyfashion
