#include "toyfashion/config.hpp"

#include <cstdlib>
#include <fstream>

#include "toyfashion/errors.hpp"
#include "toyfashion/rng.hpp"

namespace toyfashion {

nlohmann::json load_config_file(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), ErrorKind::Config, "cannot open config file: " + path);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    require(!j.is_discarded(), ErrorKind::Decode, "config file is not valid JSON: " + path);
    return j;
}

void apply_override(nlohmann::json& cfg, const std::string& dotted_key, const std::string& value) {
    nlohmann::json* cur = &cfg;
    size_t pos = 0;
    while (true) {
        size_t dot = dotted_key.find('.', pos);
        std::string key = dotted_key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        require(!key.empty(), ErrorKind::Usage, "empty key segment in override " + dotted_key);
        if (dot == std::string::npos) {
            // parse value as JSON when possible, else keep as string
            nlohmann::json v = nlohmann::json::parse(value, nullptr, false);
            (*cur)[key] = v.is_discarded() ? nlohmann::json(value) : v;
            return;
        }
        cur = &(*cur)[key];
        pos = dot + 1;
    }
}

nlohmann::json layered_config(const std::string& path, const std::vector<std::string>& cli_overrides) {
    nlohmann::json cfg = path.empty() ? nlohmann::json::object() : load_config_file(path);
    auto apply_pairs = [&cfg](const std::string& spec) {
        size_t pos = 0;
        while (pos < spec.size()) {
            size_t end = spec.find(',', pos);
            std::string pair = spec.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
            if (!pair.empty()) {
                size_t eq = pair.find('=');
                require(eq != std::string::npos, ErrorKind::Usage, "override must be key=value: " + pair);
                apply_override(cfg, pair.substr(0, eq), pair.substr(eq + 1));
            }
            if (end == std::string::npos) break;
            pos = end + 1;
        }
    };
    if (const char* env = std::getenv("TOYFASHION_OVERRIDES")) apply_pairs(env);
    for (const auto& ov : cli_overrides) {
        size_t eq = ov.find('=');
        require(eq != std::string::npos, ErrorKind::Usage, "--set expects key=value, got " + ov);
        apply_override(cfg, ov.substr(0, eq), ov.substr(eq + 1));
    }
    return cfg;
}

uint64_t config_hash(const nlohmann::json& cfg) {
    std::string s = cfg.dump();
    return fnv1a64(s.data(), s.size());
}

}  // namespace toyfashion
