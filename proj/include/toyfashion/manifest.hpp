#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace toyfashion {

// Written before any heavy work; a run is reproducible from this record
// alone (config + seed + hashes).
struct RunManifest {
    std::string command;
    uint64_t config_hash = 0;
    uint64_t dataset_hash = 0;
    int stage = 0;  // 0 when not a training run
    uint64_t seed = 0;
    std::string version_tag;
    std::string metric_log_path;
    std::vector<std::string> checkpoint_lineage;  // parent-first chain of weight hashes
    nlohmann::json config;                        // resolved, post-override

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
};

void write_manifest(const RunManifest& m, const std::string& path);
RunManifest read_manifest(const std::string& path);

}  // namespace toyfashion
