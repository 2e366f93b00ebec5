#include "toyfashion/manifest.hpp"

#include <filesystem>
#include <fstream>

#include "toyfashion/errors.hpp"

namespace toyfashion {

nlohmann::json RunManifest::to_json() const {
    return {{"command", command},
            {"config_hash", config_hash},
            {"dataset_hash", dataset_hash},
            {"stage", stage},
            {"seed", seed},
            {"version_tag", version_tag},
            {"metric_log_path", metric_log_path},
            {"checkpoint_lineage", checkpoint_lineage},
            {"config", config}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config_hash = j.at("config_hash").get<uint64_t>();
    m.dataset_hash = j.at("dataset_hash").get<uint64_t>();
    m.stage = j.at("stage").get<int>();
    m.seed = j.at("seed").get<uint64_t>();
    m.version_tag = j.at("version_tag").get<std::string>();
    m.metric_log_path = j.at("metric_log_path").get<std::string>();
    m.checkpoint_lineage = j.at("checkpoint_lineage").get<std::vector<std::string>>();
    m.config = j.at("config");
    return m;
}

void write_manifest(const RunManifest& m, const std::string& path) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream f(path);
    require(f.good(), ErrorKind::Config, "cannot write manifest: " + path);
    f << m.to_json().dump(2) << "\n";
}

RunManifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), ErrorKind::Config, "cannot open manifest: " + path);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    require(!j.is_discarded(), ErrorKind::Decode, "corrupt manifest: " + path);
    return RunManifest::from_json(j);
}

}  // namespace toyfashion
