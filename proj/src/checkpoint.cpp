#include "toyfashion/checkpoint.hpp"

#include <cinttypes>

#include "toyfashion/image_io.hpp"

namespace toyfashion {

std::string CheckpointMeta::weights_hash_hex() const {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, weights_hash);
    return buf;
}

namespace {

nlohmann::json meta_to_json(const CheckpointMeta& m) {
    return {{"kind", m.kind},
            {"net_config", m.net_config},
            {"vocabulary_hash", m.vocabulary_hash},
            {"stage", m.stage},
            {"lineage", m.lineage},
            {"weights_hash", m.weights_hash}};
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
    CheckpointMeta m;
    m.kind = j.at("kind").get<std::string>();
    m.net_config = j.at("net_config");
    m.vocabulary_hash = j.at("vocabulary_hash").get<uint64_t>();
    m.stage = j.at("stage").get<int>();
    m.lineage = j.at("lineage").get<std::vector<std::string>>();
    m.weights_hash = j.at("weights_hash").get<uint64_t>();
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params, CheckpointMeta meta) {
    meta.weights_hash = params.weights_hash();
    NamedArrays a;
    for (const auto& e : params.entries()) a.tensors["param/" + e.name] = e.var->value;
    a.texts["meta"] = meta_to_json(meta).dump();
    write_file_bytes(path, encode_arrays(a));
}

CheckpointMeta peek_checkpoint(const std::string& path) {
    NamedArrays a = decode_arrays(read_file_bytes(path));
    require(a.texts.count("meta"), ErrorKind::Decode, "checkpoint missing metadata: " + path);
    nlohmann::json j = nlohmann::json::parse(a.texts.at("meta"), nullptr, false);
    require(!j.is_discarded(), ErrorKind::Decode, "corrupt checkpoint metadata: " + path);
    return meta_from_json(j);
}

CheckpointMeta load_checkpoint_into(const std::string& path, ParamStore& params) {
    NamedArrays a = decode_arrays(read_file_bytes(path));
    require(a.texts.count("meta"), ErrorKind::Decode, "checkpoint missing metadata: " + path);
    nlohmann::json j = nlohmann::json::parse(a.texts.at("meta"), nullptr, false);
    require(!j.is_discarded(), ErrorKind::Decode, "corrupt checkpoint metadata: " + path);
    for (const auto& e : params.entries()) {
        auto it = a.tensors.find("param/" + e.name);
        require(it != a.tensors.end(), ErrorKind::Decode, "checkpoint missing parameter " + e.name);
        require(it->second.shape() == e.var->value.shape(), ErrorKind::Shape,
                "checkpoint shape mismatch for " + e.name);
        e.var->value = it->second;
    }
    CheckpointMeta m = meta_from_json(j);
    require(m.weights_hash == params.weights_hash(), ErrorKind::Decode,
            "checkpoint weight hash mismatch after load");
    return m;
}

}  // namespace toyfashion
