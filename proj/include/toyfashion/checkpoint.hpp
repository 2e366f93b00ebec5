#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "toyfashion/nn.hpp"

namespace toyfashion {

struct CheckpointMeta {
    std::string kind;  // "denoiser" | "pose"
    nlohmann::json net_config;
    uint64_t vocabulary_hash = 0;
    int stage = 0;  // training-stage tag (0 = untrained)
    std::vector<std::string> lineage;  // weight-hash chain, oldest first, self last
    uint64_t weights_hash = 0;

    std::string weights_hash_hex() const;
};

void save_checkpoint(const std::string& path, const ParamStore& params, CheckpointMeta meta);
CheckpointMeta peek_checkpoint(const std::string& path);
// shapes must match the store exactly
CheckpointMeta load_checkpoint_into(const std::string& path, ParamStore& params);

}  // namespace toyfashion
