#pragma once

#include <map>
#include <string>
#include <vector>

#include "toyfashion/losses.hpp"
#include "toyfashion/tensor.hpp"

namespace toyfashion {

enum class MaskSource { OwnHead, GroundTruth, Cache };
std::string mask_source_name(MaskSource s);

// side/placement of one attention-bearing block
struct BlockSpec {
    enum class Side { Encoder, Decoder };
    Side side;
    int level = 0;
    int64_t height = 0, width = 0;
    bool has_attention = true;

    std::string site_id() const;
};

// Last-decoder-block mask cached at timestep t, routed to encoder sites at
// the next (smaller) timestep. Empty exactly at the start of a run.
struct MaskCache {
    Tensor stored;                 // [B,N,Hd,Wd]
    int64_t source_timestep = -1;  // none

    bool empty() const { return stored.empty(); }
};

struct RouteEntry {
    MaskSource source = MaskSource::OwnHead;
    Tensor mask;  // payload at site resolution when source != OwnHead
};

struct RoutingTable {
    std::map<std::string, RouteEntry> entries;

    const RouteEntry& at(const std::string& site) const;
};

MaskCache begin_run();

// Inference routing: decoder sites use their own heads; encoder sites use the
// cache when it holds a mask from a strictly earlier (larger) timestep, and
// fall back to their own heads otherwise. Ground truth never appears here.
RoutingTable route(const MaskCache& cache, int64_t timestep, const std::vector<BlockSpec>& sites,
                   bool chain_enabled = true, bool uniform_fallback = false, int64_t batch = 0,
                   int64_t n_attrs = 0);

// Stores the designated last-decoder-block mask; any other site is a
// provenance error.
MaskCache update(MaskCache cache, const BlockMaskSet& last_decoder_mask, int64_t timestep,
                 const std::string& expected_site);

// bilinear resampling, output clamped to [0,1]; accepts [N,H,W] or [B,N,H,W]
Tensor resize_mask(const Tensor& mask, int64_t th, int64_t tw);

// instrumentation for the provenance audit
struct ChainEvent {
    int64_t timestep = 0;
    std::string site;    // site id, or "update" for cache writes
    std::string source;  // own_head | cache | ground_truth | update
    uint64_t checksum = 0;
    int64_t cache_source_timestep = -1;
};

using ChainLog = std::vector<ChainEvent>;

void write_chain_log(const std::string& path, const ChainLog& log);
ChainLog read_chain_log(const std::string& path);

}  // namespace toyfashion
