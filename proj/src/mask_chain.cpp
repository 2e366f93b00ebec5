#include "toyfashion/mask_chain.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace toyfashion {

std::string mask_source_name(MaskSource s) {
    switch (s) {
        case MaskSource::OwnHead: return "own_head";
        case MaskSource::GroundTruth: return "ground_truth";
        case MaskSource::Cache: return "cache";
    }
    return "?";
}

std::string BlockSpec::site_id() const {
    return (side == Side::Encoder ? "enc.l" : "dec.l") + std::to_string(level);
}

const RouteEntry& RoutingTable::at(const std::string& site) const {
    auto it = entries.find(site);
    require(it != entries.end(), ErrorKind::Config, "routing table missing site " + site);
    return it->second;
}

MaskCache begin_run() { return MaskCache{}; }

RoutingTable route(const MaskCache& cache, int64_t timestep, const std::vector<BlockSpec>& sites,
                   bool chain_enabled, bool uniform_fallback, int64_t batch, int64_t n_attrs) {
    if (!cache.empty())
        require(cache.source_timestep > timestep, ErrorKind::Staleness,
                "mask cache from timestep " + std::to_string(cache.source_timestep) +
                    " is not older than current step " + std::to_string(timestep));
    RoutingTable table;
    for (const auto& s : sites) {
        if (!s.has_attention) continue;
        RouteEntry e;
        if (s.side == BlockSpec::Side::Decoder) {
            e.source = MaskSource::OwnHead;
        } else if (chain_enabled && !cache.empty()) {
            e.source = MaskSource::Cache;
            e.mask = resize_mask(cache.stored, s.height, s.width);
        } else if (chain_enabled && uniform_fallback && batch > 0 && n_attrs > 0) {
            // optional first-step behavior: a flat 0.5 mask instead of the
            // encoder's own (noisy) head
            e.source = MaskSource::Cache;
            e.mask = Tensor::full({batch, n_attrs, s.height, s.width}, 0.5);
        } else {
            e.source = MaskSource::OwnHead;
        }
        table.entries[s.site_id()] = std::move(e);
    }
    return table;
}

MaskCache update(MaskCache cache, const BlockMaskSet& last_decoder_mask, int64_t timestep,
                 const std::string& expected_site) {
    require(last_decoder_mask.site == expected_site, ErrorKind::Provenance,
            "cache update must come from " + expected_site + ", got " + last_decoder_mask.site);
    if (cache.source_timestep >= 0)
        require(timestep < cache.source_timestep, ErrorKind::Staleness,
                "cache updates must move to strictly smaller timesteps");
    cache.stored = last_decoder_mask.masks;
    cache.source_timestep = timestep;
    return cache;
}

Tensor resize_mask(const Tensor& mask, int64_t th, int64_t tw) {
    require(mask.rank() == 3 || mask.rank() == 4, ErrorKind::Shape, "resize_mask: rank-3/4 input expected");
    int64_t lead = (mask.rank() == 4) ? mask.dim(0) * mask.dim(1) : mask.dim(0);
    int64_t H = mask.dim(mask.rank() - 2), W = mask.dim(mask.rank() - 1);
    if (H == th && W == tw) return mask;
    std::vector<int64_t> out_shape(mask.shape());
    out_shape[mask.rank() - 2] = th;
    out_shape[mask.rank() - 1] = tw;
    Tensor out(out_shape);
    const double* src = mask.data();
    double* dst = out.data();
    double sy = static_cast<double>(H) / static_cast<double>(th);
    double sx = static_cast<double>(W) / static_cast<double>(tw);
    for (int64_t l = 0; l < lead; ++l)
        for (int64_t y = 0; y < th; ++y) {
            double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
            int64_t y0 = static_cast<int64_t>(std::floor(fy));
            double wy = fy - static_cast<double>(y0);
            int64_t y0c = std::clamp<int64_t>(y0, 0, H - 1);
            int64_t y1c = std::clamp<int64_t>(y0 + 1, 0, H - 1);
            for (int64_t x = 0; x < tw; ++x) {
                double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
                int64_t x0 = static_cast<int64_t>(std::floor(fx));
                double wx = fx - static_cast<double>(x0);
                int64_t x0c = std::clamp<int64_t>(x0, 0, W - 1);
                int64_t x1c = std::clamp<int64_t>(x0 + 1, 0, W - 1);
                const double* p = src + l * H * W;
                double v = (1 - wy) * ((1 - wx) * p[y0c * W + x0c] + wx * p[y0c * W + x1c]) +
                           wy * ((1 - wx) * p[y1c * W + x0c] + wx * p[y1c * W + x1c]);
                dst[(l * th + y) * tw + x] = std::clamp(v, 0.0, 1.0);
            }
        }
    return out;
}

void write_chain_log(const std::string& path, const ChainLog& log) {
    std::ofstream f(path);
    require(f.good(), ErrorKind::Config, "cannot open chain log for writing: " + path);
    for (const auto& e : log) {
        nlohmann::json j{{"timestep", e.timestep},
                         {"site", e.site},
                         {"source", e.source},
                         {"checksum", e.checksum},
                         {"cache_source_timestep", e.cache_source_timestep}};
        f << j.dump() << "\n";
    }
}

ChainLog read_chain_log(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), ErrorKind::Config, "cannot open chain log: " + path);
    ChainLog log;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        require(!j.is_discarded(), ErrorKind::Decode, "corrupt chain log line");
        ChainEvent e;
        e.timestep = j.at("timestep").get<int64_t>();
        e.site = j.at("site").get<std::string>();
        e.source = j.at("source").get<std::string>();
        e.checksum = j.at("checksum").get<uint64_t>();
        e.cache_source_timestep = j.at("cache_source_timestep").get<int64_t>();
        log.push_back(std::move(e));
    }
    return log;
}

}  // namespace toyfashion
