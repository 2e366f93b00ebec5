#include "toyfashion/evalviz.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "toyfashion/image_io.hpp"

namespace fs = std::filesystem;

namespace toyfashion {

double EvalReport::at(const std::string& key) const {
    auto it = values.find(key);
    require(it != values.end(), ErrorKind::Config, "report has no field " + key);
    return it->second;
}

std::string EvalReport::to_kv() const {
    std::ostringstream os;
    os.precision(17);
    for (const auto& [k, v] : values) os << k << " = " << v << "\n";
    return os.str();
}

EvalReport EvalReport::from_kv(const std::string& text) {
    EvalReport r;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto eq = line.find(" = ");
        require(eq != std::string::npos, ErrorKind::Decode, "bad report line: " + line);
        r.values[line.substr(0, eq)] = std::stod(line.substr(eq + 3));
    }
    return r;
}

double attribute_accuracy(const Tensor& generated, const std::vector<int64_t>& requested,
                          const Tensor& region_masks, const AttributeVocabulary& voc,
                          std::map<std::string, double>* per_category) {
    require(static_cast<int64_t>(requested.size()) == voc.n(), ErrorKind::Vocabulary,
            "one requested token per category");
    double correct = 0.0;
    for (int64_t c = 0; c < voc.n(); ++c) {
        auto [cat, val] = voc.locate_token(requested[static_cast<size_t>(c)]);
        (void)val;
        require(cat == c, ErrorKind::Vocabulary, "requested token out of category order");
        auto mean = region_mean_color(generated, region_masks, c);
        bool hit = voc.nearest_value_token(c, mean) == requested[static_cast<size_t>(c)];
        if (per_category)
            (*per_category)[voc.categories[static_cast<size_t>(c)].name] = hit ? 1.0 : 0.0;
        correct += hit ? 1.0 : 0.0;
    }
    return correct / static_cast<double>(voc.n());
}

double mask_iou(const Tensor& pred, const Tensor& gt) {
    require(pred.same_shape(gt), ErrorKind::Shape, "mask_iou: shape mismatch");
    int64_t inter = 0, uni = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        bool p = pred[i] > 0.5;
        bool g = gt[i] >= 0.5;
        inter += (p && g) ? 1 : 0;
        uni += (p || g) ? 1 : 0;
    }
    if (uni == 0) return -1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

const char* kBuckets[3] = {"early", "middle", "late"};

struct Accum {
    double sum = 0.0;
    int64_t n = 0;
    void add(double v) {
        sum += v;
        ++n;
    }
    double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
};

}  // namespace

EvalReport evaluate(DenoiserNet& net, int stage_tag, const NoiseSchedule& sched,
                    const StoredDataset& ds, const std::vector<int64_t>& eval_idx,
                    const EvalConfig& cfg, const std::string& artifacts_dir) {
    const NetConfig& nc = net.config();
    const AttributeVocabulary& voc = ds.spec.vocabulary;
    int64_t N = voc.n(), H = nc.height, W = nc.width;
    require(!eval_idx.empty(), ErrorKind::Config, "empty eval split");
    bool rada_applicable = stage_tag != 1;

    std::vector<int64_t> idx = eval_idx;
    if (cfg.max_eval > 0 && static_cast<int64_t>(idx.size()) > cfg.max_eval)
        idx.resize(static_cast<size_t>(cfg.max_eval));

    // bucket probes: early = high noise
    int64_t probe_early = sched.T * 5 / 6, probe_mid = sched.T / 2, probe_late = sched.T / 6;
    std::vector<int64_t> probes{probe_early, probe_mid, probe_late};
    // trace capture at sampler timesteps nearest the probes
    auto ts = inference_timesteps(sched.T, cfg.sampler_steps);
    std::vector<int64_t> trace_ts;
    for (int64_t p : probes) {
        int64_t best = ts[0];
        for (int64_t t : ts)
            if (std::llabs(t - p) < std::llabs(best - p)) best = t;
        trace_ts.push_back(best);
    }

    Rng token_rng(mix_seed(cfg.seed, 0x7011));
    auto sites = net.sites();
    std::string last_dec = net.last_decoder_site().site_id();

    std::map<std::string, Accum> cat_acc;
    Accum mean_acc, pixel_mse, garment_fid;
    std::map<std::string, Accum> localization;       // per category
    Accum localization_mean, area_baseline;
    std::map<std::string, std::map<std::string, Accum>> iou;  // site -> bucket -> acc

    // panel artifacts
    NamedArrays artifacts;
    int64_t grid_kept = 0;
    std::map<std::string, Tensor> mask_pred_sum, mask_gt_sum;  // site/bucket keyed
    std::map<std::string, int64_t> mask_cnt;
    Tensor gate_sum;  // last decoder gates at late probe
    int64_t gate_cnt = 0;

    for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(cfg.batch)) {
        size_t end = std::min(idx.size(), start + static_cast<size_t>(cfg.batch));
        int64_t B = static_cast<int64_t>(end - start);
        std::vector<const ToySample*> conds(static_cast<size_t>(B));
        std::vector<std::vector<int64_t>> req_tokens(static_cast<size_t>(B));
        Tensor faces = nc.face_enabled ? Tensor({B, 3, H / 4, W / 4}) : Tensor();
        for (int64_t b = 0; b < B; ++b) {
            const ToySample& sm = ds.samples[static_cast<size_t>(idx[start + static_cast<size_t>(b)])];
            conds[static_cast<size_t>(b)] = &sm;
            if (cfg.tokens_mode == "dataset") {
                req_tokens[static_cast<size_t>(b)] = sm.attr_tokens;
            } else {
                std::vector<int64_t> toks(static_cast<size_t>(N));
                for (int64_t c = 0; c < N; ++c)
                    toks[static_cast<size_t>(c)] = voc.token_id(
                        c, static_cast<int64_t>(token_rng.uniform_int(
                               static_cast<uint64_t>(voc.categories[static_cast<size_t>(c)].values.size()))));
                req_tokens[static_cast<size_t>(b)] = toks;
            }
            if (nc.face_enabled)
                std::copy(sm.face_crop.data(), sm.face_crop.data() + sm.face_crop.numel(),
                          faces.data() + b * sm.face_crop.numel());
        }

        SamplerConfig scfg;
        scfg.kind = cfg.sampler_kind;
        scfg.steps = cfg.sampler_steps;
        scfg.seed = mix_seed(cfg.seed, 0x5a3f + start);
        scfg.cmi = cfg.cmi;
        scfg.masks_to_one = cfg.masks_to_one;
        scfg.guidance_scale = cfg.guidance_scale;
        SampleRequest req;
        req.conditions = conds;
        req.attr_tokens = req_tokens;
        req.global_tokens = default_global_tokens();
        req.faces = nc.face_enabled ? &faces : nullptr;
        if (rada_applicable) req.trace_timesteps = trace_ts;
        SampleResult res = sample(net, sched, scfg, req);

        for (int64_t b = 0; b < B; ++b) {
            const ToySample& sm = *conds[static_cast<size_t>(b)];
            const auto& toks = req_tokens[static_cast<size_t>(b)];
            Tensor gen({3, H, W});
            std::copy(res.images.data() + b * 3 * H * W, res.images.data() + (b + 1) * 3 * H * W,
                      gen.data());

            std::map<std::string, double> per_cat;
            mean_acc.add(attribute_accuracy(gen, toks, sm.region_masks, voc, &per_cat));
            for (const auto& [k, v] : per_cat) cat_acc[k].add(v);

            ToySample ref = render_with_tokens(
                ds.spec, idx[start + static_cast<size_t>(b)], toks);
            double mse = 0.0;
            int64_t cnt = 0;
            double fid = 0.0;
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    bool ing = sm.garment_mask.at3(0, y, x) > 0;
                    for (int64_t c = 0; c < 3; ++c) {
                        double d = gen.at3(c, y, x) - ref.image.at3(c, y, x);
                        if (!ing) {
                            mse += d * d;
                            ++cnt;
                        } else {
                            fid = std::max(fid, std::abs(gen.at3(c, y, x) - sm.garment_image.at3(c, y, x)));
                        }
                    }
                }
            pixel_mse.add(cnt ? mse / static_cast<double>(cnt) : 0.0);
            garment_fid.add(fid);

            if (artifacts_dir.size() && grid_kept < cfg.grid_samples) {
                artifacts.tensors["samples/img" + std::to_string(grid_kept)] = gen;
                if (grid_kept == 0) artifacts.tensors["reference/img0"] = ref.image;
                ++grid_kept;
            }
        }

        // attention localization + panel gates from traces
        if (rada_applicable) {
            for (const auto& [t, trace] : res.traces) {
                size_t bucket =
                    (t >= probe_early) ? 0 : (t >= probe_mid ? 1 : 2);  // early/middle/late
                for (const auto& site : trace.sites) {
                    // gate mass fraction inside the ground-truth region
                    for (int64_t b = 0; b < B; ++b) {
                        const ToySample& sm = *conds[static_cast<size_t>(b)];
                        Tensor gt_site = downsample_area(sm.region_masks, site.h, site.w);
                        for (int64_t c = 0; c < N; ++c) {
                            double inside = 0.0, total_gate = 0.0, area = 0.0;
                            for (int64_t p = 0; p < site.h * site.w; ++p) {
                                double g = site.applied[(b * N + c) * site.h * site.w + p];
                                double m = gt_site[c * site.h * site.w + p];
                                total_gate += g;
                                if (m >= 0.5) {
                                    inside += g;
                                    area += 1.0;
                                }
                            }
                            if (area == 0.0 || total_gate <= 0.0) continue;  // empty region: excluded
                            double frac = inside / total_gate;
                            localization[voc.categories[static_cast<size_t>(c)].name].add(frac);
                            localization_mean.add(frac);
                            area_baseline.add(area / static_cast<double>(site.h * site.w));
                        }
                    }
                    if (artifacts_dir.size() && site.site == last_dec && bucket == 2 && gate_cnt == 0) {
                        gate_sum = Tensor({N, site.h, site.w});
                        for (int64_t c = 0; c < N; ++c)
                            for (int64_t p = 0; p < site.h * site.w; ++p)
                                gate_sum[c * site.h * site.w + p] = site.applied[c * site.h * site.w + p];
                        gate_cnt = 1;
                    }
                }
            }

            // mask quality: own-head predictions on noised eval images
            Tensor x0({B, 3, H, W}), gtm({B, N, H, W});
            for (int64_t b = 0; b < B; ++b) {
                const ToySample& sm = *conds[static_cast<size_t>(b)];
                std::copy(sm.image.data(), sm.image.data() + 3 * H * W, x0.data() + b * 3 * H * W);
                std::copy(sm.region_masks.data(), sm.region_masks.data() + N * H * W,
                          gtm.data() + b * N * H * W);
            }
            for (size_t pi = 0; pi < probes.size(); ++pi) {
                int64_t t = probes[pi];
                Rng nrng(mix_seed(cfg.seed, 0xe95 + static_cast<uint64_t>(t)));
                Tensor eps = Tensor::randn({B, 3, H, W}, nrng);
                Tensor x_t = x0;
                double sa = std::sqrt(sched.alpha_bars[t]), sb = std::sqrt(1.0 - sched.alpha_bars[t]);
                for (int64_t i = 0; i < x_t.numel(); ++i) x_t[i] = sa * x0[i] + sb * eps[i];
                RoutingTable own;
                for (const auto& s : sites) own.entries[s.site_id()] = {MaskSource::OwnHead, Tensor()};
                ForwardTrace trace;
                ForwardOptions fo;
                fo.routing = &own;
                fo.compute_heads = true;
                fo.face = nc.face_enabled ? &faces : nullptr;
                fo.trace = &trace;
                NoGradGuard ng;
                std::vector<int64_t> tv(static_cast<size_t>(B), t);
                std::vector<std::vector<int64_t>> dataset_tokens(static_cast<size_t>(B));
                for (int64_t b = 0; b < B; ++b)
                    dataset_tokens[static_cast<size_t>(b)] = conds[static_cast<size_t>(b)]->attr_tokens;
                net.forward(assemble_conditions_batch(conds, x_t), tv, default_global_tokens(),
                            dataset_tokens, fo);
                for (const auto& site : trace.sites) {
                    Tensor gt_site = downsample_area(gtm, site.h, site.w);
                    for (int64_t b = 0; b < B; ++b)
                        for (int64_t c = 0; c < N; ++c) {
                            Tensor p({1, site.h, site.w}), g({1, site.h, site.w});
                            for (int64_t q = 0; q < site.h * site.w; ++q) {
                                p[q] = site.predicted[(b * N + c) * site.h * site.w + q];
                                g[q] = gt_site[(b * N + c) * site.h * site.w + q];
                            }
                            double v = mask_iou(p, g);
                            if (v >= 0.0) iou[site.site][kBuckets[pi]].add(v);
                        }
                    if (artifacts_dir.size()) {
                        std::string key = site.site + "/" + kBuckets[pi];
                        if (!mask_cnt.count(key)) {
                            Tensor ps({N, site.h, site.w}), gs({N, site.h, site.w});
                            for (int64_t q = 0; q < N * site.h * site.w; ++q) {
                                ps[q] = site.predicted[q];  // first batch item
                                gs[q] = gt_site[q];
                            }
                            mask_pred_sum[key] = ps;
                            mask_gt_sum[key] = gs;
                            mask_cnt[key] = 1;
                        }
                    }
                }
            }
        }
    }

    EvalReport r;
    r.values["eval_count"] = static_cast<double>(idx.size());
    r.values["rada_applicable"] = rada_applicable ? 1.0 : 0.0;
    r.values["attribute_accuracy.mean"] = mean_acc.mean();
    for (const auto& [k, a] : cat_acc) r.values["attribute_accuracy." + k] = a.mean();
    r.values["pixel_mse_outside_garment"] = pixel_mse.mean();
    r.values["garment_fidelity"] = garment_fid.mean();
    if (rada_applicable) {
        r.values["attention_localization.mean"] = localization_mean.mean();
        r.values["attention_localization.area_baseline"] = area_baseline.mean();
        for (const auto& [k, a] : localization) r.values["attention_localization." + k] = a.mean();
        for (const auto& [site, buckets] : iou) {
            Accum site_mean;
            for (const auto& [bk, a] : buckets) {
                r.values["mask_iou." + site + "." + bk] = a.mean();
                site_mean.add(a.mean());
            }
            r.values["mask_iou." + site + ".mean"] = site_mean.mean();
        }
        if (iou.count(last_dec)) r.values["mask_iou.last_decoder.mean"] = r.at("mask_iou." + last_dec + ".mean");
    }

    if (!artifacts_dir.empty()) {
        fs::create_directories(artifacts_dir);
        for (const auto& [k, t] : mask_pred_sum) artifacts.tensors["mask/" + k + "/pred"] = t;
        for (const auto& [k, t] : mask_gt_sum) artifacts.tensors["mask/" + k + "/gt"] = t;
        if (gate_cnt) artifacts.tensors["gate/last_decoder"] = gate_sum;
        artifacts.texts["report"] = r.to_kv();
        artifacts.texts["encoder_mask_source"] = cfg.masks_to_one ? "ground_truth"
                                                : cfg.cmi         ? "cache"
                                                                  : "own_head";
        write_file_bytes((fs::path(artifacts_dir) / "eval_arrays.bin").string(),
                         encode_arrays(artifacts));
    }
    return r;
}

namespace {

Tensor tile_row(const std::vector<Tensor>& imgs) {
    int64_t H = imgs[0].dim(1), W = imgs[0].dim(2);
    Tensor out({3, H, static_cast<int64_t>(imgs.size()) * (W + 1)}, 1.0);
    for (size_t i = 0; i < imgs.size(); ++i)
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x)
                    out.at3(c, y, static_cast<int64_t>(i) * (W + 1) + x) = imgs[i].at3(c, y, x);
    return out;
}

Tensor gray3(const Tensor& m) {  // [h,w] slice -> [3,h,w]
    Tensor out({3, m.dim(0), m.dim(1)});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < m.numel(); ++i) out[c * m.numel() + i] = m[i];
    return out;
}

Tensor stack_rows(const Tensor& top, const Tensor& bottom) {
    int64_t W = std::max(top.dim(2), bottom.dim(2));
    Tensor out({3, top.dim(1) + 1 + bottom.dim(1), W}, 1.0);
    for (int64_t c = 0; c < 3; ++c) {
        for (int64_t y = 0; y < top.dim(1); ++y)
            for (int64_t x = 0; x < top.dim(2); ++x) out.at3(c, y, x) = top.at3(c, y, x);
        for (int64_t y = 0; y < bottom.dim(1); ++y)
            for (int64_t x = 0; x < bottom.dim(2); ++x)
                out.at3(c, top.dim(1) + 1 + y, x) = bottom.at3(c, y, x);
    }
    return out;
}

}  // namespace

DiagnosticsResult render_diagnostics(const std::string& artifacts_dir, const std::string& panels_dir) {
    DiagnosticsResult out;
    fs::path apath = fs::path(artifacts_dir) / "eval_arrays.bin";
    require(fs::exists(apath), ErrorKind::Config, "missing eval artifacts: " + apath.string());
    NamedArrays a = decode_arrays(read_file_bytes(apath.string()));
    fs::create_directories(panels_dir);

    // sample grid
    std::vector<Tensor> grid;
    for (int64_t k = 0;; ++k) {
        auto it = a.tensors.find("samples/img" + std::to_string(k));
        if (it == a.tensors.end()) break;
        grid.push_back(it->second);
    }
    if (!grid.empty()) {
        std::string p = (fs::path(panels_dir) / "samples_grid.ppm").string();
        write_ppm(p, tile_row(grid));
        out.written.push_back(p);
    } else {
        out.skipped.push_back("samples_grid: no sample arrays in artifacts");
    }

    // mask grids, one panel per (site, bucket); label carries the encoder source
    std::string src = a.texts.count("encoder_mask_source") ? a.texts.at("encoder_mask_source") : "own_head";
    bool any_mask = false;
    for (const auto& [name, t] : a.tensors) {
        if (name.rfind("mask/", 0) != 0 || name.find("/pred") == std::string::npos) continue;
        any_mask = true;
        std::string key = name.substr(5, name.size() - 5 - 5);  // site/bucket
        auto git = a.tensors.find("mask/" + key + "/gt");
        if (git == a.tensors.end()) {
            out.skipped.push_back("mask_grid " + key + ": missing gt array");
            continue;
        }
        int64_t N = t.dim(0), h = t.dim(1), w = t.dim(2);
        std::vector<Tensor> pred_tiles, gt_tiles;
        for (int64_t c = 0; c < N; ++c) {
            Tensor pm({h, w}), gm({h, w});
            for (int64_t i = 0; i < h * w; ++i) {
                pm[i] = t[c * h * w + i];
                gm[i] = git->second[c * h * w + i];
            }
            pred_tiles.push_back(gray3(pm));
            gt_tiles.push_back(gray3(gm));
        }
        std::string fname = "mask_grid_" + key + "_" + src + ".ppm";
        std::replace(fname.begin(), fname.end(), '/', '_');
        std::replace(fname.begin(), fname.end(), '.', '_');
        fname = fname.substr(0, fname.size() - 4) + ".ppm";
        std::string p = (fs::path(panels_dir) / fname).string();
        write_ppm(p, stack_rows(tile_row(pred_tiles), tile_row(gt_tiles)));
        out.written.push_back(p);
    }
    if (!any_mask) out.skipped.push_back("mask_grid: no mask arrays in artifacts");

    // attention overlay: last-decoder gates over the reference image
    if (a.tensors.count("gate/last_decoder") && a.tensors.count("reference/img0")) {
        const Tensor& ref_img = a.tensors.at("reference/img0");
        const Tensor& gates = a.tensors.at("gate/last_decoder");
        int64_t H = ref_img.dim(1), W = ref_img.dim(2), N = gates.dim(0);
        std::vector<Tensor> tiles;
        for (int64_t c = 0; c < N; ++c) {
            Tensor up = resize_mask(gates.reshaped({1, gates.dim(0), gates.dim(1), gates.dim(2)}), H, W);
            Tensor tile({3, H, W});
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    double g = up.at4(0, c, y, x);
                    tile.at3(0, y, x) = 0.4 * ref_img.at3(0, y, x) + 0.6 * g;
                    tile.at3(1, y, x) = 0.4 * ref_img.at3(1, y, x);
                    tile.at3(2, y, x) = 0.4 * ref_img.at3(2, y, x);
                }
            tiles.push_back(tile);
        }
        std::string p = (fs::path(panels_dir) / "attention_overlay.ppm").string();
        write_ppm(p, tile_row(tiles));
        out.written.push_back(p);
    } else {
        out.skipped.push_back("attention_overlay: gate or reference arrays missing");
    }

    if (a.texts.count("report")) {
        std::string p = (fs::path(panels_dir) / "metrics_summary.txt").string();
        std::ofstream f(p);
        f << a.texts.at("report");
        out.written.push_back(p);
    } else {
        out.skipped.push_back("metrics_summary: report text missing");
    }
    return out;
}

}  // namespace toyfashion
