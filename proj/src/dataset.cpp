#include "toyfashion/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "toyfashion/image_io.hpp"

namespace fs = std::filesystem;

namespace toyfashion {

int64_t AttributeVocabulary::total_values() const {
    int64_t n = 0;
    for (const auto& c : categories) n += static_cast<int64_t>(c.values.size());
    return n;
}

int64_t AttributeVocabulary::value_offset(int64_t cat) const {
    require(cat >= 0 && cat < n(), ErrorKind::Vocabulary, "category index out of range");
    int64_t off = 0;
    for (int64_t i = 0; i < cat; ++i) off += static_cast<int64_t>(categories[i].values.size());
    return off;
}

int64_t AttributeVocabulary::token_id(int64_t cat, int64_t value_idx) const {
    require(cat >= 0 && cat < n(), ErrorKind::Vocabulary, "category index out of range");
    require(value_idx >= 0 && value_idx < static_cast<int64_t>(categories[cat].values.size()),
            ErrorKind::Vocabulary, "value index out of range");
    return value_offset(cat) + value_idx;
}

std::pair<int64_t, int64_t> AttributeVocabulary::locate_token(int64_t token) const {
    int64_t off = 0;
    for (int64_t c = 0; c < n(); ++c) {
        int64_t k = static_cast<int64_t>(categories[c].values.size());
        if (token < off + k && token >= off) return {c, token - off};
        off += k;
    }
    fail(ErrorKind::Vocabulary, "unknown attribute token " + std::to_string(token));
}

int64_t AttributeVocabulary::category_index(const std::string& name) const {
    for (int64_t c = 0; c < n(); ++c)
        if (categories[c].name == name) return c;
    fail(ErrorKind::Vocabulary, "unknown category " + name);
}

const std::array<double, 3>& AttributeVocabulary::color_of(int64_t token) const {
    auto [c, v] = locate_token(token);
    return categories[c].values[v].color;
}

int64_t AttributeVocabulary::nearest_value_token(int64_t cat, const std::array<double, 3>& rgb) const {
    require(cat >= 0 && cat < n(), ErrorKind::Vocabulary, "category index out of range");
    int64_t best = 0;
    double best_d = 1e300;
    for (int64_t v = 0; v < static_cast<int64_t>(categories[cat].values.size()); ++v) {
        const auto& col = categories[cat].values[v].color;
        double d = 0.0;
        for (int k = 0; k < 3; ++k) d += (rgb[k] - col[k]) * (rgb[k] - col[k]);
        if (d < best_d) {
            best_d = d;
            best = v;
        }
    }
    return token_id(cat, best);
}

void AttributeVocabulary::validate() const {
    require(n() >= 1, ErrorKind::Config, "vocabulary needs at least one category");
    std::set<std::string> names;
    for (const auto& c : categories) {
        require(names.insert(c.name).second, ErrorKind::Config, "duplicate category " + c.name);
        require(c.values.size() >= 2, ErrorKind::Config, "category " + c.name + " needs >= 2 values");
    }
}

uint64_t AttributeVocabulary::hash() const {
    std::string s = to_json().dump();
    return fnv1a64(s.data(), s.size());
}

nlohmann::json AttributeVocabulary::to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& c : categories) {
        nlohmann::json vals = nlohmann::json::array();
        for (const auto& v : c.values) vals.push_back({{"name", v.name}, {"color", v.color}});
        j.push_back({{"name", c.name}, {"values", vals}});
    }
    return j;
}

AttributeVocabulary AttributeVocabulary::from_json(const nlohmann::json& j) {
    AttributeVocabulary voc;
    for (const auto& cj : j) {
        AttributeCategory c;
        c.name = cj.at("name").get<std::string>();
        for (const auto& vj : cj.at("values")) {
            AttributeValue v;
            v.name = vj.at("name").get<std::string>();
            auto col = vj.at("color");
            v.color = {col[0].get<double>(), col[1].get<double>(), col[2].get<double>()};
            c.values.push_back(std::move(v));
        }
        voc.categories.push_back(std::move(c));
    }
    voc.validate();
    return voc;
}

AttributeVocabulary AttributeVocabulary::default4() {
    AttributeVocabulary v;
    v.categories = {
        {"hair",
         {{"crimson", {0.85, 0.10, 0.10}}, {"black", {0.05, 0.05, 0.08}}, {"blond", {0.95, 0.85, 0.45}}}},
        {"skin",
         {{"pale", {0.98, 0.86, 0.72}}, {"tan", {0.80, 0.60, 0.40}}, {"brown", {0.45, 0.28, 0.18}}}},
        {"mouth", {{"red", {0.90, 0.15, 0.25}}, {"pink", {0.95, 0.55, 0.65}}, {"dark", {0.30, 0.05, 0.10}}}},
        {"background",
         {{"mint", {0.75, 0.92, 0.80}},
          {"lavender", {0.80, 0.78, 0.95}},
          {"sand", {0.93, 0.88, 0.70}},
          {"gray", {0.62, 0.62, 0.62}}}},
    };
    v.validate();
    return v;
}

AttributeVocabulary AttributeVocabulary::default9() {
    // 9 region categories; extra patches are laid out as side swatches
    AttributeVocabulary v = default4();
    v.categories.push_back({"eyes", {{"blue", {0.20, 0.35, 0.90}}, {"green", {0.15, 0.70, 0.30}}}});
    v.categories.push_back({"brows", {{"dark", {0.12, 0.10, 0.08}}, {"light", {0.75, 0.65, 0.45}}}});
    v.categories.push_back(
        {"expression", {{"calm", {0.55, 0.55, 0.85}}, {"bright", {0.95, 0.75, 0.20}}}});
    v.categories.push_back({"arms", {{"bare", {0.90, 0.78, 0.66}}, {"sleeved", {0.25, 0.25, 0.45}}}});
    v.categories.push_back({"shoes", {{"black", {0.08, 0.08, 0.08}}, {"white", {0.92, 0.92, 0.92}}}});
    v.validate();
    return v;
}

const std::vector<std::string>& global_prompt_words() {
    static const std::vector<std::string> words = {"a", "model", "wearing", "the", "garment"};
    return words;
}

std::vector<int64_t> default_global_tokens() { return {0, 1, 2, 3, 4}; }

void DatasetSpec::validate() const {
    auto pow2 = [](int64_t v) { return v >= 32 && (v & (v - 1)) == 0; };
    require(pow2(height) && pow2(width), ErrorKind::Config, "H,W must be powers of two >= 32");
    require(size >= 1, ErrorKind::Config, "dataset size must be >= 1");
    vocabulary.validate();
}

nlohmann::json DatasetSpec::to_json() const {
    return {{"seed", seed},
            {"size", size},
            {"height", height},
            {"width", width},
            {"face_enabled", face_enabled},
            {"vocabulary", vocabulary.to_json()}};
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j) {
    DatasetSpec s;
    s.seed = j.at("seed").get<uint64_t>();
    s.size = j.at("size").get<int64_t>();
    s.height = j.at("height").get<int64_t>();
    s.width = j.at("width").get<int64_t>();
    s.face_enabled = j.at("face_enabled").get<bool>();
    s.vocabulary = AttributeVocabulary::from_json(j.at("vocabulary"));
    s.validate();
    return s;
}

uint64_t DatasetSpec::hash() const {
    std::string s = to_json().dump();
    return fnv1a64(s.data(), s.size());
}

namespace {

struct Figure {
    double hx, hy, r;          // head center and radius (pixels)
    double tx0, ty0, tx1, ty1; // torso / garment rectangle
    double arm_l[2][2], arm_r[2][2];  // shoulder->hand segments
    double leg_l[2][2], leg_r[2][2];  // hip->foot segments
};

Figure sample_figure(Rng& rng, int64_t H, int64_t W) {
    Figure f;
    double m = static_cast<double>(std::min(H, W));
    f.hx = (0.44 + 0.12 * rng.uniform()) * static_cast<double>(W);
    f.hy = (0.17 + 0.06 * rng.uniform()) * static_cast<double>(H);
    f.r = (0.105 + 0.025 * rng.uniform()) * m;
    double tw = (0.30 + 0.10 * rng.uniform()) * static_cast<double>(W);
    double th = (0.26 + 0.08 * rng.uniform()) * static_cast<double>(H);
    f.tx0 = f.hx - tw / 2.0;
    f.tx1 = f.hx + tw / 2.0;
    f.ty0 = f.hy + f.r + std::max(2.0, 0.04 * static_cast<double>(H));
    f.ty1 = f.ty0 + th;
    double arm_len = (0.20 + 0.06 * rng.uniform()) * static_cast<double>(H);
    double al = (0.60 + 0.55 * rng.uniform());  // radians below horizontal
    double ar = (0.60 + 0.55 * rng.uniform());
    f.arm_l[0][0] = f.tx0; f.arm_l[0][1] = f.ty0 + 1.0;
    f.arm_l[1][0] = f.tx0 - arm_len * std::cos(al);
    f.arm_l[1][1] = f.ty0 + arm_len * std::sin(al);
    f.arm_r[0][0] = f.tx1; f.arm_r[0][1] = f.ty0 + 1.0;
    f.arm_r[1][0] = f.tx1 + arm_len * std::cos(ar);
    f.arm_r[1][1] = f.ty0 + arm_len * std::sin(ar);
    double leg_len = (0.22 + 0.08 * rng.uniform()) * static_cast<double>(H);
    double spread = (0.05 + 0.12 * rng.uniform());
    double lx = f.hx - tw * 0.22, rx = f.hx + tw * 0.22;
    f.leg_l[0][0] = lx; f.leg_l[0][1] = f.ty1;
    f.leg_l[1][0] = lx - leg_len * spread;
    f.leg_l[1][1] = f.ty1 + leg_len;
    f.leg_r[0][0] = rx; f.leg_r[0][1] = f.ty1;
    f.leg_r[1][0] = rx + leg_len * spread;
    f.leg_r[1][1] = f.ty1 + leg_len;
    return f;
}

// squared distance from pixel center to a segment
double seg_dist2(double px, double py, const double a[2], const double b[2]) {
    double vx = b[0] - a[0], vy = b[1] - a[1];
    double wx = px - a[0], wy = py - a[1];
    double c1 = vx * wx + vy * wy;
    double c2 = vx * vx + vy * vy;
    double t = c2 > 0 ? std::clamp(c1 / c2, 0.0, 1.0) : 0.0;
    double dx = px - (a[0] + t * vx), dy = py - (a[1] + t * vy);
    return dx * dx + dy * dy;
}

ToySample generate_impl(const DatasetSpec& spec, int64_t index,
                        const std::vector<int64_t>* token_override) {
    spec.validate();
    require(index >= 0 && index < spec.size, ErrorKind::Bounds,
            "sample index " + std::to_string(index) + " out of range");
    const auto& voc = spec.vocabulary;
    int64_t H = spec.height, W = spec.width, N = voc.n();

    Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(index)));
    // Attribute values are block-stratified: every run of k consecutive
    // indices covers a category's k values exactly once, in an order shuffled
    // per (seed, category, block). Keeps empirical value frequencies tight
    // while remaining a pure function of (seed, index).
    std::vector<int64_t> tokens(N);
    for (int64_t c = 0; c < N; ++c) {
        int64_t k = static_cast<int64_t>(voc.categories[c].values.size());
        int64_t block = index / k;
        Rng perm_rng(mix_seed(mix_seed(spec.seed, 0xa77c + static_cast<uint64_t>(c)),
                              static_cast<uint64_t>(block)));
        std::vector<int64_t> perm(static_cast<size_t>(k));
        std::iota(perm.begin(), perm.end(), 0);
        for (int64_t i = k - 1; i > 0; --i)
            std::swap(perm[static_cast<size_t>(i)],
                      perm[static_cast<size_t>(perm_rng.uniform_int(static_cast<uint64_t>(i + 1)))]);
        tokens[c] = voc.token_id(c, perm[static_cast<size_t>(index % k)]);
    }
    if (token_override) {
        require(static_cast<int64_t>(token_override->size()) == N, ErrorKind::Vocabulary,
                "token override must cover every category");
        for (int64_t c = 0; c < N; ++c) {
            auto [cat, val] = voc.locate_token((*token_override)[c]);
            require(cat == c, ErrorKind::Vocabulary, "token override out of category order");
            (void)val;
        }
        tokens = *token_override;
    }
    Figure fig = sample_figure(rng, H, W);

    ToySample s;
    s.attr_tokens = tokens;
    s.global_tokens = default_global_tokens();
    s.image = Tensor({3, H, W});
    s.garment_image = Tensor({3, H, W}, 0.0);
    s.garment_mask = Tensor({1, H, W}, 0.0);
    s.pose_raster = Tensor({1, H, W}, 0.0);
    s.region_masks = Tensor({N, H, W}, 0.0);

    int64_t hair_idx = voc.category_index("hair");
    int64_t skin_idx = voc.category_index("skin");
    int64_t mouth_idx = voc.category_index("mouth");
    int64_t bg_idx = voc.category_index("background");

    const double line_r = std::max(0.8, static_cast<double>(std::min(H, W)) / 48.0);
    const double line_r2 = line_r * line_r;
    int64_t cell = std::max<int64_t>(2, H / 16);

    auto color_at = [&](int64_t cat) { return voc.color_of(tokens[cat]); };

    // side swatches for categories beyond the core four (the 9-region mode):
    // vertical bars along the left edge, clear of figure and background frame
    int64_t extra = N - 4;
    auto swatch_of = [&](double px, double py) -> int64_t {
        if (extra <= 0) return -1;
        double bar_w = 0.06 * static_cast<double>(W);
        if (px >= bar_w) return -1;
        double band = static_cast<double>(H) / static_cast<double>(extra);
        int64_t k = static_cast<int64_t>(py / band);
        return 4 + std::clamp<int64_t>(k, 0, extra - 1);
    };

    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
            double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
            double dx = px - fig.hx, dy = py - fig.hy;
            bool in_head = dx * dx + dy * dy <= fig.r * fig.r;
            bool in_torso = px >= fig.tx0 && px <= fig.tx1 && py >= fig.ty0 && py <= fig.ty1;
            bool on_limb = !in_torso && !in_head &&
                           (seg_dist2(px, py, fig.arm_l[0], fig.arm_l[1]) <= line_r2 ||
                            seg_dist2(px, py, fig.arm_r[0], fig.arm_r[1]) <= line_r2 ||
                            seg_dist2(px, py, fig.leg_l[0], fig.leg_l[1]) <= line_r2 ||
                            seg_dist2(px, py, fig.leg_r[0], fig.leg_r[1]) <= line_r2);
            int64_t swatch = (!in_head && !in_torso && !on_limb) ? swatch_of(px, py) : -1;

            std::array<double, 3> col{};
            int64_t region = -1;
            if (in_torso) {
                int64_t cx = x / cell, cy = y / cell;
                bool a = ((cx + cy) % 2) == 0;
                col = a ? std::array<double, 3>{0.12, 0.22, 0.72} : std::array<double, 3>{0.94, 0.94, 0.94};
                s.garment_mask.at3(0, y, x) = 1.0;
            } else if (in_head) {
                bool hair = dy <= -0.30 * fig.r;
                bool mouth = !hair && std::abs(dx) <= 0.45 * fig.r && dy >= 0.35 * fig.r && dy <= 0.70 * fig.r;
                if (hair) {
                    col = color_at(hair_idx);
                    region = hair_idx;
                } else if (mouth) {
                    col = color_at(mouth_idx);
                    region = mouth_idx;
                } else {
                    col = color_at(skin_idx);
                    region = skin_idx;
                }
            } else if (on_limb) {
                col = {0.20, 0.20, 0.20};
            } else if (swatch >= 0) {
                col = color_at(swatch);
                region = swatch;
            } else {
                col = color_at(bg_idx);
                region = bg_idx;
            }
            for (int64_t c = 0; c < 3; ++c) s.image.at3(c, y, x) = col[c];
            if (region >= 0) s.region_masks.at3(region, y, x) = 1.0;
            if (in_torso)
                for (int64_t c = 0; c < 3; ++c) s.garment_image.at3(c, y, x) = col[c];

            // pose raster: head outline + spine + shoulders + limbs
            double head_d = std::sqrt(dx * dx + dy * dy);
            double sp_a[2] = {fig.hx, fig.hy + fig.r};
            double sp_b[2] = {fig.hx, fig.ty1};
            double sh_a[2] = {fig.tx0, fig.ty0 + 1.0};
            double sh_b[2] = {fig.tx1, fig.ty0 + 1.0};
            bool stroke = std::abs(head_d - fig.r) <= line_r ||
                          seg_dist2(px, py, sp_a, sp_b) <= line_r2 ||
                          seg_dist2(px, py, sh_a, sh_b) <= line_r2 ||
                          seg_dist2(px, py, fig.arm_l[0], fig.arm_l[1]) <= line_r2 ||
                          seg_dist2(px, py, fig.arm_r[0], fig.arm_r[1]) <= line_r2 ||
                          seg_dist2(px, py, fig.leg_l[0], fig.leg_l[1]) <= line_r2 ||
                          seg_dist2(px, py, fig.leg_r[0], fig.leg_r[1]) <= line_r2;
            if (stroke) s.pose_raster.at3(0, y, x) = 1.0;
        }
    }

    if (spec.face_enabled) {
        int64_t fh = H / 4, fw = W / 4;
        int64_t cy = std::clamp<int64_t>(static_cast<int64_t>(fig.hy) - fh / 2, 0, H - fh);
        int64_t cx = std::clamp<int64_t>(static_cast<int64_t>(fig.hx) - fw / 2, 0, W - fw);
        s.face_crop = Tensor({3, fh, fw});
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < fh; ++y)
                for (int64_t x = 0; x < fw; ++x)
                    s.face_crop.at3(c, y, x) = s.image.at3(c, cy + y, cx + x);
    }
    return s;
}

}  // namespace

ToySample generate_sample(const DatasetSpec& spec, int64_t index) {
    return generate_impl(spec, index, nullptr);
}

ToySample render_with_tokens(const DatasetSpec& spec, int64_t index,
                             const std::vector<int64_t>& attr_tokens) {
    return generate_impl(spec, index, &attr_tokens);
}

std::pair<std::vector<int64_t>, std::vector<int64_t>> make_splits(const DatasetSpec& spec) {
    require(spec.size >= 10, ErrorKind::Config, "make_splits needs size >= 10");
    std::vector<int64_t> idx(static_cast<size_t>(spec.size));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(mix_seed(spec.seed, 0x5917ull));
    for (int64_t i = spec.size - 1; i > 0; --i) {
        int64_t j = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(i + 1)));
        std::swap(idx[i], idx[j]);
    }
    int64_t n_train = (spec.size * 9) / 10;
    std::vector<int64_t> train(idx.begin(), idx.begin() + n_train);
    std::vector<int64_t> eval(idx.begin() + n_train, idx.end());
    std::sort(train.begin(), train.end());
    std::sort(eval.begin(), eval.end());
    return {train, eval};
}

std::vector<uint8_t> serialize_sample(const ToySample& s) {
    NamedArrays a;
    a.tensors["image"] = s.image;
    a.tensors["garment_image"] = s.garment_image;
    a.tensors["garment_mask"] = s.garment_mask;
    a.tensors["pose_raster"] = s.pose_raster;
    a.tensors["region_masks"] = s.region_masks;
    if (!s.face_crop.empty()) a.tensors["face_crop"] = s.face_crop;
    a.ints["global_tokens"] = s.global_tokens;
    a.ints["attr_tokens"] = s.attr_tokens;
    return encode_arrays(a);
}

ToySample deserialize_sample(const std::vector<uint8_t>& bytes) {
    NamedArrays a = decode_arrays(bytes);
    ToySample s;
    auto need = [&](const char* name) -> Tensor& {
        auto it = a.tensors.find(name);
        require(it != a.tensors.end(), ErrorKind::Decode, std::string("sample missing array ") + name);
        return it->second;
    };
    s.image = need("image");
    s.garment_image = need("garment_image");
    s.garment_mask = need("garment_mask");
    s.pose_raster = need("pose_raster");
    s.region_masks = need("region_masks");
    if (a.tensors.count("face_crop")) s.face_crop = a.tensors["face_crop"];
    require(a.ints.count("global_tokens") && a.ints.count("attr_tokens"), ErrorKind::Decode,
            "sample missing token arrays");
    s.global_tokens = a.ints["global_tokens"];
    s.attr_tokens = a.ints["attr_tokens"];
    return s;
}

std::array<double, 3> region_mean_color(const Tensor& image, const Tensor& region_masks, int64_t cat) {
    require(image.rank() == 3 && image.dim(0) == 3, ErrorKind::Shape, "image must be [3,H,W]");
    require(region_masks.rank() == 3, ErrorKind::Shape, "region_masks must be [N,H,W]");
    require(cat >= 0 && cat < region_masks.dim(0), ErrorKind::Bounds, "category out of range");
    int64_t H = image.dim(1), W = image.dim(2);
    double area = 0.0;
    std::array<double, 3> sum{0, 0, 0};
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            double m = region_masks.at3(cat, y, x);
            if (m <= 0.0) continue;
            area += m;
            for (int64_t c = 0; c < 3; ++c) sum[c] += m * image.at3(c, y, x);
        }
    require(area > 0.0, ErrorKind::Bounds, "empty region " + std::to_string(cat));
    return {sum[0] / area, sum[1] / area, sum[2] / area};
}

namespace {

std::string sample_file_name(int64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample-%06lld.bin", static_cast<long long>(index));
    return buf;
}

nlohmann::json sidecar_record(const ToySample& s, const DatasetSpec& spec, int64_t index) {
    return {{"index", index},
            {"global_tokens", s.global_tokens},
            {"attr_tokens", s.attr_tokens},
            {"vocabulary_hash", spec.vocabulary.hash()},
            {"generator_version", kGeneratorVersion}};
}

}  // namespace

bool write_dataset(const DatasetSpec& spec, const std::string& dir, bool force) {
    spec.validate();
    fs::create_directories(dir);
    fs::path manifest_path = fs::path(dir) / "dataset.manifest";

    // stage everything in memory first so we can compare checksums
    std::vector<std::pair<std::string, std::vector<uint8_t>>> files;
    nlohmann::json entries = nlohmann::json::array();
    uint64_t combined = fnv1a64(nullptr, 0);
    for (int64_t i = 0; i < spec.size; ++i) {
        ToySample s = generate_sample(spec, i);
        auto bytes = serialize_sample(s);
        uint64_t sum = fnv1a64(bytes.data(), bytes.size());
        combined = fnv1a64(&sum, sizeof(sum), combined);
        std::string name = sample_file_name(i);
        entries.push_back({{"file", name}, {"checksum", sum}});
        files.emplace_back(name, std::move(bytes));
        // sidecar text record
        files.emplace_back(name.substr(0, name.size() - 4) + ".json",
                           [&] {
                               auto j = sidecar_record(s, spec, i).dump(2);
                               return std::vector<uint8_t>(j.begin(), j.end());
                           }());
    }
    nlohmann::json manifest = {{"spec", spec.to_json()},
                               {"generator_version", kGeneratorVersion},
                               {"vocabulary_hash", spec.vocabulary.hash()},
                               {"files", entries},
                               {"dataset_hash", combined}};

    if (fs::exists(manifest_path)) {
        std::ifstream f(manifest_path);
        nlohmann::json old = nlohmann::json::parse(f, nullptr, false);
        if (!old.is_discarded() && old.value("dataset_hash", uint64_t{0}) == combined &&
            old.value("spec", nlohmann::json{}) == manifest["spec"]) {
            bool intact = true;
            for (const auto& e : entries)
                if (!fs::exists(fs::path(dir) / e.at("file").get<std::string>())) intact = false;
            if (intact) return false;  // up to date
        }
        require(force, ErrorKind::Config,
                "existing dataset in " + dir + " does not match this spec; use --force to regenerate");
    }

    for (const auto& [name, bytes] : files) write_file_bytes((fs::path(dir) / name).string(), bytes);
    std::ofstream mf(manifest_path);
    require(mf.good(), ErrorKind::Config, "cannot write manifest");
    mf << manifest.dump(2) << "\n";
    return true;
}

StoredDataset load_dataset(const std::string& dir, bool verify_checksums) {
    fs::path manifest_path = fs::path(dir) / "dataset.manifest";
    require(fs::exists(manifest_path), ErrorKind::Config, "no dataset.manifest in " + dir);
    std::ifstream f(manifest_path);
    nlohmann::json manifest = nlohmann::json::parse(f, nullptr, false);
    require(!manifest.is_discarded(), ErrorKind::Decode, "corrupt dataset.manifest");
    StoredDataset ds;
    ds.spec = DatasetSpec::from_json(manifest.at("spec"));
    for (const auto& e : manifest.at("files")) {
        auto bytes = read_file_bytes((fs::path(dir) / e.at("file").get<std::string>()).string());
        if (verify_checksums)
            require(fnv1a64(bytes.data(), bytes.size()) == e.at("checksum").get<uint64_t>(),
                    ErrorKind::Decode, "checksum mismatch for " + e.at("file").get<std::string>());
        ds.samples.push_back(deserialize_sample(bytes));
    }
    require(static_cast<int64_t>(ds.samples.size()) == ds.spec.size, ErrorKind::Decode,
            "dataset file count does not match spec size");
    return ds;
}

uint64_t dataset_hash(const std::string& dir) {
    fs::path manifest_path = fs::path(dir) / "dataset.manifest";
    require(fs::exists(manifest_path), ErrorKind::Config, "no dataset.manifest in " + dir);
    std::ifstream f(manifest_path);
    nlohmann::json manifest = nlohmann::json::parse(f, nullptr, false);
    require(!manifest.is_discarded(), ErrorKind::Decode, "corrupt dataset.manifest");
    return manifest.at("dataset_hash").get<uint64_t>();
}

}  // namespace toyfashion
