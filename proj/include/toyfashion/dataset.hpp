#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "toyfashion/tensor.hpp"

namespace toyfashion {

inline constexpr const char* kGeneratorVersion = "toyfashion-gen-1";

struct AttributeValue {
    std::string name;
    std::array<double, 3> color;  // the fill color this value paints
};

struct AttributeCategory {
    std::string name;
    std::vector<AttributeValue> values;
};

// Ordered categories with >= 2 values each; token ids are dense integers
// starting at 0, laid out category by category.
struct AttributeVocabulary {
    std::vector<AttributeCategory> categories;

    int64_t n() const { return static_cast<int64_t>(categories.size()); }
    int64_t total_values() const;
    int64_t value_offset(int64_t cat) const;
    int64_t token_id(int64_t cat, int64_t value_idx) const;
    // inverse of token_id; throws Vocabulary on unknown token
    std::pair<int64_t, int64_t> locate_token(int64_t token) const;
    int64_t category_index(const std::string& name) const;
    const std::array<double, 3>& color_of(int64_t token) const;
    // nearest value of `cat` to an RGB color, by squared distance
    int64_t nearest_value_token(int64_t cat, const std::array<double, 3>& rgb) const;

    void validate() const;
    uint64_t hash() const;
    nlohmann::json to_json() const;
    static AttributeVocabulary from_json(const nlohmann::json& j);

    // hair / skin / mouth / background
    static AttributeVocabulary default4();
    // the 9-region configuration (expression, skin, hair, mouth, ...)
    static AttributeVocabulary default9();
};

// words available to the overall prompt; ids index the global text table
const std::vector<std::string>& global_prompt_words();
std::vector<int64_t> default_global_tokens();

struct DatasetSpec {
    uint64_t seed = 0;
    int64_t size = 0;
    int64_t height = 64, width = 64;
    AttributeVocabulary vocabulary;
    bool face_enabled = true;

    void validate() const;
    nlohmann::json to_json() const;
    static DatasetSpec from_json(const nlohmann::json& j);
    uint64_t hash() const;
};

struct ToySample {
    Tensor image;          // [3,H,W] in [0,1]
    Tensor garment_image;  // [3,H,W], zero outside the garment
    Tensor garment_mask;   // [1,H,W] binary
    Tensor pose_raster;    // [1,H,W] in [0,1]
    Tensor region_masks;   // [N,H,W] binary, pairwise disjoint
    Tensor face_crop;      // [3,h,w]; empty when faces are disabled
    std::vector<int64_t> global_tokens;
    std::vector<int64_t> attr_tokens;  // one dense token per category
};

// Deterministic in (spec.seed, index). The garment carries a fixed checker
// texture; every category owns a disjoint region whose fill color encodes its
// sampled value token.
ToySample generate_sample(const DatasetSpec& spec, int64_t index);

// Same geometry as generate_sample(spec,index) but painted with the given
// attribute tokens; the evaluation reference for counterfactual prompts.
ToySample render_with_tokens(const DatasetSpec& spec, int64_t index,
                             const std::vector<int64_t>& attr_tokens);

// disjoint, deterministic 90/10 split
std::pair<std::vector<int64_t>, std::vector<int64_t>> make_splits(const DatasetSpec& spec);

std::vector<uint8_t> serialize_sample(const ToySample& s);
ToySample deserialize_sample(const std::vector<uint8_t>& bytes);

// mean color of `image` inside region_masks[cat]; empty regions throw Bounds
std::array<double, 3> region_mean_color(const Tensor& image, const Tensor& region_masks, int64_t cat);

struct StoredDataset {
    DatasetSpec spec;
    std::vector<ToySample> samples;
};

// Materializes samples + dataset.manifest into dir. Idempotent: an existing
// dataset with matching checksums is left untouched (returns false); a
// mismatched one throws Config unless force is set.
bool write_dataset(const DatasetSpec& spec, const std::string& dir, bool force = false);
StoredDataset load_dataset(const std::string& dir, bool verify_checksums = false);
uint64_t dataset_hash(const std::string& dir);

}  // namespace toyfashion
