#include "toyfashion/mde.hpp"

#include <sstream>

#include "httplib.h"

namespace toyfashion {

void DescriptionBundle::validate_against(const AttributeVocabulary& voc) const {
    for (const auto& [cat, token] : attributes) {
        int64_t ci = voc.category_index(cat);
        auto [tc, tv] = voc.locate_token(token);
        (void)tv;
        require(tc == ci, ErrorKind::Vocabulary, "token does not belong to category " + cat);
    }
    if (!attributes.empty())
        require(static_cast<int64_t>(attributes.size()) == voc.n(), ErrorKind::Vocabulary,
                "attributes must cover every category");
}

std::string StubExtractorClient::caption(const Tensor&) {
    std::ostringstream os;
    const auto& words = global_prompt_words();
    for (size_t i = 0; i < words.size(); ++i) os << (i ? " " : "") << words[i];
    return os.str();
}

std::optional<FaceBox> StubExtractorClient::detect_face(const Tensor&) {
    require(ctx_ != nullptr, ErrorKind::Config, "stub client has no bound sample");
    if (ctx_->face_crop.empty()) return std::nullopt;
    // head bounding box from the sample's own region geometry
    int64_t N = ctx_->region_masks.dim(0), H = ctx_->region_masks.dim(1), W = ctx_->region_masks.dim(2);
    int64_t x0 = W, y0 = H, x1 = -1, y1 = -1;
    int64_t bg = voc_.category_index("background");
    for (int64_t c = 0; c < N; ++c) {
        if (c == bg) continue;
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                if (ctx_->region_masks.at3(c, y, x) > 0) {
                    x0 = std::min(x0, x);
                    y0 = std::min(y0, y);
                    x1 = std::max(x1, x);
                    y1 = std::max(y1, y);
                }
    }
    if (x1 < 0) return std::nullopt;
    return FaceBox{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

Tensor StubExtractorClient::enhance(const Tensor& face) { return face; }

std::map<std::string, int64_t> StubExtractorClient::extract_attributes(const Tensor&) {
    require(ctx_ != nullptr, ErrorKind::Config, "stub client has no bound sample");
    std::map<std::string, int64_t> out;
    for (int64_t c = 0; c < voc_.n(); ++c) {
        auto mean = region_mean_color(ctx_->image, ctx_->region_masks, c);
        out[voc_.categories[static_cast<size_t>(c)].name] = voc_.nearest_value_token(c, mean);
    }
    return out;
}

HttpExtractorClient::HttpExtractorClient(std::string host, int port, int timeout_ms, int retries)
    : host_(std::move(host)), port_(port), timeout_ms_(timeout_ms), retries_(retries) {}

nlohmann::json HttpExtractorClient::post(const std::string& route, const nlohmann::json& body) {
    std::string payload = body.dump();
    for (int attempt = 0; attempt <= retries_; ++attempt) {
        httplib::Client cli(host_, port_);
        cli.set_connection_timeout(0, timeout_ms_ * 1000);
        cli.set_read_timeout(0, timeout_ms_ * 1000);
        auto res = cli.Post(route.c_str(), payload, "application/json");
        if (res && res->status == 200) {
            nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
            require(!j.is_discarded(), ErrorKind::External, "external client returned invalid JSON");
            return j;
        }
    }
    fail(ErrorKind::External,
         "external client failed after " + std::to_string(retries_ + 1) + " attempts: " + route);
}

namespace {

nlohmann::json image_payload(const Tensor& t) {
    return {{"shape", t.shape()}, {"data", std::vector<double>(t.data(), t.data() + t.numel())}};
}

Tensor image_from_payload(const nlohmann::json& j) {
    auto shape = j.at("shape").get<std::vector<int64_t>>();
    auto data = j.at("data").get<std::vector<double>>();
    return Tensor::from_vector(shape, std::move(data));
}

}  // namespace

std::string HttpExtractorClient::caption(const Tensor& image) {
    return post("/caption", image_payload(image)).at("text").get<std::string>();
}

std::optional<FaceBox> HttpExtractorClient::detect_face(const Tensor& image) {
    auto j = post("/detect", image_payload(image));
    if (!j.at("found").get<bool>()) return std::nullopt;
    return FaceBox{j.at("x").get<int64_t>(), j.at("y").get<int64_t>(), j.at("w").get<int64_t>(),
                   j.at("h").get<int64_t>()};
}

Tensor HttpExtractorClient::enhance(const Tensor& face) {
    return image_from_payload(post("/enhance", image_payload(face)));
}

std::map<std::string, int64_t> HttpExtractorClient::extract_attributes(const Tensor& face) {
    auto j = post("/attributes", image_payload(face));
    std::map<std::string, int64_t> out;
    for (auto it = j.at("attrs").begin(); it != j.at("attrs").end(); ++it)
        out[it.key()] = it.value().get<int64_t>();
    return out;
}

std::vector<int64_t> tokenize_caption(const std::string& text) {
    const auto& words = global_prompt_words();
    std::vector<int64_t> out;
    std::istringstream is(text);
    std::string word;
    while (is >> word) {
        for (size_t i = 0; i < words.size(); ++i)
            if (words[i] == word) {
                out.push_back(static_cast<int64_t>(i));
                break;
            }
    }
    if (out.empty()) out = default_global_tokens();
    return out;
}

namespace {

Tensor crop_box(const Tensor& image, const FaceBox& box) {
    int64_t H = image.dim(1), W = image.dim(2);
    int64_t x0 = std::clamp<int64_t>(box.x, 0, W - 1), y0 = std::clamp<int64_t>(box.y, 0, H - 1);
    int64_t x1 = std::clamp<int64_t>(box.x + box.w, x0 + 1, W);
    int64_t y1 = std::clamp<int64_t>(box.y + box.h, y0 + 1, H);
    Tensor out({3, y1 - y0, x1 - x0});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = y0; y < y1; ++y)
            for (int64_t x = x0; x < x1; ++x) out.at3(c, y - y0, x - x0) = image.at3(c, y, x);
    return out;
}

DescriptionBundle run_chain(const Tensor& image, ExtractorClient& client,
                            const AttributeVocabulary& voc) {
    DescriptionBundle b;
    std::string tag = client.provenance_tag();

    std::string text = client.caption(image);
    b.stage_log.push_back("caption");
    b.global_tokens = tokenize_caption(text);
    b.provenance["global_prompt"] = tag;

    auto box = client.detect_face(image);
    b.stage_log.push_back("detect");
    if (!box) {
        // no face: text-only bundle
        return b;
    }
    Tensor face = crop_box(image, *box);
    face = client.enhance(face);
    b.stage_log.push_back("enhance");
    b.attributes = client.extract_attributes(face);
    b.stage_log.push_back("extract");
    for (const auto& [cat, tok] : b.attributes) {
        (void)tok;
        b.provenance["attr." + cat] = tag;
    }
    b.validate_against(voc);
    return b;
}

}  // namespace

DescriptionBundle extract(const ToySample& sample, ExtractorClient& client,
                          const AttributeVocabulary& voc) {
    if (auto* stub = dynamic_cast<StubExtractorClient*>(&client)) stub->bind(&sample);
    return run_chain(sample.image, client, voc);
}

DescriptionBundle extract_image(const Tensor& image, ExtractorClient& client,
                                const AttributeVocabulary& voc) {
    return run_chain(image, client, voc);
}

}  // namespace toyfashion
