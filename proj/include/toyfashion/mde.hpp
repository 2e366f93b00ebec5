#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "toyfashion/dataset.hpp"

namespace toyfashion {

struct FaceBox {
    int64_t x = 0, y = 0, w = 0, h = 0;
};

// Two-level description: one overall prompt plus one fine-grained attribute
// token per category.
struct DescriptionBundle {
    std::vector<int64_t> global_tokens;
    std::map<std::string, int64_t> attributes;       // category name -> dense token
    std::map<std::string, std::string> provenance;   // field -> stub | external
    std::vector<std::string> stage_log;              // caption, detect, enhance, extract

    void validate_against(const AttributeVocabulary& voc) const;
};

// caption -> face detect -> restore/upscale -> attribute extraction
class ExtractorClient {
public:
    virtual ~ExtractorClient() = default;
    virtual std::string caption(const Tensor& image) = 0;
    virtual std::optional<FaceBox> detect_face(const Tensor& image) = 0;
    virtual Tensor enhance(const Tensor& face) = 0;
    virtual std::map<std::string, int64_t> extract_attributes(const Tensor& face) = 0;
    virtual std::string provenance_tag() const = 0;
};

// Pure metadata-backed client for toy samples. bind() installs the sample
// whose metadata answers the next calls.
class StubExtractorClient : public ExtractorClient {
public:
    explicit StubExtractorClient(AttributeVocabulary voc) : voc_(std::move(voc)) {}
    void bind(const ToySample* sample) { ctx_ = sample; }

    std::string caption(const Tensor& image) override;
    std::optional<FaceBox> detect_face(const Tensor& image) override;
    Tensor enhance(const Tensor& face) override;
    std::map<std::string, int64_t> extract_attributes(const Tensor& face) override;
    std::string provenance_tag() const override { return "stub"; }

private:
    AttributeVocabulary voc_;
    const ToySample* ctx_ = nullptr;
};

// Minimal JSON-over-HTTP client with timeout and bounded retries; failures
// after the retry budget surface as External errors.
class HttpExtractorClient : public ExtractorClient {
public:
    HttpExtractorClient(std::string host, int port, int timeout_ms = 1000, int retries = 2);

    std::string caption(const Tensor& image) override;
    std::optional<FaceBox> detect_face(const Tensor& image) override;
    Tensor enhance(const Tensor& face) override;
    std::map<std::string, int64_t> extract_attributes(const Tensor& face) override;
    std::string provenance_tag() const override { return "external"; }

private:
    nlohmann::json post(const std::string& route, const nlohmann::json& body);
    std::string host_;
    int port_, timeout_ms_, retries_;
};

// Runs the four-stage chain in order and assembles the bundle. On a missing
// face the bundle degrades to a text-only global prompt.
DescriptionBundle extract(const ToySample& sample, ExtractorClient& client,
                          const AttributeVocabulary& voc);
DescriptionBundle extract_image(const Tensor& image, ExtractorClient& client,
                                const AttributeVocabulary& voc);

std::vector<int64_t> tokenize_caption(const std::string& text);

}  // namespace toyfashion
