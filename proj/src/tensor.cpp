#include "toyfashion/tensor.hpp"

#include <cmath>
#include <sstream>

namespace toyfashion {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        require(d >= 0, ErrorKind::Shape, "negative dimension");
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int64_t> shape, double fill) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
}

Tensor Tensor::randn(std::vector<int64_t> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = rng.normal();
    return t;
}

Tensor Tensor::uniform(std::vector<int64_t> shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = rng.uniform(lo, hi);
    return t;
}

Tensor Tensor::from_vector(std::vector<int64_t> shape, std::vector<double> values) {
    require(shape_numel(shape) == static_cast<int64_t>(values.size()), ErrorKind::Shape,
            "from_vector: value count does not match shape");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.assign(values.begin(), values.end());
    return t;
}

Tensor Tensor::reshaped(std::vector<int64_t> shape) const {
    require(shape_numel(shape) == numel(), ErrorKind::Shape,
            "reshape: element count mismatch (" + shape_str() + ")");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
    os << "]";
    return os.str();
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace toyfashion
