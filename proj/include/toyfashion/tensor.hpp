#pragma once

#include <cstdint>
#include <new>
#include <string>
#include <vector>

#include "toyfashion/errors.hpp"
#include "toyfashion/rng.hpp"

namespace toyfashion {

// 64-byte-aligned storage. Heap addresses must not influence numerics:
// Eigen picks vectorization peeling from pointer alignment, so uniform
// alignment keeps results bitwise reproducible across runs.
template <typename T, size_t Align = 64>
struct AlignedAllocator {
    using value_type = T;
    using size_type = size_t;
    using difference_type = ptrdiff_t;
    using propagate_on_container_move_assignment = std::true_type;
    using is_always_equal = std::true_type;
    template <typename U>
    struct rebind {
        using other = AlignedAllocator<U, Align>;
    };

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U, Align>&) {}
    T* allocate(size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
    }
    void deallocate(T* p, size_t n) {
        ::operator delete(p, n * sizeof(T), std::align_val_t(Align));
    }
    template <typename U>
    bool operator==(const AlignedAllocator<U, Align>&) const {
        return true;
    }
    template <typename U>
    bool operator!=(const AlignedAllocator<U, Align>&) const {
        return false;
    }
};

using AlignedDoubles = std::vector<double, AlignedAllocator<double>>;

// Dense row-major double tensor. Copies are cheap enough at toy scale;
// there are no views.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape);
    Tensor(std::vector<int64_t> shape, double fill);

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape), 0.0); }
    static Tensor full(std::vector<int64_t> shape, double v) { return Tensor(std::move(shape), v); }
    static Tensor randn(std::vector<int64_t> shape, Rng& rng);
    static Tensor uniform(std::vector<int64_t> shape, Rng& rng, double lo, double hi);
    static Tensor from_vector(std::vector<int64_t> shape, std::vector<double> values);

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 4-D convenience accessor (B,C,H,W)
    double& at4(int64_t b, int64_t c, int64_t h, int64_t w) {
        return data_[static_cast<size_t>(((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    double at4(int64_t b, int64_t c, int64_t h, int64_t w) const {
        return data_[static_cast<size_t>(((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    double& at3(int64_t a, int64_t b, int64_t c) {
        return data_[static_cast<size_t>((a * shape_[1] + b) * shape_[2] + c)];
    }
    double at3(int64_t a, int64_t b, int64_t c) const {
        return data_[static_cast<size_t>((a * shape_[1] + b) * shape_[2] + c)];
    }
    double& at2(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * shape_[1] + c)]; }
    double at2(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * shape_[1] + c)]; }

    Tensor reshaped(std::vector<int64_t> shape) const;
    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    std::string shape_str() const;

    uint64_t content_hash() const {
        return data_.empty() ? fnv1a64(nullptr, 0) : fnv1a64(data_.data(), data_.size() * sizeof(double));
    }

    bool all_finite() const;

private:
    std::vector<int64_t> shape_;
    AlignedDoubles data_;
};

int64_t shape_numel(const std::vector<int64_t>& shape);

}  // namespace toyfashion
