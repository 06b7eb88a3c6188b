#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace qdm {

using Dims = std::vector<std::int64_t>;

/// Dense row-major float32 array. 4-D tensors use NCHW order.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Dims dims, float fill = 0.0f);
    Tensor(Dims dims, std::vector<float> data);

    static Tensor nchw(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w,
                       float fill = 0.0f) {
        return Tensor({n, c, h, w}, fill);
    }

    const Dims& dims() const noexcept { return dims_; }
    std::size_t ndim() const noexcept { return dims_.size(); }
    std::int64_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    float* ptr() noexcept { return data_.data(); }
    const float* ptr() const noexcept { return data_.data(); }
    std::vector<float>& storage() noexcept { return data_; }
    const std::vector<float>& storage() const noexcept { return data_; }

    float& operator[](std::size_t i) noexcept { return data_[i]; }
    float operator[](std::size_t i) const noexcept { return data_[i]; }

    // 4-D accessors; no bounds checking.
    float& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) noexcept {
        return data_[static_cast<std::size_t>(((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w)];
    }
    float at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const noexcept {
        return data_[static_cast<std::size_t>(((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w)];
    }

    /// Pointer to the start of plane (n, c) of a 4-D tensor.
    float* plane(std::int64_t n, std::int64_t c) noexcept {
        return data_.data() + static_cast<std::size_t>((n * dims_[1] + c) * dims_[2] * dims_[3]);
    }
    const float* plane(std::int64_t n, std::int64_t c) const noexcept {
        return data_.data() + static_cast<std::size_t>((n * dims_[1] + c) * dims_[2] * dims_[3]);
    }

    bool same_shape(const Tensor& other) const noexcept { return dims_ == other.dims_; }
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Dims dims_;
    std::vector<float> data_;
};

std::string shape_string(const Dims& dims);

/// Throws ShapeMismatch unless a and b have identical dims.
void require_same_shape(const Tensor& a, const Tensor& b, const char* context);

float max_abs(std::span<const float> v) noexcept;
double mean_abs_diff(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Copies the crop [y0, y0+h) x [x0, x0+w) out of every plane.
Tensor crop(const Tensor& t, std::int64_t y0, std::int64_t x0, std::int64_t h, std::int64_t w);

}  // namespace qdm
