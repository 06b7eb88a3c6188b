#include "quantdemoire/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "quantdemoire/error.hpp"

namespace qdm {

namespace {

std::size_t checked_numel(const Dims& dims) {
    require(!dims.empty(), ErrorKind::InvalidArgument, "tensor must have at least one dim");
    std::size_t n = 1;
    for (auto d : dims) {
        require(d > 0, ErrorKind::InvalidArgument, "tensor extents must be positive");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

}  // namespace

Tensor::Tensor(Dims dims, float fill) : dims_(std::move(dims)) {
    data_.assign(checked_numel(dims_), fill);
}

Tensor::Tensor(Dims dims, std::vector<float> data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (checked_numel(dims_) != data_.size())
        fail(ErrorKind::ShapeMismatch, "data length does not match dims " + shape_string(dims_));
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::string shape_string(const Dims& dims) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
    os << ']';
    return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* context) {
    if (!a.same_shape(b))
        fail(ErrorKind::ShapeMismatch, std::string(context) + ": " + shape_string(a.dims()) +
                                           " vs " + shape_string(b.dims()));
}

float max_abs(std::span<const float> v) noexcept {
    float m = 0.0f;
    for (float x : v) m = std::max(m, std::fabs(x));
    return m;
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mean_abs_diff");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += std::fabs(static_cast<double>(a[i]) - b[i]);
    return a.numel() ? s / static_cast<double>(a.numel()) : 0.0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(static_cast<double>(a[i]) - b[i]));
    return m;
}

Tensor crop(const Tensor& t, std::int64_t y0, std::int64_t x0, std::int64_t h, std::int64_t w) {
    require(t.ndim() == 4, ErrorKind::ShapeMismatch, "crop expects a 4-D tensor");
    require(y0 >= 0 && x0 >= 0 && h > 0 && w > 0 && y0 + h <= t.dim(2) && x0 + w <= t.dim(3),
            ErrorKind::InvalidArgument, "crop window out of range");
    Tensor out = Tensor::nchw(t.dim(0), t.dim(1), h, w);
    for (std::int64_t n = 0; n < t.dim(0); ++n)
        for (std::int64_t c = 0; c < t.dim(1); ++c)
            for (std::int64_t y = 0; y < h; ++y) {
                const float* src = t.plane(n, c) + (y0 + y) * t.dim(3) + x0;
                std::copy(src, src + w, out.plane(n, c) + y * w);
            }
    return out;
}

}  // namespace qdm
