#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "quantdemoire/conv.hpp"
#include "quantdemoire/tensor.hpp"

namespace qdm {

enum class Granularity { PerTensor, PerChannel };

/// Affine quantizer state for one quantizer site. Per-tensor params hold a single entry;
/// per-channel params hold one entry per slice along `axis`.
///
///   scale = (u - l) / (2^b - 1)
///   zero  = clip(round(-l / scale), 0, 2^b - 1)
///
/// The scale is kept in double precision; results are narrowed to float only at the end.
struct QuantParams {
    int bits = 8;
    Granularity granularity = Granularity::PerTensor;
    int axis = 0;
    std::vector<float> lower;
    std::vector<float> upper;
    std::vector<double> scale;
    std::vector<std::int32_t> zero_point;

    std::int32_t qmax() const noexcept { return (std::int32_t{1} << bits) - 1; }
    std::size_t channels() const noexcept { return scale.size(); }
};

QuantParams compute_qparams(double lower, double upper, int bits);
QuantParams compute_qparams_per_channel(std::span<const float> lower, std::span<const float> upper,
                                        int bits, int axis = 0);

/// Quantize-dequantize of a single value with explicit parameters.
inline std::int32_t quantize_code(float v, double scale, std::int32_t zero, std::int32_t qmax) noexcept;
float fake_quantize_value(float v, double scale, std::int32_t zero, std::int32_t qmax) noexcept;

Tensor fake_quantize(const Tensor& v, const QuantParams& qp);

/// Integer codes in [0, 2^b - 1] with the parameters that produced them.
struct QuantizedTensor {
    Dims dims;
    std::vector<std::uint16_t> codes;
    QuantParams params;

    Tensor dequantize() const;
};

QuantizedTensor quantize(const Tensor& v, const QuantParams& qp);

struct SteGrads {
    Tensor grad_v;
    double grad_lower = 0.0;
    double grad_upper = 0.0;
};

/// Straight-through gradient of a per-tensor fake quantizer. Values inside [l, u] pass the
/// upstream gradient; clipped values route it to the bound they were clipped against.
SteGrads ste_backward(const Tensor& upstream, const Tensor& v, const QuantParams& qp);

/// conv2d(Q(x), Q(w)) + bias with a per-tensor activation quantizer and a per-output-channel
/// weight quantizer. The bias stays in full precision.
Tensor qconv_forward(const Tensor& x, const QuantParams& xqp, const Tensor& w, const QuantParams& wqp,
                     std::span<const float> bias, const ConvSpec& spec);

bool supported_bit_width(int bits) noexcept;

// inline definitions

inline std::int32_t quantize_code(float v, double scale, std::int32_t zero, std::int32_t qmax) noexcept {
    const double q = std::nearbyint(static_cast<double>(v) / scale) + zero;
    return static_cast<std::int32_t>(q < 0.0 ? 0.0 : (q > qmax ? static_cast<double>(qmax) : q));
}

}  // namespace qdm
