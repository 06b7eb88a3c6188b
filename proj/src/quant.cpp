#include "quantdemoire/quant.hpp"

#include <cmath>
#include <string>

#include "quantdemoire/error.hpp"
#include "quantdemoire/rng.hpp"

namespace qdm {

namespace {

void fill_entry(QuantParams& qp, double lower, double upper) {
    if (!std::isfinite(lower) || !std::isfinite(upper))
        fail(ErrorKind::InvalidArgument, "quantizer bounds must be finite");
    if (!(upper > lower))
        fail(ErrorKind::InvalidArgument, "quantizer requires upper > lower (got l=" +
                                             std::to_string(lower) + ", u=" + std::to_string(upper) + ")");
    const double qmax = qp.qmax();
    const double scale = (upper - lower) / qmax;
    // -l / scale, written so that exact halves stay exact.
    const double z = round_half_even(-lower * qmax / (upper - lower));
    qp.lower.push_back(static_cast<float>(lower));
    qp.upper.push_back(static_cast<float>(upper));
    qp.scale.push_back(scale);
    qp.zero_point.push_back(static_cast<std::int32_t>(z < 0 ? 0 : (z > qmax ? qmax : z)));
}

void check_bits(int bits) {
    if (bits < 2 || bits > 16)
        fail(ErrorKind::InvalidArgument, "bit width must be in [2, 16], got " + std::to_string(bits));
}

struct AxisLayout {
    std::size_t outer = 1, channels = 1, inner = 1;
};

AxisLayout layout_for(const Tensor& v, const QuantParams& qp) {
    AxisLayout a;
    if (qp.granularity == Granularity::PerTensor) {
        require(qp.channels() == 1, ErrorKind::InvalidArgument, "per-tensor params need one entry");
        a.inner = v.numel();
        return a;
    }
    require(qp.axis >= 0 && static_cast<std::size_t>(qp.axis) < v.ndim(), ErrorKind::ShapeMismatch,
            "per-channel axis out of range");
    for (int i = 0; i < qp.axis; ++i) a.outer *= static_cast<std::size_t>(v.dim(static_cast<std::size_t>(i)));
    a.channels = static_cast<std::size_t>(v.dim(static_cast<std::size_t>(qp.axis)));
    for (std::size_t i = static_cast<std::size_t>(qp.axis) + 1; i < v.ndim(); ++i)
        a.inner *= static_cast<std::size_t>(v.dim(i));
    require(a.channels == qp.channels(), ErrorKind::ShapeMismatch,
            "per-channel params do not match the channel axis length");
    return a;
}

}  // namespace

bool supported_bit_width(int bits) noexcept {
    return bits == 3 || bits == 4 || bits == 6 || bits == 8 || bits == 16;
}

QuantParams compute_qparams(double lower, double upper, int bits) {
    check_bits(bits);
    QuantParams qp;
    qp.bits = bits;
    qp.granularity = Granularity::PerTensor;
    fill_entry(qp, lower, upper);
    return qp;
}

QuantParams compute_qparams_per_channel(std::span<const float> lower, std::span<const float> upper,
                                        int bits, int axis) {
    check_bits(bits);
    require(lower.size() == upper.size() && !lower.empty(), ErrorKind::InvalidArgument,
            "per-channel bounds must be non-empty and equal length");
    QuantParams qp;
    qp.bits = bits;
    qp.granularity = Granularity::PerChannel;
    qp.axis = axis;
    for (std::size_t c = 0; c < lower.size(); ++c) fill_entry(qp, lower[c], upper[c]);
    return qp;
}

float fake_quantize_value(float v, double scale, std::int32_t zero, std::int32_t qmax) noexcept {
    const std::int32_t code = quantize_code(v, scale, zero, qmax);
    return static_cast<float>(scale * static_cast<double>(code - zero));
}

Tensor fake_quantize(const Tensor& v, const QuantParams& qp) {
    const AxisLayout a = layout_for(v, qp);
    Tensor out = v;
    const std::int32_t qmax = qp.qmax();
    float* p = out.ptr();
    for (std::size_t o = 0; o < a.outer; ++o)
        for (std::size_t c = 0; c < a.channels; ++c) {
            const double s = qp.scale[c];
            const std::int32_t z = qp.zero_point[c];
            float* q = p + (o * a.channels + c) * a.inner;
            for (std::size_t i = 0; i < a.inner; ++i) q[i] = fake_quantize_value(q[i], s, z, qmax);
        }
    return out;
}

QuantizedTensor quantize(const Tensor& v, const QuantParams& qp) {
    const AxisLayout a = layout_for(v, qp);
    QuantizedTensor qt;
    qt.dims = v.dims();
    qt.params = qp;
    qt.codes.resize(v.numel());
    const std::int32_t qmax = qp.qmax();
    for (std::size_t o = 0; o < a.outer; ++o)
        for (std::size_t c = 0; c < a.channels; ++c) {
            const std::size_t base = (o * a.channels + c) * a.inner;
            for (std::size_t i = 0; i < a.inner; ++i)
                qt.codes[base + i] = static_cast<std::uint16_t>(
                    quantize_code(v[base + i], qp.scale[c], qp.zero_point[c], qmax));
        }
    return qt;
}

Tensor QuantizedTensor::dequantize() const {
    Tensor out(dims, 0.0f);
    const AxisLayout a = layout_for(out, params);
    for (std::size_t o = 0; o < a.outer; ++o)
        for (std::size_t c = 0; c < a.channels; ++c) {
            const std::size_t base = (o * a.channels + c) * a.inner;
            for (std::size_t i = 0; i < a.inner; ++i)
                out[base + i] = static_cast<float>(
                    params.scale[c] * static_cast<double>(static_cast<std::int32_t>(codes[base + i]) -
                                                          params.zero_point[c]));
        }
    return out;
}

SteGrads ste_backward(const Tensor& upstream, const Tensor& v, const QuantParams& qp) {
    require_same_shape(upstream, v, "ste_backward");
    require(qp.granularity == Granularity::PerTensor && qp.channels() == 1, ErrorKind::InvalidArgument,
            "ste_backward expects per-tensor params");
    const float l = qp.lower[0];
    const float u = qp.upper[0];
    SteGrads g;
    g.grad_v = Tensor(v.dims(), 0.0f);
    for (std::size_t i = 0; i < v.numel(); ++i) {
        if (v[i] < l) {
            g.grad_lower += upstream[i];
        } else if (v[i] > u) {
            g.grad_upper += upstream[i];
        } else {
            g.grad_v[i] = upstream[i];
        }
    }
    return g;
}

Tensor qconv_forward(const Tensor& x, const QuantParams& xqp, const Tensor& w, const QuantParams& wqp,
                     std::span<const float> bias, const ConvSpec& spec) {
    require(xqp.granularity == Granularity::PerTensor, ErrorKind::InvalidArgument,
            "activation quantizer must be per-tensor");
    require(wqp.granularity == Granularity::PerChannel && wqp.axis == 0, ErrorKind::InvalidArgument,
            "weight quantizer must be per output channel");
    return conv2d(fake_quantize(x, xqp), fake_quantize(w, wqp), bias, spec);
}

}  // namespace qdm
