#include "quantdemoire/conv.hpp"

#include <algorithm>
#include <string>

#include "quantdemoire/error.hpp"

namespace qdm {

namespace {

struct Geometry {
    std::int64_t n, cin, h, w;
    std::int64_t cout, cin_g, kh, kw;
    std::int64_t oh, ow;
    std::int64_t cout_g;
    int stride, dil;
    std::int64_t pad_h, pad_w;
};

Geometry check_geometry(const Dims& in, const Dims& wt, const ConvSpec& spec) {
    require(in.size() == 4, ErrorKind::ShapeMismatch, "conv2d: input must be 4-D");
    require(wt.size() == 4, ErrorKind::ShapeMismatch, "conv2d: weight must be 4-D");
    require(spec.dilation >= 1, ErrorKind::InvalidArgument, "conv2d: dilation must be >= 1");
    require(spec.stride >= 1, ErrorKind::InvalidArgument, "conv2d: stride must be >= 1");
    require(spec.groups >= 1, ErrorKind::InvalidArgument, "conv2d: groups must be >= 1");
    Geometry g{};
    g.n = in[0];
    g.cin = in[1];
    g.h = in[2];
    g.w = in[3];
    g.cout = wt[0];
    g.cin_g = wt[1];
    g.kh = wt[2];
    g.kw = wt[3];
    if (g.cin % spec.groups != 0 || g.cout % spec.groups != 0 || g.cin / spec.groups != g.cin_g)
        fail(ErrorKind::ShapeMismatch, "conv2d: channel mismatch between input " + shape_string(in) +
                                           " and weight " + shape_string(wt));
    require(g.kh % 2 == 1 && g.kw % 2 == 1, ErrorKind::InvalidArgument,
            "conv2d: same padding requires odd kernels");
    g.cout_g = g.cout / spec.groups;
    g.stride = spec.stride;
    g.dil = spec.dilation;
    g.pad_h = spec.dilation * (g.kh - 1) / 2;
    g.pad_w = spec.dilation * (g.kw - 1) / 2;
    g.oh = conv_out_extent(g.h, spec.stride);
    g.ow = conv_out_extent(g.w, spec.stride);
    return g;
}

// Output columns [lo, hi) whose input column ox*stride + dx lies inside [0, w).
inline void valid_range(std::int64_t dx, std::int64_t stride, std::int64_t w, std::int64_t ow,
                        std::int64_t& lo, std::int64_t& hi) {
    // smallest ox with ox*stride + dx >= 0
    lo = dx >= 0 ? 0 : (-dx + stride - 1) / stride;
    // largest ox with ox*stride + dx <= w - 1
    const std::int64_t top = w - 1 - dx;
    hi = top < 0 ? 0 : top / stride + 1;
    lo = std::min(lo, ow);
    hi = std::clamp(hi, lo, ow);
}

inline std::int64_t clampi(std::int64_t v, std::int64_t hi) { return v < 0 ? 0 : (v > hi ? hi : v); }

}  // namespace

std::int64_t conv_out_extent(std::int64_t in, int stride) noexcept { return (in - 1) / stride + 1; }

Tensor conv2d(const Tensor& input, const Tensor& weight, std::span<const float> bias,
              const ConvSpec& spec) {
    const Geometry g = check_geometry(input.dims(), weight.dims(), spec);
    require(bias.empty() || static_cast<std::int64_t>(bias.size()) == g.cout,
            ErrorKind::ShapeMismatch, "conv2d: bias length must equal Cout");
    const bool replicate = spec.pad == PadMode::Replicate;
    Tensor out = Tensor::nchw(g.n, g.cout, g.oh, g.ow);

    for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t co = 0; co < g.cout; ++co) {
            float* dst = out.plane(n, co);
            const std::int64_t group = co / g.cout_g;
            for (std::int64_t cl = 0; cl < g.cin_g; ++cl) {
                const float* src = input.plane(n, group * g.cin_g + cl);
                for (std::int64_t ky = 0; ky < g.kh; ++ky) {
                    const std::int64_t dy = ky * g.dil - g.pad_h;
                    for (std::int64_t kx = 0; kx < g.kw; ++kx) {
                        const float wv = weight.at(co, cl, ky, kx);
                        const std::int64_t dx = kx * g.dil - g.pad_w;
                        std::int64_t lo, hi;
                        valid_range(dx, g.stride, g.w, g.ow, lo, hi);
                        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
                            std::int64_t iy = oy * g.stride + dy;
                            if (iy < 0 || iy >= g.h) {
                                if (!replicate) continue;
                                iy = clampi(iy, g.h - 1);
                            }
                            const float* row = src + iy * g.w;
                            float* orow = dst + oy * g.ow;
                            if (replicate) {
                                for (std::int64_t ox = 0; ox < lo; ++ox) orow[ox] += wv * row[0];
                            }
                            if (g.stride == 1) {
                                const float* r = row + dx;
                                for (std::int64_t ox = lo; ox < hi; ++ox) orow[ox] += wv * r[ox];
                            } else {
                                for (std::int64_t ox = lo; ox < hi; ++ox)
                                    orow[ox] += wv * row[ox * g.stride + dx];
                            }
                            if (replicate) {
                                for (std::int64_t ox = hi; ox < g.ow; ++ox)
                                    orow[ox] += wv * row[g.w - 1];
                            }
                        }
                    }
                }
            }
            if (!bias.empty()) {
                const float b = bias[static_cast<std::size_t>(co)];
                for (std::int64_t i = 0; i < g.oh * g.ow; ++i) dst[i] += b;
            }
        }
    }
    return out;
}

Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const Dims& input_dims,
                             const ConvSpec& spec) {
    const Geometry g = check_geometry(input_dims, weight.dims(), spec);
    require(grad_out.dims() == Dims({g.n, g.cout, g.oh, g.ow}), ErrorKind::ShapeMismatch,
            "conv2d_backward_input: grad_out shape");
    const bool replicate = spec.pad == PadMode::Replicate;
    Tensor gin(input_dims, 0.0f);

    for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t co = 0; co < g.cout; ++co) {
            const float* go = grad_out.plane(n, co);
            const std::int64_t group = co / g.cout_g;
            for (std::int64_t cl = 0; cl < g.cin_g; ++cl) {
                float* gi = gin.plane(n, group * g.cin_g + cl);
                for (std::int64_t ky = 0; ky < g.kh; ++ky) {
                    const std::int64_t dy = ky * g.dil - g.pad_h;
                    for (std::int64_t kx = 0; kx < g.kw; ++kx) {
                        const float wv = weight.at(co, cl, ky, kx);
                        const std::int64_t dx = kx * g.dil - g.pad_w;
                        std::int64_t lo, hi;
                        valid_range(dx, g.stride, g.w, g.ow, lo, hi);
                        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
                            std::int64_t iy = oy * g.stride + dy;
                            if (iy < 0 || iy >= g.h) {
                                if (!replicate) continue;
                                iy = clampi(iy, g.h - 1);
                            }
                            float* row = gi + iy * g.w;
                            const float* grow = go + oy * g.ow;
                            if (replicate) {
                                float s = 0.0f;
                                for (std::int64_t ox = 0; ox < lo; ++ox) s += grow[ox];
                                row[0] += wv * s;
                            }
                            if (g.stride == 1) {
                                float* r = row + dx;
                                for (std::int64_t ox = lo; ox < hi; ++ox) r[ox] += wv * grow[ox];
                            } else {
                                for (std::int64_t ox = lo; ox < hi; ++ox)
                                    row[ox * g.stride + dx] += wv * grow[ox];
                            }
                            if (replicate) {
                                float s = 0.0f;
                                for (std::int64_t ox = hi; ox < g.ow; ++ox) s += grow[ox];
                                row[g.w - 1] += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    return gin;
}

namespace {

// Fixed-lane dot product; the lane structure is part of the result so it is the same
// on every target.
float dot_lanes(const float* a, const float* b, std::int64_t n) noexcept {
    float lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::int64_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (int j = 0; j < 8; ++j) lane[j] += a[i + j] * b[i + j];
    for (; i < n; ++i) lane[i & 7] += a[i] * b[i];
    return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

}  // namespace

Tensor conv2d_backward_weight(const Tensor& grad_out, const Tensor& input, const Dims& weight_dims,
                              const ConvSpec& spec) {
    const Geometry g = check_geometry(input.dims(), weight_dims, spec);
    require(grad_out.dims() == Dims({g.n, g.cout, g.oh, g.ow}), ErrorKind::ShapeMismatch,
            "conv2d_backward_weight: grad_out shape");
    const bool replicate = spec.pad == PadMode::Replicate;
    Tensor gw(weight_dims, 0.0f);

    for (std::int64_t co = 0; co < g.cout; ++co) {
        const std::int64_t group = co / g.cout_g;
        for (std::int64_t cl = 0; cl < g.cin_g; ++cl) {
            for (std::int64_t ky = 0; ky < g.kh; ++ky) {
                const std::int64_t dy = ky * g.dil - g.pad_h;
                for (std::int64_t kx = 0; kx < g.kw; ++kx) {
                    const std::int64_t dx = kx * g.dil - g.pad_w;
                    std::int64_t lo, hi;
                    valid_range(dx, g.stride, g.w, g.ow, lo, hi);
                    double acc = 0.0;
                    for (std::int64_t n = 0; n < g.n; ++n) {
                        const float* go = grad_out.plane(n, co);
                        const float* src = input.plane(n, group * g.cin_g + cl);
                        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
                            std::int64_t iy = oy * g.stride + dy;
                            if (iy < 0 || iy >= g.h) {
                                if (!replicate) continue;
                                iy = clampi(iy, g.h - 1);
                            }
                            const float* row = src + iy * g.w;
                            const float* grow = go + oy * g.ow;
                            float s = 0.0f;
                            if (g.stride == 1) {
                                s = dot_lanes(grow + lo, row + dx + lo, hi - lo);
                            } else {
                                for (std::int64_t ox = lo; ox < hi; ++ox)
                                    s += grow[ox] * row[ox * g.stride + dx];
                            }
                            if (replicate) {
                                for (std::int64_t ox = 0; ox < lo; ++ox) s += grow[ox] * row[0];
                                for (std::int64_t ox = hi; ox < g.ow; ++ox) s += grow[ox] * row[g.w - 1];
                            }
                            acc += s;
                        }
                    }
                    gw.at(co, cl, ky, kx) = static_cast<float>(acc);
                }
            }
        }
    }
    return gw;
}

std::vector<float> conv2d_backward_bias(const Tensor& grad_out) {
    require(grad_out.ndim() == 4, ErrorKind::ShapeMismatch, "conv2d_backward_bias: 4-D expected");
    const std::int64_t hw = grad_out.dim(2) * grad_out.dim(3);
    std::vector<float> gb(static_cast<std::size_t>(grad_out.dim(1)), 0.0f);
    for (std::int64_t c = 0; c < grad_out.dim(1); ++c) {
        double acc = 0.0;
        for (std::int64_t n = 0; n < grad_out.dim(0); ++n) {
            const float* p = grad_out.plane(n, c);
            float s = 0.0f;
            for (std::int64_t i = 0; i < hw; ++i) s += p[i];
            acc += s;
        }
        gb[static_cast<std::size_t>(c)] = static_cast<float>(acc);
    }
    return gb;
}

void relu_inplace(Tensor& t) noexcept {
    for (float& v : t.data()) v = v > 0.0f ? v : 0.0f;
}

void relu_backward_inplace(Tensor& grad, const Tensor& pre) {
    require_same_shape(grad, pre, "relu_backward");
    for (std::size_t i = 0; i < grad.numel(); ++i)
        if (!(pre[i] > 0.0f)) grad[i] = 0.0f;
}

}  // namespace qdm
