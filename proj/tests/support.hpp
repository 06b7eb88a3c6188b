#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "quantdemoire/conv.hpp"
#include "quantdemoire/rng.hpp"
#include "quantdemoire/tensor.hpp"

namespace qdm::testing {

inline Tensor random_tensor(Rng& rng, Dims dims, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(dims));
    for (float& v : t.storage()) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

inline Tensor gaussian_tensor(Rng& rng, Dims dims, double sigma = 1.0) {
    Tensor t(std::move(dims));
    for (float& v : t.storage()) v = static_cast<float>(sigma * rng.normal());
    return t;
}

/// Textbook nested-loop cross-correlation with same padding. Terms are accumulated in
/// ascending (cin, kh, kw) order from zero; the bias is added last.
inline Tensor oracle_conv(const Tensor& x, const Tensor& w, std::span<const float> bias, int dilation,
                          PadMode pad, int stride = 1) {
    const auto n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const auto cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const auto ph = dilation * (kh - 1) / 2, pw = dilation * (kw - 1) / 2;
    const auto oh = (h - 1) / stride + 1, ow = (wd - 1) / stride + 1;
    Tensor y = Tensor::nchw(n, cout, oh, ow);
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t co = 0; co < cout; ++co)
            for (std::int64_t oy = 0; oy < oh; ++oy)
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    float acc = 0.0f;
                    for (std::int64_t ci = 0; ci < cin; ++ci)
                        for (std::int64_t ky = 0; ky < kh; ++ky)
                            for (std::int64_t kx = 0; kx < kw; ++kx) {
                                std::int64_t iy = oy * stride + ky * dilation - ph;
                                std::int64_t ix = ox * stride + kx * dilation - pw;
                                const bool inside = iy >= 0 && iy < h && ix >= 0 && ix < wd;
                                if (!inside) {
                                    if (pad == PadMode::Zero) continue;
                                    iy = std::clamp<std::int64_t>(iy, 0, h - 1);
                                    ix = std::clamp<std::int64_t>(ix, 0, wd - 1);
                                }
                                acc += w.at(co, ci, ky, kx) * x.at(b, ci, iy, ix);
                            }
                    if (!bias.empty()) acc += bias[static_cast<std::size_t>(co)];
                    y.at(b, co, oy, ox) = acc;
                }
    return y;
}

/// Fresh scratch directory unique to this process.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() /
               ("qdm_" + name + "_" + std::to_string(static_cast<long long>(::getpid())));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline double rel_err(double a, double b, double floor = 1e-12) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace qdm::testing
