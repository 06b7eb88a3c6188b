#include "quantdemoire/freq.hpp"

#include <algorithm>
#include <cmath>

#include "quantdemoire/conv.hpp"
#include "quantdemoire/error.hpp"
#include "quantdemoire/rng.hpp"

namespace qdm {

const std::array<float, 9>& frequency_kernel() noexcept {
    static const std::array<float, 9> k = {1.0f / 16, 1.0f / 8, 1.0f / 16,  //
                                           1.0f / 8,  1.0f / 4, 1.0f / 8,   //
                                           1.0f / 16, 1.0f / 8, 1.0f / 16};
    return k;
}

namespace {

void check_level(const Tensor& img, int level) {
    require(level >= 0, ErrorKind::InvalidArgument, "frequency level must be >= 0");
    require(level < 24, ErrorKind::InvalidArgument, "frequency level too large");
    require(img.ndim() == 4, ErrorKind::ShapeMismatch, "frequency_extract expects a 4-D image");
}

inline std::int64_t clamp_index(std::int64_t v, std::int64_t n) noexcept {
    return v < 0 ? 0 : (v >= n ? n - 1 : v);
}

// One extraction step: per-channel 3x3 kernel at the given dilation with replicate padding.
// Taps are accumulated in double in ascending (ky, kx) order. Every kernel weight is a
// power of two, so a constant plane maps to itself exactly.
Tensor smooth_step(const Tensor& x, std::int64_t dilation) {
    const auto& k = frequency_kernel();
    const std::int64_t h = x.dim(2), w = x.dim(3);
    Tensor out(x.dims(), 0.0f);
    for (std::int64_t n = 0; n < x.dim(0); ++n)
        for (std::int64_t c = 0; c < x.dim(1); ++c) {
            const float* src = x.plane(n, c);
            float* dst = out.plane(n, c);
            for (std::int64_t y = 0; y < h; ++y) {
                const std::int64_t rows[3] = {clamp_index(y - dilation, h), y, clamp_index(y + dilation, h)};
                for (std::int64_t xx = 0; xx < w; ++xx) {
                    const std::int64_t cols[3] = {clamp_index(xx - dilation, w), xx,
                                                  clamp_index(xx + dilation, w)};
                    double acc = 0.0;
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx)
                            acc += static_cast<double>(k[ky * 3 + kx]) * src[rows[ky] * w + cols[kx]];
                    dst[y * w + xx] = static_cast<float>(acc);
                }
            }
        }
    return out;
}

// Adjoint of smooth_step: every output gradient is scattered back to the (clamped) taps.
Tensor smooth_step_adjoint(const Tensor& g, std::int64_t dilation) {
    const auto& k = frequency_kernel();
    const std::int64_t h = g.dim(2), w = g.dim(3);
    Tensor out(g.dims(), 0.0f);
    std::vector<double> acc(static_cast<std::size_t>(h * w));
    for (std::int64_t n = 0; n < g.dim(0); ++n)
        for (std::int64_t c = 0; c < g.dim(1); ++c) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const float* src = g.plane(n, c);
            for (std::int64_t y = 0; y < h; ++y) {
                const std::int64_t rows[3] = {clamp_index(y - dilation, h), y, clamp_index(y + dilation, h)};
                for (std::int64_t xx = 0; xx < w; ++xx) {
                    const std::int64_t cols[3] = {clamp_index(xx - dilation, w), xx,
                                                  clamp_index(xx + dilation, w)};
                    const double gv = src[y * w + xx];
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx)
                            acc[static_cast<std::size_t>(rows[ky] * w + cols[kx])] += k[ky * 3 + kx] * gv;
                }
            }
            float* dst = out.plane(n, c);
            for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<float>(acc[i]);
        }
    return out;
}

}  // namespace

Tensor frequency_extract(const Tensor& img, int level) {
    check_level(img, level);
    Tensor cur = img;
    for (int i = 1; i <= level; ++i) cur = smooth_step(cur, std::int64_t{1} << i);
    return cur;
}

Tensor frequency_extract_backward(const Tensor& grad, int level) {
    check_level(grad, level);
    Tensor cur = grad;
    for (int i = level; i >= 1; --i) cur = smooth_step_adjoint(cur, std::int64_t{1} << i);
    return cur;
}

// Perceptual proxy

namespace {

constexpr std::int64_t kStageChannels[4] = {3, 8, 16, 32};
const ConvSpec kStageSpec{2, 1, PadMode::Zero, 1};

struct StageOutputs {
    std::vector<Tensor> pre;   // conv outputs
    std::vector<Tensor> post;  // after ReLU
};

StageOutputs run_stages(const std::vector<Tensor>& weights, const Tensor& x) {
    StageOutputs s;
    const Tensor* cur = &x;
    for (const Tensor& w : weights) {
        s.pre.push_back(conv2d(*cur, w, {}, kStageSpec));
        Tensor post = s.pre.back();
        relu_inplace(post);
        s.post.push_back(std::move(post));
        cur = &s.post.back();
    }
    return s;
}

}  // namespace

PerceptualProxy::PerceptualProxy(std::uint64_t seed) {
    Rng rng(seed);
    for (int s = 0; s < 3; ++s) {
        Tensor w({kStageChannels[s + 1], kStageChannels[s], 3, 3});
        const double bound = std::sqrt(6.0 / static_cast<double>(kStageChannels[s] * 9));
        for (float& v : w.data()) v = static_cast<float>(rng.uniform(-bound, bound));
        weights_.push_back(std::move(w));
    }
}

double PerceptualProxy::distance(const Tensor& a, const Tensor& b) const {
    require_same_shape(a, b, "perceptual_proxy");
    require(a.ndim() == 4 && a.dim(1) == 3, ErrorKind::ShapeMismatch, "perceptual_proxy expects [N,3,H,W]");
    const StageOutputs fa = run_stages(weights_, a);
    const StageOutputs fb = run_stages(weights_, b);
    double total = 0.0;
    for (std::size_t s = 0; s < fa.post.size(); ++s) total += mean_abs_diff(fa.post[s], fb.post[s]);
    return total / static_cast<double>(fa.post.size());
}

double PerceptualProxy::distance_with_grad(const Tensor& a, const Tensor& b, Tensor& grad_a) const {
    require_same_shape(a, b, "perceptual_proxy");
    require(a.ndim() == 4 && a.dim(1) == 3, ErrorKind::ShapeMismatch, "perceptual_proxy expects [N,3,H,W]");
    const StageOutputs fa = run_stages(weights_, a);
    const StageOutputs fb = run_stages(weights_, b);
    const std::size_t stages = fa.post.size();
    double total = 0.0;
    Tensor g;  // gradient w.r.t. the current stage's post-ReLU output
    for (std::size_t si = stages; si-- > 0;) {
        const Tensor& pa = fa.post[si];
        const Tensor& pb = fb.post[si];
        total += mean_abs_diff(pa, pb);
        const float w = static_cast<float>(1.0 / (static_cast<double>(pa.numel()) * static_cast<double>(stages)));
        if (g.empty()) g = Tensor(pa.dims(), 0.0f);
        for (std::size_t i = 0; i < pa.numel(); ++i) {
            const float d = pa[i] - pb[i];
            g[i] += d > 0.0f ? w : (d < 0.0f ? -w : 0.0f);
        }
        relu_backward_inplace(g, fa.pre[si]);
        const Tensor& below = si == 0 ? a : fa.post[si - 1];
        g = conv2d_backward_input(g, weights_[si], below.dims(), kStageSpec);
    }
    grad_a = std::move(g);
    return total / static_cast<double>(stages);
}

double perceptual_proxy(const Tensor& a, const Tensor& b, std::uint64_t seed) {
    return PerceptualProxy(seed).distance(a, b);
}

// Loss

LossReport calib_loss(const Tensor& out, const Tensor& gt, const FreqConfig& fc, double lambda_p,
                      const PerceptualProxy& proxy) {
    require_same_shape(out, gt, "calib_loss");
    const Tensor fo = frequency_extract(out, fc.level);
    const Tensor fg = frequency_extract(gt, fc.level);
    LossReport r;
    r.l1 = mean_abs_diff(fo, fg);
    r.lp = lambda_p != 0.0 ? proxy.distance(fo, fg) : 0.0;
    r.total = r.l1 + lambda_p * r.lp;
    return r;
}

LossReport calib_loss(const Tensor& out, const Tensor& gt, const FreqConfig& fc, double lambda_p) {
    return calib_loss(out, gt, fc, lambda_p, PerceptualProxy());
}

LossReport calib_loss_grad(const Tensor& out, const Tensor& gt, const FreqConfig& fc, double lambda_p,
                           const PerceptualProxy& proxy, Tensor& grad_out) {
    require_same_shape(out, gt, "calib_loss");
    const Tensor fo = frequency_extract(out, fc.level);
    const Tensor fg = frequency_extract(gt, fc.level);
    LossReport r;
    r.l1 = mean_abs_diff(fo, fg);
    Tensor g(fo.dims(), 0.0f);
    const float inv_n = static_cast<float>(1.0 / static_cast<double>(fo.numel()));
    for (std::size_t i = 0; i < fo.numel(); ++i) {
        const float d = fo[i] - fg[i];
        g[i] = d > 0.0f ? inv_n : (d < 0.0f ? -inv_n : 0.0f);
    }
    if (lambda_p != 0.0) {
        Tensor gp;
        r.lp = proxy.distance_with_grad(fo, fg, gp);
        const auto lam = static_cast<float>(lambda_p);
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += lam * gp[i];
    }
    r.total = r.l1 + lambda_p * r.lp;
    grad_out = frequency_extract_backward(g, fc.level);
    return r;
}

}  // namespace qdm
