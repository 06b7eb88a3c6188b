#include "quantdemoire/outlier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "quantdemoire/error.hpp"
#include "quantdemoire/half.hpp"

namespace qdm {

void validate(const SamplerConfig& cfg) {
    require(cfg.gamma1 > 0.0 && cfg.gamma1 <= 1.0, ErrorKind::InvalidArgument, "gamma1 must be in (0, 1]");
    require(cfg.gamma2 > 0.0 && cfg.gamma2 <= 1.0, ErrorKind::InvalidArgument, "gamma2 must be in (0, 1]");
}

Bounds widen_if_degenerate(Bounds b) noexcept {
    if (b.lower == b.upper) {
        const float pad = 1e-4f * std::max(1.0f, std::fabs(b.upper));
        b.lower -= pad;
        b.upper += pad;
    }
    return b;
}

namespace {

void require_4d(const Tensor& x, const char* what) {
    if (x.ndim() != 4) fail(ErrorKind::ShapeMismatch, std::string(what) + ": expected a 4-D activation");
}

}  // namespace

// Channel maxima

ChannelMaxSampler::ChannelMaxSampler(std::size_t channels, double gamma1, std::uint64_t seed)
    : gamma_(gamma1), rng_(seed), max_(channels, 0.0f) {
    require(gamma1 > 0.0 && gamma1 <= 1.0, ErrorKind::InvalidArgument, "gamma1 must be in (0, 1]");
}

void ChannelMaxSampler::observe(const Tensor& x) {
    require_4d(x, "ChannelMaxSampler");
    require(static_cast<std::size_t>(x.dim(1)) == max_.size(), ErrorKind::ShapeMismatch,
            "ChannelMaxSampler: channel count changed");
    const std::size_t hw = static_cast<std::size_t>(x.dim(2) * x.dim(3));
    const std::size_t count = static_cast<std::size_t>(x.dim(0)) * hw;
    for (std::size_t c = 0; c < max_.size(); ++c) {
        for (std::size_t k : sample_indices(rng_, count, gamma_)) {
            const float v = x.plane(static_cast<std::int64_t>(k / hw), static_cast<std::int64_t>(c))[k % hw];
            max_[c] = std::max(max_[c], std::fabs(v));
        }
    }
    seen_ = true;
}

float sample_channel_max(std::span<const Tensor> stream, std::int64_t channel, const SamplerConfig& cfg) {
    validate(cfg);
    require(!stream.empty(), ErrorKind::InvalidArgument, "sample_channel_max: empty stream");
    Rng rng(cfg.seed);
    float m = 0.0f;
    for (const Tensor& x : stream) {
        require_4d(x, "sample_channel_max");
        require(channel >= 0 && channel < x.dim(1), ErrorKind::InvalidArgument,
                "sample_channel_max: channel out of range");
        const std::size_t hw = static_cast<std::size_t>(x.dim(2) * x.dim(3));
        const std::size_t count = static_cast<std::size_t>(x.dim(0)) * hw;
        for (std::size_t k : sample_indices(rng, count, cfg.gamma1))
            m = std::max(m, std::fabs(x.plane(static_cast<std::int64_t>(k / hw), channel)[k % hw]));
    }
    return m;
}

// Tensor bounds

TensorBoundsSampler::TensorBoundsSampler(double gamma2, std::uint64_t seed)
    : gamma_(gamma2),
      rng_(seed),
      lo_(std::numeric_limits<float>::infinity()),
      hi_(-std::numeric_limits<float>::infinity()) {
    require(gamma2 > 0.0 && gamma2 <= 1.0, ErrorKind::InvalidArgument, "gamma2 must be in (0, 1]");
}

void TensorBoundsSampler::observe(const Tensor& x) {
    require(!x.empty(), ErrorKind::InvalidArgument, "TensorBoundsSampler: empty tensor");
    for (std::size_t k : sample_indices(rng_, x.numel(), gamma_)) {
        lo_ = std::min(lo_, x[k]);
        hi_ = std::max(hi_, x[k]);
    }
    seen_ = true;
}

Bounds TensorBoundsSampler::bounds() const {
    require(seen_, ErrorKind::State, "TensorBoundsSampler: no tensors observed");
    return widen_if_degenerate({lo_, hi_});
}

Bounds sample_tensor_bounds(std::span<const Tensor> stream, const SamplerConfig& cfg) {
    validate(cfg);
    require(!stream.empty(), ErrorKind::InvalidArgument, "sample_tensor_bounds: empty stream");
    TensorBoundsSampler s(cfg.gamma2, cfg.seed);
    for (const Tensor& x : stream) s.observe(x);
    return s.bounds();
}

// Smoothing

SmoothingVector compute_smoothing_factors(std::span<const float> channel_max, const Tensor& weight,
                                          double alpha) {
    require(weight.ndim() >= 2, ErrorKind::ShapeMismatch, "smoothing: weight must be at least 2-D");
    const auto cout = static_cast<std::size_t>(weight.dim(0));
    const auto cin = static_cast<std::size_t>(weight.dim(1));
    require(channel_max.size() == cin, ErrorKind::ShapeMismatch,
            "smoothing: channel maxima do not match weight input channels");
    const std::size_t inner = weight.numel() / (cout * cin);
    constexpr double kFloor = 1e-8;
    SmoothingVector sv;
    sv.alpha = alpha;
    sv.s.resize(cin);
    for (std::size_t j = 0; j < cin; ++j) {
        double wmax = 0.0;
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t i = 0; i < inner; ++i)
                wmax = std::max(wmax, static_cast<double>(std::fabs(weight[(o * cin + j) * inner + i])));
        const double m = std::max(static_cast<double>(channel_max[j]), kFloor);
        wmax = std::max(wmax, kFloor);
        sv.s[j] = static_cast<float>(std::pow(m, alpha) / std::pow(wmax, 1.0 - alpha));
    }
    return sv;
}

Tensor smooth_activation(const Tensor& x, std::span<const float> s) {
    require_4d(x, "smooth_activation");
    require(static_cast<std::size_t>(x.dim(1)) == s.size(), ErrorKind::ShapeMismatch,
            "smooth_activation: channel count mismatch");
    Tensor out = x;
    const auto hw = static_cast<std::size_t>(x.dim(2) * x.dim(3));
    for (std::int64_t n = 0; n < x.dim(0); ++n)
        for (std::int64_t c = 0; c < x.dim(1); ++c) {
            float* p = out.plane(n, c);
            const float sc = s[static_cast<std::size_t>(c)];
            for (std::size_t i = 0; i < hw; ++i) p[i] /= sc;
        }
    return out;
}

Tensor smooth_weight(const Tensor& w, std::span<const float> s) {
    require(w.ndim() >= 2 && static_cast<std::size_t>(w.dim(1)) == s.size(), ErrorKind::ShapeMismatch,
            "smooth_weight: channel count mismatch");
    Tensor out = w;
    const auto cout = static_cast<std::size_t>(w.dim(0));
    const auto cin = s.size();
    const std::size_t inner = w.numel() / (cout * cin);
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t j = 0; j < cin; ++j)
            for (std::size_t i = 0; i < inner; ++i) out[(o * cin + j) * inner + i] *= s[j];
    return out;
}

std::pair<Tensor, Tensor> apply_smoothing(const Tensor& x, const Tensor& w, const SmoothingVector& s) {
    return {smooth_activation(x, s.s), smooth_weight(w, s.s)};
}

// Percentiles and the mixed-precision split

double percentile_sorted(std::span<const float> sorted, double p) {
    require(!sorted.empty(), ErrorKind::InvalidArgument, "percentile of an empty set");
    require(p >= 0.0 && p <= 1.0, ErrorKind::InvalidArgument, "percentile fraction must be in [0, 1]");
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return static_cast<double>(sorted[lo]) + frac * (static_cast<double>(sorted[hi]) - sorted[lo]);
}

double percentile(std::span<const float> values, double p) {
    std::vector<float> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    return percentile_sorted(sorted, p);
}

MixedWeight split_weights(const Tensor& w, double beta, int bits) {
    require(beta >= 0.0 && beta < 0.5, ErrorKind::InvalidArgument, "beta must be in [0, 0.5)");
    require(w.ndim() >= 2, ErrorKind::ShapeMismatch, "split_weights: weight must be at least 2-D");
    require(w.numel() <= 0xffffffffULL, ErrorKind::DimsOverflow, "split_weights: too many weights");
    MixedWeight mw;
    mw.beta = beta;

    std::vector<float> sorted(w.storage());
    std::sort(sorted.begin(), sorted.end());
    mw.t_low = percentile_sorted(sorted, beta);
    mw.t_high = percentile_sorted(sorted, 1.0 - beta);

    const auto cout = static_cast<std::size_t>(w.dim(0));
    const std::size_t per = w.numel() / cout;
    std::vector<float> lo(cout, std::numeric_limits<float>::infinity());
    std::vector<float> hi(cout, -std::numeric_limits<float>::infinity());
    std::vector<bool> is_outlier(w.numel(), false);
    for (std::size_t i = 0; i < w.numel(); ++i) {
        const double v = w[i];
        if (v < mw.t_low || v > mw.t_high) {
            is_outlier[i] = true;
            mw.outlier_index.push_back(static_cast<std::uint32_t>(i));
            mw.outlier_value.push_back(float_to_half_bits(w[i]));
        } else {
            const std::size_t c = i / per;
            lo[c] = std::min(lo[c], w[i]);
            hi[c] = std::max(hi[c], w[i]);
        }
    }
    for (std::size_t c = 0; c < cout; ++c) {
        if (lo[c] > hi[c]) lo[c] = hi[c] = 0.0f;  // every weight in the channel is an outlier
        const Bounds b = widen_if_degenerate({lo[c], hi[c]});
        lo[c] = b.lower;
        hi[c] = b.upper;
    }
    const QuantParams qp = compute_qparams_per_channel(lo, hi, bits, 0);
    mw.normal = quantize(w, qp);
    for (std::size_t i = 0; i < w.numel(); ++i)
        if (is_outlier[i]) mw.normal.codes[i] = static_cast<std::uint16_t>(qp.zero_point[i / per]);
    return mw;
}

Tensor mixed_weight_apply(const MixedWeight& mw) {
    require(mw.outlier_index.size() == mw.outlier_value.size(), ErrorKind::InvalidArgument,
            "mixed weight: outlier index/value length mismatch");
    Tensor out = mw.normal.dequantize();
    std::int64_t prev = -1;
    for (std::size_t k = 0; k < mw.outlier_index.size(); ++k) {
        const std::uint32_t idx = mw.outlier_index[k];
        if (idx >= out.numel()) fail(ErrorKind::InvalidArgument, "mixed weight: outlier index out of range");
        if (static_cast<std::int64_t>(idx) <= prev)
            fail(ErrorKind::InvalidArgument, "mixed weight: outlier indices must be strictly increasing");
        prev = idx;
        out[idx] = half_bits_to_float(mw.outlier_value[k]);
    }
    return out;
}

// Baselines

BaselineBoundsAccumulator::BaselineBoundsAccumulator(const BaselineConfig& cfg)
    : cfg_(cfg),
      rng_(cfg.seed),
      lo_(std::numeric_limits<float>::infinity()),
      hi_(-std::numeric_limits<float>::infinity()) {
    require(cfg.p >= 0.5 && cfg.p <= 1.0, ErrorKind::InvalidArgument, "percentile p must be in [0.5, 1]");
    require(cfg.pool_cap >= 1, ErrorKind::InvalidArgument, "pool capacity must be positive");
}

void BaselineBoundsAccumulator::observe(const Tensor& x) {
    require(!x.empty(), ErrorKind::InvalidArgument, "baseline bounds: empty tensor");
    if (cfg_.mode == BaselineMode::MinMax) {
        for (float v : x.data()) {
            lo_ = std::min(lo_, v);
            hi_ = std::max(hi_, v);
        }
        seen_count_ += x.numel();
        return;
    }
    for (float v : x.data()) {
        if (pool_.size() < cfg_.pool_cap) {
            pool_.push_back(v);
        } else {
            const std::uint64_t j = rng_.below(seen_count_ + 1);
            if (j < cfg_.pool_cap) pool_[static_cast<std::size_t>(j)] = v;
        }
        ++seen_count_;
    }
}

Bounds BaselineBoundsAccumulator::raw_bounds() const {
    require(seen_count_ > 0, ErrorKind::State, "baseline bounds: no tensors observed");
    if (cfg_.mode == BaselineMode::MinMax) return {lo_, hi_};
    std::vector<float> sorted = pool_;
    std::sort(sorted.begin(), sorted.end());
    return {static_cast<float>(percentile_sorted(sorted, 1.0 - cfg_.p)),
            static_cast<float>(percentile_sorted(sorted, cfg_.p))};
}

Bounds baseline_bounds(std::span<const Tensor> stream, const BaselineConfig& cfg) {
    require(!stream.empty(), ErrorKind::InvalidArgument, "baseline_bounds: empty stream");
    BaselineBoundsAccumulator acc(cfg);
    for (const Tensor& x : stream) acc.observe(x);
    return acc.bounds();
}

}  // namespace qdm
