#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "quantdemoire/quant.hpp"
#include "quantdemoire/rng.hpp"
#include "quantdemoire/tensor.hpp"

namespace qdm {

struct SamplerConfig {
    double gamma1 = 1e-3;  ///< fraction sampled per channel for channel maxima
    double gamma2 = 1e-3;  ///< fraction sampled per tensor for quantizer bounds
    std::uint64_t seed = 0;
};

void validate(const SamplerConfig& cfg);

struct Bounds {
    float lower = 0.0f;
    float upper = 0.0f;
};

/// Widens a degenerate interval (lower == upper) by +-1e-4 * max(1, |upper|).
Bounds widen_if_degenerate(Bounds b) noexcept;

/// Running estimate of M_j = max |Sample_gamma1(X_j)| for every channel of a 4-D activation,
/// aggregated as a running max over the calibration set.
class ChannelMaxSampler {
public:
    ChannelMaxSampler(std::size_t channels, double gamma1, std::uint64_t seed);

    void observe(const Tensor& x);
    const std::vector<float>& maxima() const noexcept { return max_; }
    bool seen() const noexcept { return seen_; }

private:
    double gamma_;
    Rng rng_;
    std::vector<float> max_;
    std::vector<float> gather_;
    bool seen_ = false;
};

/// M_j for one channel over a stream of activations.
float sample_channel_max(std::span<const Tensor> stream, std::int64_t channel, const SamplerConfig& cfg);

/// Running (min, max) over gamma2-subsamples of whole tensors.
class TensorBoundsSampler {
public:
    TensorBoundsSampler(double gamma2, std::uint64_t seed);

    void observe(const Tensor& x);
    /// Widened result; throws State if nothing was observed.
    Bounds bounds() const;

private:
    double gamma_;
    Rng rng_;
    float lo_, hi_;
    bool seen_ = false;
};

Bounds sample_tensor_bounds(std::span<const Tensor> stream, const SamplerConfig& cfg);

/// Per-input-channel factors s_j = M_j^alpha / max|W_j|^(1-alpha).
struct SmoothingVector {
    std::vector<float> s;
    double alpha = 0.5;
};

SmoothingVector compute_smoothing_factors(std::span<const float> channel_max, const Tensor& weight,
                                          double alpha);

/// x[:, j] / s_j
Tensor smooth_activation(const Tensor& x, std::span<const float> s);
/// w[:, j] * s_j
Tensor smooth_weight(const Tensor& w, std::span<const float> s);
std::pair<Tensor, Tensor> apply_smoothing(const Tensor& x, const Tensor& w, const SmoothingVector& s);

/// Linear-interpolation percentile: sorted values at fractional position p * (N - 1).
double percentile(std::span<const float> values, double p);
/// Same, on values already sorted ascending.
double percentile_sorted(std::span<const float> sorted, double p);

/// Normal weights quantized per output channel plus outliers kept at 16-bit precision.
struct MixedWeight {
    QuantizedTensor normal;
    std::vector<std::uint32_t> outlier_index;  ///< strictly increasing flat indices
    std::vector<std::uint16_t> outlier_value;  ///< binary16 bits
    double beta = 0.0;
    double t_low = 0.0;
    double t_high = 0.0;

    std::size_t outlier_count() const noexcept { return outlier_index.size(); }
};

/// Splits weights at the beta / (1 - beta) percentiles of the whole tensor. Values strictly
/// outside the thresholds become outliers; the rest are quantized per output channel with
/// bounds set to that channel's normal min/max.
MixedWeight split_weights(const Tensor& w, double beta, int bits);

/// Dense reconstruction: outliers widened from binary16, everything else dequantized.
Tensor mixed_weight_apply(const MixedWeight& mw);

enum class BaselineMode { MinMax, Percentile };

struct BaselineConfig {
    BaselineMode mode = BaselineMode::MinMax;
    double p = 0.999;
    std::size_t pool_cap = std::size_t{1} << 20;
    std::uint64_t seed = 0;
};

/// MinMax tracks exact extremes. Percentile keeps a reservoir-sampled pool of at most
/// pool_cap values and reports (P_{1-p}, P_p) of the pool.
class BaselineBoundsAccumulator {
public:
    explicit BaselineBoundsAccumulator(const BaselineConfig& cfg);

    void observe(const Tensor& x);
    /// Raw (unwidened) bounds.
    Bounds raw_bounds() const;
    Bounds bounds() const { return widen_if_degenerate(raw_bounds()); }

private:
    BaselineConfig cfg_;
    Rng rng_;
    std::vector<float> pool_;
    std::uint64_t seen_count_ = 0;
    float lo_, hi_;
};

Bounds baseline_bounds(std::span<const Tensor> stream, const BaselineConfig& cfg);

}  // namespace qdm
