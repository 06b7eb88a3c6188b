#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "quantdemoire/tensor.hpp"

namespace qdm {

/// Mid/low-frequency extraction settings. `level` is the number of dilated smoothing steps.
struct FreqConfig {
    int level = 3;
};

/// The 3x3 binomial kernel [[1,2,1],[2,4,2],[1,2,1]] / 16.
const std::array<float, 9>& frequency_kernel() noexcept;

/// F(I, L): step i = 1..L convolves every channel with the kernel at dilation 2^i using
/// replicate padding. L = 0 returns the input unchanged.
Tensor frequency_extract(const Tensor& img, int level);

/// Adjoint of frequency_extract (the map is linear, so this is its exact gradient).
Tensor frequency_extract_backward(const Tensor& grad, int level);

inline constexpr std::uint64_t kDefaultPerceptualSeed = 0x51ce9ab1e5eedULL;

/// Fixed random feature stack used as a perceptual distance: three stride-2 3x3 conv + ReLU
/// stages (3 -> 8 -> 16 -> 32 channels) with Kaiming-uniform weights drawn from the seed.
/// The distance is the mean over stages of the mean absolute feature difference.
class PerceptualProxy {
public:
    explicit PerceptualProxy(std::uint64_t seed = kDefaultPerceptualSeed);

    double distance(const Tensor& a, const Tensor& b) const;
    /// Also writes d distance / d a into grad_a.
    double distance_with_grad(const Tensor& a, const Tensor& b, Tensor& grad_a) const;

    const std::vector<Tensor>& weights() const noexcept { return weights_; }

private:
    std::vector<Tensor> weights_;
};

double perceptual_proxy(const Tensor& a, const Tensor& b, std::uint64_t seed = kDefaultPerceptualSeed);

struct LossReport {
    double l1 = 0.0;
    double lp = 0.0;
    double total = 0.0;
};

/// L1(F(out), F(gt)) + lambda_p * Lp(F(out), F(gt)).
LossReport calib_loss(const Tensor& out, const Tensor& gt, const FreqConfig& fc, double lambda_p,
                      const PerceptualProxy& proxy);
LossReport calib_loss(const Tensor& out, const Tensor& gt, const FreqConfig& fc, double lambda_p);

/// calib_loss plus its gradient with respect to `out`. The L1 subgradient at a zero
/// residual is zero.
LossReport calib_loss_grad(const Tensor& out, const Tensor& gt, const FreqConfig& fc, double lambda_p,
                           const PerceptualProxy& proxy, Tensor& grad_out);

}  // namespace qdm
