#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "quantdemoire/freq.hpp"
#include "quantdemoire/model.hpp"
#include "quantdemoire/outlier.hpp"

namespace qdm {

/// Bound-calibration settings. The learning rate follows cosine annealing that restarts
/// every epoch and decays to zero.
struct CalibConfig {
    int epochs = 4;
    double lr0 = 1e-3;
    AdamConfig adam{};
    int crop = 64;
    double lambda_p = 1.0;
    std::uint64_t seed = 7;
    std::uint64_t perceptual_seed = kDefaultPerceptualSeed;
};

struct CalibStep {
    std::int64_t step = 0;
    double lr = 0.0;
    LossReport loss;
};

struct CalibResult {
    std::vector<CalibStep> trace;
    std::vector<double> epoch_mean;
};

/// Minimum gap kept between an activation quantizer's upper and lower bound.
inline constexpr float kMinBoundGap = 1e-4f;

/// Optimizes only the activation bounds of a quantized model against the frequency-aware
/// loss, with straight-through gradients. A model without quantizers is left untouched.
CalibResult calibrate(ModelGraph& model, std::span<const ImagePair> calib_set, const CalibConfig& cc,
                      const FreqConfig& fc);

/// "step,lr,l1,lp,total" lines with a header row.
void write_trace_csv(std::span<const CalibStep> trace, const std::filesystem::path& path);

enum class QuantMethod {
    MinMax,       ///< exact activation extremes, plain per-channel weights
    Percentile,   ///< percentile activation bounds, plain per-channel weights
    Sample,       ///< sampled activation bounds only (no smoothing, split or calibration)
    QuantDemoire  ///< sampled smoothing + sampled bounds + mixed weights + calibration
};

std::string_view to_string(QuantMethod m) noexcept;
std::optional<QuantMethod> parse_method(std::string_view s) noexcept;

struct QuantizeConfig {
    int bits_w = 4;
    int bits_a = 4;
    QuantMethod method = QuantMethod::QuantDemoire;
    SamplerConfig sampler{};
    double alpha = 0.5;
    double beta = 0.005;
    double percentile = 0.999;
    CalibConfig calib{};
    FreqConfig freq{};
};

struct QuantizeResult {
    ModelGraph model;
    CalibResult calib;
};

/// Builds a quantized copy of an FP32 model from calibration statistics.
QuantizeResult quantize_model(const ModelGraph& fp32, std::span<const ImagePair> calib_set,
                              const QuantizeConfig& cfg);

}  // namespace qdm
