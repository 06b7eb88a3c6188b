#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "quantdemoire/model.hpp"
#include "quantdemoire/tensor.hpp"

namespace qdm {

/// Storage and compute cost of one conv layer, in FP32-equivalent units.
struct LayerCost {
    std::string name;
    double weights = 0;           ///< weight count
    double outliers = 0;          ///< weights kept at 16 bits
    double bias = 0;
    double scale_params = 0;      ///< scales, zero points and smoothing factors
    double fp32_params = 0;
    double effective_params = 0;
    double macs = 0;
    double effective_macs = 0;
};

struct CompressionReport {
    int bits_w = 32;
    int bits_a = 32;
    double beta = 0.0;
    std::int64_t input_h = 224;
    std::int64_t input_w = 224;
    std::vector<LayerCost> layers;
    double fp32_params = 0;
    double effective_params = 0;
    double fp32_ops = 0;
    double effective_ops = 0;

    double params_reduction() const noexcept { return fp32_params > 0 ? 1.0 - effective_params / fp32_params : 0.0; }
    double ops_reduction() const noexcept { return fp32_ops > 0 ? 1.0 - effective_ops / fp32_ops : 0.0; }
    /// Average stored bits per weight.
    double weight_bits() const noexcept;
};

struct CompressionOptions {
    std::int64_t input_h = 224;
    std::int64_t input_w = 224;
    /// Count bias, quantizer parameters and 32-bit outlier indices in the params figure.
    bool include_overhead = true;
};

/// (1 - f) * bits_w + f * 16: average bits per weight when a fraction f is kept at 16 bits.
double effective_weight_bits(int bits_w, double outlier_fraction) noexcept;

/// Params = sum (N_normal*b_w + N_outlier*16 + overhead) / 32, Ops = MACs weighted by b_w/32
/// for normal weights and 16/32 for outliers. A quantized model contributes its actual
/// outlier counts and bit widths; otherwise a fraction `beta` of each layer's weights is
/// planned as outliers at `bits_w`. bits_w = 32 describes the FP32 model itself.
CompressionReport report_compression(const ModelGraph& model, int bits_w, int bits_a, double beta,
                                     const CompressionOptions& opts = {});

std::string format_compression_csv(const CompressionReport& r);
std::string format_compression_text(const CompressionReport& r);

struct Histogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<std::uint64_t> counts;
};

/// Equal-width bins over [min, max]; the top edge is inclusive. A constant tensor gives a
/// single bin holding every value.
Histogram compute_histogram(const Tensor& t, int bins);
std::string format_histogram_csv(const Histogram& h);
/// Writes "bin_lo,bin_hi,count" rows.
void dump_histogram(const Tensor& t, int bins, const std::filesystem::path& path);

}  // namespace qdm
