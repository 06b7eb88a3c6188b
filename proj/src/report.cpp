#include "quantdemoire/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "quantdemoire/error.hpp"

namespace qdm {

double CompressionReport::weight_bits() const noexcept {
    double w = 0, bits = 0;
    for (const auto& l : layers) {
        w += l.weights;
        bits += (l.weights - l.outliers) * bits_w + l.outliers * 16.0;
    }
    return w > 0 ? bits / w : 0.0;
}

double effective_weight_bits(int bits_w, double outlier_fraction) noexcept {
    return (1.0 - outlier_fraction) * bits_w + outlier_fraction * 16.0;
}

CompressionReport report_compression(const ModelGraph& model, int bits_w, int bits_a, double beta,
                                     const CompressionOptions& opts) {
    require(beta >= 0.0 && beta < 0.5, ErrorKind::InvalidArgument, "beta must be in [0, 0.5)");
    CompressionReport r;
    r.input_h = opts.input_h;
    r.input_w = opts.input_w;
    r.beta = beta;
    const bool quantized = model.quantized();
    if (quantized) {
        bits_w = model.quant().front().weight.normal.params.bits;
        bits_a = model.quant().front().bits_a;
    }
    require(bits_w == 32 || (bits_w >= 2 && bits_w <= 16), ErrorKind::InvalidArgument, "bits_w must be 2..16 or 32");
    r.bits_w = bits_w;
    r.bits_a = bits_a;
    const bool fp32 = bits_w == 32;
    const double pixels = static_cast<double>(opts.input_h * opts.input_w);

    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        const ConvLayer& layer = model.layers()[i];
        LayerCost c;
        c.name = "conv" + std::to_string(i);
        c.weights = static_cast<double>(layer.weight.numel());
        c.bias = static_cast<double>(layer.bias.size());
        c.fp32_params = c.weights + c.bias;
        c.macs = pixels * c.weights;
        if (fp32) {
            c.effective_params = c.fp32_params;
            c.effective_macs = c.macs;
        } else {
            const auto cout = static_cast<double>(layer.weight.dim(0));
            const auto cin = static_cast<double>(layer.weight.dim(1));
            if (quantized) {
                const LayerQuant& q = model.quant()[i];
                c.outliers = static_cast<double>(q.weight.outlier_count());
                c.scale_params = 2.0 * cout + 2.0 + static_cast<double>(q.smoothing.size());
            } else {
                c.outliers = beta * c.weights;
                c.scale_params = 2.0 * cout + 2.0 + cin;
            }
            const double weight_bits = (c.weights - c.outliers) * bits_w + c.outliers * 16.0;
            double bits = weight_bits;
            if (opts.include_overhead) bits += c.outliers * 32.0 + (c.bias + c.scale_params) * 32.0;
            c.effective_params = bits / 32.0;
            c.effective_macs = pixels * weight_bits / 32.0;
        }
        r.fp32_params += c.fp32_params;
        r.effective_params += c.effective_params;
        r.fp32_ops += c.macs;
        r.effective_ops += c.effective_macs;
        r.layers.push_back(std::move(c));
    }
    return r;
}

std::string format_compression_csv(const CompressionReport& r) {
    std::string s = "layer,weights,outliers,bias,scale_params,fp32_params,effective_params,macs,effective_macs\n";
    char buf[512];
    auto row = [&](const std::string& name, const LayerCost& c) {
        std::snprintf(buf, sizeof buf, "%s,%.0f,%.6g,%.0f,%.0f,%.0f,%.9g,%.0f,%.9g\n", name.c_str(), c.weights,
                      c.outliers, c.bias, c.scale_params, c.fp32_params, c.effective_params, c.macs,
                      c.effective_macs);
        s += buf;
    };
    LayerCost total;
    for (const auto& c : r.layers) {
        row(c.name, c);
        total.weights += c.weights;
        total.outliers += c.outliers;
        total.bias += c.bias;
        total.scale_params += c.scale_params;
        total.fp32_params += c.fp32_params;
        total.effective_params += c.effective_params;
        total.macs += c.macs;
        total.effective_macs += c.effective_macs;
    }
    row("total", total);
    return s;
}

std::string format_compression_text(const CompressionReport& r) {
    char buf[1024];
    std::snprintf(buf, sizeof buf,
                  "bits: W%dA%d  beta: %.4g  input: 3x%lldx%lld\n"
                  "weight bits per weight: %.4f\n"
                  "params: %.0f -> %.1f (reduction %.2f%%)\n"
                  "ops (MAC): %.4g -> %.4g (reduction %.2f%%)\n",
                  r.bits_w, r.bits_a, r.beta, static_cast<long long>(r.input_h), static_cast<long long>(r.input_w),
                  r.weight_bits(), r.fp32_params, r.effective_params, 100.0 * r.params_reduction(), r.fp32_ops,
                  r.effective_ops, 100.0 * r.ops_reduction());
    return buf;
}

Histogram compute_histogram(const Tensor& t, int bins) {
    require(bins >= 2, ErrorKind::InvalidArgument, "histogram needs at least 2 bins");
    require(!t.empty(), ErrorKind::InvalidArgument, "histogram of an empty tensor");
    const auto [mn, mx] = std::minmax_element(t.data().begin(), t.data().end());
    Histogram h;
    h.lo = *mn;
    h.hi = *mx;
    if (h.lo == h.hi) {
        h.counts = {t.numel()};
        return h;
    }
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    const double width = (h.hi - h.lo) / bins;
    for (float v : t.data()) {
        auto b = static_cast<std::int64_t>(std::floor((static_cast<double>(v) - h.lo) / width));
        b = std::clamp<std::int64_t>(b, 0, bins - 1);
        ++h.counts[static_cast<std::size_t>(b)];
    }
    return h;
}

std::string format_histogram_csv(const Histogram& h) {
    std::string s = "bin_lo,bin_hi,count\n";
    const auto n = h.counts.size();
    const double width = (h.hi - h.lo) / static_cast<double>(n);
    char buf[128];
    for (std::size_t i = 0; i < n; ++i) {
        const double lo = h.lo + width * static_cast<double>(i);
        const double hi = i + 1 == n ? h.hi : h.lo + width * static_cast<double>(i + 1);
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%llu\n", lo, hi, static_cast<unsigned long long>(h.counts[i]));
        s += buf;
    }
    return s;
}

void dump_histogram(const Tensor& t, int bins, const std::filesystem::path& path) {
    const std::string csv = format_histogram_csv(compute_histogram(t, bins));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << csv;
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace qdm
