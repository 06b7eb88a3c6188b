#include "quantdemoire/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>

#include "quantdemoire/error.hpp"
#include "quantdemoire/rng.hpp"

namespace qdm {

// Calibration

CalibResult calibrate(ModelGraph& model, std::span<const ImagePair> calib_set, const CalibConfig& cc,
                      const FreqConfig& fc) {
    require(!calib_set.empty(), ErrorKind::InvalidArgument, "calibrate: empty calibration set");
    require(cc.epochs >= 0, ErrorKind::InvalidArgument, "calibrate: epochs must be >= 0");
    require(cc.lr0 > 0.0, ErrorKind::InvalidArgument, "calibrate: lr0 must be positive");
    require(cc.crop >= 8, ErrorKind::InvalidArgument, "calibrate: crop must be >= 8");
    require(fc.level >= 0, ErrorKind::InvalidArgument, "calibrate: frequency level must be >= 0");
    CalibResult result;
    if (cc.epochs == 0 || !model.quantized()) return result;

    const PerceptualProxy proxy(cc.perceptual_seed);
    auto& quant = model.quant();
    std::vector<float> bounds;
    for (const auto& q : quant) {
        bounds.push_back(q.act_bounds.lower);
        bounds.push_back(q.act_bounds.upper);
    }
    std::vector<float> grad(bounds.size(), 0.0f);
    OptimizerState opt;
    Rng rng(cc.seed);
    std::vector<std::size_t> order(calib_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto period = static_cast<std::int64_t>(calib_set.size());
    std::int64_t step = 0;

    for (int epoch = 0; epoch < cc.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double epoch_sum = 0.0;
        for (std::size_t idx : order) {
            const ImagePair& pair = calib_set[idx];
            const std::int64_t h = pair.input.dim(2), w = pair.input.dim(3);
            require(cc.crop <= h && cc.crop <= w, ErrorKind::InvalidArgument,
                    "calibrate: crop larger than a calibration image");
            const auto y0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(h - cc.crop + 1)));
            const auto x0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(w - cc.crop + 1)));
            const Tensor x = crop(pair.input, y0, x0, cc.crop, cc.crop);
            const Tensor gt = crop(pair.target, y0, x0, cc.crop, cc.crop);

            const Tensor out = model.forward(x, ForwardMode::Quantized);
            Tensor g;
            const LossReport loss = calib_loss_grad(out, gt, fc, cc.lambda_p, proxy, g);
            const Gradients grads = model.backward(g, {false, true});
            for (std::size_t l = 0; l < quant.size(); ++l) {
                grad[2 * l] = static_cast<float>(grads.grad_lower[l]);
                grad[2 * l + 1] = static_cast<float>(grads.grad_upper[l]);
            }
            const double lr = cosine_lr(step, period, cc.lr0, 0.0);
            const std::span<float> pview(bounds);
            const std::span<const float> gview(grad);
            adam_step(opt, std::span(&pview, 1), std::span(&gview, 1), lr, cc.adam);
            for (std::size_t l = 0; l < quant.size(); ++l) {
                float& lo = bounds[2 * l];
                float& hi = bounds[2 * l + 1];
                if (!(hi >= lo + kMinBoundGap)) hi = lo + kMinBoundGap;
                quant[l].set_act_bounds({lo, hi});
            }
            result.trace.push_back({step, lr, loss});
            epoch_sum += loss.total;
            ++step;
        }
        result.epoch_mean.push_back(epoch_sum / static_cast<double>(calib_set.size()));
    }
    return result;
}

void write_trace_csv(std::span<const CalibStep> trace, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << "step,lr,l1,lp,total\n";
    char line[256];
    for (const auto& s : trace) {
        std::snprintf(line, sizeof line, "%lld,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(s.step), s.lr,
                      s.loss.l1, s.loss.lp, s.loss.total);
        out << line;
    }
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

// Method names

std::string_view to_string(QuantMethod m) noexcept {
    switch (m) {
        case QuantMethod::MinMax: return "minmax";
        case QuantMethod::Percentile: return "percentile";
        case QuantMethod::Sample: return "sample";
        case QuantMethod::QuantDemoire: return "quantdemoire";
    }
    return "unknown";
}

std::optional<QuantMethod> parse_method(std::string_view s) noexcept {
    for (auto m : {QuantMethod::MinMax, QuantMethod::Percentile, QuantMethod::Sample, QuantMethod::QuantDemoire})
        if (s == to_string(m)) return m;
    return std::nullopt;
}

// Quantization pipeline

namespace {

enum : std::uint64_t { kStreamChannelMax = 1, kStreamTensorBounds = 2, kStreamBaseline = 3 };

std::uint64_t layer_seed(std::uint64_t base, std::uint64_t stream, std::size_t layer) {
    return derive_seed(derive_seed(base, stream), layer);
}

// Runs the FP32 model over the calibration set and hands every conv input to `visit`.
template <class Visit>
void for_each_layer_input(ModelGraph& fp32, std::span<const ImagePair> calib_set, Visit&& visit) {
    for (const ImagePair& p : calib_set) {
        fp32.forward(p.input, ForwardMode::FP32);
        for (std::size_t l = 0; l < fp32.layers().size(); ++l) visit(l, fp32.cached_layer_input(l));
    }
}

}  // namespace

QuantizeResult quantize_model(const ModelGraph& fp32_in, std::span<const ImagePair> calib_set,
                              const QuantizeConfig& cfg) {
    if (!supported_bit_width(cfg.bits_w) || !supported_bit_width(cfg.bits_a))
        fail(ErrorKind::InvalidArgument, "unsupported bit width (use 3, 4, 6, 8 or 16)");
    require(!calib_set.empty(), ErrorKind::InvalidArgument, "quantize_model: empty calibration set");
    validate(cfg.sampler);

    ModelGraph fp32 = fp32_in;
    fp32.clear_quant();
    const std::size_t n_layers = fp32.layers().size();
    const bool full = cfg.method == QuantMethod::QuantDemoire;

    // (1) + (2): sampled channel maxima and smoothing factors
    std::vector<std::vector<float>> smoothing(n_layers);
    if (full) {
        std::vector<ChannelMaxSampler> samplers;
        for (std::size_t l = 0; l < n_layers; ++l)
            samplers.emplace_back(static_cast<std::size_t>(fp32.layers()[l].weight.dim(1)), cfg.sampler.gamma1,
                                  layer_seed(cfg.sampler.seed, kStreamChannelMax, l));
        for_each_layer_input(fp32, calib_set, [&](std::size_t l, const Tensor& x) { samplers[l].observe(x); });
        for (std::size_t l = 0; l < n_layers; ++l) {
            const std::vector<float>& maxima = samplers[l].maxima();
            smoothing[l] = compute_smoothing_factors(maxima, fp32.layers()[l].weight, cfg.alpha).s;
            // a channel the sampler never saw nonzero stays unscaled
            for (std::size_t j = 0; j < maxima.size(); ++j)
                if (maxima[j] == 0.0f) smoothing[l][j] = 1.0f;
        }
    }

    // (3): activation bounds
    std::vector<Bounds> bounds(n_layers);
    if (full || cfg.method == QuantMethod::Sample) {
        std::vector<TensorBoundsSampler> samplers;
        for (std::size_t l = 0; l < n_layers; ++l)
            samplers.emplace_back(cfg.sampler.gamma2, layer_seed(cfg.sampler.seed, kStreamTensorBounds, l));
        for_each_layer_input(fp32, calib_set, [&](std::size_t l, const Tensor& x) {
            samplers[l].observe(smoothing[l].empty() ? x : smooth_activation(x, smoothing[l]));
        });
        for (std::size_t l = 0; l < n_layers; ++l) bounds[l] = samplers[l].bounds();
    } else {
        std::vector<BaselineBoundsAccumulator> accs;
        for (std::size_t l = 0; l < n_layers; ++l) {
            BaselineConfig bc;
            bc.mode = cfg.method == QuantMethod::MinMax ? BaselineMode::MinMax : BaselineMode::Percentile;
            bc.p = cfg.percentile;
            bc.seed = layer_seed(cfg.sampler.seed, kStreamBaseline, l);
            accs.emplace_back(bc);
        }
        for_each_layer_input(fp32, calib_set, [&](std::size_t l, const Tensor& x) { accs[l].observe(x); });
        for (std::size_t l = 0; l < n_layers; ++l) bounds[l] = accs[l].bounds();
    }

    // (4): weights
    std::vector<LayerQuant> quant(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        const ConvLayer& layer = fp32.layers()[l];
        LayerQuant& q = quant[l];
        q.bits_a = cfg.bits_a;
        q.set_act_bounds(bounds[l]);
        q.smoothing = smoothing[l];
        const Tensor w = q.smoothing.empty() ? layer.weight : smooth_weight(layer.weight, q.smoothing);
        q.weight = split_weights(w, full ? cfg.beta : 0.0, cfg.bits_w);
        q.effective_weight = mixed_weight_apply(q.weight);
    }

    QuantizeResult result{std::move(fp32), {}};
    result.model.set_quant(std::move(quant));

    // (5): frequency-aware bound calibration
    if (full) result.calib = calibrate(result.model, calib_set, cfg.calib, cfg.freq);
    return result;
}

}  // namespace qdm
