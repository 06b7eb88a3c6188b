#include "quantdemoire/model.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "quantdemoire/error.hpp"
#include "quantdemoire/rng.hpp"

namespace qdm {

void LayerQuant::set_act_bounds(Bounds b) {
    act_bounds = b;
    act = compute_qparams(b.lower, b.upper, bits_a);
}

const std::vector<ModelGraph::LayerShape>& ModelGraph::architecture() {
    static const std::vector<LayerShape> arch = {
        {3, 16, 1}, {16, 16, 2}, {16, 32, 1}, {32, 16, 2}, {16, 3, 1},
    };
    return arch;
}

ModelGraph ModelGraph::zeros() {
    ModelGraph m;
    for (const auto& s : architecture()) {
        ConvLayer l;
        l.weight = Tensor({s.cout, s.cin, 3, 3}, 0.0f);
        l.bias.assign(static_cast<std::size_t>(s.cout), 0.0f);
        l.dilation = s.dilation;
        m.layers_.push_back(std::move(l));
    }
    return m;
}

ModelGraph ModelGraph::initialized(std::uint64_t seed) {
    ModelGraph m = zeros();
    Rng rng(seed);
    for (auto& l : m.layers_) {
        const double fan_in = static_cast<double>(l.weight.dim(1) * 9);
        const double bound = std::sqrt(6.0 / fan_in);
        for (float& v : l.weight.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    }
    return m;
}

void ModelGraph::set_quant(std::vector<LayerQuant> q) {
    require(q.size() == layers_.size(), ErrorKind::InvalidArgument,
            "quantizer slots must be present on every conv layer");
    for (std::size_t i = 0; i < q.size(); ++i) {
        require(q[i].effective_weight.same_shape(layers_[i].weight), ErrorKind::ShapeMismatch,
                "effective weight shape does not match the layer");
        require(q[i].smoothing.empty() || static_cast<std::int64_t>(q[i].smoothing.size()) ==
                                               layers_[i].weight.dim(1),
                ErrorKind::ShapeMismatch, "smoothing vector length does not match layer input channels");
        require(q[i].act.channels() == 1, ErrorKind::InvalidArgument, "activation quantizer is not set");
    }
    quant_ = std::move(q);
    cache_.clear();
    cached_mode_.reset();
}

Tensor ModelGraph::forward(const Tensor& x, ForwardMode mode) {
    require(x.ndim() == 4 && x.dim(1) == 3, ErrorKind::ShapeMismatch, "model input must be [N,3,H,W]");
    require(x.dim(2) >= 8 && x.dim(3) >= 8, ErrorKind::InvalidArgument, "model input must be at least 8x8");
    const bool q = mode == ForwardMode::Quantized;
    if (q && !quantized()) fail(ErrorKind::State, "quantized forward requested but quantizer slots are empty");

    cache_.assign(layers_.size(), {});
    Tensor cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const ConvLayer& layer = layers_[i];
        LayerCache& c = cache_[i];
        Tensor y;
        if (q) {
            const LayerQuant& lq = quant_[i];
            c.smoothed = lq.smoothing.empty() ? cur : smooth_activation(cur, lq.smoothing);
            c.quantized = fake_quantize(c.smoothed, lq.act);
            y = conv2d(c.quantized, lq.effective_weight, layer.bias, layer.spec());
        } else {
            y = conv2d(cur, layer.weight, layer.bias, layer.spec());
        }
        c.input = std::move(cur);
        if (i + 1 < layers_.size()) {
            c.pre = y;
            relu_inplace(y);
            cur = std::move(y);
        } else {
            for (std::size_t k = 0; k < y.numel(); ++k) y[k] += x[k];
            cur = std::move(y);
        }
    }
    cached_mode_ = mode;
    return cur;
}

Gradients ModelGraph::backward(const Tensor& upstream, BackwardTargets targets) {
    if (!cached_mode_ || cache_.size() != layers_.size())
        fail(ErrorKind::State, "backward called without a cached forward pass");
    const bool q = *cached_mode_ == ForwardMode::Quantized;
    require(upstream.same_shape(cache_.front().input), ErrorKind::ShapeMismatch,
            "upstream gradient must match the model output shape");
    if (targets.bounds && !q) fail(ErrorKind::State, "bound gradients require a quantized forward pass");

    const std::size_t n = layers_.size();
    Gradients grads;
    grads.weight.resize(n);
    grads.bias.resize(n);
    grads.grad_lower.assign(n, 0.0);
    grads.grad_upper.assign(n, 0.0);

    Tensor g = upstream;  // residual: d out / d last conv = identity
    for (std::size_t i = n; i-- > 0;) {
        const ConvLayer& layer = layers_[i];
        const LayerCache& c = cache_[i];
        if (i + 1 < n) relu_backward_inplace(g, c.pre);
        if (q) {
            const LayerQuant& lq = quant_[i];
            if (targets.params) {
                grads.weight[i] = conv2d_backward_weight(g, c.quantized, layer.weight.dims(), layer.spec());
                grads.bias[i] = conv2d_backward_bias(g);
            }
            if (i == 0 && !targets.bounds) break;
            const Tensor gq = conv2d_backward_input(g, lq.effective_weight, c.quantized.dims(), layer.spec());
            SteGrads ste = ste_backward(gq, c.smoothed, lq.act);
            grads.grad_lower[i] = ste.grad_lower;
            grads.grad_upper[i] = ste.grad_upper;
            if (i == 0) break;
            g = lq.smoothing.empty() ? std::move(ste.grad_v) : smooth_activation(ste.grad_v, lq.smoothing);
        } else {
            if (targets.params) {
                grads.weight[i] = conv2d_backward_weight(g, c.input, layer.weight.dims(), layer.spec());
                grads.bias[i] = conv2d_backward_bias(g);
            }
            if (i == 0) break;
            g = conv2d_backward_input(g, layer.weight, c.input.dims(), layer.spec());
        }
    }
    return grads;
}

std::vector<std::span<float>> ModelGraph::parameter_views() {
    std::vector<std::span<float>> v;
    for (auto& l : layers_) {
        v.emplace_back(l.weight.data());
        v.emplace_back(l.bias);
    }
    return v;
}

std::vector<std::span<const float>> ModelGraph::gradient_views(const Gradients& g) {
    std::vector<std::span<const float>> v;
    for (std::size_t i = 0; i < g.weight.size(); ++i) {
        v.emplace_back(g.weight[i].data());
        v.emplace_back(g.bias[i]);
    }
    return v;
}

std::size_t ModelGraph::parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.numel() + l.bias.size();
    return n;
}

const Tensor& ModelGraph::cached_layer_input(std::size_t i) const {
    if (!cached_mode_ || i >= cache_.size()) fail(ErrorKind::State, "no cached forward pass for this layer");
    return cache_[i].input;
}

// Optimizer

void adam_step(OptimizerState& state, std::span<const std::span<float>> params,
               std::span<const std::span<const float>> grads, double lr, const AdamConfig& cfg) {
    require(params.size() == grads.size(), ErrorKind::ShapeMismatch, "adam: parameter/gradient count mismatch");
    std::size_t total = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        require(params[k].size() == grads[k].size(), ErrorKind::ShapeMismatch, "adam: gradient shape mismatch");
        total += params[k].size();
    }
    if (state.m.empty()) {
        state.m.assign(total, 0.0);
        state.v.assign(total, 0.0);
    }
    require(state.m.size() == total, ErrorKind::ShapeMismatch, "adam: state size does not match parameters");
    ++state.t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    std::size_t idx = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        for (std::size_t i = 0; i < params[k].size(); ++i, ++idx) {
            const double g = grads[k][i];
            double& m = state.m[idx];
            double& v = state.v[idx];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            const double step = lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
            params[k][i] = static_cast<float>(params[k][i] - step);
        }
    }
}

double cosine_lr(std::int64_t step, std::int64_t steps_per_period, double lr0, double eta_min) {
    require(steps_per_period >= 1, ErrorKind::InvalidArgument, "cosine_lr: period must be >= 1");
    const double pos = static_cast<double>(step % steps_per_period) / static_cast<double>(steps_per_period);
    return eta_min + 0.5 * (lr0 - eta_min) * (1.0 + std::cos(std::numbers::pi * pos));
}

// Training

TrainResult train_fp32(ModelGraph& model, std::span<const ImagePair> dataset, const TrainConfig& cfg) {
    require(!dataset.empty(), ErrorKind::InvalidArgument, "train_fp32: empty dataset");
    require(cfg.epochs >= 0, ErrorKind::InvalidArgument, "train_fp32: epochs must be >= 0");
    TrainResult result;
    if (cfg.epochs == 0) return result;

    Rng rng(cfg.seed);
    OptimizerState opt;
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto total_steps = static_cast<std::int64_t>(dataset.size()) * cfg.epochs;
    std::int64_t step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double epoch_sum = 0.0;
        for (std::size_t idx : order) {
            const ImagePair& pair = dataset[idx];
            Tensor x = pair.input;
            Tensor y = pair.target;
            if (cfg.crop > 0 && (cfg.crop < x.dim(2) || cfg.crop < x.dim(3))) {
                const std::int64_t ch = std::min<std::int64_t>(cfg.crop, x.dim(2));
                const std::int64_t cw = std::min<std::int64_t>(cfg.crop, x.dim(3));
                const auto y0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(x.dim(2) - ch + 1)));
                const auto x0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(x.dim(3) - cw + 1)));
                x = crop(x, y0, x0, ch, cw);
                y = crop(y, y0, x0, ch, cw);
            }
            const Tensor out = model.forward(x, ForwardMode::FP32);
            Tensor g(out.dims(), 0.0f);
            const float inv_n = static_cast<float>(1.0 / static_cast<double>(out.numel()));
            double loss = 0.0;
            for (std::size_t k = 0; k < out.numel(); ++k) {
                const float d = out[k] - y[k];
                loss += std::fabs(static_cast<double>(d));
                g[k] = d > 0.0f ? inv_n : (d < 0.0f ? -inv_n : 0.0f);
            }
            loss /= static_cast<double>(out.numel());
            const Gradients grads = model.backward(g, {true, false});
            const auto views = model.parameter_views();
            const auto gviews = ModelGraph::gradient_views(grads);
            adam_step(opt, views, gviews, cosine_lr(step, total_steps, cfg.lr0, 0.0));
            result.step_loss.push_back(loss);
            epoch_sum += loss;
            ++step;
        }
        result.epoch_mean.push_back(epoch_sum / static_cast<double>(dataset.size()));
    }
    return result;
}

}  // namespace qdm
