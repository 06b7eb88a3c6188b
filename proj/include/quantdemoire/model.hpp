#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "quantdemoire/conv.hpp"
#include "quantdemoire/outlier.hpp"
#include "quantdemoire/quant.hpp"
#include "quantdemoire/tensor.hpp"

namespace qdm {

struct ConvLayer {
    Tensor weight;  ///< [Cout, Cin, 3, 3]
    std::vector<float> bias;
    int dilation = 1;

    ConvSpec spec() const noexcept { return ConvSpec{1, dilation, PadMode::Zero, 1}; }
};

/// Quantizer state attached to one conv layer. The activation quantizer sees the layer
/// input divided by the smoothing factors; the effective weight is the reconstruction of
/// the (smoothing-scaled) mixed-precision weight.
struct LayerQuant {
    int bits_a = 8;
    Bounds act_bounds;
    QuantParams act;
    std::vector<float> smoothing;  ///< empty means no smoothing
    MixedWeight weight;
    Tensor effective_weight;

    void set_act_bounds(Bounds b);
};

enum class ForwardMode { FP32, Quantized };

struct Gradients {
    std::vector<Tensor> weight;
    std::vector<std::vector<float>> bias;
    std::vector<double> grad_lower;
    std::vector<double> grad_upper;
};

struct BackwardTargets {
    bool params = true;
    bool bounds = false;
};

/// Residual demoireing CNN: five same-padded 3x3 convs (dilations 1,2,1,2,1) with ReLU
/// between them, and output = input + last conv.
class ModelGraph {
public:
    struct LayerShape {
        std::int64_t cin, cout;
        int dilation;
    };
    static const std::vector<LayerShape>& architecture();

    /// Kaiming-uniform weights from `seed`, zero biases.
    static ModelGraph initialized(std::uint64_t seed);
    static ModelGraph zeros();

    std::vector<ConvLayer>& layers() noexcept { return layers_; }
    const std::vector<ConvLayer>& layers() const noexcept { return layers_; }

    bool quantized() const noexcept { return !quant_.empty(); }
    std::vector<LayerQuant>& quant() noexcept { return quant_; }
    const std::vector<LayerQuant>& quant() const noexcept { return quant_; }
    /// Installs quantizer slots; one per conv layer is required.
    void set_quant(std::vector<LayerQuant> q);
    void clear_quant() noexcept { quant_.clear(); }

    /// Input [1,3,H,W] with H, W >= 8. Caches what backward needs.
    Tensor forward(const Tensor& x, ForwardMode mode);
    /// Gradients of a scalar loss given d loss / d output for the last forward pass.
    Gradients backward(const Tensor& upstream, BackwardTargets targets = {});

    /// Views over every weight and bias in layer order, for the optimizer.
    std::vector<std::span<float>> parameter_views();
    static std::vector<std::span<const float>> gradient_views(const Gradients& g);

    std::size_t parameter_count() const noexcept;

    /// Input of conv layer i during the last forward pass.
    const Tensor& cached_layer_input(std::size_t i) const;

private:
    struct LayerCache {
        Tensor input;      // layer input (image or post-ReLU)
        Tensor smoothed;   // input / s, quantizer input (quantized mode)
        Tensor quantized;  // fake-quantized smoothed input (quantized mode)
        Tensor pre;        // conv output before ReLU
    };

    std::vector<ConvLayer> layers_;
    std::vector<LayerQuant> quant_;
    std::vector<LayerCache> cache_;
    std::optional<ForwardMode> cached_mode_;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t t = 0;
};

/// Bias-corrected Adam over a list of parameter spans treated as one flat vector.
void adam_step(OptimizerState& state, std::span<const std::span<float>> params,
               std::span<const std::span<const float>> grads, double lr, const AdamConfig& cfg = {});

/// Cosine annealing with warm restarts every `steps_per_period` steps.
double cosine_lr(std::int64_t step, std::int64_t steps_per_period, double lr0, double eta_min = 0.0);

struct ImagePair {
    Tensor input;   ///< degraded image
    Tensor target;  ///< clean image
};

struct TrainConfig {
    int epochs = 30;
    double lr0 = 1e-3;
    std::uint64_t seed = 7;
    int crop = 0;  ///< 0 trains on full images
};

struct TrainResult {
    std::vector<double> step_loss;
    std::vector<double> epoch_mean;
};

/// Minimizes mean |model(x) - y| with Adam under one cosine decay over the whole run.
TrainResult train_fp32(ModelGraph& model, std::span<const ImagePair> dataset, const TrainConfig& cfg);

}  // namespace qdm
