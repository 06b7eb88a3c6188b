#pragma once

#include <span>
#include <vector>

#include "quantdemoire/tensor.hpp"

namespace qdm {

enum class PadMode { Zero, Replicate };

/// Same-size convolution settings. Padding is always dilation * (k - 1) / 2 per side,
/// so odd kernels are required.
struct ConvSpec {
    int stride = 1;
    int dilation = 1;
    PadMode pad = PadMode::Zero;
    int groups = 1;
};

/// Cross-correlation of input [N,Cin,H,W] with weight [Cout,Cin/groups,Kh,Kw]. Every output
/// element accumulates its terms in ascending (cin, kh, kw) order starting from zero and
/// adds the bias last, so the result is bit-identical to a naive nested loop.
/// An empty bias span means no bias.
Tensor conv2d(const Tensor& input, const Tensor& weight, std::span<const float> bias,
              const ConvSpec& spec);

/// Gradient of conv2d with respect to its input.
Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const Dims& input_dims,
                             const ConvSpec& spec);

/// Gradient of conv2d with respect to its weight.
Tensor conv2d_backward_weight(const Tensor& grad_out, const Tensor& input, const Dims& weight_dims,
                              const ConvSpec& spec);

std::vector<float> conv2d_backward_bias(const Tensor& grad_out);

/// Output spatial extent for same padding.
std::int64_t conv_out_extent(std::int64_t in, int stride) noexcept;

void relu_inplace(Tensor& t) noexcept;
/// grad *= (pre > 0); the derivative at exactly zero is taken as zero.
void relu_backward_inplace(Tensor& grad, const Tensor& pre);

}  // namespace qdm
