#pragma once

#include <array>
#include <random>
#include <vector>

#include "hssnet/ssm.hpp"
#include "hssnet/tensor.hpp"

namespace hssnet {

/// Learned affine layer norm over the channel (last) axis of row tensors.
struct LayerNormParams {
    Tensor gamma;  // [C]
    Tensor beta;   // [C]

    static LayerNormParams init(int dim);
    Tensor forward(const Tensor& rows) const;
    std::vector<Tensor> parameters() const;
};

/// Position-wise feed-forward: linear -> SiLU -> linear on [L, C] rows.
struct FFN {
    Tensor W1;  // [C, ratio*C]
    Tensor b1;  // [ratio*C]
    Tensor W2;  // [ratio*C, C]
    Tensor b2;  // [C]

    static FFN init(int dim, int ratio, std::mt19937_64& rng);
    Tensor forward(const Tensor& rows) const;
    std::vector<Tensor> parameters() const;
};

/// Per-frame block: x + SC(LN(x)) then x + FFN(LN(x)), where SC is the
/// inverted separable convolution (1x1 expand -> 3x3 depthwise -> 1x1
/// project). Never mixes information across frames.
struct SepConvBlock {
    LayerNormParams norm1;
    Tensor expand_k, expand_b;    // [r*C, C, 1, 1], [r*C]
    Tensor dw_k, dw_b;            // [r*C, 1, 3, 3], [r*C]
    Tensor project_k, project_b;  // [C, r*C, 1, 1], [C]
    LayerNormParams norm2;
    FFN ffn;

    static SepConvBlock init(int channels, int conv_ratio, int ffn_ratio, std::mt19937_64& rng);
    Tensor forward(const Tensor& f) const;  // [T, C, H, W] -> same shape
    std::vector<Tensor> parameters() const;
};

/// Spatio-temporal block: flatten [T, C, H, W] to [C, T*H*W] slots,
/// x + STCS(LN(x)), then x + FFN(LN(x)), reshape back. Mixes frames.
struct STMambaBlock {
    LayerNormParams norm1;
    std::array<SSMParams, 8> stcs;
    LayerNormParams norm2;
    FFN ffn;

    static STMambaBlock init(int channels, int d_state, int ffn_ratio, bool shared_directions,
                             std::mt19937_64& rng);
    Tensor forward(const Tensor& f, const ModeSet& modes) const;
    std::vector<Tensor> parameters() const;
};

/// 4x4 stride-4 convolution mapping a [T, 1, H, W] clip to the stage-1
/// feature grid of H/4 x W/4.
struct PatchEmbed {
    Tensor k;  // [C1, 1, 4, 4]
    Tensor b;  // [C1]

    static PatchEmbed init(int out_channels, std::mt19937_64& rng);
    Tensor forward(const Tensor& clip) const;
    std::vector<Tensor> parameters() const;
};

/// 2x2 stride-2 convolution: spatial halve, channel double.
struct Downsample {
    Tensor k;  // [2*C, C, 2, 2]
    Tensor b;  // [2*C]

    static Downsample init(int in_channels, std::mt19937_64& rng);
    Tensor forward(const Tensor& f) const;  // errors on odd extents
    std::vector<Tensor> parameters() const;
};

/// Nearest-neighbor x2 followed by a 1x1 convolution: spatial double,
/// channel halve.
struct Upsample {
    Tensor k;  // [C/2, C, 1, 1]
    Tensor b;  // [C/2]

    static Upsample init(int in_channels, std::mt19937_64& rng);
    Tensor forward(const Tensor& f) const;
    std::vector<Tensor> parameters() const;
};

namespace detail {
// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) kernel/weight initialization.
Tensor conv_kernel_init(std::vector<i64> shape, i64 fan_in, std::mt19937_64& rng);
}  // namespace detail

}  // namespace hssnet
