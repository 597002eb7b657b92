#include "hssnet/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace hssnet {

namespace detail {

Tensor conv_kernel_init(std::vector<i64> shape, i64 fan_in, std::mt19937_64& rng) {
    i64 n = 1;
    for (i64 e : shape) n *= e;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = dist(rng);
    return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace detail

LayerNormParams LayerNormParams::init(int dim) {
    return {Tensor::full({dim}, 1.0, true), Tensor::zeros({dim}, true)};
}

Tensor LayerNormParams::forward(const Tensor& rows) const {
    return layer_norm(rows, gamma, beta);
}

std::vector<Tensor> LayerNormParams::parameters() const { return {gamma, beta}; }

FFN FFN::init(int dim, int ratio, std::mt19937_64& rng) {
    if (dim < 1 || ratio < 1) throw std::invalid_argument("FFN::init: positive dim and ratio required");
    const i64 hidden = static_cast<i64>(dim) * ratio;
    FFN f;
    f.W1 = detail::conv_kernel_init({dim, hidden}, dim, rng);
    f.b1 = Tensor::zeros({hidden}, true);
    f.W2 = detail::conv_kernel_init({hidden, dim}, hidden, rng);
    f.b2 = Tensor::zeros({dim}, true);
    return f;
}

Tensor FFN::forward(const Tensor& rows) const {
    return linear(silu(linear(rows, W1, b1)), W2, b2);
}

std::vector<Tensor> FFN::parameters() const { return {W1, b1, W2, b2}; }

SepConvBlock SepConvBlock::init(int channels, int conv_ratio, int ffn_ratio, std::mt19937_64& rng) {
    if (channels < 1 || conv_ratio < 1) {
        throw std::invalid_argument("SepConvBlock::init: positive channels and ratio required");
    }
    const i64 C = channels;
    const i64 rc = C * conv_ratio;
    SepConvBlock b;
    b.norm1 = LayerNormParams::init(channels);
    b.expand_k = detail::conv_kernel_init({rc, C, 1, 1}, C, rng);
    b.expand_b = Tensor::zeros({rc}, true);
    b.dw_k = detail::conv_kernel_init({rc, 1, 3, 3}, 9, rng);
    b.dw_b = Tensor::zeros({rc}, true);
    b.project_k = detail::conv_kernel_init({C, rc, 1, 1}, rc, rng);
    b.project_b = Tensor::zeros({C}, true);
    b.norm2 = LayerNormParams::init(channels);
    b.ffn = FFN::init(channels, ffn_ratio, rng);
    return b;
}

Tensor SepConvBlock::forward(const Tensor& f) const {
    if (f.rank() != 4) throw std::invalid_argument("SepConvBlock: [T, C, H, W] input required");
    const i64 T = f.extent(0), C = f.extent(1), H = f.extent(2), W = f.extent(3);
    const int rc = static_cast<int>(expand_k.extent(0));

    Tensor normed = rows_to_nchw(norm1.forward(nchw_to_rows(f)), T, C, H, W);
    Tensor branch = silu(conv2d(normed, expand_k, expand_b, 1, 0, 1));
    branch = silu(conv2d(branch, dw_k, dw_b, 1, 1, rc));
    branch = conv2d(branch, project_k, project_b, 1, 0, 1);
    Tensor mid = add(f, branch);

    Tensor rows = nchw_to_rows(mid);
    Tensor out = add(rows, ffn.forward(norm2.forward(rows)));
    return rows_to_nchw(out, T, C, H, W);
}

std::vector<Tensor> SepConvBlock::parameters() const {
    std::vector<Tensor> p = norm1.parameters();
    for (const Tensor& t : {expand_k, expand_b, dw_k, dw_b, project_k, project_b}) p.push_back(t);
    for (const Tensor& t : norm2.parameters()) p.push_back(t);
    for (const Tensor& t : ffn.parameters()) p.push_back(t);
    return p;
}

STMambaBlock STMambaBlock::init(int channels, int d_state, int ffn_ratio, bool shared_directions,
                                std::mt19937_64& rng) {
    STMambaBlock b;
    b.norm1 = LayerNormParams::init(channels);
    b.stcs = make_stcs_params(channels, d_state, shared_directions, rng);
    b.norm2 = LayerNormParams::init(channels);
    b.ffn = FFN::init(channels, ffn_ratio, rng);
    return b;
}

Tensor STMambaBlock::forward(const Tensor& f, const ModeSet& modes) const {
    if (f.rank() != 4) throw std::invalid_argument("STMambaBlock: [T, C, H, W] input required");
    const i64 T = f.extent(0), C = f.extent(1), H = f.extent(2), W = f.extent(3);
    const scan::PatchGrid grid{static_cast<int>(T), static_cast<int>(H), static_cast<int>(W)};

    Tensor rows = nchw_to_rows(f);  // [T*H*W, C], slot order matches the grid
    Tensor seq = transpose2d(norm1.forward(rows));
    Tensor mixed = stcs_mix(stcs, seq, grid, modes);
    Tensor mid = add(rows, transpose2d(mixed));
    Tensor out = add(mid, ffn.forward(norm2.forward(mid)));
    return rows_to_nchw(out, T, C, H, W);
}

std::vector<Tensor> STMambaBlock::parameters() const {
    std::vector<Tensor> p = norm1.parameters();
    for (const auto& dir : stcs) {
        for (const Tensor& t : dir.parameters()) {
            bool seen = false;
            for (const Tensor& q : p) {
                if (q.node().get() == t.node().get()) { seen = true; break; }
            }
            if (!seen) p.push_back(t);
        }
    }
    for (const Tensor& t : norm2.parameters()) p.push_back(t);
    for (const Tensor& t : ffn.parameters()) p.push_back(t);
    return p;
}

PatchEmbed PatchEmbed::init(int out_channels, std::mt19937_64& rng) {
    PatchEmbed e;
    e.k = detail::conv_kernel_init({out_channels, 1, 4, 4}, 16, rng);
    e.b = Tensor::zeros({out_channels}, true);
    return e;
}

Tensor PatchEmbed::forward(const Tensor& clip) const {
    if (clip.rank() != 4 || clip.extent(1) != 1) {
        throw std::invalid_argument("PatchEmbed: [T, 1, H, W] clip required");
    }
    if (clip.extent(2) % 32 != 0 || clip.extent(3) % 32 != 0) {
        throw std::invalid_argument("PatchEmbed: H and W must be divisible by 32");
    }
    return conv2d(clip, k, b, 4, 0, 1);
}

std::vector<Tensor> PatchEmbed::parameters() const { return {k, b}; }

Downsample Downsample::init(int in_channels, std::mt19937_64& rng) {
    Downsample d;
    d.k = detail::conv_kernel_init({2 * in_channels, in_channels, 2, 2},
                                   static_cast<i64>(in_channels) * 4, rng);
    d.b = Tensor::zeros({2 * in_channels}, true);
    return d;
}

Tensor Downsample::forward(const Tensor& f) const {
    if (f.rank() != 4) throw std::invalid_argument("Downsample: [T, C, H, W] input required");
    if (f.extent(2) % 2 != 0 || f.extent(3) % 2 != 0) {
        throw std::invalid_argument("Downsample: spatial extents must be even");
    }
    return conv2d(f, k, b, 2, 0, 1);
}

std::vector<Tensor> Downsample::parameters() const { return {k, b}; }

Upsample Upsample::init(int in_channels, std::mt19937_64& rng) {
    if (in_channels % 2 != 0) throw std::invalid_argument("Upsample: channel count must be even");
    Upsample u;
    u.k = detail::conv_kernel_init({in_channels / 2, in_channels, 1, 1}, in_channels, rng);
    u.b = Tensor::zeros({in_channels / 2}, true);
    return u;
}

Tensor Upsample::forward(const Tensor& f) const {
    if (f.rank() != 4) throw std::invalid_argument("Upsample: [T, C, H, W] input required");
    return conv2d(upsample_nearest(f, 2), k, b, 1, 0, 1);
}

std::vector<Tensor> Upsample::parameters() const { return {k, b}; }

}  // namespace hssnet
