#include "doctest.h"
#include "hssnet/blocks.hpp"

#include <cmath>
#include <random>

using namespace hssnet;

namespace {

Tensor random_tensor(std::vector<i64> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    i64 n = 1;
    for (i64 e : shape) n *= e;
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = dist(rng);
    return Tensor::from(std::move(shape), std::move(v));
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Copy of the input with a single element of one frame perturbed. A uniform
// per-frame shift would be invisible to the channel-wise layer norms, so the
// sensitivity probes poke one coordinate.
Tensor perturb_frame(const Tensor& f, i64 frame, double amount) {
    std::vector<double> v = f.data();
    const i64 per_frame = f.numel() / f.extent(0);
    v[static_cast<size_t>(frame * per_frame)] += amount;
    return Tensor::from(f.shape(), std::move(v));
}

}  // namespace

TEST_CASE("FFN applies two linear maps around SiLU") {
    std::mt19937_64 rng(51);
    FFN f = FFN::init(3, 2, rng);
    CHECK(f.W1.shape() == std::vector<i64>{3, 6});
    CHECK(f.W2.shape() == std::vector<i64>{6, 3});
    Tensor x = random_tensor({4, 3}, rng);
    Tensor y = f.forward(x);
    CHECK(y.shape() == x.shape());
    // zero inner weight collapses the whole map to the output bias
    f.W2 = Tensor::zeros({6, 3}, true);
    Tensor z = f.forward(x);
    for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("separable conv block preserves shape and respects residual identity") {
    std::mt19937_64 rng(52);
    SepConvBlock b = SepConvBlock::init(8, 4, 4, rng);
    Tensor x = random_tensor({3, 8, 6, 6}, rng);
    Tensor y = b.forward(x);
    CHECK(y.shape() == x.shape());

    // zeroed branch outputs make both residual branches vanish
    b.project_k = Tensor::zeros(b.project_k.shape(), true);
    b.project_b = Tensor::zeros(b.project_b.shape(), true);
    b.ffn.W2 = Tensor::zeros(b.ffn.W2.shape(), true);
    b.ffn.b2 = Tensor::zeros(b.ffn.b2.shape(), true);
    Tensor id = b.forward(x);
    CHECK(max_abs_diff(id.data(), x.data()) == 0.0);
}

TEST_CASE("separable conv block never mixes frames") {
    std::mt19937_64 rng(53);
    SepConvBlock b = SepConvBlock::init(4, 2, 2, rng);
    Tensor x = random_tensor({5, 4, 8, 8}, rng);
    Tensor y0 = b.forward(x);
    Tensor y1 = b.forward(perturb_frame(x, 2, 0.37));
    const i64 per_frame = x.numel() / 5;
    for (i64 t = 0; t < 5; ++t) {
        double diff = 0.0;
        for (i64 i = 0; i < per_frame; ++i) {
            diff = std::max(diff, std::abs(y0.data()[static_cast<size_t>(t * per_frame + i)] -
                                           y1.data()[static_cast<size_t>(t * per_frame + i)]));
        }
        if (t == 2) {
            CHECK(diff > 1e-8);
        } else {
            CHECK(diff == 0.0);  // untouched frames are bit-identical
        }
    }
}

TEST_CASE("spatio-temporal block mixes frames") {
    std::mt19937_64 rng(54);
    STMambaBlock b = STMambaBlock::init(4, 4, 2, false, rng);
    Tensor x = random_tensor({6, 4, 3, 3}, rng);
    Tensor y0 = b.forward(x, ModeSet::all());
    Tensor y1 = b.forward(perturb_frame(x, 0, 0.37), ModeSet::all());
    const i64 per_frame = x.numel() / 6;
    double last_frame_diff = 0.0;
    for (i64 i = 0; i < per_frame; ++i) {
        last_frame_diff = std::max(last_frame_diff,
                                   std::abs(y0.data()[static_cast<size_t>(5 * per_frame + i)] -
                                            y1.data()[static_cast<size_t>(5 * per_frame + i)]));
    }
    CHECK(last_frame_diff > 1e-8);
}

TEST_CASE("spatio-temporal block residual identity with zeroed branches") {
    std::mt19937_64 rng(55);
    STMambaBlock b = STMambaBlock::init(3, 2, 2, false, rng);
    for (auto& dir : b.stcs) {
        dir.W_C = Tensor::zeros({3, 2}, true);
        dir.D = Tensor::zeros({3}, true);
    }
    b.ffn.W2 = Tensor::zeros(b.ffn.W2.shape(), true);
    Tensor x = random_tensor({2, 3, 2, 2}, rng);
    Tensor y = b.forward(x, ModeSet::all());
    CHECK(max_abs_diff(y.data(), x.data()) == 0.0);
}

TEST_CASE("block gradients agree with finite differences") {
    std::mt19937_64 rng(56);
    Tensor w_conv = random_tensor({2, 4, 4, 4}, rng);
    SepConvBlock cb = SepConvBlock::init(4, 2, 2, rng);
    auto conv_head = [&](const Tensor& t) { return sum_all(mul(cb.forward(t), w_conv)); };
    CHECK(fd_check(conv_head, random_tensor({2, 4, 4, 4}, rng)) < 1e-4);

    STMambaBlock mb = STMambaBlock::init(4, 2, 2, false, rng);
    Tensor x = random_tensor({2, 4, 2, 2}, rng);
    Tensor w_m = random_tensor({2, 4, 2, 2}, rng);
    auto mamba_head = [&](const Tensor& t) { return sum_all(mul(mb.forward(t, ModeSet::all()), w_m)); };
    CHECK(fd_check(mamba_head, x) < 1e-4);

    // spot-check two parameter tensors through the full block
    SUBCASE("conv depthwise kernel") {
        Tensor xin = random_tensor({2, 4, 4, 4}, rng);
        CHECK(fd_check(
                  [&](const Tensor& t) {
                      SepConvBlock c2 = cb;
                      c2.dw_k = t;
                      return sum_all(mul(c2.forward(xin), w_conv));
                  },
                  cb.dw_k) < 1e-4);
    }
    SUBCASE("mixer input coupling") {
        CHECK(fd_check(
                  [&](const Tensor& t) {
                      STMambaBlock m2 = mb;
                      m2.stcs[0].W_B = t;
                      return sum_all(mul(m2.forward(x, ModeSet::all()), w_m));
                  },
                  mb.stcs[0].W_B) < 1e-4);
    }
}

TEST_CASE("patch embedding quarters the resolution per frame") {
    std::mt19937_64 rng(57);
    PatchEmbed pe = PatchEmbed::init(8, rng);
    Tensor clip = random_tensor({3, 1, 64, 64}, rng);
    Tensor f = pe.forward(clip);
    CHECK(f.shape() == std::vector<i64>{3, 8, 16, 16});
    CHECK(pe.forward(random_tensor({1, 1, 32, 32}, rng)).shape() == std::vector<i64>{1, 8, 8, 8});
    CHECK_THROWS_AS(pe.forward(random_tensor({1, 1, 48, 48}, rng)), std::invalid_argument);
    CHECK_THROWS_AS(pe.forward(random_tensor({1, 2, 64, 64}, rng)), std::invalid_argument);

    // frame-permutation equivariance: swapping input frames swaps outputs
    Tensor swapped_in = Tensor::from(clip.shape(), [&] {
        std::vector<double> v = clip.data();
        const i64 pf = clip.numel() / 3;
        for (i64 i = 0; i < pf; ++i) std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(pf + i)]);
        return v;
    }());
    Tensor g = pe.forward(swapped_in);
    const i64 pf = f.numel() / 3;
    for (i64 i = 0; i < pf; ++i) {
        CHECK(g.data()[static_cast<size_t>(i)] == f.data()[static_cast<size_t>(pf + i)]);
        CHECK(g.data()[static_cast<size_t>(pf + i)] == f.data()[static_cast<size_t>(i)]);
    }
}

TEST_CASE("downsample halves space and doubles channels; upsample inverts the shape") {
    std::mt19937_64 rng(58);
    Downsample down = Downsample::init(4, rng);
    Tensor x = random_tensor({2, 4, 8, 8}, rng);
    Tensor d = down.forward(x);
    CHECK(d.shape() == std::vector<i64>{2, 8, 4, 4});
    CHECK_THROWS_AS(down.forward(random_tensor({1, 4, 7, 8}, rng)), std::invalid_argument);

    Upsample up = Upsample::init(8, rng);
    Tensor u = up.forward(d);
    CHECK(u.shape() == x.shape());
    CHECK_THROWS_AS(Upsample::init(7, rng), std::invalid_argument);
}
