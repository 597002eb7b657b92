#include "doctest.h"
#include "hssnet/tensor.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace hssnet;

namespace {

std::vector<double> random_values(size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

// Direct six-loop convolution used as an independent reference for the
// im2col-based implementation. Zero padding, grouped channels.
std::vector<double> conv2d_reference(const std::vector<double>& in, i64 n, i64 cin, i64 h, i64 w,
                                     const std::vector<double>& ker, i64 cout, i64 kh, i64 kw,
                                     int stride, int padding, int groups) {
    const i64 cpg = cin / groups;
    const i64 copg = cout / groups;
    const i64 oh = (h + 2 * padding - kh) / stride + 1;
    const i64 ow = (w + 2 * padding - kw) / stride + 1;
    std::vector<double> out(static_cast<size_t>(n * cout * oh * ow), 0.0);
    for (i64 b = 0; b < n; ++b) {
        for (i64 oc = 0; oc < cout; ++oc) {
            const i64 g = oc / copg;
            for (i64 oy = 0; oy < oh; ++oy) {
                for (i64 ox = 0; ox < ow; ++ox) {
                    double s = 0.0;
                    for (i64 c = 0; c < cpg; ++c) {
                        const i64 ic = g * cpg + c;
                        for (i64 ky = 0; ky < kh; ++ky) {
                            for (i64 kx = 0; kx < kw; ++kx) {
                                const i64 iy = oy * stride - padding + ky;
                                const i64 ix = ox * stride - padding + kx;
                                double v = 0.0;
                                if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
                                    v = in[static_cast<size_t>(((b * cin + ic) * h + iy) * w + ix)];
                                }
                                s += v * ker[static_cast<size_t>(((oc * cpg + c) * kh + ky) * kw + kx)];
                            }
                        }
                    }
                    out[static_cast<size_t>(((b * cout + oc) * oh + oy) * ow + ox)] = s;
                }
            }
        }
    }
    return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("factories, accessors and validation") {
    Tensor z = Tensor::zeros({2, 3});
    CHECK(z.numel() == 6);
    CHECK(z.rank() == 2);
    CHECK(z.extent(1) == 3);
    for (double v : z.data()) CHECK(v == 0.0);

    Tensor f = Tensor::full({4}, 2.5);
    CHECK(f.at({3}) == 2.5);

    Tensor t = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(t.at({0, 1}) == 2.0);
    CHECK(t.at({1, 0}) == 3.0);
    CHECK(Tensor::scalar(7.0).item() == 7.0);

    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor::zeros({0, 2}), std::invalid_argument);
    CHECK_THROWS(Tensor::from({1}, {std::nan("")}));
    CHECK_THROWS_AS(t.at({2, 0}), std::out_of_range);
    CHECK_THROWS(t.item());
}

TEST_CASE("pointwise forward values") {
    // softplus(0) = log 2
    CHECK(softplus(Tensor::scalar(0.0)).item() == doctest::Approx(0.6931471805599453).epsilon(1e-12));
    // overflow-safe branch is the identity for large inputs
    CHECK(softplus(Tensor::scalar(40.0)).item() == 40.0);
    CHECK(sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5));
    CHECK(silu(Tensor::scalar(0.0)).item() == 0.0);
    CHECK(hssnet::exp(Tensor::scalar(1.0)).item() == doctest::Approx(std::exp(1.0)));
    CHECK(hssnet::log(Tensor::scalar(std::exp(2.0))).item() == doctest::Approx(2.0));
    Tensor c = clamp(Tensor::from({3}, {-2.0, 0.5, 9.0}), 0.0, 1.0);
    CHECK(c.at({0}) == 0.0);
    CHECK(c.at({1}) == 0.5);
    CHECK(c.at({2}) == 1.0);
}

TEST_CASE("non-finite results are rejected") {
    CHECK_THROWS_AS(hssnet::exp(Tensor::scalar(1000.0)), std::runtime_error);
    CHECK_THROWS_AS(hssnet::log(Tensor::scalar(0.0)), std::runtime_error);
    CHECK_THROWS_AS(div(Tensor::scalar(1.0), Tensor::scalar(0.0)), std::runtime_error);
}

TEST_CASE("broadcast add/mul over leading extents") {
    Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from({3}, {10, 20, 30});
    Tensor y = add(x, b);
    CHECK(y.data() == std::vector<double>{11, 22, 33, 14, 25, 36});
    // symmetric argument order
    CHECK(add(b, x).data() == y.data());

    Tensor m = mul(x, Tensor::from({1, 3}, {2, 0, 1}));
    CHECK(m.data() == std::vector<double>{2, 0, 3, 8, 0, 6});

    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), std::invalid_argument);
    CHECK_THROWS_AS(add(Tensor::zeros({4}), Tensor::zeros({3})), std::invalid_argument);
}

TEST_CASE("broadcast backward sums over the broadcast extent") {
    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    Tensor b = Tensor::from({2}, {5, 7}, true);
    Tensor loss = sum_all(mul(x, b));
    loss.backward();
    // d/dx = b tiled, d/db = column sums of x
    CHECK(x.grad() == std::vector<double>{5, 7, 5, 7});
    CHECK(b.grad() == std::vector<double>{4, 6});
}

TEST_CASE("gradient accumulates across fan-out") {
    Tensor x = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
    // y = x*x + x  =>  dy/dx = 2x + 1
    Tensor loss = sum_all(add(mul(x, x), x));
    loss.backward();
    for (i64 i = 0; i < 3; ++i) {
        CHECK(x.grad()[static_cast<size_t>(i)] ==
              doctest::Approx(2.0 * x.data()[static_cast<size_t>(i)] + 1.0));
    }
}

TEST_CASE("backward requires a scalar and respects NoGradGuard") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(mul(x, x).backward(), std::invalid_argument);
    {
        NoGradGuard ng;
        Tensor y = mul(x, x);
        CHECK_FALSE(y.requires_grad());
    }
    CHECK(GradMode::enabled());
    Tensor y = mul(x, x);
    CHECK(y.requires_grad());
}

TEST_CASE("matmul matches hand computation and identity") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    CHECK(c.data() == std::vector<double>{19, 22, 43, 50});

    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    CHECK(matmul(eye, b).data() == b.data());
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), std::invalid_argument);
}

TEST_CASE("linear adds bias per output column") {
    Tensor x = Tensor::from({2, 3}, {1, 0, 0, 0, 1, 0});
    Tensor w = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from({2}, {0.5, -0.5});
    Tensor y = linear(x, w, b);
    CHECK(y.data() == std::vector<double>{1.5, 1.5, 3.5, 3.5});
    CHECK(linear(x, w).data() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("matmul/linear gradients agree with finite differences") {
    std::mt19937_64 rng(11);
    Tensor a0 = Tensor::from({3, 4}, random_values(12, rng));
    Tensor b0 = Tensor::from({4, 2}, random_values(8, rng));
    Tensor bias0 = Tensor::from({2}, random_values(2, rng));

    CHECK(fd_check([&](const Tensor& a) { return sum_all(matmul(a, b0)); }, a0) < 1e-7);
    CHECK(fd_check([&](const Tensor& b) { return sum_all(matmul(a0, b)); }, b0) < 1e-7);
    CHECK(fd_check([&](const Tensor& w) { return mean_all(linear(a0, w, bias0)); }, b0) < 1e-7);
    CHECK(fd_check([&](const Tensor& bb) { return mean_all(linear(a0, b0, bb)); }, bias0) < 1e-7);
}

TEST_CASE("pointwise gradients agree with finite differences") {
    std::mt19937_64 rng(12);
    Tensor x = Tensor::from({7}, random_values(7, rng, -2.0, 2.0));
    CHECK(fd_check([](const Tensor& t) { return sum_all(silu(t)); }, x) < 1e-7);
    CHECK(fd_check([](const Tensor& t) { return sum_all(sigmoid(t)); }, x) < 1e-7);
    CHECK(fd_check([](const Tensor& t) { return sum_all(softplus(t)); }, x) < 1e-7);
    CHECK(fd_check([](const Tensor& t) { return sum_all(hssnet::exp(t)); }, x) < 1e-7);
    CHECK(fd_check([](const Tensor& t) { return sum_all(mul(t, t)); }, x) < 1e-7);
    Tensor pos = Tensor::from({5}, random_values(5, rng, 0.5, 3.0));
    CHECK(fd_check([](const Tensor& t) { return sum_all(hssnet::log(t)); }, pos) < 1e-7);
    Tensor denom = Tensor::from({7}, random_values(7, rng, 1.0, 2.0));
    CHECK(fd_check([&](const Tensor& t) { return sum_all(div(t, denom)); }, x) < 1e-7);
    CHECK(fd_check([&](const Tensor& d) { return sum_all(div(x, d)); }, denom) < 1e-7);
}

TEST_CASE("clamp passes gradient only inside the interval") {
    Tensor x = Tensor::from({3}, {-2.0, 0.5, 9.0}, true);
    sum_all(clamp(x, 0.0, 1.0)).backward();
    CHECK(x.grad() == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("structural ops: reshape/transpose/narrow/permute round trips") {
    Tensor x = Tensor::from({2, 3}, {0, 1, 2, 3, 4, 5});
    Tensor r = reshape(x, {3, 2});
    CHECK(r.data() == x.data());
    CHECK_THROWS_AS(reshape(x, {4, 2}), std::invalid_argument);

    Tensor t = transpose2d(x);
    CHECK(t.shape() == std::vector<i64>{3, 2});
    CHECK(t.data() == std::vector<double>{0, 3, 1, 4, 2, 5});
    CHECK(transpose2d(t).data() == x.data());

    Tensor nr = narrow0(x, 1, 1);
    CHECK(nr.shape() == std::vector<i64>{1, 3});
    CHECK(nr.data() == std::vector<double>{3, 4, 5});
    CHECK_THROWS_AS(narrow0(x, 1, 2), std::out_of_range);

    // columns of a [C,L] tensor rearranged by perm: out[:,k] = x[:,perm[k]]
    Tensor cl = Tensor::from({2, 3}, {0, 1, 2, 10, 11, 12});
    Tensor p = permute_cols(cl, {2, 0, 1});
    CHECK(p.data() == std::vector<double>{2, 0, 1, 12, 10, 11});
    // applying the inverse permutation restores the input
    CHECK(permute_cols(p, {1, 2, 0}).data() == cl.data());
}

TEST_CASE("structural op gradients agree with finite differences") {
    std::mt19937_64 rng(13);
    Tensor x = Tensor::from({2, 3}, random_values(6, rng));
    Tensor w = Tensor::from({3}, {1.0, -2.0, 0.5});
    auto weighted = [&](const Tensor& t) { return sum_all(mul(t, w)); };
    CHECK(fd_check([&](const Tensor& t) { return weighted(reshape(transpose2d(t), {2, 3})); }, x) < 1e-7);
    CHECK(fd_check([&](const Tensor& t) { return weighted(permute_cols(t, {2, 0, 1})); }, x) < 1e-7);
    CHECK(fd_check([&](const Tensor& t) { return sum_all(mul(narrow0(t, 0, 1), narrow0(t, 1, 1))); }, x) < 1e-7);
}

TEST_CASE("nchw_to_rows interleaves channels per pixel") {
    // [1,2,2,2]: channel 0 holds 0..3, channel 1 holds 4..7
    Tensor x = Tensor::from({1, 2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
    Tensor rows = nchw_to_rows(x);
    CHECK(rows.shape() == std::vector<i64>{4, 2});
    CHECK(rows.data() == std::vector<double>{0, 4, 1, 5, 2, 6, 3, 7});
    Tensor back = rows_to_nchw(rows, 1, 2, 2, 2);
    CHECK(back.data() == x.data());

    std::mt19937_64 rng(14);
    Tensor y = Tensor::from({2, 3, 2, 2}, random_values(24, rng));
    CHECK(rows_to_nchw(nchw_to_rows(y), 2, 3, 2, 2).data() == y.data());
    Tensor w = Tensor::from({3}, {1.0, 2.0, -1.0});
    CHECK(fd_check([&](const Tensor& t) { return sum_all(mul(nchw_to_rows(t), w)); }, y) < 1e-7);
}

TEST_CASE("upsample_nearest repeats pixels in blocks") {
    Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor u = upsample_nearest(x, 2);
    CHECK(u.shape() == std::vector<i64>{1, 1, 4, 4});
    CHECK(u.data() == std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});

    Tensor xg = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}, true);
    sum_all(upsample_nearest(xg, 3)).backward();
    // every source pixel feeds a 3x3 block
    CHECK(xg.grad() == std::vector<double>{9, 9, 9, 9});
}

TEST_CASE("sum_all and mean_all") {
    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    CHECK(sum_all(x).item() == 10.0);
    Tensor m = mean_all(x);
    CHECK(m.item() == 2.5);
    m.backward();
    CHECK(x.grad() == std::vector<double>(4, 0.25));
}

TEST_CASE("conv2d matches the direct-loop reference") {
    std::mt19937_64 rng(15);
    struct Case { i64 n, cin, h, w, cout, kh, kw; int stride, padding, groups; };
    const Case cases[] = {
        {1, 1, 5, 5, 1, 3, 3, 1, 1, 1},
        {2, 3, 8, 7, 4, 3, 3, 1, 1, 1},
        {1, 4, 9, 9, 6, 4, 4, 4, 0, 1},   // patch-style stride-4
        {2, 4, 8, 8, 8, 2, 2, 2, 0, 1},   // downsample-style
        {1, 6, 7, 7, 6, 3, 3, 1, 1, 6},   // depthwise
        {1, 4, 6, 6, 4, 3, 3, 2, 1, 2},   // grouped, strided
        {1, 3, 5, 5, 2, 1, 1, 1, 0, 1},   // pointwise
    };
    for (const auto& c : cases) {
        CAPTURE(c.cin); CAPTURE(c.groups); CAPTURE(c.stride);
        auto in = random_values(static_cast<size_t>(c.n * c.cin * c.h * c.w), rng);
        auto ker = random_values(static_cast<size_t>(c.cout * (c.cin / c.groups) * c.kh * c.kw), rng);
        Tensor it = Tensor::from({c.n, c.cin, c.h, c.w}, in);
        Tensor kt = Tensor::from({c.cout, c.cin / c.groups, c.kh, c.kw}, ker);
        Tensor out = conv2d(it, kt, c.stride, c.padding, c.groups);
        auto ref = conv2d_reference(in, c.n, c.cin, c.h, c.w, ker, c.cout, c.kh, c.kw,
                                    c.stride, c.padding, c.groups);
        CHECK(max_abs_diff(out.data(), ref) <= 1e-12);
    }
}

TEST_CASE("conv2d bias adds per output channel") {
    Tensor x = Tensor::from({1, 1, 2, 2}, {1, 1, 1, 1});
    Tensor k = Tensor::from({2, 1, 1, 1}, {1.0, 2.0});
    Tensor b = Tensor::from({2}, {10.0, 20.0});
    Tensor y = conv2d(x, k, b, 1, 0, 1);
    CHECK(y.data() == std::vector<double>{11, 11, 11, 11, 22, 22, 22, 22});
}

TEST_CASE("conv2d rejects malformed arguments") {
    Tensor x = Tensor::zeros({1, 4, 6, 6});
    Tensor k = Tensor::zeros({4, 2, 3, 3});
    CHECK_THROWS_AS(conv2d(x, k, 1, 1, 3), std::invalid_argument);   // 4 % 3 != 0
    CHECK_THROWS_AS(conv2d(x, k, 1, 1, 1), std::invalid_argument);   // cpg mismatch
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({4, 4, 9, 9}), 1, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(x, Tensor::zeros({4, 4, 3, 3}), 0, 0, 1), std::invalid_argument);
}

TEST_CASE("conv2d gradients agree with finite differences") {
    std::mt19937_64 rng(16);
    Tensor x = Tensor::from({1, 2, 5, 5}, random_values(50, rng));
    Tensor k = Tensor::from({3, 2, 3, 3}, random_values(54, rng));
    Tensor b = Tensor::from({3}, random_values(3, rng));
    CHECK(fd_check([&](const Tensor& t) { return sum_all(conv2d(t, k, b, 1, 1, 1)); }, x) < 1e-7);
    CHECK(fd_check([&](const Tensor& t) { return sum_all(conv2d(x, t, b, 1, 1, 1)); }, k) < 1e-7);
    CHECK(fd_check([&](const Tensor& t) { return sum_all(conv2d(x, k, t, 1, 1, 1)); }, b) < 1e-7);

    // strided grouped case
    Tensor xg = Tensor::from({1, 4, 6, 6}, random_values(144, rng));
    Tensor kg = Tensor::from({4, 2, 3, 3}, random_values(72, rng));
    CHECK(fd_check([&](const Tensor& t) { return mean_all(conv2d(t, kg, 2, 1, 2)); }, xg) < 1e-7);
    CHECK(fd_check([&](const Tensor& t) { return mean_all(conv2d(xg, t, 2, 1, 2)); }, kg) < 1e-7);

    // depthwise fast path
    Tensor xd = Tensor::from({1, 3, 5, 5}, random_values(75, rng));
    Tensor kd = Tensor::from({3, 1, 3, 3}, random_values(27, rng));
    CHECK(fd_check([&](const Tensor& t) { return sum_all(conv2d(t, kd, 1, 1, 3)); }, xd) < 1e-7);
    CHECK(fd_check([&](const Tensor& t) { return sum_all(conv2d(xd, t, 1, 1, 3)); }, kd) < 1e-7);
}

TEST_CASE("layer_norm normalizes the last axis") {
    Tensor x = Tensor::from({1, 3}, {1.0, 2.0, 3.0});
    Tensor gamma = Tensor::full({3}, 1.0);
    Tensor beta = Tensor::zeros({3});
    Tensor y = layer_norm(x, gamma, beta);
    const double expected = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
    CHECK(y.at({0, 0}) == doctest::Approx(-expected).epsilon(1e-10));
    CHECK(y.at({0, 1}) == doctest::Approx(0.0));
    CHECK(y.at({0, 2}) == doctest::Approx(expected).epsilon(1e-10));

    // affine parameters shift and scale
    Tensor y2 = layer_norm(x, Tensor::full({3}, 2.0), Tensor::full({3}, 1.0));
    CHECK(y2.at({0, 2}) == doctest::Approx(2.0 * expected + 1.0).epsilon(1e-10));

    CHECK_THROWS_AS(layer_norm(x, Tensor::zeros({4}), beta), std::invalid_argument);
}

TEST_CASE("layer_norm gradients agree with finite differences") {
    std::mt19937_64 rng(17);
    Tensor x = Tensor::from({4, 5}, random_values(20, rng));
    Tensor gamma = Tensor::from({5}, random_values(5, rng, 0.5, 1.5));
    Tensor beta = Tensor::from({5}, random_values(5, rng));
    Tensor w = Tensor::from({5}, random_values(5, rng));  // non-uniform downstream weights
    auto head = [&](const Tensor& y) { return sum_all(mul(y, w)); };
    CHECK(fd_check([&](const Tensor& t) { return head(layer_norm(t, gamma, beta)); }, x) < 1e-6);
    CHECK(fd_check([&](const Tensor& g) { return head(layer_norm(x, g, beta)); }, gamma) < 1e-7);
    CHECK(fd_check([&](const Tensor& b) { return head(layer_norm(x, gamma, b)); }, beta) < 1e-7);
}

TEST_CASE("serialization round trip preserves shape and payload") {
    std::mt19937_64 rng(18);
    Tensor x = Tensor::from({2, 3, 4}, random_values(24, rng));
    std::stringstream ss;
    write_tensor(ss, x);
    Tensor y = read_tensor(ss);
    CHECK(y.shape() == x.shape());
    CHECK(y.data() == x.data());

    std::stringstream bad("XXXX garbage");
    CHECK_THROWS_AS(read_tensor(bad), std::runtime_error);
    std::stringstream trunc;
    write_tensor(trunc, x);
    std::string s = trunc.str();
    std::stringstream cut(s.substr(0, s.size() - 9));
    CHECK_THROWS_AS(read_tensor(cut), std::runtime_error);
}

TEST_CASE("deep chain backward stays exact") {
    // y = ((x * 2 + 1) * x) summed; dy/dx = 4x + 1
    Tensor x = Tensor::from({64}, std::vector<double>(64, 0.25), true);
    Tensor y = sum_all(mul(add_scalar(scale(x, 2.0), 1.0), x));
    y.backward();
    for (double g : x.grad()) CHECK(g == doctest::Approx(4.0 * 0.25 + 1.0));
}
