#include "hssnet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <utility>

namespace hssnet {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }
}

// Foreground test shared by the tape-free metrics.
bool is_fg(double v) { return v > 0.5; }

// Boundary pixels of a thresholded [H,W] mask: foreground pixels with at
// least one background 4-neighbour, where out-of-bounds counts as background.
std::vector<std::pair<i64, i64>> boundary_pixels(const Tensor& mask) {
    const i64 h = mask.extent(0);
    const i64 w = mask.extent(1);
    const std::vector<double>& d = mask.data();
    auto fg = [&](i64 r, i64 c) {
        if (r < 0 || r >= h || c < 0 || c >= w) return false;
        return is_fg(d[static_cast<size_t>(r * w + c)]);
    };
    std::vector<std::pair<i64, i64>> out;
    for (i64 r = 0; r < h; ++r) {
        for (i64 c = 0; c < w; ++c) {
            if (!fg(r, c)) continue;
            if (!fg(r - 1, c) || !fg(r + 1, c) || !fg(r, c - 1) || !fg(r, c + 1)) {
                out.emplace_back(r, c);
            }
        }
    }
    return out;
}

// Appends, for every source pixel, its distance to the nearest target pixel.
void directed_distances(const std::vector<std::pair<i64, i64>>& from,
                        const std::vector<std::pair<i64, i64>>& to,
                        std::vector<double>& pool) {
    for (const auto& a : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& b : to) {
            const double dr = static_cast<double>(a.first - b.first);
            const double dc = static_cast<double>(a.second - b.second);
            best = std::min(best, dr * dr + dc * dc);
        }
        pool.push_back(std::sqrt(best));
    }
}

double percentile95(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const double rank = 0.95 * static_cast<double>(values.size() - 1);
    const size_t lo = static_cast<size_t>(rank);
    const size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace

Tensor total_loss(const Tensor& probs, const Tensor& target, double alpha) {
    require_same_shape(probs, target, "total_loss");

    // Soft Dice with +1 smoothing: 1 - (2*sum(P*G) + 1) / (sum(P) + sum(G) + 1).
    Tensor inter = sum_all(mul(probs, target));
    Tensor denom = add_scalar(add(sum_all(probs), sum_all(target)), 1.0);
    Tensor dice = sub(Tensor::scalar(1.0), div(add_scalar(scale(inter, 2.0), 1.0), denom));

    // Binary cross-entropy with the probabilities clamped for stability.
    Tensor one = Tensor::full(probs.shape(), 1.0);
    Tensor p = clamp(probs, 1e-7, 1.0 - 1e-7);
    Tensor ll = add(mul(target, log(p)), mul(sub(one, target), log(sub(one, p))));
    Tensor bce = scale(mean_all(ll), -1.0);

    return add(scale(dice, alpha), scale(bce, 1.0 - alpha));
}

double dice_metric(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "dice_metric");
    const std::vector<double>& p = pred.data();
    const std::vector<double>& g = target.data();
    i64 np = 0, ng = 0, ni = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        const bool a = is_fg(p[i]);
        const bool b = is_fg(g[i]);
        np += a;
        ng += b;
        ni += (a && b);
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(ni) / static_cast<double>(np + ng);
}

double hd95(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "hd95");
    if (pred.rank() != 2) throw std::invalid_argument("hd95: expected [H,W] masks");
    const auto bp = boundary_pixels(pred);
    const auto bg = boundary_pixels(target);
    if (bp.empty() || bg.empty()) {
        throw std::invalid_argument("hd95: empty mask");
    }
    std::vector<double> pool;
    pool.reserve(bp.size() + bg.size());
    directed_distances(bp, bg, pool);
    directed_distances(bg, bp, pool);
    return percentile95(std::move(pool));
}

EFStats ef_stats(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.empty() || pred.size() != truth.size()) {
        throw std::invalid_argument("ef_stats: lists must be non-empty and equal length");
    }
    const double n = static_cast<double>(pred.size());
    double mp = 0.0, mt = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        mp += pred[i];
        mt += truth[i];
    }
    mp /= n;
    mt /= n;

    double spp = 0.0, stt = 0.0, spt = 0.0, diff_sum = 0.0, diff_sq = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double dp = pred[i] - mp;
        const double dt = truth[i] - mt;
        spp += dp * dp;
        stt += dt * dt;
        spt += dp * dt;
        const double d = pred[i] - truth[i];
        diff_sum += d;
        diff_sq += d * d;
    }

    EFStats out;
    out.bias = diff_sum / n;
    out.std_dev = std::sqrt(std::max(0.0, diff_sq / n - out.bias * out.bias));
    if (spp > 0.0 && stt > 0.0) {
        out.corr = spt / std::sqrt(spp * stt);
        out.corr_defined = true;
    } else {
        out.corr = std::numeric_limits<double>::quiet_NaN();
        out.corr_defined = false;
    }
    return out;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("write_metrics_csv: cannot open " + path);
    std::fputs("clip_id,dice_ed,dice_es,hd95_ed,hd95_es,ef_true,ef_pred\n", f);
    auto put_opt = [&](const std::optional<double>& v) {
        if (v.has_value()) {
            std::fprintf(f, ",%.6f", *v);
        } else {
            std::fputs(",nan", f);
        }
    };
    for (const MetricsRow& r : rows) {
        std::fprintf(f, "%s,%.6f,%.6f", r.clip_id.c_str(), r.dice_ed, r.dice_es);
        put_opt(r.hd95_ed);
        put_opt(r.hd95_es);
        std::fprintf(f, ",%.6f,%.6f\n", r.ef_true, r.ef_pred);
    }
    if (std::fclose(f) != 0) throw std::runtime_error("write_metrics_csv: write failed");
}

}  // namespace hssnet
