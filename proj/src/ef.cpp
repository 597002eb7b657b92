#include "hssnet/ef.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace hssnet {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Largest 4-connected foreground component of a thresholded [H,W] mask,
// returned as pixel coordinates.  `multi` reports whether anything was
// discarded.  Ties break toward the component found first in row-major order.
std::vector<std::pair<i64, i64>> largest_component(const Tensor& mask, bool* multi) {
    const i64 h = mask.extent(0);
    const i64 w = mask.extent(1);
    const std::vector<double>& d = mask.data();
    std::vector<char> seen(static_cast<size_t>(h * w), 0);
    auto fg = [&](i64 r, i64 c) {
        return r >= 0 && r < h && c >= 0 && c < w && d[static_cast<size_t>(r * w + c)] > 0.5;
    };

    std::vector<std::pair<i64, i64>> best;
    int n_components = 0;
    std::vector<std::pair<i64, i64>> stack, current;
    for (i64 r0 = 0; r0 < h; ++r0) {
        for (i64 c0 = 0; c0 < w; ++c0) {
            if (!fg(r0, c0) || seen[static_cast<size_t>(r0 * w + c0)]) continue;
            ++n_components;
            current.clear();
            stack.assign(1, {r0, c0});
            seen[static_cast<size_t>(r0 * w + c0)] = 1;
            while (!stack.empty()) {
                auto [r, c] = stack.back();
                stack.pop_back();
                current.emplace_back(r, c);
                const std::pair<i64, i64> nb[4] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
                for (const auto& [nr, nc] : nb) {
                    if (fg(nr, nc) && !seen[static_cast<size_t>(nr * w + nc)]) {
                        seen[static_cast<size_t>(nr * w + nc)] = 1;
                        stack.emplace_back(nr, nc);
                    }
                }
            }
            if (current.size() > best.size()) best.swap(current);
        }
    }
    *multi = n_components > 1;
    return best;
}

}  // namespace

LVGeometry extract_geometry(const Tensor& mask, int n_disks) {
    if (mask.rank() != 2) throw std::invalid_argument("extract_geometry: expected [H,W] mask");
    if (n_disks < 1) throw std::invalid_argument("extract_geometry: n_disks must be positive");

    LVGeometry geom;
    const auto px = largest_component(mask, &geom.multi_component);
    if (px.empty()) throw std::invalid_argument("extract_geometry: empty mask");
    if (px.size() < 2) throw std::invalid_argument("extract_geometry: degenerate single-pixel mask");

    // Centroid and second moments of the pixel centres.
    const double n = static_cast<double>(px.size());
    double mr = 0.0, mc = 0.0;
    for (const auto& [r, c] : px) {
        mr += static_cast<double>(r);
        mc += static_cast<double>(c);
    }
    mr /= n;
    mc /= n;
    double srr = 0.0, scc = 0.0, src = 0.0;
    for (const auto& [r, c] : px) {
        const double dr = static_cast<double>(r) - mr;
        const double dc = static_cast<double>(c) - mc;
        srr += dr * dr;
        scc += dc * dc;
        src += dr * dc;
    }
    srr /= n;
    scc /= n;
    src /= n;

    // Dominant eigenvector of [[srr, src], [src, scc]].  For isotropic masks
    // the axis is ambiguous; break the tie toward the grid axes.
    const double tr = srr + scc;
    const double disc = std::sqrt(std::max(0.0, tr * tr - 4.0 * (srr * scc - src * src)));
    const double lam = 0.5 * (tr + disc);
    double ur, uc;
    if (std::abs(src) > 1e-12) {
        ur = src;
        uc = lam - srr;
    } else if (srr >= scc) {
        ur = 1.0;
        uc = 0.0;
    } else {
        ur = 0.0;
        uc = 1.0;
    }
    const double norm = std::hypot(ur, uc);
    ur /= norm;
    uc /= norm;

    // Axis projection t and perpendicular coordinate s, per pixel.
    std::vector<double> t(px.size()), s(px.size());
    double tmin = 0.0, tmax = 0.0;
    for (size_t i = 0; i < px.size(); ++i) {
        const double dr = static_cast<double>(px[i].first) - mr;
        const double dc = static_cast<double>(px[i].second) - mc;
        t[i] = dr * ur + dc * uc;
        s[i] = -dr * uc + dc * ur;
        if (i == 0 || t[i] < tmin) tmin = t[i];
        if (i == 0 || t[i] > tmax) tmax = t[i];
    }
    geom.length = tmax - tmin + 1.0;
    geom.apex = {mr + tmin * ur, mc + tmin * uc};
    geom.base = {mr + tmax * ur, mc + tmax * uc};

    // One diameter per slab, sampled from a one-pixel band at the slab
    // midpoint: perpendicular pixel-centre extent plus one pixel footprint.
    geom.diameters.assign(static_cast<size_t>(n_disks), 0.0);
    const double slab = geom.length / static_cast<double>(n_disks);
    const double lo = tmin - 0.5;
    for (int k = 0; k < n_disks; ++k) {
        const double centre = lo + (static_cast<double>(k) + 0.5) * slab;
        double smin = 0.0, smax = 0.0;
        bool any = false;
        for (size_t i = 0; i < px.size(); ++i) {
            if (std::abs(t[i] - centre) > 0.5) continue;
            if (!any || s[i] < smin) smin = s[i];
            if (!any || s[i] > smax) smax = s[i];
            any = true;
        }
        if (any) geom.diameters[static_cast<size_t>(k)] = smax - smin + 1.0;
    }
    return geom;
}

double volume_single_plane(const LVGeometry& g) {
    double acc = 0.0;
    for (double d : g.diameters) acc += d * d;
    return kPi / 4.0 * (g.length / static_cast<double>(g.diameters.size())) * acc;
}

double volume_biplane(const LVGeometry& a, const LVGeometry& b) {
    if (a.diameters.size() != b.diameters.size()) {
        throw std::invalid_argument("volume_biplane: disk count mismatch");
    }
    const size_t n = a.diameters.size();
    const LVGeometry& longer = a.length >= b.length ? a : b;
    const LVGeometry& shorter = a.length >= b.length ? b : a;
    const double len = longer.length;

    double acc = 0.0;
    if (a.length == b.length) {
        // Same slab grid: multiply matching diameters directly, so identical
        // views reproduce the single-plane volume bit for bit.
        for (size_t k = 0; k < n; ++k) acc += a.diameters[k] * b.diameters[k];
    } else {
        // Resample the shorter profile at the longer view's slab midpoints,
        // matching absolute distance along each axis: linear between the
        // shorter view's midpoints, clamped at the ends, zero past its length.
        const double step_s = shorter.length / static_cast<double>(n);
        for (size_t k = 0; k < n; ++k) {
            const double x = (static_cast<double>(k) + 0.5) * len / static_cast<double>(n);
            double d_short;
            if (x > shorter.length) {
                d_short = 0.0;
            } else {
                const double pos = x / step_s - 0.5;  // fractional midpoint index
                if (pos <= 0.0) {
                    d_short = shorter.diameters.front();
                } else if (pos >= static_cast<double>(n - 1)) {
                    d_short = shorter.diameters.back();
                } else {
                    const size_t j = static_cast<size_t>(pos);
                    const double f = pos - static_cast<double>(j);
                    d_short =
                        shorter.diameters[j] + f * (shorter.diameters[j + 1] - shorter.diameters[j]);
                }
            }
            acc += longer.diameters[k] * d_short;
        }
    }
    return kPi / 4.0 * (len / static_cast<double>(n)) * acc;
}

double ejection_fraction(double edv, double esv) {
    if (edv <= 0.0) throw std::invalid_argument("ejection_fraction: edv must be positive");
    return 100.0 * (edv - esv) / edv;
}

EFReport ef_from_masks(const Tensor& ed_mask, const Tensor& es_mask, int n_disks) {
    EFReport rep;
    rep.edv = volume_single_plane(extract_geometry(ed_mask, n_disks));
    rep.esv = volume_single_plane(extract_geometry(es_mask, n_disks));
    rep.ef = ejection_fraction(rep.edv, rep.esv);
    return rep;
}

EFReport ef_from_masks_biplane(const Tensor& ed_a, const Tensor& ed_b, const Tensor& es_a,
                               const Tensor& es_b, int n_disks) {
    EFReport rep;
    rep.edv = volume_biplane(extract_geometry(ed_a, n_disks), extract_geometry(ed_b, n_disks));
    rep.esv = volume_biplane(extract_geometry(es_a, n_disks), extract_geometry(es_b, n_disks));
    rep.ef = ejection_fraction(rep.edv, rep.esv);
    return rep;
}

}  // namespace hssnet
