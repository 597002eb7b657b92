#include "hssnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "hssnet/pgm.hpp"

namespace hssnet {

namespace rnd {

double unif01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double normal(std::mt19937_64& rng) {
    double u1 = unif01(rng);
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = unif01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace rnd

namespace {

constexpr double kPi = 3.14159265358979323846;

// Rendering intensities: the cavity is the darkest region so it stays
// identifiable under the multiplicative artifacts.
constexpr double kCavity = 0.08;
constexpr double kRing = 0.85;
constexpr double kBackground = 0.25;
constexpr double kWedgeFactor = 0.15;
constexpr double kWedgeWidth = 0.7;  // radians

double unif_in(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * rnd::unif01(rng);
}

// Squared normalized ellipse coordinate of pixel (r,c): <=1 is inside.
double ellipse_q(double r, double c, const SynthSpec& spec, double a, double b) {
    const double th = spec.tilt_deg * kPi / 180.0;
    const double ct = std::cos(th), st = std::sin(th);
    const double dr = r - spec.center_r;
    const double dc = c - spec.center_c;
    const double x = dc * ct + dr * st;
    const double y = -dc * st + dr * ct;
    return (x / a) * (x / a) + (y / b) * (y / b);
}

Tensor rasterize_cavity(const SynthSpec& spec, double a, double b) {
    std::vector<double> m(static_cast<size_t>(spec.size) * spec.size, 0.0);
    for (int r = 0; r < spec.size; ++r) {
        for (int c = 0; c < spec.size; ++c) {
            if (ellipse_q(r, c, spec, a, b) <= 1.0) m[static_cast<size_t>(r) * spec.size + c] = 1.0;
        }
    }
    return Tensor::from({spec.size, spec.size}, std::move(m));
}

}  // namespace

void SynthSpec::validate() const {
    if (size < 8) throw std::invalid_argument("SynthSpec: size too small");
    if (frames < 2) throw std::invalid_argument("SynthSpec: need at least 2 frames");
    if (a0 <= 0.0 || b0 <= 0.0) throw std::invalid_argument("SynthSpec: semi-axes must be positive");
    if (ca <= 0.0 || ca >= 1.0 || cb <= 0.0 || cb >= 1.0) {
        throw std::invalid_argument("SynthSpec: contraction factors must lie in (0,1)");
    }
    if (ca * a0 <= cb * b0) {
        throw std::invalid_argument("SynthSpec: contraction must preserve the long axis");
    }
    if (sigma < 0.0) throw std::invalid_argument("SynthSpec: sigma must be non-negative");
    if (occlusion_prob < 0.0 || occlusion_prob > 1.0) {
        throw std::invalid_argument("SynthSpec: occlusion_prob must lie in [0,1]");
    }
    const double outer = std::max(a0, b0) + ring_px;
    if (center_r - outer < 0.0 || center_r + outer > size - 1 || center_c - outer < 0.0 ||
        center_c + outer > size - 1) {
        throw std::invalid_argument("SynthSpec: ellipse plus ring exceeds the image bounds");
    }
}

ClipRecord generate(const SynthSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);

    // Static occlusion wedge: one dark angular sector shared by all frames.
    const bool wedge = rnd::unif01(rng) < spec.occlusion_prob;
    const double wedge_start = wedge ? unif_in(rng, 0.0, 2.0 * kPi) : 0.0;

    const int t_count = spec.frames;
    const int hw = spec.size * spec.size;
    std::vector<double> frames(static_cast<size_t>(t_count) * hw);

    for (int t = 0; t < t_count; ++t) {
        // Cosine-eased contraction from the expanded to the contracted phase.
        const double u = 0.5 * (1.0 - std::cos(kPi * static_cast<double>(t) / (t_count - 1)));
        const double a = spec.a0 * (1.0 - u * (1.0 - spec.ca));
        const double b = spec.b0 * (1.0 - u * (1.0 - spec.cb));

        for (int r = 0; r < spec.size; ++r) {
            for (int c = 0; c < spec.size; ++c) {
                const double q_in = ellipse_q(r, c, spec, a, b);
                double v;
                if (q_in <= 1.0) {
                    v = kCavity;
                } else if (ellipse_q(r, c, spec, a + spec.ring_px, b + spec.ring_px) <= 1.0) {
                    v = kRing;
                } else {
                    v = kBackground;
                }
                if (wedge) {
                    double ang = std::atan2(static_cast<double>(r) - spec.center_r,
                                            static_cast<double>(c) - spec.center_c);
                    ang -= wedge_start;
                    ang -= 2.0 * kPi * std::floor(ang / (2.0 * kPi));
                    if (ang < kWedgeWidth) v *= kWedgeFactor;
                }
                if (spec.sigma > 0.0) v *= 1.0 + spec.sigma * rnd::normal(rng);
                frames[static_cast<size_t>(t) * hw + static_cast<size_t>(r) * spec.size + c] =
                    std::min(1.0, std::max(0.0, v));
            }
        }
    }

    ClipRecord rec;
    rec.frames = Tensor::from({t_count, 1, spec.size, spec.size}, std::move(frames));
    rec.ed_mask = rasterize_cavity(spec, spec.a0, spec.b0);
    rec.es_mask = rasterize_cavity(spec, spec.ca * spec.a0, spec.cb * spec.b0);
    rec.true_ef = 100.0 * (1.0 - spec.ca * spec.cb * spec.cb);
    rec.clip_id = "clip";
    return rec;
}

Tensor affine_resample(const Tensor& img, double scale, double rot_deg, bool bilinear) {
    if (img.rank() != 2) throw std::invalid_argument("affine_resample: expected [H,W]");
    const i64 h = img.extent(0);
    const i64 w = img.extent(1);
    const double cr = static_cast<double>(h - 1) / 2.0;
    const double cc = static_cast<double>(w - 1) / 2.0;
    // Destination -> source: undo the rotation, then undo the scaling.
    const double th = rot_deg * kPi / 180.0;
    const double ct = std::cos(th), st = std::sin(th);
    const std::vector<double>& src = img.data();
    std::vector<double> out(static_cast<size_t>(h * w), 0.0);

    auto at = [&](i64 r, i64 c) { return src[static_cast<size_t>(r * w + c)]; };
    for (i64 r = 0; r < h; ++r) {
        for (i64 c = 0; c < w; ++c) {
            const double dr = static_cast<double>(r) - cr;
            const double dc = static_cast<double>(c) - cc;
            const double sr = cr + (ct * dr - st * dc) / scale;
            const double sc = cc + (st * dr + ct * dc) / scale;
            double v = 0.0;
            if (bilinear) {
                const double fr = std::floor(sr), fc = std::floor(sc);
                const i64 r0 = static_cast<i64>(fr), c0 = static_cast<i64>(fc);
                if (r0 >= -1 && r0 <= h - 1 && c0 >= -1 && c0 <= w - 1) {
                    const double wr = sr - fr, wc = sc - fc;
                    auto sample = [&](i64 rr, i64 cc2) {
                        return (rr < 0 || rr >= h || cc2 < 0 || cc2 >= w) ? 0.0 : at(rr, cc2);
                    };
                    v = (1.0 - wr) * (1.0 - wc) * sample(r0, c0) +
                        (1.0 - wr) * wc * sample(r0, c0 + 1) + wr * (1.0 - wc) * sample(r0 + 1, c0) +
                        wr * wc * sample(r0 + 1, c0 + 1);
                }
            } else {
                const i64 rn = static_cast<i64>(std::lround(sr));
                const i64 cn = static_cast<i64>(std::lround(sc));
                if (rn >= 0 && rn < h && cn >= 0 && cn < w) v = at(rn, cn);
            }
            out[static_cast<size_t>(r * w + c)] = v;
        }
    }
    return Tensor::from({h, w}, std::move(out));
}

AugmentPlan draw_augment_plan(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    AugmentPlan plan;
    if (rnd::unif01(rng) < 0.5) plan.gamma = unif_in(rng, 0.7, 1.5);
    if (rnd::unif01(rng) < 0.5) plan.scale = unif_in(rng, 0.9, 1.1);
    if (rnd::unif01(rng) < 0.5) plan.rotate_deg = unif_in(rng, -10.0, 10.0);
    if (rnd::unif01(rng) < 0.5) plan.contrast = unif_in(rng, 0.8, 1.2);
    return plan;
}

namespace {

// Applies one spatial transform jointly to all frames (bilinear) and both
// masks (nearest, re-binarized).
void spatial_step(ClipRecord& rec, double scale, double rot_deg) {
    const i64 t_count = rec.frames.extent(0);
    const i64 h = rec.frames.extent(2);
    const i64 w = rec.frames.extent(3);
    const i64 hw = h * w;
    std::vector<double> out(rec.frames.data().size());
    for (i64 t = 0; t < t_count; ++t) {
        std::vector<double> plane(rec.frames.data().begin() + t * hw,
                                  rec.frames.data().begin() + (t + 1) * hw);
        Tensor res = affine_resample(Tensor::from({h, w}, std::move(plane)), scale, rot_deg, true);
        std::copy(res.data().begin(), res.data().end(), out.begin() + t * hw);
    }
    rec.frames = Tensor::from({t_count, 1, h, w}, std::move(out));
    rec.ed_mask = affine_resample(rec.ed_mask, scale, rot_deg, false);
    rec.es_mask = affine_resample(rec.es_mask, scale, rot_deg, false);
}

// Pointwise remap of the frame intensities only.
template <typename F>
void intensity_step(ClipRecord& rec, F f) {
    std::vector<double> v = rec.frames.data();
    for (double& x : v) x = std::min(1.0, std::max(0.0, f(x)));
    rec.frames = Tensor::from(rec.frames.shape(), std::move(v));
}

}  // namespace

ClipRecord apply_augment(const ClipRecord& rec, const AugmentPlan& plan) {
    ClipRecord out = rec;
    if (plan.gamma) {
        const double g = *plan.gamma;
        intensity_step(out, [g](double v) { return std::pow(v, g); });
    }
    if (plan.scale) spatial_step(out, *plan.scale, 0.0);
    if (plan.rotate_deg) spatial_step(out, 1.0, *plan.rotate_deg);
    if (plan.contrast) {
        const double k = *plan.contrast;
        intensity_step(out, [k](double v) { return 0.5 + k * (v - 0.5); });
    }
    return out;
}

ClipRecord augment(const ClipRecord& rec, std::uint64_t seed) {
    return apply_augment(rec, draw_augment_plan(seed));
}

SynthSpec sample_clip_spec(const CorpusSpec& corpus, std::mt19937_64& rng) {
    SynthSpec spec = corpus.base;
    const double side = static_cast<double>(spec.size);
    spec.a0 = unif_in(rng, corpus.a0_frac_lo, corpus.a0_frac_hi) * side;
    spec.b0 = unif_in(rng, corpus.b0_frac_lo, corpus.b0_frac_hi) * side;
    spec.ca = unif_in(rng, corpus.ca_lo, corpus.ca_hi);
    spec.cb = unif_in(rng, corpus.cb_lo, corpus.cb_hi);
    spec.tilt_deg = unif_in(rng, -corpus.tilt_max_deg, corpus.tilt_max_deg);
    const double jitter = corpus.center_jitter_frac * side;
    spec.center_r = side / 2.0 + unif_in(rng, -jitter, jitter);
    spec.center_c = side / 2.0 + unif_in(rng, -jitter, jitter);
    // Keep the contracted ellipse's long axis along a0 so the analytic EF
    // formula stays valid for every sampled clip.
    if (spec.ca * spec.a0 <= spec.cb * spec.b0) {
        spec.cb = 0.95 * spec.ca * spec.a0 / spec.b0;
    }
    return spec;
}

ClipRecord make_clip(const CorpusSpec& corpus, std::uint64_t base_seed, int index) {
    std::mt19937_64 rng(base_seed + static_cast<std::uint64_t>(index));
    const SynthSpec spec = sample_clip_spec(corpus, rng);
    ClipRecord rec = generate(spec, rng());
    char buf[32];
    std::snprintf(buf, sizeof buf, "clip_%04d", index);
    rec.clip_id = buf;
    return rec;
}

void write_clip(const std::string& dir, const ClipRecord& rec) {
    std::filesystem::create_directories(dir);
    const i64 t_count = rec.frames.extent(0);
    const i64 h = rec.frames.extent(2);
    const i64 w = rec.frames.extent(3);
    for (i64 t = 0; t < t_count; ++t) {
        std::vector<double> plane(rec.frames.data().begin() + t * h * w,
                                  rec.frames.data().begin() + (t + 1) * h * w);
        char name[32];
        std::snprintf(name, sizeof name, "/frame_%03d.pgm", static_cast<int>(t));
        write_pgm(dir + name, Tensor::from({h, w}, std::move(plane)));
    }
    write_pgm(dir + "/ed_mask.pgm", rec.ed_mask);
    write_pgm(dir + "/es_mask.pgm", rec.es_mask);

    std::ofstream meta(dir + "/meta.txt");
    if (!meta) throw std::runtime_error("write_clip: cannot write meta.txt in " + dir);
    meta << "clip_id = " << rec.clip_id << "\n";
    meta << "frames = " << t_count << "\n";
    char ef[48];
    std::snprintf(ef, sizeof ef, "%.12g", rec.true_ef);
    meta << "true_ef = " << ef << "\n";
    if (!meta.good()) throw std::runtime_error("write_clip: meta.txt write failed in " + dir);
}

ClipRecord read_clip(const std::string& dir) {
    std::ifstream meta(dir + "/meta.txt");
    if (!meta) throw std::runtime_error("read_clip: missing meta.txt in " + dir);
    ClipRecord rec;
    i64 t_count = -1;
    bool have_ef = false;
    std::string line;
    while (std::getline(meta, line)) {
        const size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const size_t b = s.find_first_not_of(" \t");
            const size_t e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "clip_id") {
            rec.clip_id = val;
        } else if (key == "frames") {
            t_count = std::strtoll(val.c_str(), nullptr, 10);
        } else if (key == "true_ef") {
            rec.true_ef = std::strtod(val.c_str(), nullptr);
            have_ef = true;
        }
    }
    if (t_count < 2 || !have_ef) throw std::runtime_error("read_clip: malformed meta.txt in " + dir);

    std::vector<double> all;
    i64 h = 0, w = 0;
    for (i64 t = 0; t < t_count; ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "/frame_%03d.pgm", static_cast<int>(t));
        Tensor plane = read_pgm(dir + name);
        if (t == 0) {
            h = plane.extent(0);
            w = plane.extent(1);
            all.reserve(static_cast<size_t>(t_count) * h * w);
        } else if (plane.extent(0) != h || plane.extent(1) != w) {
            throw std::runtime_error("read_clip: inconsistent frame sizes in " + dir);
        }
        all.insert(all.end(), plane.data().begin(), plane.data().end());
    }
    rec.frames = Tensor::from({t_count, 1, h, w}, std::move(all));

    auto binarize = [](Tensor t) {
        std::vector<double> v = t.data();
        for (double& x : v) x = x > 0.5 ? 1.0 : 0.0;
        return Tensor::from(t.shape(), std::move(v));
    };
    rec.ed_mask = binarize(read_pgm(dir + "/ed_mask.pgm"));
    rec.es_mask = binarize(read_pgm(dir + "/es_mask.pgm"));
    return rec;
}

}  // namespace hssnet
