#pragma once

// Synthetic echo-style clip generator with analytic ground truth: a shrinking
// dark elliptical cavity inside a bright speckled ring, rendered over a fixed
// frame count with the fully expanded phase first and the fully contracted
// phase last.  Includes the training augmentations and the on-disk clip
// format used by the trainer.

#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "hssnet/tensor.hpp"

namespace hssnet {

// Exact per-clip generation parameters.
struct SynthSpec {
    int size = 256;               // square image side
    int frames = 10;              // clip length; first = expanded, last = contracted
    double a0 = 70.0;             // expanded long semi-axis, px (along columns pre-tilt)
    double b0 = 45.0;             // expanded short semi-axis, px
    double ca = 0.75;             // long-axis contraction factor in (0,1)
    double cb = 0.80;             // short-axis contraction factor in (0,1)
    double center_r = 128.0;      // cavity centre, row
    double center_c = 128.0;      // cavity centre, column
    double tilt_deg = 0.0;        // axis tilt
    double ring_px = 12.0;        // bright ring thickness beyond the cavity
    double sigma = 0.15;          // multiplicative speckle level (0 disables)
    double occlusion_prob = 0.25; // chance of a static dark wedge artifact

    // Throws std::invalid_argument when the ring would leave the image, the
    // contraction factors leave (0,1), the contracted ellipse loses its long
    // axis, or counts are non-positive.
    void validate() const;
};

// One generated clip with its analytic reference.
struct ClipRecord {
    Tensor frames;        // [T,1,H,W] intensities in [0,1]
    Tensor ed_mask;       // [H,W] binary cavity mask for frame 0
    Tensor es_mask;       // [H,W] binary cavity mask for frame T-1
    double true_ef = 0.0; // analytic 100*(1 - ca*cb^2)
    std::string clip_id;
};

// Deterministic rendering of one clip for a fixed (spec, seed) pair.
ClipRecord generate(const SynthSpec& spec, std::uint64_t seed);

// Which augmentations fire on a given draw, and their parameters.
struct AugmentPlan {
    std::optional<double> gamma;       // in [0.7, 1.5]
    std::optional<double> scale;       // in [0.9, 1.1]
    std::optional<double> rotate_deg;  // in [-10, 10]
    std::optional<double> contrast;    // in [0.8, 1.2]
};

// Draws each augmentation independently with probability 0.5.
AugmentPlan draw_augment_plan(std::uint64_t seed);

// Applies a plan: spatial transforms (scale, rotation) hit frames and masks
// identically; intensity transforms (gamma, contrast) hit frames only.
ClipRecord apply_augment(const ClipRecord& rec, const AugmentPlan& plan);

// draw_augment_plan + apply_augment.
ClipRecord augment(const ClipRecord& rec, std::uint64_t seed);

// Resamples an [H,W] image about its centre: scaling by `scale` then rotating
// by `rot_deg`, bilinear or nearest-neighbour, zero outside the source.
Tensor affine_resample(const Tensor& img, double scale, double rot_deg, bool bilinear);

// Per-clip sampling ranges for corpus generation.  Geometry ranges are
// fractions of the image side so one spec serves any resolution.
struct CorpusSpec {
    SynthSpec base;  // size, frames, ring_px, sigma, occlusion_prob are shared
    double a0_frac_lo = 0.26, a0_frac_hi = 0.34;
    double b0_frac_lo = 0.16, b0_frac_hi = 0.22;
    double ca_lo = 0.55, ca_hi = 0.85;
    double cb_lo = 0.60, cb_hi = 0.90;
    double tilt_max_deg = 20.0;
    double center_jitter_frac = 0.05;
};

// Draws one clip's exact parameters from the corpus ranges.
SynthSpec sample_clip_spec(const CorpusSpec& corpus, std::mt19937_64& rng);

// Samples and renders clip `index` with stream seed = base_seed + index, so
// any parallel schedule reproduces the same corpus.  clip_id = "clip_%04d".
ClipRecord make_clip(const CorpusSpec& corpus, std::uint64_t base_seed, int index);

// On-disk layout: <dir>/frame_000.pgm ... , ed_mask.pgm, es_mask.pgm,
// meta.txt ("key = value" lines: clip_id, frames, true_ef).  write_clip
// creates the directory.  read_clip throws std::runtime_error on missing or
// malformed content.
void write_clip(const std::string& dir, const ClipRecord& rec);
ClipRecord read_clip(const std::string& dir);

namespace rnd {
// Uniform double in [0,1) from the top 53 bits of the engine output.
double unif01(std::mt19937_64& rng);
// Standard normal via the Box-Muller transform (one value per call).
double normal(std::mt19937_64& rng);
}  // namespace rnd

}  // namespace hssnet
