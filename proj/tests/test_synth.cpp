#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "hssnet/ef.hpp"
#include "hssnet/losses.hpp"
#include "hssnet/pgm.hpp"
#include "hssnet/synth.hpp"
#include "hssnet/tensor.hpp"

using namespace hssnet;

namespace {

SynthSpec clean_spec() {
    SynthSpec spec;  // 256 px defaults
    spec.sigma = 0.0;
    spec.occlusion_prob = 0.0;
    return spec;
}

// Pixels exactly at the cavity intensity (the darkest constant in a clean
// render) for frame t.
std::vector<char> cavity_set(const ClipRecord& rec, i64 t) {
    const i64 hw = rec.frames.extent(2) * rec.frames.extent(3);
    const std::vector<double>& d = rec.frames.data();
    const double cavity = *std::min_element(d.begin() + t * hw, d.begin() + (t + 1) * hw);
    std::vector<char> out(static_cast<size_t>(hw));
    for (i64 i = 0; i < hw; ++i) out[static_cast<size_t>(i)] = d[t * hw + i] == cavity;
    return out;
}

}  // namespace

TEST_CASE("pgm round trip preserves 8-bit quantized values") {
    std::vector<double> v(35);
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i) / 34.0;
    Tensor img = Tensor::from({5, 7}, std::move(v));
    write_pgm("pgm_tmp.pgm", img);
    Tensor back = read_pgm("pgm_tmp.pgm");

    REQUIRE(back.shape() == img.shape());
    for (size_t i = 0; i < back.data().size(); ++i) {
        CHECK(std::abs(back.data()[i] - img.data()[i]) <= 0.5 / 255.0 + 1e-12);
    }
    CHECK(back.data().front() == 0.0);  // extremes survive exactly
    CHECK(back.data().back() == 1.0);
    std::remove("pgm_tmp.pgm");
}

TEST_CASE("pgm reader handles comments and rejects malformed files") {
    {
        std::ofstream f("pgm_tmp2.pgm", std::ios::binary);
        f << "P5\n# a comment line\n4 2\n255\n";
        const unsigned char px[8] = {0, 51, 102, 153, 204, 255, 10, 20};
        f.write(reinterpret_cast<const char*>(px), 8);
    }
    Tensor t = read_pgm("pgm_tmp2.pgm");
    CHECK(t.extent(0) == 2);
    CHECK(t.extent(1) == 4);
    CHECK(t.data()[1] == doctest::Approx(51.0 / 255.0));
    std::remove("pgm_tmp2.pgm");

    {
        std::ofstream f("pgm_bad.pgm", std::ios::binary);
        f << "P2\n4 2\n255\n0 0 0 0 0 0 0 0\n";
    }
    CHECK_THROWS_AS((void)read_pgm("pgm_bad.pgm"), std::runtime_error);
    {
        std::ofstream f("pgm_bad.pgm", std::ios::binary);
        f << "P5\n4 2\n255\n";
        f.put(0);  // seven bytes short
    }
    CHECK_THROWS_AS((void)read_pgm("pgm_bad.pgm"), std::runtime_error);
    std::remove("pgm_bad.pgm");
    CHECK_THROWS_AS((void)read_pgm("no_such_file.pgm"), std::runtime_error);
    CHECK_THROWS_AS(write_pgm("pgm_bad.pgm", Tensor::zeros({2, 2, 2})), std::invalid_argument);
}

TEST_CASE("generation is deterministic per seed, including artifacts") {
    SynthSpec spec;
    spec.sigma = 0.2;
    spec.occlusion_prob = 1.0;
    ClipRecord a = generate(spec, 77);
    ClipRecord b = generate(spec, 77);
    CHECK(a.frames.data() == b.frames.data());
    CHECK(a.ed_mask.data() == b.ed_mask.data());
    CHECK(a.es_mask.data() == b.es_mask.data());
    CHECK(a.true_ef == b.true_ef);

    ClipRecord c = generate(spec, 78);
    CHECK(a.frames.data() != c.frames.data());
}

TEST_CASE("clean renders make the cavity pixel set equal the masks") {
    ClipRecord rec = generate(clean_spec(), 5);
    const i64 last = rec.frames.extent(0) - 1;

    const std::vector<char> ed = cavity_set(rec, 0);
    const std::vector<char> es = cavity_set(rec, last);
    for (size_t i = 0; i < ed.size(); ++i) {
        CHECK(static_cast<bool>(ed[i]) == (rec.ed_mask.data()[i] == 1.0));
        CHECK(static_cast<bool>(es[i]) == (rec.es_mask.data()[i] == 1.0));
    }
}

TEST_CASE("cavity area contracts monotonically across the clip") {
    ClipRecord rec = generate(clean_spec(), 5);
    const i64 t_count = rec.frames.extent(0);
    std::vector<i64> counts;
    for (i64 t = 0; t < t_count; ++t) {
        const std::vector<char> cav = cavity_set(rec, t);
        counts.push_back(std::count(cav.begin(), cav.end(), char(1)));
    }
    for (size_t k = 1; k < counts.size(); ++k) CHECK(counts[k] <= counts[k - 1]);
    CHECK(counts.back() < counts.front());
}

TEST_CASE("analytic EF matches the disk pipeline on clean masks") {
    SynthSpec spec = clean_spec();
    spec.ca = 0.8;
    spec.cb = 0.8;
    ClipRecord rec = generate(spec, 3);
    CHECK(rec.true_ef == doctest::Approx(100.0 * (1.0 - 0.8 * 0.8 * 0.8)).epsilon(1e-12));

    EFReport rep = ef_from_masks(rec.ed_mask, rec.es_mask);
    CHECK(std::abs(rep.ef - rec.true_ef) <= 2.0);
}

TEST_CASE("invalid specs are rejected") {
    SynthSpec spec;
    spec.a0 = 200.0;  // ring would leave the 256 px image
    CHECK_THROWS_AS((void)generate(spec, 0), std::invalid_argument);

    SynthSpec flip;
    flip.a0 = 20.0;
    flip.b0 = 15.0;
    flip.ca = 0.6;
    flip.cb = 0.9;  // contracted short axis would overtake the long axis
    flip.center_r = flip.center_c = 128.0;
    CHECK_THROWS_AS(flip.validate(), std::invalid_argument);

    SynthSpec bad_c = clean_spec();
    bad_c.ca = 1.0;
    CHECK_THROWS_AS(bad_c.validate(), std::invalid_argument);
    SynthSpec short_clip = clean_spec();
    short_clip.frames = 1;
    CHECK_THROWS_AS(short_clip.validate(), std::invalid_argument);
}

TEST_CASE("an empty augmentation plan is the identity and some seed draws it") {
    ClipRecord rec = generate(clean_spec(), 9);
    ClipRecord same = apply_augment(rec, AugmentPlan{});
    CHECK(same.frames.data() == rec.frames.data());
    CHECK(same.ed_mask.data() == rec.ed_mask.data());

    bool found = false;
    for (std::uint64_t seed = 0; seed < 400 && !found; ++seed) {
        const AugmentPlan plan = draw_augment_plan(seed);
        if (!plan.gamma && !plan.scale && !plan.rotate_deg && !plan.contrast) {
            ClipRecord aug = augment(rec, seed);
            CHECK(aug.frames.data() == rec.frames.data());
            CHECK(aug.es_mask.data() == rec.es_mask.data());
            found = true;
        }
    }
    CHECK(found);

    const AugmentPlan p1 = draw_augment_plan(123);
    const AugmentPlan p2 = draw_augment_plan(123);
    CHECK(p1.gamma == p2.gamma);
    CHECK(p1.scale == p2.scale);
    CHECK(p1.rotate_deg == p2.rotate_deg);
    CHECK(p1.contrast == p2.contrast);
}

TEST_CASE("rotation hits frames and masks jointly") {
    ClipRecord rec = generate(clean_spec(), 9);
    AugmentPlan plan;
    plan.rotate_deg = 7.3;
    ClipRecord aug = apply_augment(rec, plan);

    // The mask path equals rotating the original mask directly.
    Tensor direct = affine_resample(rec.ed_mask, 1.0, 7.3, false);
    CHECK(dice_metric(aug.ed_mask, direct) == doctest::Approx(1.0));

    // Joint consistency: every exactly-cavity pixel of the rotated frame lies
    // inside the rotated mask, and such pixels cover most of the mask.
    const i64 hw = aug.frames.extent(2) * aug.frames.extent(3);
    const std::vector<double>& fr = aug.frames.data();
    const std::vector<double>& mask = aug.ed_mask.data();
    i64 cavity_px = 0, mask_px = 0;
    for (i64 i = 0; i < hw; ++i) {
        mask_px += mask[i] == 1.0;
        if (fr[i] == 0.08) {
            ++cavity_px;
            CHECK(mask[i] == 1.0);
        }
    }
    // Bilinear blending dilutes boundary pixels; the pure interior still
    // needs to cover the bulk of the mask.
    CHECK(cavity_px > (6 * mask_px) / 10);
}

TEST_CASE("scaling changes disk volume cubically") {
    ClipRecord rec = generate(clean_spec(), 11);
    AugmentPlan plan;
    plan.scale = 1.1;
    ClipRecord aug = apply_augment(rec, plan);

    const double v0 = volume_single_plane(extract_geometry(rec.ed_mask));
    const double v1 = volume_single_plane(extract_geometry(aug.ed_mask));
    CHECK(std::abs(v1 / v0 - 1.331) / 1.331 < 0.03);
}

TEST_CASE("intensity augmentations leave the masks and value range intact") {
    ClipRecord rec = generate(clean_spec(), 13);
    AugmentPlan plan;
    plan.gamma = 1.4;
    plan.contrast = 1.15;
    ClipRecord aug = apply_augment(rec, plan);

    CHECK(aug.ed_mask.data() == rec.ed_mask.data());
    CHECK(aug.es_mask.data() == rec.es_mask.data());
    CHECK(aug.frames.data() != rec.frames.data());
    for (double v : aug.frames.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(aug.true_ef == rec.true_ef);
}

TEST_CASE("corpus EFs are diverse and self-consistent with the disk pipeline") {
    CorpusSpec corpus;
    corpus.base.size = 64;
    corpus.base.ring_px = 5.0;
    corpus.base.center_r = corpus.base.center_c = 32.0;
    corpus.base.sigma = 0.12;
    corpus.base.occlusion_prob = 0.2;

    double mae = 0.0, ef_lo = 1e9, ef_hi = -1e9;
    const int n = 12;
    for (int i = 0; i < n; ++i) {
        ClipRecord rec = make_clip(corpus, 500, i);
        const EFReport rep = ef_from_masks(rec.ed_mask, rec.es_mask);
        mae += std::abs(rep.ef - rec.true_ef);
        ef_lo = std::min(ef_lo, rec.true_ef);
        ef_hi = std::max(ef_hi, rec.true_ef);
        CHECK(rec.frames.extent(0) == 10);
        CHECK(rec.frames.extent(2) == 64);
    }
    CHECK(mae / n <= 2.0);
    CHECK(ef_hi - ef_lo > 10.0);

    ClipRecord a = make_clip(corpus, 500, 4);
    ClipRecord b = make_clip(corpus, 500, 4);
    CHECK(a.frames.data() == b.frames.data());
    CHECK(a.clip_id == "clip_0004");
}

TEST_CASE("clip directory round trip") {
    SynthSpec spec;
    spec.size = 32;
    spec.a0 = 8.0;
    spec.b0 = 5.0;
    spec.ca = 0.7;
    spec.cb = 0.75;
    spec.center_r = spec.center_c = 16.0;
    spec.ring_px = 3.0;
    spec.sigma = 0.1;
    ClipRecord rec = generate(spec, 21);
    rec.clip_id = "clip_0042";

    const std::string dir =
        (std::filesystem::temp_directory_path() / "hssnet_clip_test").string();
    write_clip(dir, rec);
    ClipRecord back = read_clip(dir);

    CHECK(back.clip_id == rec.clip_id);
    CHECK(back.true_ef == doctest::Approx(rec.true_ef).epsilon(1e-9));
    REQUIRE(back.frames.shape() == rec.frames.shape());
    for (size_t i = 0; i < back.frames.data().size(); ++i) {
        CHECK(std::abs(back.frames.data()[i] - rec.frames.data()[i]) <= 0.5 / 255.0 + 1e-12);
    }
    CHECK(back.ed_mask.data() == rec.ed_mask.data());
    CHECK(back.es_mask.data() == rec.es_mask.data());

    CHECK_THROWS_AS((void)read_clip(dir + "_missing"), std::runtime_error);
    std::filesystem::remove_all(dir);
}
