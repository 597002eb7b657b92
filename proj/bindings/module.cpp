// Python bindings: model inference, scan orders, metrics, EF geometry,
// synthetic clips, and PGM I/O.  Training stays on the C++ side (CLI).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <string>
#include <vector>

#include "hssnet/ef.hpp"
#include "hssnet/losses.hpp"
#include "hssnet/model.hpp"
#include "hssnet/pgm.hpp"
#include "hssnet/scan.hpp"
#include "hssnet/synth.hpp"
#include "hssnet/tensor.hpp"

namespace py = pybind11;
using namespace hssnet;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor from_array(const DoubleArray& a) {
    std::vector<i64> shape(static_cast<std::size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<std::size_t>(i)] = a.shape(i);
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor::from(std::move(shape), std::move(data));
}

py::array_t<double> to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

ModelConfig config_from_kwargs(const std::array<int, 4>& channels,
                               const std::array<int, 4>& enc_blocks,
                               const std::array<int, 4>& dec_blocks, int ffn_ratio, int conv_ratio,
                               int d_state, bool shared_scan,
                               const std::vector<std::string>& modes,
                               const std::vector<int>& mamba_stages) {
    ModelConfig cfg;
    cfg.channels = channels;
    cfg.enc_blocks = enc_blocks;
    cfg.dec_blocks = dec_blocks;
    cfg.ffn_ratio = ffn_ratio;
    cfg.conv_ratio = conv_ratio;
    cfg.d_state = d_state;
    cfg.shared_scan_params = shared_scan;
    cfg.modes = ModeSet{false, false, false, false};
    for (const auto& name : modes) {
        switch (scan::mode_from_name(name)) {
            case scan::Mode::Temporal: cfg.modes.temporal = true; break;
            case scan::Mode::Spatial: cfg.modes.spatial = true; break;
            case scan::Mode::Diagonal: cfg.modes.diagonal = true; break;
            case scan::Mode::AntiDiagonal: cfg.modes.antidiagonal = true; break;
        }
    }
    cfg.mamba_stage = {false, false, false, false};
    for (int s : mamba_stages) {
        if (s < 1 || s > 4) throw std::invalid_argument("mamba_stages entries must be 1..4");
        cfg.mamba_stage[static_cast<std::size_t>(s - 1)] = true;
    }
    cfg.validate();
    return cfg;
}

py::dict report_to_dict(const EFReport& r) {
    py::dict d;
    d["edv"] = r.edv;
    d["esv"] = r.esv;
    d["ef"] = r.ef;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "hierarchical spatio-temporal segmentation and EF estimation core";

    m.def(
        "scan_order",
        [](const std::string& mode, int t, int rows, int cols, const std::string& direction) {
            const scan::Mode mo = scan::mode_from_name(mode);
            scan::Direction dir;
            if (direction == "forward") {
                dir = scan::Direction::Forward;
            } else if (direction == "backward") {
                dir = scan::Direction::Backward;
            } else {
                throw std::invalid_argument("direction must be 'forward' or 'backward'");
            }
            return scan::make_order(mo, dir, scan::PatchGrid{t, rows, cols});
        },
        py::arg("mode"), py::arg("t"), py::arg("rows"), py::arg("cols"),
        py::arg("direction") = "forward",
        "Visit order over the flattened (frame, row, col) grid.");

    m.def(
        "dice", [](const DoubleArray& pred, const DoubleArray& target) {
            return dice_metric(from_array(pred), from_array(target));
        },
        py::arg("pred"), py::arg("target"),
        "Dice overlap of two masks (thresholded at 0.5).");

    m.def(
        "hd95",
        [](const DoubleArray& pred, const DoubleArray& target) {
            return hd95(from_array(pred), from_array(target));
        },
        py::arg("pred"), py::arg("target"),
        "95th-percentile symmetric boundary distance in pixels.");

    m.def(
        "total_loss",
        [](const DoubleArray& probs, const DoubleArray& target, double alpha) {
            return total_loss(from_array(probs), from_array(target), alpha).data()[0];
        },
        py::arg("probs"), py::arg("target"), py::arg("alpha") = 0.8,
        "Blended dice/cross-entropy objective value.");

    m.def(
        "ef_stats",
        [](const std::vector<double>& pred, const std::vector<double>& truth) {
            const EFStats s = ef_stats(pred, truth);
            py::dict d;
            d["corr"] = s.corr;
            d["bias"] = s.bias;
            d["std"] = s.std_dev;
            d["corr_defined"] = s.corr_defined;
            return d;
        },
        py::arg("pred"), py::arg("truth"),
        "Pearson correlation, mean bias, and error spread of paired EF lists.");

    m.def(
        "ef_from_masks",
        [](const DoubleArray& ed, const DoubleArray& es, int n_disks) {
            return report_to_dict(ef_from_masks(from_array(ed), from_array(es), n_disks));
        },
        py::arg("ed"), py::arg("es"), py::arg("n_disks") = 20,
        "Single-plane disk-method volumes and ejection fraction.");

    m.def(
        "ef_from_masks_biplane",
        [](const DoubleArray& ed_a, const DoubleArray& ed_b, const DoubleArray& es_a,
           const DoubleArray& es_b, int n_disks) {
            return report_to_dict(ef_from_masks_biplane(from_array(ed_a), from_array(ed_b),
                                                        from_array(es_a), from_array(es_b),
                                                        n_disks));
        },
        py::arg("ed_a"), py::arg("ed_b"), py::arg("es_a"), py::arg("es_b"),
        py::arg("n_disks") = 20, "Biplane disk-method volumes and ejection fraction.");

    m.def(
        "extract_geometry",
        [](const DoubleArray& mask, int n_disks) {
            const LVGeometry g = extract_geometry(from_array(mask), n_disks);
            py::dict d;
            d["apex"] = py::make_tuple(g.apex.r, g.apex.c);
            d["base"] = py::make_tuple(g.base.r, g.base.c);
            d["length"] = g.length;
            d["diameters"] = g.diameters;
            d["multi_component"] = g.multi_component;
            return d;
        },
        py::arg("mask"), py::arg("n_disks") = 20,
        "Long axis, length, and per-slab diameters of a cavity mask.");

    m.def(
        "synth_clip",
        [](int size, int frames, double a0, double b0, double ca, double cb, double center_r,
           double center_c, double tilt_deg, double ring_px, double sigma, double occlusion_prob,
           std::uint64_t seed) {
            SynthSpec spec;
            spec.size = size;
            spec.frames = frames;
            spec.a0 = a0;
            spec.b0 = b0;
            spec.ca = ca;
            spec.cb = cb;
            spec.center_r = center_r < 0 ? size / 2.0 : center_r;
            spec.center_c = center_c < 0 ? size / 2.0 : center_c;
            spec.tilt_deg = tilt_deg;
            spec.ring_px = ring_px;
            spec.sigma = sigma;
            spec.occlusion_prob = occlusion_prob;
            const ClipRecord rec = generate(spec, seed);
            py::dict d;
            d["frames"] = to_array(rec.frames);
            d["ed_mask"] = to_array(rec.ed_mask);
            d["es_mask"] = to_array(rec.es_mask);
            d["true_ef"] = rec.true_ef;
            d["clip_id"] = rec.clip_id;
            return d;
        },
        py::arg("size") = 64, py::arg("frames") = 10, py::arg("a0") = 20.0, py::arg("b0") = 13.0,
        py::arg("ca") = 0.75, py::arg("cb") = 0.8, py::arg("center_r") = -1.0,
        py::arg("center_c") = -1.0, py::arg("tilt_deg") = 0.0, py::arg("ring_px") = 5.0,
        py::arg("sigma") = 0.1, py::arg("occlusion_prob") = 0.0, py::arg("seed") = 0,
        "Render one synthetic beating-cavity clip with masks and reference EF.");

    m.def(
        "read_pgm", [](const std::string& path) { return to_array(read_pgm(path)); },
        py::arg("path"), "Read an 8-bit PGM image into a [H,W] array scaled to [0,1].");
    m.def(
        "write_pgm",
        [](const std::string& path, const DoubleArray& img) { write_pgm(path, from_array(img)); },
        py::arg("path"), py::arg("img"), "Write a [H,W] array in [0,1] as an 8-bit PGM.");

    py::class_<HSSNet>(m, "Model", "Hierarchical clip-segmentation network (inference only).")
        .def(py::init([](const std::array<int, 4>& channels, const std::array<int, 4>& enc_blocks,
                         const std::array<int, 4>& dec_blocks, int ffn_ratio, int conv_ratio,
                         int d_state, bool shared_scan, const std::vector<std::string>& modes,
                         const std::vector<int>& mamba_stages, std::uint64_t seed) {
                 return HSSNet::init(config_from_kwargs(channels, enc_blocks, dec_blocks,
                                                        ffn_ratio, conv_ratio, d_state,
                                                        shared_scan, modes, mamba_stages),
                                     seed);
             }),
             py::arg("channels") = std::array<int, 4>{32, 64, 128, 256},
             py::arg("enc_blocks") = std::array<int, 4>{2, 2, 4, 2},
             py::arg("dec_blocks") = std::array<int, 4>{1, 1, 2, 1},
             py::arg("ffn_ratio") = 4, py::arg("conv_ratio") = 4, py::arg("d_state") = 8,
             py::arg("shared_scan") = false,
             py::arg("modes") =
                 std::vector<std::string>{"temporal", "spatial", "diagonal", "antidiagonal"},
             py::arg("mamba_stages") = std::vector<int>{3, 4}, py::arg("seed") = 0)
        .def(
            "forward",
            [](const HSSNet& net, const DoubleArray& clip) {
                NoGradGuard guard;
                return to_array(net.forward(from_array(clip)));
            },
            py::arg("clip"), "[T,1,H,W] clip -> [T,1,H,W] segmentation logits.")
        .def(
            "stage_shapes",
            [](const HSSNet& net, const DoubleArray& clip) {
                NoGradGuard guard;
                std::array<StageFeature, 4> stages;
                net.forward(from_array(clip), &stages);
                std::vector<std::vector<i64>> shapes;
                for (const auto& s : stages) shapes.push_back(s.data.shape());
                return shapes;
            },
            py::arg("clip"), "Encoder stage-feature shapes for a clip.")
        .def("save", &HSSNet::save, py::arg("path"))
        .def_static("load", &HSSNet::load, py::arg("path"))
        .def_property_readonly(
            "manifest", [](const HSSNet& net) { return net.config().to_manifest(); },
            "Architecture description as key = value text.")
        .def_property_readonly("n_parameters", [](const HSSNet& net) {
            i64 n = 0;
            for (const auto& [name, p] : net.named_parameters()) n += p.numel();
            return n;
        });
}
