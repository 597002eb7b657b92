#pragma once

// Ventricular volume estimation from binary masks: disk-summation volumes
// (single-plane and biplane) over a principal-axis slab decomposition, and
// the ejection fraction derived from an end-diastole/end-systole volume pair.

#include <vector>

#include "hssnet/tensor.hpp"

namespace hssnet {

// A location in pixel coordinates (row, column); fractional values allowed.
struct PixelPoint {
    double r = 0.0;
    double c = 0.0;
};

// Long-axis decomposition of a mask: the axis endpoints, its length, and one
// cross-sectional diameter per slab.  All quantities are in pixels.
struct LVGeometry {
    PixelPoint apex;                // axis endpoint at the low-projection end
    PixelPoint base;                // axis endpoint at the high-projection end
    double length = 0.0;            // extent along the principal axis
    std::vector<double> diameters;  // one chord estimate per slab
    bool multi_component = false;   // true when stray components were discarded
};

// Decomposes a binary [H,W] mask (thresholded at 0.5) into `n_disks` slabs
// along its principal second-moment axis.
//
// The long axis is the dominant eigenvector of the pixel second-moment
// matrix; length is the projected pixel-center extent plus one pixel.  The
// diameter of slab k is measured from a one-pixel-thick band centred on the
// slab midpoint: the perpendicular extent of the band's pixels plus one pixel
// (zero when the band is empty).  When the mask has several 4-connected
// components, the largest is used and multi_component is set.
//
// Throws std::invalid_argument for non-[H,W] input, an empty mask, a
// single-pixel component, or n_disks < 1.
LVGeometry extract_geometry(const Tensor& mask, int n_disks = 20);

// Disk-summation volume from one view: (pi/4) * (L/N) * sum(d_k^2), in cubic
// pixels.
double volume_single_plane(const LVGeometry& g);

// Disk-summation volume from two orthogonal views:
// (pi/4) * (L/N) * sum(a_k * b_k) with L the longer of the two axis lengths.
// The shorter view's diameter profile is resampled onto the longer view's
// slab midpoints by linear interpolation on absolute axis distance (clamped
// at the profile ends, zero beyond the shorter axis length).  Identical
// inputs reduce exactly to the single-plane volume.  Throws
// std::invalid_argument when the disk counts differ.
double volume_biplane(const LVGeometry& a, const LVGeometry& b);

// 100 * (edv - esv) / edv.  Throws std::invalid_argument when edv <= 0.
double ejection_fraction(double edv, double esv);

// One clip's volume/EF summary.
struct EFReport {
    double edv = 0.0;
    double esv = 0.0;
    double ef = 0.0;
};

// Convenience wrapper: geometry extraction + single-plane volumes + EF.
EFReport ef_from_masks(const Tensor& ed_mask, const Tensor& es_mask, int n_disks = 20);

// Biplane variant over two views per phase.
EFReport ef_from_masks_biplane(const Tensor& ed_a, const Tensor& ed_b, const Tensor& es_a,
                               const Tensor& es_b, int n_disks = 20);

}  // namespace hssnet
