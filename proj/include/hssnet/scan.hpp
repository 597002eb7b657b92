#pragma once

#include <string>
#include <vector>

#include "hssnet/tensor.hpp"

namespace hssnet::scan {

/// Traversal family over the flattened (frame, row, col) slot grid.
enum class Mode { Temporal, Spatial, Diagonal, AntiDiagonal };
enum class Direction { Forward, Backward };

/// Canonical slot layout for a clip of `t` frames over a `rows` x `cols`
/// patch grid: slot(t,r,c) = t*rows*cols + r*cols + c.
struct PatchGrid {
    int t = 1;
    int rows = 1;
    int cols = 1;

    i64 slots() const { return static_cast<i64>(t) * rows * cols; }
    i64 index(int ti, int r, int c) const {
        return (static_cast<i64>(ti) * rows + r) * cols + c;
    }
};

/// Returns the visit order: order[k] is the canonical slot index read at
/// step k. Every (mode, direction) pair is a bijection over g.slots().
///
///  - Temporal: frames outer, positions row-major inner.
///  - Spatial: positions row-major outer, frames inner.
///  - Diagonal: positions sorted by (row+col, row) outer, frames inner.
///  - AntiDiagonal: positions sorted by (row-col, row) outer, frames inner.
///  - Backward is the Forward sequence reversed.
std::vector<i64> make_order(Mode mode, Direction dir, const PatchGrid& g);

/// Inverse permutation: invert(p)[p[k]] == k.
std::vector<i64> invert(const std::vector<i64>& order);

/// Rearranges a [C, L] tensor so column k holds canonical slot order[k].
Tensor apply(const Tensor& x, const std::vector<i64>& order);

const char* mode_name(Mode m);
const char* direction_name(Direction d);
Mode mode_from_name(const std::string& s);          // throws on unknown
Direction direction_from_name(const std::string& s);  // throws on unknown

}  // namespace hssnet::scan
