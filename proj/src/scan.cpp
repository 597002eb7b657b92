#include "hssnet/scan.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace hssnet::scan {

namespace {

// Row-major position list, optionally re-sorted along (anti)diagonals.
// Ties inside one diagonal are broken by ascending row.
std::vector<std::pair<int, int>> position_order(Mode mode, int rows, int cols) {
    std::vector<std::pair<int, int>> pos;
    pos.reserve(static_cast<size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) pos.emplace_back(r, c);
    if (mode == Mode::Diagonal) {
        std::stable_sort(pos.begin(), pos.end(), [](const auto& a, const auto& b) {
            return a.first + a.second < b.first + b.second;
        });
    } else if (mode == Mode::AntiDiagonal) {
        std::stable_sort(pos.begin(), pos.end(), [](const auto& a, const auto& b) {
            return a.first - a.second < b.first - b.second;
        });
    }
    return pos;
}

}  // namespace

std::vector<i64> make_order(Mode mode, Direction dir, const PatchGrid& g) {
    if (g.t < 1 || g.rows < 1 || g.cols < 1) {
        throw std::invalid_argument("make_order: grid extents must be positive");
    }
    std::vector<i64> order;
    order.reserve(static_cast<size_t>(g.slots()));
    if (mode == Mode::Temporal) {
        for (int t = 0; t < g.t; ++t)
            for (int r = 0; r < g.rows; ++r)
                for (int c = 0; c < g.cols; ++c) order.push_back(g.index(t, r, c));
    } else {
        for (const auto& [r, c] : position_order(mode, g.rows, g.cols))
            for (int t = 0; t < g.t; ++t) order.push_back(g.index(t, r, c));
    }
    if (dir == Direction::Backward) std::reverse(order.begin(), order.end());
    return order;
}

std::vector<i64> invert(const std::vector<i64>& order) {
    std::vector<i64> inv(order.size(), -1);
    for (size_t k = 0; k < order.size(); ++k) {
        const i64 slot = order[k];
        if (slot < 0 || slot >= static_cast<i64>(order.size()) || inv[static_cast<size_t>(slot)] != -1) {
            throw std::invalid_argument("invert: input is not a permutation");
        }
        inv[static_cast<size_t>(slot)] = static_cast<i64>(k);
    }
    return inv;
}

Tensor apply(const Tensor& x, const std::vector<i64>& order) {
    return permute_cols(x, order);
}

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::Temporal: return "temporal";
        case Mode::Spatial: return "spatial";
        case Mode::Diagonal: return "diagonal";
        case Mode::AntiDiagonal: return "antidiagonal";
    }
    throw std::logic_error("mode_name: unreachable");
}

const char* direction_name(Direction d) {
    return d == Direction::Forward ? "forward" : "backward";
}

Mode mode_from_name(const std::string& s) {
    if (s == "temporal") return Mode::Temporal;
    if (s == "spatial") return Mode::Spatial;
    if (s == "diagonal") return Mode::Diagonal;
    if (s == "antidiagonal") return Mode::AntiDiagonal;
    throw std::invalid_argument("unknown scan mode: " + s);
}

Direction direction_from_name(const std::string& s) {
    if (s == "forward") return Direction::Forward;
    if (s == "backward") return Direction::Backward;
    throw std::invalid_argument("unknown scan direction: " + s);
}

}  // namespace hssnet::scan
