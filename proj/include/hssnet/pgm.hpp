#pragma once

// Binary (P5) PGM image I/O for [H,W] tensors with values in [0,1].

#include <string>

#include "hssnet/tensor.hpp"

namespace hssnet {

// Writes an [H,W] tensor as an 8-bit binary PGM (maxval 255); values are
// clamped to [0,1] and rounded.  Throws std::invalid_argument for non-2D
// input and std::runtime_error on I/O failure.
void write_pgm(const std::string& path, const Tensor& img);

// Reads a binary PGM into an [H,W] tensor scaled to [0,1].  Accepts comment
// lines and any maxval up to 255.  Throws std::runtime_error on missing
// files, bad headers, or truncated pixel data.
Tensor read_pgm(const std::string& path);

}  // namespace hssnet
