#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "hssnet/blocks.hpp"

namespace hssnet {

/// Architecture description. Channels double stage to stage; stages whose
/// `mamba_stage` flag is set use spatio-temporal mixing blocks, the others
/// per-frame separable-convolution blocks (default: conv at 1-2, mixing at
/// 3-4). The decoder mirrors the encoder's block types and counts per stage.
struct ModelConfig {
    std::array<int, 4> channels = {32, 64, 128, 256};
    std::array<int, 4> enc_blocks = {2, 2, 4, 2};
    std::array<int, 4> dec_blocks = {1, 1, 2, 1};
    int ffn_ratio = 4;
    int conv_ratio = 4;
    int d_state = 8;
    bool shared_scan_params = false;
    ModeSet modes;
    std::array<bool, 4> mamba_stage = {false, false, true, true};

    void validate() const;  // throws std::invalid_argument
    std::string to_manifest() const;
    /// Parses `key = value` lines; unknown keys are ignored so callers can
    /// embed extra state in the same manifest.
    static ModelConfig from_manifest(const std::string& text);
};

/// Feature map plus its stage index; the spatial extents of stage i must be
/// the input's divided by 2^(i+1).
struct StageFeature {
    Tensor data;  // [T, C_i, H_i, W_i]
    int stage = 1;
};

using Block = std::variant<SepConvBlock, STMambaBlock>;

/// Hierarchical encoder-decoder for clip segmentation: patch embedding,
/// four encoder stages with downsampling, a mirrored decoder with
/// upsampling and projected-addition skip fusion, and a full-resolution
/// single-channel head producing logits.
class HSSNet {
public:
    static HSSNet init(const ModelConfig& cfg, std::uint64_t seed);

    /// [T, 1, H, W] clip -> [T, 1, H, W] segmentation logits. When `stages`
    /// is given it receives the four encoder stage features.
    Tensor forward(const Tensor& clip, std::array<StageFeature, 4>* stages = nullptr) const;

    /// Unique trainable leaves with hierarchical names, in a deterministic
    /// order. Aliased direction parameters appear once.
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;

    const ModelConfig& config() const { return cfg_; }

    void save(const std::string& path) const;
    static HSSNet load(const std::string& path);

private:
    HSSNet() = default;

    ModelConfig cfg_;
    PatchEmbed embed_;
    std::array<std::vector<Block>, 4> enc_;
    std::array<Downsample, 3> down_;   // stage i -> i+1
    std::array<Upsample, 3> up_;       // stage i+1 -> i
    std::array<Tensor, 3> fuse_k_;     // 1x1 projection of the encoder skip
    std::array<Tensor, 3> fuse_b_;
    std::array<std::vector<Block>, 4> dec_;
    Tensor head_k_;  // [1, C1, 1, 1]
    Tensor head_b_;  // [1]
};

/// Checkpoint container: a text manifest followed by named tensors.
struct Checkpoint {
    std::string manifest;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_checkpoint(std::ostream& os, const std::string& manifest,
                      const std::vector<std::pair<std::string, Tensor>>& tensors);
Checkpoint read_checkpoint(std::istream& is);

}  // namespace hssnet
