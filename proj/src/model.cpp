#include "hssnet/model.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace hssnet {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::array<int, 4> parse_int4(const std::string& value, const std::string& key) {
    const auto parts = split_csv(value);
    if (parts.size() != 4) throw std::invalid_argument("manifest: " + key + " needs 4 values");
    std::array<int, 4> out{};
    for (size_t i = 0; i < 4; ++i) out[i] = std::stoi(parts[i]);
    return out;
}

}  // namespace

void ModelConfig::validate() const {
    for (int i = 0; i < 4; ++i) {
        if (channels[static_cast<size_t>(i)] < 1) throw std::invalid_argument("config: channels must be positive");
        if (enc_blocks[static_cast<size_t>(i)] < 1 || dec_blocks[static_cast<size_t>(i)] < 1) {
            throw std::invalid_argument("config: block counts must be positive");
        }
    }
    for (int i = 0; i < 3; ++i) {
        if (channels[static_cast<size_t>(i + 1)] != 2 * channels[static_cast<size_t>(i)]) {
            throw std::invalid_argument("config: channels must double at each stage");
        }
    }
    if (ffn_ratio < 1 || conv_ratio < 1) throw std::invalid_argument("config: expansion ratios must be >= 1");
    if (d_state < 1) throw std::invalid_argument("config: d_state must be >= 1");
    const bool any_mamba = mamba_stage[0] || mamba_stage[1] || mamba_stage[2] || mamba_stage[3];
    if (any_mamba && modes.count() == 0) {
        throw std::invalid_argument("config: at least one scan mode required when mixing blocks are used");
    }
}

std::string ModelConfig::to_manifest() const {
    std::ostringstream os;
    os << "channels = " << channels[0] << "," << channels[1] << "," << channels[2] << "," << channels[3] << "\n";
    os << "enc_blocks = " << enc_blocks[0] << "," << enc_blocks[1] << "," << enc_blocks[2] << "," << enc_blocks[3] << "\n";
    os << "dec_blocks = " << dec_blocks[0] << "," << dec_blocks[1] << "," << dec_blocks[2] << "," << dec_blocks[3] << "\n";
    os << "ffn_ratio = " << ffn_ratio << "\n";
    os << "conv_ratio = " << conv_ratio << "\n";
    os << "d_state = " << d_state << "\n";
    os << "shared_scan = " << (shared_scan_params ? 1 : 0) << "\n";
    os << "modes = ";
    bool first = true;
    const scan::Mode all_modes[] = {scan::Mode::Temporal, scan::Mode::Spatial,
                                    scan::Mode::Diagonal, scan::Mode::AntiDiagonal};
    for (scan::Mode m : all_modes) {
        if (!modes.contains(m)) continue;
        if (!first) os << ",";
        os << scan::mode_name(m);
        first = false;
    }
    if (first) os << "none";
    os << "\n";
    os << "mamba_stages = ";
    first = true;
    for (int i = 0; i < 4; ++i) {
        if (!mamba_stage[static_cast<size_t>(i)]) continue;
        if (!first) os << ",";
        os << (i + 1);
        first = false;
    }
    if (first) os << "none";
    os << "\n";
    return os.str();
}

ModelConfig ModelConfig::from_manifest(const std::string& text) {
    ModelConfig cfg;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "channels") {
                cfg.channels = parse_int4(value, key);
            } else if (key == "enc_blocks") {
                cfg.enc_blocks = parse_int4(value, key);
            } else if (key == "dec_blocks") {
                cfg.dec_blocks = parse_int4(value, key);
            } else if (key == "ffn_ratio") {
                cfg.ffn_ratio = std::stoi(value);
            } else if (key == "conv_ratio") {
                cfg.conv_ratio = std::stoi(value);
            } else if (key == "d_state") {
                cfg.d_state = std::stoi(value);
            } else if (key == "shared_scan") {
                cfg.shared_scan_params = std::stoi(value) != 0;
            } else if (key == "modes") {
                cfg.modes = ModeSet{false, false, false, false};
                if (value != "none") {
                    for (const auto& name : split_csv(value)) {
                        switch (scan::mode_from_name(name)) {
                            case scan::Mode::Temporal: cfg.modes.temporal = true; break;
                            case scan::Mode::Spatial: cfg.modes.spatial = true; break;
                            case scan::Mode::Diagonal: cfg.modes.diagonal = true; break;
                            case scan::Mode::AntiDiagonal: cfg.modes.antidiagonal = true; break;
                        }
                    }
                }
            } else if (key == "mamba_stages") {
                cfg.mamba_stage = {false, false, false, false};
                if (value != "none") {
                    for (const auto& s : split_csv(value)) {
                        const int stage = std::stoi(s);
                        if (stage < 1 || stage > 4) {
                            throw std::invalid_argument("manifest: stage out of range");
                        }
                        cfg.mamba_stage[static_cast<size_t>(stage - 1)] = true;
                    }
                }
            }
        } catch (const std::invalid_argument&) {
            throw;
        } catch (const std::exception&) {
            throw std::invalid_argument("manifest: malformed value for key '" + key + "'");
        }
    }
    return cfg;
}

namespace {

Block make_block(const ModelConfig& cfg, int stage_idx, std::mt19937_64& rng) {
    const int C = cfg.channels[static_cast<size_t>(stage_idx)];
    if (cfg.mamba_stage[static_cast<size_t>(stage_idx)]) {
        return STMambaBlock::init(C, cfg.d_state, cfg.ffn_ratio, cfg.shared_scan_params, rng);
    }
    return SepConvBlock::init(C, cfg.conv_ratio, cfg.ffn_ratio, rng);
}

Tensor run_block(const Block& blk, const Tensor& x, const ModeSet& modes) {
    return std::visit(
        [&](const auto& b) -> Tensor {
            using T = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<T, STMambaBlock>) {
                return b.forward(x, modes);
            } else {
                return b.forward(x);
            }
        },
        blk);
}

void check_stage_shape(const StageFeature& f, i64 full_h, i64 full_w) {
    const i64 denom = i64{1} << (f.stage + 1);
    if (f.data.extent(2) != full_h / denom || f.data.extent(3) != full_w / denom) {
        throw std::runtime_error("stage feature violates the spatial halving law");
    }
}

void append_named(std::vector<std::pair<std::string, Tensor>>& out,
                  std::unordered_set<const Node*>& seen, const std::string& name,
                  const Tensor& t) {
    if (seen.insert(t.node().get()).second) out.emplace_back(name, t);
}

void append_ln(std::vector<std::pair<std::string, Tensor>>& out,
               std::unordered_set<const Node*>& seen, const std::string& prefix,
               const LayerNormParams& ln) {
    append_named(out, seen, prefix + ".gamma", ln.gamma);
    append_named(out, seen, prefix + ".beta", ln.beta);
}

void append_ffn(std::vector<std::pair<std::string, Tensor>>& out,
                std::unordered_set<const Node*>& seen, const std::string& prefix,
                const FFN& ffn) {
    append_named(out, seen, prefix + ".W1", ffn.W1);
    append_named(out, seen, prefix + ".b1", ffn.b1);
    append_named(out, seen, prefix + ".W2", ffn.W2);
    append_named(out, seen, prefix + ".b2", ffn.b2);
}

void append_block(std::vector<std::pair<std::string, Tensor>>& out,
                  std::unordered_set<const Node*>& seen, const std::string& prefix,
                  const Block& blk) {
    if (const auto* conv = std::get_if<SepConvBlock>(&blk)) {
        append_ln(out, seen, prefix + ".norm1", conv->norm1);
        append_named(out, seen, prefix + ".expand_k", conv->expand_k);
        append_named(out, seen, prefix + ".expand_b", conv->expand_b);
        append_named(out, seen, prefix + ".dw_k", conv->dw_k);
        append_named(out, seen, prefix + ".dw_b", conv->dw_b);
        append_named(out, seen, prefix + ".project_k", conv->project_k);
        append_named(out, seen, prefix + ".project_b", conv->project_b);
        append_ln(out, seen, prefix + ".norm2", conv->norm2);
        append_ffn(out, seen, prefix + ".ffn", conv->ffn);
    } else {
        const auto& mamba = std::get<STMambaBlock>(blk);
        append_ln(out, seen, prefix + ".norm1", mamba.norm1);
        for (size_t s = 0; s < mamba.stcs.size(); ++s) {
            const std::string dp = prefix + ".dir" + std::to_string(s);
            const SSMParams& p = mamba.stcs[s];
            append_named(out, seen, dp + ".A_log", p.A_log);
            append_named(out, seen, dp + ".D", p.D);
            append_named(out, seen, dp + ".W_delta_down", p.W_delta_down);
            append_named(out, seen, dp + ".W_delta_up", p.W_delta_up);
            append_named(out, seen, dp + ".delta_bias", p.delta_bias);
            append_named(out, seen, dp + ".W_B", p.W_B);
            append_named(out, seen, dp + ".W_C", p.W_C);
        }
        append_ln(out, seen, prefix + ".norm2", mamba.norm2);
        append_ffn(out, seen, prefix + ".ffn", mamba.ffn);
    }
}

}  // namespace

HSSNet HSSNet::init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    HSSNet net;
    net.cfg_ = cfg;
    std::mt19937_64 rng(seed);

    net.embed_ = PatchEmbed::init(cfg.channels[0], rng);
    for (int i = 0; i < 4; ++i) {
        for (int b = 0; b < cfg.enc_blocks[static_cast<size_t>(i)]; ++b) {
            net.enc_[static_cast<size_t>(i)].push_back(make_block(cfg, i, rng));
        }
        if (i < 3) net.down_[static_cast<size_t>(i)] = Downsample::init(cfg.channels[static_cast<size_t>(i)], rng);
    }
    for (int i = 3; i >= 0; --i) {
        for (int b = 0; b < cfg.dec_blocks[static_cast<size_t>(i)]; ++b) {
            net.dec_[static_cast<size_t>(i)].push_back(make_block(cfg, i, rng));
        }
        if (i > 0) {
            const int C = cfg.channels[static_cast<size_t>(i)];
            const int Cout = cfg.channels[static_cast<size_t>(i - 1)];
            net.up_[static_cast<size_t>(i - 1)] = Upsample::init(C, rng);
            net.fuse_k_[static_cast<size_t>(i - 1)] =
                detail::conv_kernel_init({Cout, Cout, 1, 1}, Cout, rng);
            net.fuse_b_[static_cast<size_t>(i - 1)] = Tensor::zeros({Cout}, true);
        }
    }
    net.head_k_ = detail::conv_kernel_init({1, cfg.channels[0], 1, 1}, cfg.channels[0], rng);
    net.head_b_ = Tensor::zeros({1}, true);
    return net;
}

Tensor HSSNet::forward(const Tensor& clip, std::array<StageFeature, 4>* stages) const {
    if (clip.rank() != 4 || clip.extent(1) != 1) {
        throw std::invalid_argument("HSSNet::forward: [T, 1, H, W] clip required");
    }
    const i64 H = clip.extent(2), W = clip.extent(3);

    // Encoder: collect per-stage features for the skip connections.
    std::array<StageFeature, 4> skips;
    Tensor x = embed_.forward(clip);
    for (int i = 0; i < 4; ++i) {
        for (const Block& blk : enc_[static_cast<size_t>(i)]) x = run_block(blk, x, cfg_.modes);
        skips[static_cast<size_t>(i)] = StageFeature{x, i + 1};
        check_stage_shape(skips[static_cast<size_t>(i)], H, W);
        if (i < 3) x = down_[static_cast<size_t>(i)].forward(x);
    }
    if (stages) *stages = skips;

    // Decoder: bottleneck blocks, then repeatedly upsample, fuse the
    // projected encoder skip by addition, and run the stage's blocks.
    for (const Block& blk : dec_[3]) x = run_block(blk, x, cfg_.modes);
    for (int i = 2; i >= 0; --i) {
        x = up_[static_cast<size_t>(i)].forward(x);
        Tensor skip = conv2d(skips[static_cast<size_t>(i)].data, fuse_k_[static_cast<size_t>(i)],
                             fuse_b_[static_cast<size_t>(i)], 1, 0, 1);
        x = add(x, skip);
        for (const Block& blk : dec_[static_cast<size_t>(i)]) x = run_block(blk, x, cfg_.modes);
        check_stage_shape(StageFeature{x, i + 1}, H, W);
    }

    return conv2d(upsample_nearest(x, 4), head_k_, head_b_, 1, 0, 1);
}

std::vector<std::pair<std::string, Tensor>> HSSNet::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    std::unordered_set<const Node*> seen;
    append_named(out, seen, "embed.k", embed_.k);
    append_named(out, seen, "embed.b", embed_.b);
    for (int i = 0; i < 4; ++i) {
        const auto& stage = enc_[static_cast<size_t>(i)];
        for (size_t b = 0; b < stage.size(); ++b) {
            append_block(out, seen, "enc" + std::to_string(i + 1) + ".block" + std::to_string(b), stage[b]);
        }
        if (i < 3) {
            append_named(out, seen, "down" + std::to_string(i + 1) + ".k", down_[static_cast<size_t>(i)].k);
            append_named(out, seen, "down" + std::to_string(i + 1) + ".b", down_[static_cast<size_t>(i)].b);
        }
    }
    for (int i = 3; i >= 0; --i) {
        const auto& stage = dec_[static_cast<size_t>(i)];
        for (size_t b = 0; b < stage.size(); ++b) {
            append_block(out, seen, "dec" + std::to_string(i + 1) + ".block" + std::to_string(b), stage[b]);
        }
        if (i > 0) {
            const std::string t = std::to_string(i);
            append_named(out, seen, "up" + t + ".k", up_[static_cast<size_t>(i - 1)].k);
            append_named(out, seen, "up" + t + ".b", up_[static_cast<size_t>(i - 1)].b);
            append_named(out, seen, "fuse" + t + ".k", fuse_k_[static_cast<size_t>(i - 1)]);
            append_named(out, seen, "fuse" + t + ".b", fuse_b_[static_cast<size_t>(i - 1)]);
        }
    }
    append_named(out, seen, "head.k", head_k_);
    append_named(out, seen, "head.b", head_b_);
    return out;
}

void write_checkpoint(std::ostream& os, const std::string& manifest,
                      const std::vector<std::pair<std::string, Tensor>>& tensors) {
    os.write("HSSCKPT1", 8);
    const std::uint64_t mlen = manifest.size();
    os.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    os.write(manifest.data(), static_cast<std::streamsize>(mlen));
    const std::uint32_t count = static_cast<std::uint32_t>(tensors.size());
    os.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto& [name, tensor] : tensors) {
        const std::uint32_t nlen = static_cast<std::uint32_t>(name.size());
        os.write(reinterpret_cast<const char*>(&nlen), sizeof(nlen));
        os.write(name.data(), nlen);
        write_tensor(os, tensor);
    }
    if (!os) throw std::runtime_error("write_checkpoint: stream failure");
}

Checkpoint read_checkpoint(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "HSSCKPT1", 8) != 0) {
        throw std::runtime_error("read_checkpoint: bad magic");
    }
    std::uint64_t mlen = 0;
    is.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    if (!is || mlen > (1ull << 24)) throw std::runtime_error("read_checkpoint: bad manifest length");
    Checkpoint ck;
    ck.manifest.resize(mlen);
    is.read(ck.manifest.data(), static_cast<std::streamsize>(mlen));
    std::uint32_t count = 0;
    is.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!is || count > (1u << 20)) throw std::runtime_error("read_checkpoint: bad tensor count");
    ck.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t nlen = 0;
        is.read(reinterpret_cast<char*>(&nlen), sizeof(nlen));
        if (!is || nlen > 4096) throw std::runtime_error("read_checkpoint: bad name length");
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        if (!is) throw std::runtime_error("read_checkpoint: truncated name");
        ck.tensors.emplace_back(std::move(name), read_tensor(is));
    }
    return ck;
}

void HSSNet::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save: cannot open " + path);
    write_checkpoint(os, cfg_.to_manifest(), named_parameters());
}

HSSNet HSSNet::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load: cannot open " + path);
    Checkpoint ck = read_checkpoint(is);
    HSSNet net = init(ModelConfig::from_manifest(ck.manifest), 0);

    std::unordered_map<std::string, const Tensor*> stored;
    for (const auto& [name, tensor] : ck.tensors) stored[name] = &tensor;
    for (auto& [name, param] : net.named_parameters()) {
        const auto it = stored.find(name);
        if (it == stored.end()) throw std::runtime_error("load: checkpoint is missing tensor " + name);
        if (it->second->shape() != param.shape()) {
            throw std::runtime_error("load: shape mismatch for tensor " + name);
        }
        param.mutable_data() = it->second->data();
    }
    return net;
}

}  // namespace hssnet
