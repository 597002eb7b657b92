#include "doctest.h"
#include "hssnet/model.hpp"

#include <cstdio>
#include <random>
#include <set>
#include <sstream>

using namespace hssnet;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.channels = {4, 8, 16, 32};
    cfg.enc_blocks = {1, 1, 1, 1};
    cfg.dec_blocks = {1, 1, 1, 1};
    cfg.ffn_ratio = 2;
    cfg.conv_ratio = 2;
    cfg.d_state = 2;
    return cfg;
}

Tensor random_clip(i64 t, i64 h, i64 w, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(static_cast<size_t>(t * h * w));
    for (auto& x : v) x = dist(rng);
    return Tensor::from({t, 1, h, w}, std::move(v));
}

}  // namespace

TEST_CASE("stage features follow the halving law and the head restores resolution") {
    std::mt19937_64 rng(61);
    HSSNet net = HSSNet::init(tiny_config(), 7);
    Tensor clip = random_clip(3, 64, 64, rng);
    NoGradGuard ng;
    std::array<StageFeature, 4> stages;
    Tensor out = net.forward(clip, &stages);
    CHECK(out.shape() == std::vector<i64>{3, 1, 64, 64});
    const i64 expected_hw[4] = {16, 8, 4, 2};
    const i64 expected_c[4] = {4, 8, 16, 32};
    for (int i = 0; i < 4; ++i) {
        CHECK(stages[static_cast<size_t>(i)].stage == i + 1);
        const Tensor& f = stages[static_cast<size_t>(i)].data;
        CHECK(f.extent(0) == 3);
        CHECK(f.extent(1) == expected_c[i]);
        CHECK(f.extent(2) == expected_hw[i]);
        CHECK(f.extent(3) == expected_hw[i]);
    }
}

TEST_CASE("initialization is deterministic in the seed") {
    HSSNet a = HSSNet::init(tiny_config(), 123);
    HSSNet b = HSSNet::init(tiny_config(), 123);
    HSSNet c = HSSNet::init(tiny_config(), 124);
    auto pa = a.named_parameters(), pb = b.named_parameters(), pc = c.named_parameters();
    REQUIRE(pa.size() == pb.size());
    bool any_differs = false;
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        CHECK(pa[i].second.data() == pb[i].second.data());
        if (pa[i].second.data() != pc[i].second.data()) any_differs = true;
    }
    CHECK(any_differs);
}

TEST_CASE("named parameters are unique and deduplicate shared scan directions") {
    ModelConfig cfg = tiny_config();
    HSSNet net = HSSNet::init(cfg, 1);
    auto params = net.named_parameters();
    std::set<std::string> names;
    std::set<const Node*> nodes;
    for (const auto& [name, t] : params) {
        CHECK(names.insert(name).second);
        CHECK(nodes.insert(t.node().get()).second);
        CHECK(t.requires_grad());
    }

    ModelConfig shared_cfg = cfg;
    shared_cfg.shared_scan_params = true;
    HSSNet shared_net = HSSNet::init(shared_cfg, 1);
    CHECK(shared_net.named_parameters().size() < params.size());
}

TEST_CASE("gradients reach the parameters") {
    std::mt19937_64 rng(62);
    HSSNet net = HSSNet::init(tiny_config(), 3);
    Tensor clip = random_clip(2, 32, 32, rng);
    Tensor loss = mean_all(net.forward(clip));
    loss.backward();
    double head_grad = 0.0, embed_grad = 0.0;
    for (const auto& [name, t] : net.named_parameters()) {
        double mag = 0.0;
        for (double g : t.grad()) mag = std::max(mag, std::abs(g));
        if (name == "head.k") head_grad = mag;
        if (name == "embed.k") embed_grad = mag;
    }
    CHECK(head_grad > 0.0);
    CHECK(embed_grad > 0.0);
}

TEST_CASE("checkpoint round trip preserves parameters and behavior") {
    std::mt19937_64 rng(63);
    HSSNet net = HSSNet::init(tiny_config(), 11);
    Tensor clip = random_clip(2, 32, 32, rng);
    NoGradGuard ng;
    Tensor before = net.forward(clip);

    const std::string path = "model_roundtrip.ckpt";
    net.save(path);
    HSSNet loaded = HSSNet::load(path);
    std::remove(path.c_str());

    auto pa = net.named_parameters(), pb = loaded.named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        CHECK(pa[i].second.data() == pb[i].second.data());
    }
    Tensor after = loaded.forward(clip);
    CHECK(before.data() == after.data());
}

TEST_CASE("checkpoint reader rejects malformed input") {
    std::stringstream ss("NOTACKPT");
    CHECK_THROWS_AS(read_checkpoint(ss), std::runtime_error);

    std::stringstream ok;
    write_checkpoint(ok, "k = v\n", {{"w", Tensor::from({2}, {1.0, 2.0})}});
    Checkpoint ck = read_checkpoint(ok);
    CHECK(ck.manifest == "k = v\n");
    REQUIRE(ck.tensors.size() == 1);
    CHECK(ck.tensors[0].first == "w");
    CHECK(ck.tensors[0].second.data() == std::vector<double>{1.0, 2.0});
}

TEST_CASE("manifest round trips the configuration") {
    ModelConfig cfg = tiny_config();
    cfg.modes = ModeSet{true, false, true, false};
    cfg.mamba_stage = {false, true, true, true};
    cfg.shared_scan_params = true;
    ModelConfig back = ModelConfig::from_manifest(cfg.to_manifest());
    CHECK(back.channels == cfg.channels);
    CHECK(back.enc_blocks == cfg.enc_blocks);
    CHECK(back.dec_blocks == cfg.dec_blocks);
    CHECK(back.ffn_ratio == cfg.ffn_ratio);
    CHECK(back.conv_ratio == cfg.conv_ratio);
    CHECK(back.d_state == cfg.d_state);
    CHECK(back.shared_scan_params == cfg.shared_scan_params);
    CHECK(back.modes.temporal == cfg.modes.temporal);
    CHECK(back.modes.spatial == cfg.modes.spatial);
    CHECK(back.modes.diagonal == cfg.modes.diagonal);
    CHECK(back.modes.antidiagonal == cfg.modes.antidiagonal);
    CHECK(back.mamba_stage == cfg.mamba_stage);

    // unknown keys are tolerated, malformed known keys are not
    ModelConfig with_extra = ModelConfig::from_manifest("epoch = 12\nchannels = 4,8,16,32\n");
    CHECK(with_extra.channels[0] == 4);
    CHECK_THROWS_AS(ModelConfig::from_manifest("channels = 4,8\n"), std::invalid_argument);
    CHECK_THROWS_AS(ModelConfig::from_manifest("ffn_ratio = abc\n"), std::invalid_argument);
}

TEST_CASE("configuration validation") {
    ModelConfig bad = tiny_config();
    bad.channels = {4, 9, 16, 32};
    CHECK_THROWS_AS(HSSNet::init(bad, 0), std::invalid_argument);

    ModelConfig no_modes = tiny_config();
    no_modes.modes = ModeSet{false, false, false, false};
    CHECK_THROWS_AS(HSSNet::init(no_modes, 0), std::invalid_argument);

    // ...but an all-conv network does not need scan modes at all
    no_modes.mamba_stage = {false, false, false, false};
    HSSNet conv_net = HSSNet::init(no_modes, 0);
    std::mt19937_64 rng(64);
    NoGradGuard ng;
    CHECK(conv_net.forward(random_clip(2, 32, 32, rng)).shape() == std::vector<i64>{2, 1, 32, 32});
}

TEST_CASE("all-mixing configuration runs end to end") {
    ModelConfig cfg = tiny_config();
    cfg.mamba_stage = {true, true, true, true};
    HSSNet net = HSSNet::init(cfg, 5);
    std::mt19937_64 rng(65);
    NoGradGuard ng;
    CHECK(net.forward(random_clip(2, 32, 32, rng)).shape() == std::vector<i64>{2, 1, 32, 32});
}
