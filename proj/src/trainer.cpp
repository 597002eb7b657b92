#include "hssnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "hssnet/ef.hpp"

namespace fs = std::filesystem;

namespace hssnet {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double to_f64(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' has non-numeric value '" + value + "'");
    }
    if (pos != value.size()) {
        throw ConfigError("config: key '" + key + "' has trailing junk in '" + value + "'");
    }
    return v;
}

i64 to_i64(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(value, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' has non-integer value '" + value + "'");
    }
    if (pos != value.size()) {
        throw ConfigError("config: key '" + key + "' has trailing junk in '" + value + "'");
    }
    return static_cast<i64>(v);
}

bool to_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: key '" + key + "' expects true/false, got '" + value + "'");
}

// splitmix64 finalizer; the basis for all stateless per-event seeds so that
// resumed runs replay the exact shuffles and augmentations.
std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t epoch_seed(std::uint64_t base, i64 epoch) {
    return mix64(base ^ mix64(static_cast<std::uint64_t>(epoch) + 1));
}

std::uint64_t augment_seed(std::uint64_t base, i64 epoch, i64 clip_index) {
    return mix64(mix64(base + 0x5157ull) ^
                 ((static_cast<std::uint64_t>(epoch) << 32) | static_cast<std::uint64_t>(clip_index)));
}

std::string fmt_g(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

// Dice/BCE objective averaged over the two annotated frames of one clip.
Tensor clip_loss(const HSSNet& model, const ClipRecord& rec, double alpha) {
    const Tensor logits = model.forward(rec.frames);
    const auto& sh = logits.shape();
    const i64 t = sh[0], h = sh[2], w = sh[3];
    const Tensor ed = sigmoid(reshape(narrow0(logits, 0, 1), {h, w}));
    const Tensor es = sigmoid(reshape(narrow0(logits, t - 1, 1), {h, w}));
    return scale(add(total_loss(ed, rec.ed_mask, alpha), total_loss(es, rec.es_mask, alpha)), 0.5);
}

const std::set<std::string>& model_manifest_keys() {
    static const std::set<std::string> keys = {"channels",   "enc_blocks", "dec_blocks",
                                               "ffn_ratio",  "conv_ratio", "d_state",
                                               "shared_scan", "modes",     "mamba_stages"};
    return keys;
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr_max > 0.0)) throw ConfigError("config: lr_max must be positive");
    if (!(lr_min >= 0.0)) throw ConfigError("config: lr_min must be non-negative");
    if (lr_min > lr_max) throw ConfigError("config: lr_min exceeds lr_max");
    if (epochs < 1) throw ConfigError("config: epochs must be at least 1");
    if (batch < 1) throw ConfigError("config: batch must be at least 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("config: alpha must lie in [0,1]");
    if (n_disks < 1) throw ConfigError("config: n_disks must be at least 1");
    if (train_clips < 1) throw ConfigError("config: train_clips must be at least 1");
    if (val_clips < 0 || test_clips < 0) throw ConfigError("config: split sizes must be non-negative");
    try {
        model.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

std::map<std::string, std::string> read_kv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: " + path + ":" + std::to_string(lineno) +
                              ": expected 'key = value'");
        }
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) {
            throw ConfigError("config: " + path + ":" + std::to_string(lineno) + ": empty key");
        }
        kv[key] = trim(t.substr(eq + 1));
    }
    return kv;
}

TrainConfig parse_train_config(const std::string& path) {
    const auto kv = read_kv_file(path);

    // Model keys ride in the same file; from_manifest ignores everything else.
    std::ostringstream model_text;
    for (const auto& [k, v] : kv) model_text << k << " = " << v << "\n";

    TrainConfig cfg;
    try {
        cfg.model = ModelConfig::from_manifest(model_text.str());
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    for (const auto& [key, value] : kv) {
        if (key == "lr_max") {
            cfg.lr_max = to_f64(key, value);
        } else if (key == "lr_min") {
            cfg.lr_min = to_f64(key, value);
        } else if (key == "epochs") {
            cfg.epochs = static_cast<int>(to_i64(key, value));
        } else if (key == "batch") {
            cfg.batch = static_cast<int>(to_i64(key, value));
        } else if (key == "seed") {
            cfg.seed = static_cast<std::uint64_t>(to_i64(key, value));
        } else if (key == "alpha") {
            cfg.alpha = to_f64(key, value);
        } else if (key == "augment") {
            cfg.augment = to_bool(key, value);
        } else if (key == "n_disks") {
            cfg.n_disks = static_cast<int>(to_i64(key, value));
        } else if (key == "train_clips") {
            cfg.train_clips = static_cast<int>(to_i64(key, value));
        } else if (key == "val_clips") {
            cfg.val_clips = static_cast<int>(to_i64(key, value));
        } else if (key == "test_clips") {
            cfg.test_clips = static_cast<int>(to_i64(key, value));
        } else if (key == "data_dir") {
            cfg.data_dir = value;
        } else if (key == "ckpt_path") {
            cfg.ckpt_path = value;
        } else if (key == "log_path") {
            cfg.log_path = value;
        } else if (model_manifest_keys().count(key) != 0) {
            continue;  // consumed by from_manifest above
        } else {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

CorpusSpec parse_corpus_spec(const std::string& path) {
    const auto kv = read_kv_file(path);
    CorpusSpec corpus;
    for (const auto& [key, value] : kv) {
        if (key == "size") {
            corpus.base.size = static_cast<int>(to_i64(key, value));
        } else if (key == "frames") {
            corpus.base.frames = static_cast<int>(to_i64(key, value));
        } else if (key == "ring_px") {
            corpus.base.ring_px = to_f64(key, value);
        } else if (key == "sigma") {
            corpus.base.sigma = to_f64(key, value);
        } else if (key == "occlusion_prob") {
            corpus.base.occlusion_prob = to_f64(key, value);
        } else if (key == "a0_frac_lo") {
            corpus.a0_frac_lo = to_f64(key, value);
        } else if (key == "a0_frac_hi") {
            corpus.a0_frac_hi = to_f64(key, value);
        } else if (key == "b0_frac_lo") {
            corpus.b0_frac_lo = to_f64(key, value);
        } else if (key == "b0_frac_hi") {
            corpus.b0_frac_hi = to_f64(key, value);
        } else if (key == "ca_lo") {
            corpus.ca_lo = to_f64(key, value);
        } else if (key == "ca_hi") {
            corpus.ca_hi = to_f64(key, value);
        } else if (key == "cb_lo") {
            corpus.cb_lo = to_f64(key, value);
        } else if (key == "cb_hi") {
            corpus.cb_hi = to_f64(key, value);
        } else if (key == "tilt_max_deg") {
            corpus.tilt_max_deg = to_f64(key, value);
        } else if (key == "center_jitter_frac") {
            corpus.center_jitter_frac = to_f64(key, value);
        } else {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    if (corpus.base.size < 8) throw ConfigError("config: size must be at least 8");
    if (corpus.base.frames < 2) throw ConfigError("config: frames must be at least 2");
    if (corpus.a0_frac_lo > corpus.a0_frac_hi || corpus.b0_frac_lo > corpus.b0_frac_hi ||
        corpus.ca_lo > corpus.ca_hi || corpus.cb_lo > corpus.cb_hi) {
        throw ConfigError("config: corpus range has lo > hi");
    }
    return corpus;
}

double lr_schedule(i64 step, i64 total_steps, const TrainConfig& cfg) {
    if (total_steps < 1) throw ConfigError("lr_schedule: total_steps must be positive");
    if (step < 0 || step > total_steps) throw ConfigError("lr_schedule: step outside [0, total_steps]");
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(M_PI * frac));
}

AdamState AdamState::init(const std::vector<Tensor>& params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Tensor& p : params) {
        s.m.push_back(Tensor::zeros(p.shape()));
        s.v.push_back(Tensor::zeros(p.shape()));
    }
    return s;
}

bool adam_step(std::vector<Tensor>& params, AdamState& state, double lr) {
    if (params.size() != state.m.size() || params.size() != state.v.size()) {
        throw std::invalid_argument("adam_step: state does not match parameter list");
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    // A single non-finite gradient poisons the whole update, so scan all
    // parameters before touching any state.
    for (const Tensor& p : params) {
        for (double g : p.grad()) {
            if (!std::isfinite(g)) {
                ++state.skipped;
                return false;
            }
        }
    }

    ++state.t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& g = params[i].grad();
        auto& m = state.m[i].mutable_data();
        auto& v = state.v[i].mutable_data();
        auto& w = params[i].mutable_data();
        for (std::size_t j = 0; j < g.size(); ++j) {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
    return true;
}

std::vector<ClipRecord> load_clips(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("data: directory not found: " + dir);
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory() && fs::exists(entry.path() / "meta.txt")) {
            names.push_back(entry.path().string());
        }
    }
    if (names.empty()) throw DataError("data: no clips under " + dir);
    std::sort(names.begin(), names.end());
    std::vector<ClipRecord> clips;
    clips.reserve(names.size());
    for (const auto& name : names) {
        try {
            clips.push_back(read_clip(name));
        } catch (const std::exception& e) {
            throw DataError("data: " + name + ": " + e.what());
        }
    }
    return clips;
}

Split split_clips(const std::vector<ClipRecord>& clips, const TrainConfig& cfg) {
    const std::size_t need = static_cast<std::size_t>(cfg.train_clips) +
                             static_cast<std::size_t>(cfg.val_clips) +
                             static_cast<std::size_t>(cfg.test_clips);
    if (clips.size() < need) {
        throw DataError("data: split needs " + std::to_string(need) + " clips, corpus has " +
                        std::to_string(clips.size()));
    }
    Split s;
    std::size_t i = 0;
    for (int k = 0; k < cfg.train_clips; ++k) s.train.push_back(&clips[i++]);
    for (int k = 0; k < cfg.val_clips; ++k) s.val.push_back(&clips[i++]);
    for (int k = 0; k < cfg.test_clips; ++k) s.test.push_back(&clips[i++]);
    return s;
}

MaskPredictor model_predictor(HSSNet& model) {
    return [&model](const ClipRecord& rec) {
        NoGradGuard guard;
        const Tensor logits = model.forward(rec.frames);
        const auto& sh = logits.shape();
        const i64 t = sh[0], h = sh[2], w = sh[3];
        const Tensor ed = sigmoid(reshape(narrow0(logits, 0, 1), {h, w}));
        const Tensor es = sigmoid(reshape(narrow0(logits, t - 1, 1), {h, w}));
        return std::make_pair(ed, es);
    };
}

MaskPredictor oracle_predictor() {
    return [](const ClipRecord& rec) { return std::make_pair(rec.ed_mask, rec.es_mask); };
}

EvalSummary evaluate_clips(const std::vector<const ClipRecord*>& clips, const MaskPredictor& pred,
                           int n_disks) {
    if (clips.empty()) throw DataError("eval: no clips to evaluate");
    EvalSummary s;
    std::vector<double> ef_pred, ef_true;
    double dice_sum = 0.0, hd_sum = 0.0;
    int hd_clips = 0;
    for (const ClipRecord* clip : clips) {
        auto [ed_prob, es_prob] = pred(*clip);
        MetricsRow row;
        row.clip_id = clip->clip_id;
        row.dice_ed = dice_metric(ed_prob, clip->ed_mask);
        row.dice_es = dice_metric(es_prob, clip->es_mask);
        try {
            row.hd95_ed = hd95(ed_prob, clip->ed_mask);
        } catch (const std::exception&) {
            ++s.hd95_missing;
        }
        try {
            row.hd95_es = hd95(es_prob, clip->es_mask);
        } catch (const std::exception&) {
            ++s.hd95_missing;
        }
        // Reference EF comes from the same disk method applied to the ground
        // truth, so a perfect segmenter scores corr 1 / bias 0 by identity.
        try {
            row.ef_true = ef_from_masks(clip->ed_mask, clip->es_mask, n_disks).ef;
        } catch (const std::exception&) {
            row.ef_true = clip->true_ef;  // degenerate annotation: stored value
        }
        try {
            row.ef_pred = ef_from_masks(ed_prob, es_prob, n_disks).ef;
            ef_pred.push_back(row.ef_pred);
            ef_true.push_back(row.ef_true);
        } catch (const std::exception&) {
            row.ef_pred = kNaN;
            ++s.ef_missing;
        }
        dice_sum += 0.5 * (row.dice_ed + row.dice_es);
        if (row.hd95_ed && row.hd95_es) {
            hd_sum += 0.5 * (*row.hd95_ed + *row.hd95_es);
            ++hd_clips;
        }
        s.rows.push_back(std::move(row));
    }
    s.mean_dice = dice_sum / static_cast<double>(clips.size());
    s.mean_hd95 = hd_clips > 0 ? hd_sum / static_cast<double>(hd_clips) : kNaN;
    if (ef_pred.size() >= 1) {
        s.ef = ef_stats(ef_pred, ef_true);
    } else {
        s.ef.corr = kNaN;
        s.ef.bias = kNaN;
        s.ef.std_dev = kNaN;
        s.ef.corr_defined = false;
    }
    return s;
}

void save_train_checkpoint(const std::string& path, const TrainConfig& cfg, HSSNet& model,
                           const AdamState& opt, i64 next_epoch, i64 step) {
    auto named = model.named_parameters();
    std::vector<std::pair<std::string, Tensor>> tensors = named;
    for (std::size_t i = 0; i < named.size(); ++i) {
        tensors.emplace_back("opt.m." + named[i].first, opt.m[i]);
        tensors.emplace_back("opt.v." + named[i].first, opt.v[i]);
    }
    std::ostringstream manifest;
    manifest << cfg.model.to_manifest();
    manifest << "trainer.next_epoch = " << next_epoch << "\n";
    manifest << "trainer.step = " << step << "\n";
    manifest << "trainer.opt_t = " << opt.t << "\n";
    manifest << "trainer.opt_skipped = " << opt.skipped << "\n";
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open " + path + " for writing");
    write_checkpoint(os, manifest.str(), tensors);
}

std::pair<i64, i64> load_train_checkpoint(const std::string& path, const TrainConfig& cfg,
                                          HSSNet& model, AdamState& opt) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path);
    Checkpoint ck;
    try {
        ck = read_checkpoint(is);
    } catch (const std::exception& e) {
        throw DataError("checkpoint: " + path + ": " + e.what());
    }

    ModelConfig stored_cfg;
    try {
        stored_cfg = ModelConfig::from_manifest(ck.manifest);
    } catch (const std::exception& e) {
        throw DataError(std::string("checkpoint: bad manifest: ") + e.what());
    }
    if (stored_cfg.to_manifest() != cfg.model.to_manifest()) {
        throw ConfigError("checkpoint: stored architecture differs from the configured model");
    }

    std::unordered_map<std::string, const Tensor*> stored;
    for (const auto& [name, tensor] : ck.tensors) stored[name] = &tensor;
    auto fetch = [&](const std::string& name) -> const Tensor& {
        const auto it = stored.find(name);
        if (it == stored.end()) throw DataError("checkpoint: missing tensor " + name);
        return *it->second;
    };

    auto named = model.named_parameters();
    if (opt.m.size() != named.size()) throw std::invalid_argument("checkpoint: optimizer state size");
    for (std::size_t i = 0; i < named.size(); ++i) {
        auto& [name, param] = named[i];
        const Tensor& w = fetch(name);
        if (w.shape() != param.shape()) throw DataError("checkpoint: shape mismatch for " + name);
        param.mutable_data() = w.data();
        opt.m[i].mutable_data() = fetch("opt.m." + name).data();
        opt.v[i].mutable_data() = fetch("opt.v." + name).data();
    }

    // Trainer progress rides in the manifest as extra key = value lines.
    std::map<std::string, i64> meta;
    std::stringstream ss(ck.manifest);
    std::string line;
    while (std::getline(ss, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = trim(line.substr(0, eq));
        if (key.rfind("trainer.", 0) == 0) {
            meta[key] = to_i64(key, trim(line.substr(eq + 1)));
        }
    }
    for (const char* key : {"trainer.next_epoch", "trainer.step", "trainer.opt_t"}) {
        if (meta.find(key) == meta.end()) throw DataError(std::string("checkpoint: missing ") + key);
    }
    opt.t = meta["trainer.opt_t"];
    opt.skipped = meta.count("trainer.opt_skipped") ? meta["trainer.opt_skipped"] : 0;
    return {meta["trainer.next_epoch"], meta["trainer.step"]};
}

void write_epoch_log(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream os(path);
    if (!os) throw DataError("log: cannot open " + path + " for writing");
    os << "epoch,lr,train_loss,val_dice,val_ef_corr\n";
    for (const EpochLog& e : log) {
        os << e.epoch << "," << fmt_g(e.lr) << "," << fmt_g(e.train_loss) << ","
           << fmt_g(e.val_dice) << "," << fmt_g(e.val_ef_corr) << "\n";
    }
    if (!os) throw DataError("log: write failure on " + path);
}

TrainResult train(const TrainConfig& cfg, const std::vector<ClipRecord>& clips,
                  const std::string& resume_path, i64 max_epochs_this_run,
                  const std::function<void(const EpochLog&)>& on_epoch) {
    cfg.validate();
    if (clips.empty()) throw DataError("train: no clips provided");
    const Split split = split_clips(clips, cfg);

    TrainResult result{HSSNet::init(cfg.model, cfg.seed), {}, {}, 0};
    auto named = result.model.named_parameters();
    std::vector<Tensor> params;
    params.reserve(named.size());
    for (auto& [name, p] : named) params.push_back(p);
    result.opt = AdamState::init(params);

    const i64 train_n = static_cast<i64>(split.train.size());
    const i64 steps_per_epoch = (train_n + cfg.batch - 1) / cfg.batch;
    const i64 total_steps = static_cast<i64>(cfg.epochs) * steps_per_epoch;

    i64 start_epoch = 0;
    i64 step = 0;
    if (!resume_path.empty()) {
        std::tie(start_epoch, step) = load_train_checkpoint(resume_path, cfg, result.model, result.opt);
    }
    const i64 end_epoch = max_epochs_this_run < 0
                              ? cfg.epochs
                              : std::min<i64>(cfg.epochs, start_epoch + max_epochs_this_run);

    for (i64 epoch = start_epoch; epoch < end_epoch; ++epoch) {
        // Deterministic per-epoch shuffle of training-clip indices.
        std::vector<i64> order(static_cast<std::size_t>(train_n));
        for (i64 i = 0; i < train_n; ++i) order[static_cast<std::size_t>(i)] = i;
        std::mt19937_64 rng(epoch_seed(cfg.seed, epoch));
        for (i64 i = train_n - 1; i > 0; --i) {
            const i64 j = static_cast<i64>(rng() % static_cast<std::uint64_t>(i + 1));
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }

        double loss_sum = 0.0;
        i64 batches = 0;
        const double epoch_lr = lr_schedule(std::min(step, total_steps), total_steps, cfg);
        for (i64 b = 0; b < train_n; b += cfg.batch) {
            const i64 n = std::min<i64>(cfg.batch, train_n - b);
            std::vector<Tensor> losses;
            losses.reserve(static_cast<std::size_t>(n));
            for (i64 k = 0; k < n; ++k) {
                const i64 idx = order[static_cast<std::size_t>(b + k)];
                const ClipRecord* rec = split.train[static_cast<std::size_t>(idx)];
                if (cfg.augment) {
                    const ClipRecord aug = augment(*rec, augment_seed(cfg.seed, epoch, idx));
                    losses.push_back(clip_loss(result.model, aug, cfg.alpha));
                } else {
                    losses.push_back(clip_loss(result.model, *rec, cfg.alpha));
                }
            }
            Tensor batch_loss = losses[0];
            for (std::size_t k = 1; k < losses.size(); ++k) batch_loss = add(batch_loss, losses[k]);
            batch_loss = scale(batch_loss, 1.0 / static_cast<double>(losses.size()));

            for (Tensor& p : params) p.zero_grad();
            batch_loss.backward();
            adam_step(params, result.opt, lr_schedule(std::min(step, total_steps), total_steps, cfg));
            ++step;

            loss_sum += batch_loss.data()[0];
            ++batches;
        }

        EpochLog entry;
        entry.epoch = static_cast<int>(epoch);
        entry.lr = epoch_lr;
        entry.train_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : kNaN;
        if (!split.val.empty()) {
            const EvalSummary val = evaluate_clips(split.val, model_predictor(result.model), cfg.n_disks);
            entry.val_dice = val.mean_dice;
            entry.val_ef_corr = val.ef.corr_defined ? val.ef.corr : kNaN;
        } else {
            entry.val_dice = kNaN;
            entry.val_ef_corr = kNaN;
        }
        result.log.push_back(entry);
        if (!cfg.log_path.empty()) write_epoch_log(cfg.log_path, result.log);
        if (!cfg.ckpt_path.empty()) {
            save_train_checkpoint(cfg.ckpt_path, cfg, result.model, result.opt, epoch + 1, step);
        }
        if (on_epoch) on_epoch(entry);
    }
    result.steps = step;
    return result;
}

TrainResult train_from_dir(const TrainConfig& cfg, const std::string& resume_path,
                           i64 max_epochs_this_run,
                           const std::function<void(const EpochLog&)>& on_epoch) {
    if (cfg.data_dir.empty()) throw ConfigError("config: data_dir is required");
    const std::vector<ClipRecord> clips = load_clips(cfg.data_dir);
    return train(cfg, clips, resume_path, max_epochs_this_run, on_epoch);
}

void write_ef_scatter_svg(const std::string& path, const std::vector<double>& truth,
                          const std::vector<double>& pred) {
    if (truth.size() != pred.size()) throw std::invalid_argument("scatter: list lengths differ");
    if (truth.empty()) throw std::invalid_argument("scatter: no points");

    double lo = truth[0], hi = truth[0];
    for (double v : truth) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (double v : pred) {
        if (std::isnan(v)) continue;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    double pad = 0.05 * (hi - lo);
    if (pad <= 0.0) pad = 1.0;
    lo -= pad;
    hi += pad;

    const double W = 480.0, H = 480.0, margin = 56.0;
    auto x_of = [&](double v) { return margin + (v - lo) / (hi - lo) * (W - 2.0 * margin); };
    auto y_of = [&](double v) { return H - margin - (v - lo) / (hi - lo) * (H - 2.0 * margin); };

    std::vector<double> finite_pred, finite_true;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (std::isnan(pred[i])) continue;
        finite_pred.push_back(pred[i]);
        finite_true.push_back(truth[i]);
    }

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
        << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    // frame
    svg << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << (W - 2 * margin)
        << "\" height=\"" << (H - 2 * margin) << "\" fill=\"none\" stroke=\"#444\"/>\n";
    // axis ticks and labels
    for (int k = 0; k <= 4; ++k) {
        const double v = lo + (hi - lo) * k / 4.0;
        char label[32];
        std::snprintf(label, sizeof label, "%.0f", v);
        svg << "<line x1=\"" << x_of(v) << "\" y1=\"" << (H - margin) << "\" x2=\"" << x_of(v)
            << "\" y2=\"" << (H - margin + 5) << "\" stroke=\"#444\"/>\n";
        svg << "<text x=\"" << x_of(v) << "\" y=\"" << (H - margin + 20)
            << "\" font-size=\"11\" text-anchor=\"middle\" fill=\"#222\">" << label << "</text>\n";
        svg << "<line x1=\"" << margin << "\" y1=\"" << y_of(v) << "\" x2=\"" << (margin - 5)
            << "\" y2=\"" << y_of(v) << "\" stroke=\"#444\"/>\n";
        svg << "<text x=\"" << (margin - 8) << "\" y=\"" << (y_of(v) + 4)
            << "\" font-size=\"11\" text-anchor=\"end\" fill=\"#222\">" << label << "</text>\n";
    }
    svg << "<text x=\"" << (W / 2) << "\" y=\"" << (H - 12)
        << "\" font-size=\"13\" text-anchor=\"middle\" fill=\"#222\">reference EF (%)</text>\n";
    svg << "<text x=\"16\" y=\"" << (H / 2)
        << "\" font-size=\"13\" text-anchor=\"middle\" fill=\"#222\" transform=\"rotate(-90 16 "
        << (H / 2) << ")\">predicted EF (%)</text>\n";
    // identity diagonal
    svg << "<line x1=\"" << x_of(lo) << "\" y1=\"" << y_of(lo) << "\" x2=\"" << x_of(hi)
        << "\" y2=\"" << y_of(hi) << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
    // points
    for (std::size_t i = 0; i < finite_pred.size(); ++i) {
        svg << "<circle cx=\"" << x_of(finite_true[i]) << "\" cy=\"" << y_of(finite_pred[i])
            << "\" r=\"3.5\" fill=\"#1f77b4\" fill-opacity=\"0.75\"/>\n";
    }
    // summary annotation
    if (finite_pred.size() >= 2) {
        const EFStats st = ef_stats(finite_pred, finite_true);
        char note[96];
        std::snprintf(note, sizeof note, "n=%zu  corr=%.3f  bias=%+.2f", finite_pred.size(),
                      st.corr_defined ? st.corr : kNaN, st.bias);
        svg << "<text x=\"" << (margin + 8) << "\" y=\"" << (margin - 10)
            << "\" font-size=\"12\" fill=\"#222\">" << note << "</text>\n";
    }
    svg << "</svg>\n";

    std::ofstream os(path);
    if (!os) throw DataError("scatter: cannot open " + path + " for writing");
    os << svg.str();
    if (!os) throw DataError("scatter: write failure on " + path);
}

}  // namespace hssnet
