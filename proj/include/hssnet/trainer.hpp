#pragma once

// End-to-end orchestration: config parsing, cosine learning-rate schedule,
// Adam, the training loop (loss on the first and last frames only),
// evaluation over clip sets, checkpointing with optimizer state, and the
// pred-vs-true EF scatter report.

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hssnet/losses.hpp"
#include "hssnet/model.hpp"
#include "hssnet/synth.hpp"
#include "hssnet/tensor.hpp"

namespace hssnet {

// Error taxonomy for the CLI: configuration problems exit 2, data problems 3.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double lr_max = 1e-4;
    double lr_min = 1e-5;
    int epochs = 120;
    int batch = 2;  // clips per optimization step
    std::uint64_t seed = 0;
    double alpha = 0.8;   // dice weight inside total_loss
    bool augment = true;  // train-split augmentation
    int n_disks = 20;

    int train_clips = 32;
    int val_clips = 16;
    int test_clips = 16;

    std::string data_dir;
    std::string ckpt_path = "model.ckpt";
    std::string log_path = "train_log.csv";

    ModelConfig model;

    // Throws ConfigError on inconsistent settings.
    void validate() const;
};

// Reads a line-oriented "key = value" file ('#' starts a comment line).
// Throws ConfigError when the file cannot be read or a line is malformed.
std::map<std::string, std::string> read_kv_file(const std::string& path);

// Parses a TrainConfig (including embedded model keys) and validates it.
TrainConfig parse_train_config(const std::string& path);

// Builds a CorpusSpec from a "key = value" file for the synth subcommand.
CorpusSpec parse_corpus_spec(const std::string& path);

// Cosine annealing: lr_min + 0.5*(lr_max-lr_min)*(1+cos(pi*step/total)).
// Monotone non-increasing; hits lr_max at step 0 and lr_min at step = total.
// Throws ConfigError when total_steps < 1 or step is outside [0, total].
double lr_schedule(i64 step, i64 total_steps, const TrainConfig& cfg);

// Adam first/second moment buffers, aligned index-for-index with the
// parameter list they were initialized from.
struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    i64 t = 0;        // completed updates
    i64 skipped = 0;  // steps dropped because a gradient was non-finite
    static AdamState init(const std::vector<Tensor>& params);
};

// One Adam update (beta1=0.9, beta2=0.999, eps=1e-8, bias correction) read
// from each parameter's accumulated gradient.  If any gradient element is
// non-finite the step is skipped and counted; returns whether it applied.
bool adam_step(std::vector<Tensor>& params, AdamState& state, double lr);

// Loads every clip subdirectory under `dir` (sorted by name).  Throws
// DataError when the directory is missing or holds no clips.
std::vector<ClipRecord> load_clips(const std::string& dir);

// Deterministic prefix split: first train_clips, then val_clips, then
// test_clips.  Throws DataError when the corpus is smaller than the split.
struct Split {
    std::vector<const ClipRecord*> train;
    std::vector<const ClipRecord*> val;
    std::vector<const ClipRecord*> test;
};
Split split_clips(const std::vector<ClipRecord>& clips, const TrainConfig& cfg);

// Maps a clip to predicted ED/ES foreground-probability masks [H,W].
using MaskPredictor = std::function<std::pair<Tensor, Tensor>(const ClipRecord&)>;

// Runs the model (no gradients) and returns sigmoid probabilities.
MaskPredictor model_predictor(HSSNet& model);

// Returns the ground-truth masks as predictions (metric-path oracle).
MaskPredictor oracle_predictor();

struct EvalSummary {
    std::vector<MetricsRow> rows;
    double mean_dice = 0.0;   // per-clip mean of the two annotated frames
    double mean_hd95 = 0.0;   // over clips where both boundaries exist
    int hd95_missing = 0;     // phase measurements skipped (empty mask)
    int ef_missing = 0;       // clips whose predicted EF was uncomputable
    EFStats ef;               // over clips with a valid predicted EF
};

// Per-clip Dice/HD95 on the two annotated frames plus disk-method EF versus
// the reference EF.  The reference is the same disk method applied to the
// ground-truth masks (so ground truth evaluated against itself scores corr 1
// and bias 0 by construction); a degenerate annotation falls back to the
// clip's stored reference value.
EvalSummary evaluate_clips(const std::vector<const ClipRecord*>& clips, const MaskPredictor& pred,
                           int n_disks = 20);

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_dice = 0.0;     // NaN when there is no validation split
    double val_ef_corr = 0.0;  // NaN when undefined
};

struct TrainResult {
    HSSNet model;
    AdamState opt;
    std::vector<EpochLog> log;
    i64 steps = 0;
};

// Trains on the given clips (reference mode: single-threaded, deterministic
// for a fixed seed).  Writes the per-epoch CSV log to cfg.log_path and a
// checkpoint (with optimizer state) to cfg.ckpt_path after every epoch when
// those paths are non-empty.  `resume_path` restarts from a training
// checkpoint written by this function; the checkpoint's architecture must
// match the config.  `max_epochs_this_run` caps how many epochs this
// invocation executes (< 0 runs to completion) without changing the overall
// schedule, so an interrupted run plus a resume replays the uninterrupted
// run exactly.  `on_epoch` (when set) fires after each epoch's log entry is
// recorded.  Throws ConfigError/DataError accordingly.
TrainResult train(const TrainConfig& cfg, const std::vector<ClipRecord>& clips,
                  const std::string& resume_path = "", i64 max_epochs_this_run = -1,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

// load_clips + train.
TrainResult train_from_dir(const TrainConfig& cfg, const std::string& resume_path = "",
                           i64 max_epochs_this_run = -1,
                           const std::function<void(const EpochLog&)>& on_epoch = {});

// Writes a training checkpoint: model manifest/params plus optimizer moments
// ("opt.m.<name>", "opt.v.<name>") and trainer progress keys.
void save_train_checkpoint(const std::string& path, const TrainConfig& cfg, HSSNet& model,
                           const AdamState& opt, i64 next_epoch, i64 step);

// Restores model + optimizer state; returns {next_epoch, step}.  Throws
// DataError when the file or required entries are missing, ConfigError when
// the stored architecture disagrees with cfg.model.
std::pair<i64, i64> load_train_checkpoint(const std::string& path, const TrainConfig& cfg,
                                          HSSNet& model, AdamState& opt);

// Writes the per-epoch log as CSV (header: epoch,lr,train_loss,val_dice,
// val_ef_corr).
void write_epoch_log(const std::string& path, const std::vector<EpochLog>& log);

// Self-contained SVG scatter of predicted vs reference EF with the identity
// diagonal and corr/bias annotations.
void write_ef_scatter_svg(const std::string& path, const std::vector<double>& truth,
                          const std::vector<double>& pred);

}  // namespace hssnet
