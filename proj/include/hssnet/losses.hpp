#pragma once

// Segmentation training loss and evaluation metrics: soft Dice + BCE compound
// loss on the autodiff tape, plus tape-free Dice / HD95 / EF-agreement
// statistics used at evaluation time.

#include <optional>
#include <string>
#include <vector>

#include "hssnet/tensor.hpp"

namespace hssnet {

// Compound segmentation loss: alpha * soft-Dice loss + (1 - alpha) * BCE.
//
// `probs` holds predicted foreground probabilities in [0,1] and `target` a
// binary mask of the same shape.  Probabilities are clamped to
// [1e-7, 1 - 1e-7] inside the BCE term so exact 0/1 predictions stay finite.
// The Dice term uses a +1 smoothing constant in numerator and denominator, so
// a perfect prediction scores exactly zero.  Returns a differentiable scalar.
// Throws std::invalid_argument on shape mismatch.
Tensor total_loss(const Tensor& probs, const Tensor& target, double alpha = 0.8);

// Hard Dice overlap 2|P∩G| / (|P|+|G|) after thresholding both inputs at 0.5.
// Defined as 1.0 when both masks are empty.  Symmetric in its arguments.
// Throws std::invalid_argument on shape mismatch.
double dice_metric(const Tensor& pred, const Tensor& target);

// 95th-percentile symmetric boundary distance, in pixels.
//
// Boundary pixels are foreground pixels with at least one background
// 4-neighbour (pixels outside the image count as background).  The directed
// boundary-to-boundary Euclidean distances are computed in both directions,
// pooled into a single set, and the 95th percentile is taken with linear
// interpolation between order statistics.  Inputs are thresholded at 0.5.
// Throws std::invalid_argument if either mask is empty or shapes differ.
double hd95(const Tensor& pred, const Tensor& target);

// Agreement statistics between predicted and reference ejection fractions.
struct EFStats {
    double corr = 0.0;      // Pearson correlation (valid iff corr_defined)
    double bias = 0.0;      // mean(pred - truth)
    double std_dev = 0.0;   // population standard deviation of (pred - truth)
    bool corr_defined = false;  // false when either list has zero variance
};

// Computes EFStats over paired lists.  Throws std::invalid_argument when the
// lists are empty or of different lengths.  When either list is constant the
// correlation is undefined; corr is NaN and corr_defined is false.
EFStats ef_stats(const std::vector<double>& pred, const std::vector<double>& truth);

// One evaluation row per clip.  HD95 fields are missing when the relevant
// predicted mask was empty; missing values serialize as "nan".
struct MetricsRow {
    std::string clip_id;
    double dice_ed = 0.0;
    double dice_es = 0.0;
    std::optional<double> hd95_ed;
    std::optional<double> hd95_es;
    double ef_true = 0.0;
    double ef_pred = 0.0;
};

// Writes rows as CSV with a fixed header:
//   clip_id,dice_ed,dice_es,hd95_ed,hd95_es,ef_true,ef_pred
// Throws std::runtime_error when the file cannot be written.
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

}  // namespace hssnet
