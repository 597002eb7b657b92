#pragma once

#include <array>
#include <random>
#include <vector>

#include "hssnet/scan.hpp"
#include "hssnet/tensor.hpp"

namespace hssnet {

/// Selective state-space parameters for one scan direction.
/// A = -exp(A_log) is a negative real diagonal, so exp(delta*A) lies in
/// (0,1) for delta > 0 and the recurrence stays bounded. delta itself is
/// produced through softplus and therefore strictly positive.
struct SSMParams {
    int d_model = 0;  // channels of the stage
    int d_state = 8;  // states per channel
    int dt_rank = 1;  // bottleneck width of the delta projection

    Tensor A_log;         // [d_model, d_state]
    Tensor D;             // [d_model], skip-path gain
    Tensor W_delta_down;  // [d_model, dt_rank]
    Tensor W_delta_up;    // [dt_rank, d_model]
    Tensor delta_bias;    // [d_model]
    Tensor W_B;           // [d_model, d_state]
    Tensor W_C;           // [d_model, d_state]

    /// Fresh parameters: A_log rows = log(1..N), D = 1, delta_bias set so
    /// softplus(delta_bias) is log-uniform in [0.001, 0.1], projections
    /// uniform +-1/sqrt(fan_in).
    static SSMParams init(int d_model, int d_state, std::mt19937_64& rng);

    /// Trainable leaves in registration order.
    std::vector<Tensor> parameters() const;
};

/// Raw recurrence over precomputed per-step inputs. Shapes:
///   delta [L,C] (positive), A_log [C,N], B [L,N], C [L,N], x [L,C], D [C]
/// Returns y [L,C] with
///   h_k = exp(delta_k*A) . h_{k-1} + delta_k*B_k*x_k,   h_{-1} = 0
///   y_k[c] = sum_n C_k[n]*h_k[c,n] + D[c]*x_k[c]
/// Implemented as one fused tape op; the backward pass recomputes the state
/// trajectory from sqrt(L)-spaced checkpoints instead of storing all of it.
Tensor scan_core(const Tensor& delta, const Tensor& A_log, const Tensor& B,
                 const Tensor& C, const Tensor& x, const Tensor& D);

/// Full selective scan over a [C, L] sequence: input-dependent delta/B/C
/// projections followed by scan_core, returning [C, L].
Tensor selective_scan(const SSMParams& params, const Tensor& x);

/// Which traversal families participate in the direction mix.
struct ModeSet {
    bool temporal = true;
    bool spatial = true;
    bool diagonal = true;
    bool antidiagonal = true;

    static ModeSet all() { return {}; }
    static ModeSet only(scan::Mode m);
    bool contains(scan::Mode m) const;
    int count() const;
};

/// Index of the parameter slot used for (mode, direction).
int direction_slot(scan::Mode m, scan::Direction d);

/// Independent parameters for each of the 8 scan directions; when `shared`,
/// all slots alias one parameter set.
std::array<SSMParams, 8> make_stcs_params(int d_model, int d_state, bool shared,
                                          std::mt19937_64& rng);

/// Cross-scan mixer: for every enabled mode and both directions, permute the
/// [C, L] sequence into scan order, run the direction's selective scan,
/// un-permute, and average the results over all enabled directions.
Tensor stcs_mix(const std::array<SSMParams, 8>& dir_params, const Tensor& seq,
                const scan::PatchGrid& grid, const ModeSet& enabled);

}  // namespace hssnet
