#include "hssnet/ssm.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace hssnet {

namespace {

std::vector<double> uniform_init(size_t n, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

}  // namespace

SSMParams SSMParams::init(int d_model, int d_state, std::mt19937_64& rng) {
    if (d_model < 1 || d_state < 1) {
        throw std::invalid_argument("SSMParams::init: d_model and d_state must be positive");
    }
    SSMParams p;
    p.d_model = d_model;
    p.d_state = d_state;
    p.dt_rank = std::max(1, d_model / 16);
    const i64 C = d_model, N = d_state, R = p.dt_rank;

    std::vector<double> alog(static_cast<size_t>(C * N));
    for (i64 c = 0; c < C; ++c)
        for (i64 n = 0; n < N; ++n) alog[static_cast<size_t>(c * N + n)] = std::log(static_cast<double>(n + 1));
    p.A_log = Tensor::from({C, N}, std::move(alog), true);

    p.D = Tensor::full({C}, 1.0, true);

    p.W_delta_down = Tensor::from({C, R}, uniform_init(static_cast<size_t>(C * R), 1.0 / std::sqrt(static_cast<double>(C)), rng), true);
    p.W_delta_up = Tensor::from({R, C}, uniform_init(static_cast<size_t>(R * C), 1.0 / std::sqrt(static_cast<double>(R)), rng), true);

    // softplus(bias) log-uniform over [0.001, 0.1]: bias = log(exp(dt) - 1)
    std::uniform_real_distribution<double> logdt(std::log(1e-3), std::log(1e-1));
    std::vector<double> bias(static_cast<size_t>(C));
    for (auto& b : bias) {
        const double dt = std::exp(logdt(rng));
        b = std::log(std::expm1(dt));
    }
    p.delta_bias = Tensor::from({C}, std::move(bias), true);

    const double wb = 1.0 / std::sqrt(static_cast<double>(C));
    p.W_B = Tensor::from({C, N}, uniform_init(static_cast<size_t>(C * N), wb, rng), true);
    p.W_C = Tensor::from({C, N}, uniform_init(static_cast<size_t>(C * N), wb, rng), true);
    return p;
}

std::vector<Tensor> SSMParams::parameters() const {
    return {A_log, D, W_delta_down, W_delta_up, delta_bias, W_B, W_C};
}

Tensor scan_core(const Tensor& delta, const Tensor& A_log, const Tensor& B,
                 const Tensor& C, const Tensor& x, const Tensor& D) {
    if (delta.rank() != 2 || x.rank() != 2 || B.rank() != 2 || C.rank() != 2 ||
        A_log.rank() != 2 || D.rank() != 1) {
        throw std::invalid_argument("scan_core: bad argument ranks");
    }
    const i64 L = delta.extent(0), Cc = delta.extent(1), N = A_log.extent(1);
    if (x.extent(0) != L || x.extent(1) != Cc || B.extent(0) != L || B.extent(1) != N ||
        C.extent(0) != L || C.extent(1) != N || A_log.extent(0) != Cc || D.extent(0) != Cc) {
        throw std::invalid_argument("scan_core: inconsistent shapes");
    }

    // Diagonal transition coefficients; negative by construction.
    auto A = std::make_shared<std::vector<double>>(static_cast<size_t>(Cc * N));
    for (i64 i = 0; i < Cc * N; ++i) (*A)[static_cast<size_t>(i)] = -std::exp(A_log.data()[static_cast<size_t>(i)]);

    i64 S = 1;
    while (S * S < L) ++S;
    const i64 nseg = (L + S - 1) / S;

    auto cps = std::make_shared<std::vector<std::vector<double>>>();
    cps->reserve(static_cast<size_t>(nseg));

    std::vector<double> h(static_cast<size_t>(Cc * N), 0.0);
    std::vector<double> y(static_cast<size_t>(L * Cc));
    const double* dptr = delta.data().data();
    const double* xptr = x.data().data();
    const double* Bptr = B.data().data();
    const double* Cptr = C.data().data();
    const double* Dptr = D.data().data();

    for (i64 k = 0; k < L; ++k) {
        if (k % S == 0) {
            for (double hv : h) {
                if (!std::isfinite(hv)) throw std::runtime_error("scan_core: non-finite state");
            }
            cps->push_back(h);
        }
        const double* drow = dptr + k * Cc;
        const double* xrow = xptr + k * Cc;
        const double* Brow = Bptr + k * N;
        const double* Crow = Cptr + k * N;
        double* yrow = y.data() + k * Cc;
        for (i64 c = 0; c < Cc; ++c) {
            const double dv = drow[c];
            const double xv = xrow[c];
            double* hc = h.data() + c * N;
            const double* Ac = A->data() + c * N;
            double acc = 0.0;
            for (i64 n = 0; n < N; ++n) {
                const double a = std::exp(dv * Ac[n]);
                hc[n] = a * hc[n] + dv * Brow[n] * xv;
                acc += Crow[n] * hc[n];
            }
            yrow[c] = acc + Dptr[c] * xv;
        }
    }

    Tensor dT = delta, aT = A_log, bT = B, cT = C, xT = x, skipT = D;
    return make_op(
        {L, Cc}, std::move(y), {dT, aT, bT, cT, xT, skipT},
        [dT, aT, bT, cT, xT, skipT, A, cps, S, L, Cc, N](Node& node) {
            Node* pd = dT.node().get();
            Node* pa = aT.node().get();
            Node* pb = bT.node().get();
            Node* pc = cT.node().get();
            Node* px = xT.node().get();
            Node* pskip = skipT.node().get();
            const bool need_d = pd->requires_grad, need_a = pa->requires_grad,
                       need_b = pb->requires_grad, need_c = pc->requires_grad,
                       need_x = px->requires_grad, need_skip = pskip->requires_grad;
            const double* dy = node.grad.data();
            const double* dptr = pd->data.data();
            const double* xptr = px->data.data();
            const double* Bptr = pb->data.data();
            const double* Cptr = pc->data.data();
            const double* Dptr = pskip->data.data();
            const i64 CN = Cc * N;

            std::vector<double> g(static_cast<size_t>(CN), 0.0);  // adjoint of h_k
            std::vector<double> hs(static_cast<size_t>((S + 1) * CN));
            std::vector<double> ab(static_cast<size_t>(S * CN));

            const i64 nseg = static_cast<i64>(cps->size());
            for (i64 j = nseg - 1; j >= 0; --j) {
                const i64 k0 = j * S;
                const i64 len = std::min(L, k0 + S) - k0;
                // Replay the segment from its checkpoint, keeping every state
                // and transition coefficient.
                std::copy((*cps)[static_cast<size_t>(j)].begin(), (*cps)[static_cast<size_t>(j)].end(), hs.begin());
                for (i64 i = 0; i < len; ++i) {
                    const i64 k = k0 + i;
                    const double* drow = dptr + k * Cc;
                    const double* xrow = xptr + k * Cc;
                    const double* Brow = Bptr + k * N;
                    const double* hprev = hs.data() + i * CN;
                    double* hcur = hs.data() + (i + 1) * CN;
                    double* arow = ab.data() + i * CN;
                    for (i64 c = 0; c < Cc; ++c) {
                        const double dv = drow[c];
                        const double xv = xrow[c];
                        const double* Ac = A->data() + c * N;
                        for (i64 n = 0; n < N; ++n) {
                            const double a = std::exp(dv * Ac[n]);
                            arow[c * N + n] = a;
                            hcur[c * N + n] = a * hprev[c * N + n] + dv * Brow[n] * xv;
                        }
                    }
                }
                // Walk the segment in reverse, pushing the state adjoint back.
                for (i64 i = len - 1; i >= 0; --i) {
                    const i64 k = k0 + i;
                    const double* drow = dptr + k * Cc;
                    const double* xrow = xptr + k * Cc;
                    const double* Brow = Bptr + k * N;
                    const double* Crow = Cptr + k * N;
                    const double* dyrow = dy + k * Cc;
                    const double* hprev = hs.data() + i * CN;
                    const double* hcur = hs.data() + (i + 1) * CN;
                    const double* arow = ab.data() + i * CN;
                    for (i64 c = 0; c < Cc; ++c) {
                        const double dyv = dyrow[c];
                        const double dv = drow[c];
                        const double xv = xrow[c];
                        const double* Ac = A->data() + c * N;
                        double* gc = g.data() + c * N;
                        if (need_skip) pskip->grad[static_cast<size_t>(c)] += dyv * xv;
                        double dx_acc = Dptr[c] * dyv;
                        double ddelta_acc = 0.0;
                        for (i64 n = 0; n < N; ++n) {
                            const i64 cn = c * N + n;
                            if (need_c) pc->grad[static_cast<size_t>(k * N + n)] += dyv * hcur[cn];
                            const double gv = gc[n] + dyv * Crow[n];
                            const double a = arow[cn];
                            const double Av = Ac[n];
                            const double hp = hprev[cn];
                            const double Bv = Brow[n];
                            ddelta_acc += gv * (hp * a * Av + Bv * xv);
                            if (need_a) pa->grad[static_cast<size_t>(cn)] += gv * hp * a * dv * Av;
                            if (need_b) pb->grad[static_cast<size_t>(k * N + n)] += gv * dv * xv;
                            dx_acc += gv * dv * Bv;
                            gc[n] = gv * a;
                        }
                        if (need_d) pd->grad[static_cast<size_t>(k * Cc + c)] += ddelta_acc;
                        if (need_x) px->grad[static_cast<size_t>(k * Cc + c)] += dx_acc;
                    }
                }
            }
        },
        "scan_core");
}

Tensor selective_scan(const SSMParams& p, const Tensor& x) {
    if (x.rank() != 2) throw std::invalid_argument("selective_scan: [C, L] input required");
    if (x.extent(0) != p.d_model) {
        throw std::invalid_argument("selective_scan: channel extent does not match d_model");
    }
    Tensor rows = transpose2d(x);                                   // [L, C]
    Tensor dt = linear(rows, p.W_delta_down);                       // [L, R]
    Tensor delta = softplus(add(linear(dt, p.W_delta_up), p.delta_bias));  // [L, C]
    Tensor B = linear(rows, p.W_B);                                 // [L, N]
    Tensor C = linear(rows, p.W_C);                                 // [L, N]
    Tensor y = scan_core(delta, p.A_log, B, C, rows, p.D);          // [L, C]
    return transpose2d(y);
}

ModeSet ModeSet::only(scan::Mode m) {
    ModeSet s{false, false, false, false};
    switch (m) {
        case scan::Mode::Temporal: s.temporal = true; break;
        case scan::Mode::Spatial: s.spatial = true; break;
        case scan::Mode::Diagonal: s.diagonal = true; break;
        case scan::Mode::AntiDiagonal: s.antidiagonal = true; break;
    }
    return s;
}

bool ModeSet::contains(scan::Mode m) const {
    switch (m) {
        case scan::Mode::Temporal: return temporal;
        case scan::Mode::Spatial: return spatial;
        case scan::Mode::Diagonal: return diagonal;
        case scan::Mode::AntiDiagonal: return antidiagonal;
    }
    return false;
}

int ModeSet::count() const {
    return (temporal ? 1 : 0) + (spatial ? 1 : 0) + (diagonal ? 1 : 0) + (antidiagonal ? 1 : 0);
}

int direction_slot(scan::Mode m, scan::Direction d) {
    return static_cast<int>(m) * 2 + (d == scan::Direction::Backward ? 1 : 0);
}

std::array<SSMParams, 8> make_stcs_params(int d_model, int d_state, bool shared,
                                          std::mt19937_64& rng) {
    std::array<SSMParams, 8> out;
    if (shared) {
        SSMParams one = SSMParams::init(d_model, d_state, rng);
        out.fill(one);  // aliasing handles: all slots update the same leaves
    } else {
        for (auto& p : out) p = SSMParams::init(d_model, d_state, rng);
    }
    return out;
}

Tensor stcs_mix(const std::array<SSMParams, 8>& dir_params, const Tensor& seq,
                const scan::PatchGrid& grid, const ModeSet& enabled) {
    if (seq.rank() != 2) throw std::invalid_argument("stcs_mix: [C, L] input required");
    if (seq.extent(1) != grid.slots()) {
        throw std::invalid_argument("stcs_mix: sequence length does not match grid slots");
    }
    if (enabled.count() == 0) throw std::invalid_argument("stcs_mix: no modes enabled");

    const scan::Mode modes[] = {scan::Mode::Temporal, scan::Mode::Spatial,
                                scan::Mode::Diagonal, scan::Mode::AntiDiagonal};
    Tensor acc;
    int n_dirs = 0;
    for (scan::Mode m : modes) {
        if (!enabled.contains(m)) continue;
        for (scan::Direction d : {scan::Direction::Forward, scan::Direction::Backward}) {
            const auto order = scan::make_order(m, d, grid);
            Tensor scanned = selective_scan(dir_params[static_cast<size_t>(direction_slot(m, d))],
                                            scan::apply(seq, order));
            Tensor restored = scan::apply(scanned, scan::invert(order));
            acc = acc.defined() ? add(acc, restored) : restored;
            ++n_dirs;
        }
    }
    return scale(acc, 1.0 / static_cast<double>(n_dirs));
}

}  // namespace hssnet
