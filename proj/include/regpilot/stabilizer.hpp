#pragma once

#include "regpilot/checks.hpp"
#include "regpilot/internal_model.hpp"

#include <fstream>

namespace regpilot {
namespace stabilizer {

// ============================================================================
// ZOH discretization of the augmented system
// ============================================================================

struct DiscretePair {
    Matrix A_D, B_D;
    Eigen::Index N = 0; // samples per period
    double tau_s = 0.0;
};

inline DiscretePair discretize_augmented(const internal_model::AugmentedSystem& aug,
                                         double tau_s) {
    if (!(tau_s > 0.0)) throw Error("discretize_augmented: tau_s must be positive");
    const double ratio = aug.tau_M / tau_s;
    const auto N = static_cast<Eigen::Index>(std::llround(ratio));
    if (N < 1 || std::abs(ratio - static_cast<double>(N)) > 1e-9 * ratio)
        throw Error("discretize_augmented: tau_s must divide tau_M exactly");
    DiscretePair d;
    d.A_D = numerics::expm(aug.A, tau_s);
    d.B_D = numerics::expm_integral(aug.A, tau_s) * aug.B;
    d.N = N;
    d.tau_s = tau_s;
    return d;
}

namespace detail {

/// Conjugate-closed ring of `count` points at the given radius.
inline Spectrum ring_targets(Eigen::Index count, double radius) {
    Spectrum t(count);
    if (count == 0) return t;
    Eigen::Index at = 0;
    t[at++] = Complex(radius, 0.0);
    if (count % 2 == 0) t[at++] = Complex(-radius, 0.0);
    for (Eigen::Index j = 1; at + 1 < count; ++j) {
        const double th = 2.0 * M_PI * static_cast<double>(j) / static_cast<double>(count);
        t[at++] = radius * Complex(std::cos(th), std::sin(th));
        t[at++] = radius * Complex(std::cos(th), -std::sin(th));
    }
    return t;
}

/// Targets for a possibly non-controllable pair: ring for the assignable
/// part, the frozen spectrum (all of which must already be contractive)
/// for the rest.
inline Spectrum split_targets(const Matrix& Phi, const Matrix& Gam, double radius,
                              const char* who) {
    const auto n = Phi.rows();
    const Matrix Vc = numerics::controllable_subspace(Phi, Gam);
    const auto nc = Vc.cols();
    Spectrum t(n);
    t.head(nc) = ring_targets(nc, radius);
    if (nc < n) {
        const Matrix Vu = numerics::kernel(Vc.transpose());
        const Spectrum fixed = numerics::eigvals(Vu.transpose() * Phi * Vu);
        if (!numerics::inside_unit_disk(fixed, 1e-9))
            throw Error(std::string(who) + ": unassignable mode outside the unit disk");
        t.tail(n - nc) = fixed;
    }
    return t;
}

/// Stacked N-sample observability map [C; C A; ...; C A^{N-1}].
inline Matrix stacked_output_map(const Matrix& A, const Matrix& C, Eigen::Index N) {
    Matrix Ct(N * C.rows(), A.rows());
    Matrix P = C;
    for (Eigen::Index i = 0; i < N; ++i) {
        Ct.middleRows(i * C.rows(), C.rows()) = P;
        P = P * A;
    }
    return Ct;
}

/// Block lower-triangular impulse map: block (i, j) = C A^{i-1-j} B, i > j.
inline Matrix stacked_impulse_map(const Matrix& A, const Matrix& B, const Matrix& C,
                                  Eigen::Index N) {
    const auto p = C.rows();
    const auto m = B.cols();
    Matrix Dt = Matrix::Zero(N * p, N * m);
    std::vector<Matrix> markov(N);
    Matrix P = C;
    for (Eigen::Index k = 0; k + 1 < N; ++k) {
        markov[k] = P * B;
        P = P * A;
    }
    for (Eigen::Index i = 1; i < N; ++i)
        for (Eigen::Index j = 0; j < i; ++j)
            Dt.block(i * p, j * m, p, m) = markov[i - 1 - j];
    return Dt;
}

/// [A^{N-1}B, ..., A B, B]: x_N = A^N x_0 + R * [u_0; ...; u_{N-1}].
inline Matrix period_reach_map(const Matrix& A, const Matrix& B, Eigen::Index N) {
    const auto m = B.cols();
    Matrix R(A.rows(), N * m);
    Matrix P = B;
    for (Eigen::Index j = N - 1; j >= 0; --j) {
        R.middleCols(j * m, m) = P;
        P = A * P;
    }
    return R;
}

inline Matrix matrix_power(const Matrix& A, Eigen::Index k) {
    Matrix P = Matrix::Identity(A.rows(), A.cols());
    Matrix base = A;
    while (k > 0) {
        if (k & 1) P = P * base;
        base = base * base;
        k >>= 1;
    }
    return P;
}

} // namespace detail

// ============================================================================
// Discrete-time observer with one correction per period
// ============================================================================

/// Discrete-time observer for the augmented system extended with an
/// exosystem replica. Only e = C xi + Q w is measured; without the replica
/// the innovation carries an unknown Q w term that leaves a persistent
/// w-driven bias in the estimate, and fed into the friend term that bias
/// injects raw-flow-mode disturbances the internal models cannot block.
/// Prediction runs on the friend-folded extended model; the correction gain
/// is designed on the raw-flow extended pair, which is what the estimation
/// error actually follows when the friend is fed from the estimate.
struct HybridObserver {
    Matrix A_flow;      // continuous predictor flow (folded, extended)
    Matrix B_flow;      // continuous predictor input map (extended)
    Matrix A_D, B_D;    // predictor model (folded flow, exosystem-extended)
    Matrix A_D_raw;     // error-propagation model (raw flow, extended)
    Matrix Cext;        // [C  Q], the measured-output map of the extension
    Matrix Ctilde;      // stacked outputs of the predictor model
    Matrix Dtilde;      // stacked impulse map of the predictor model
    Matrix Ctilde_raw;  // stacked outputs of the error model
    Matrix Ejump;       // blkdiag(E, J)
    Matrix L;           // (dim + q) x (N p) correction gain
    Eigen::Index N = 0;
    Eigen::Index q = 0; // exosystem replica size
    double tau_s = 0.0;

    /// One-period error map E A_D_raw^N - L Ctilde_raw.
    Matrix error_monodromy() const {
        return Ejump * detail::matrix_power(A_D_raw, N) - L * Ctilde_raw;
    }
};

namespace detail {

/// [[A, P], [0, S]]: the augmented flow with the exosystem appended.
inline Matrix exo_extend(const Matrix& A, const Matrix& P, const Matrix& S) {
    const auto d = A.rows();
    const auto q = S.rows();
    Matrix X = Matrix::Zero(d + q, d + q);
    X.topLeftCorner(d, d) = A;
    X.topRightCorner(d, q) = P;
    X.bottomRightCorner(q, q) = S;
    return X;
}

} // namespace detail

inline HybridObserver design_observer(const internal_model::AugmentedSystem& aug,
                                      double tau_s, double radius = 0.1,
                                      bool exo_replica = true) {
    const auto d = aug.dim();
    const auto q = exo_replica ? aug.q() : 0;
    const Matrix S = aug.S_exo.topLeftCorner(q, q);
    const Matrix J = aug.J_exo.topLeftCorner(q, q);
    const Matrix Pq = aug.P.leftCols(exo_replica ? aug.P.cols() : 0);
    const Matrix Qq = aug.Q.leftCols(exo_replica ? aug.Q.cols() : 0);
    const Matrix Araw = detail::exo_extend(aug.A_raw, Pq, S);
    const Matrix Afold = detail::exo_extend(aug.A, Pq, S);
    Matrix Eext = Matrix::Zero(d + q, d + q);
    Eext.topLeftCorner(d, d) = aug.E;
    Eext.bottomRightCorner(q, q) = J;
    Matrix Cext(aug.C.rows(), d + q);
    Cext.leftCols(d) = aug.C;
    Cext.rightCols(q) = Qq;
    Matrix Bext = Matrix::Zero(d + q, aug.inputs());
    Bext.topRows(d) = aug.B;

    const auto pre = checks::hybrid_detectability_raw("augmented_detectability", Eext, Araw,
                                                      Cext, aug.tau_M);
    if (!pre.passed)
        throw Error("design_observer: extended augmented system fails hybrid "
                    "detectability\n" + pre.to_string());

    HybridObserver ob;
    const double ratio = aug.tau_M / tau_s;
    const auto N = static_cast<Eigen::Index>(std::llround(ratio));
    if (N < 1 || std::abs(ratio - static_cast<double>(N)) > 1e-9 * ratio)
        throw Error("design_observer: tau_s must divide tau_M exactly");
    ob.N = N;
    ob.q = q;
    ob.tau_s = tau_s;
    ob.Cext = Cext;
    ob.Ejump = Eext;
    ob.A_flow = Afold;
    ob.B_flow = Bext;
    ob.A_D = numerics::expm(Afold, tau_s);
    ob.B_D = numerics::expm_integral(Afold, tau_s) * Bext;
    ob.A_D_raw = numerics::expm(Araw, tau_s);
    ob.Ctilde = detail::stacked_output_map(ob.A_D, Cext, N);
    ob.Dtilde = detail::stacked_impulse_map(ob.A_D, ob.B_D, Cext, N);
    ob.Ctilde_raw = detail::stacked_output_map(ob.A_D_raw, Cext, N);

    const Matrix mono = Eext * detail::matrix_power(ob.A_D_raw, N);
    const Matrix Phi = mono.transpose();
    const Matrix Gam = ob.Ctilde_raw.transpose();
    const Spectrum targets = detail::split_targets(Phi, Gam, radius, "design_observer");
    const Matrix K = numerics::place_poles(Phi, Gam, targets);
    ob.L = -K.transpose();
    return ob;
}

// ============================================================================
// Period feedback: one stacked input sequence per period
// ============================================================================

struct PeriodFeedback {
    Matrix K;      // (N mhat) x dim, U_[0] = K etahat_[0]
    Matrix reach;  // E * [A^{N-1}B ... B]
    Matrix mono;   // E * A_D^N
    Eigen::Index N = 0;
    double tau_s = 0.0;

    Matrix closed_monodromy() const { return mono + reach * K; }
};

inline PeriodFeedback design_feedback(const internal_model::AugmentedSystem& aug,
                                      double tau_s, double radius = 0.1) {
    const auto pre = checks::hybrid_stabilizability_raw("augmented_stabilizability", aug.E,
                                                        aug.A, aug.B, aug.tau_M);
    if (!pre.passed)
        throw Error("design_feedback: augmented system fails hybrid stabilizability\n" +
                    pre.to_string());

    PeriodFeedback fb;
    const DiscretePair d = discretize_augmented(aug, tau_s);
    fb.N = d.N;
    fb.tau_s = tau_s;
    fb.mono = aug.E * detail::matrix_power(d.A_D, d.N);
    fb.reach = aug.E * detail::period_reach_map(d.A_D, d.B_D, d.N);
    const Spectrum targets = detail::split_targets(fb.mono, fb.reach, radius,
                                                   "design_feedback");
    fb.K = numerics::place_poles(fb.mono, fb.reach, targets);
    return fb;
}

// ============================================================================
// Full regulator realization
// ============================================================================

/// Error-feedback regulator: continuous internal-model states, a predicted
/// augmented-state estimate, and the period-spooled stabilizer inputs.
/// The plant input is u = G (Fbar zhat + [C_J1 x_J + u_x1; C_F x_F + u_x2]).
struct RegulatorRealization {
    geometry::Decomposition dec;
    internal_model::FlowIM fim;
    internal_model::JumpIM jim;
    internal_model::AugmentedSystem aug;
    HybridObserver obs;
    PeriodFeedback fb;

    // Input-side composites (physical input space).
    Matrix friend_gain; // m x n, applied to zhat (= G * Fbar)
    Matrix mix_J;       // m x n_J, jump IM output into the first channel group
    Matrix mix_F;       // m x n_F, flow IM output into the second channel group

    Eigen::Index state_dim() const {
        return fim.n_F + jim.n_J + aug.dim() + obs.q + fb.N * aug.inputs();
    }

    Spectrum separation_spectrum() const {
        const Spectrum a = numerics::eigvals(fb.closed_monodromy());
        const Spectrum b = numerics::eigvals(obs.error_monodromy());
        Spectrum s(a.size() + b.size());
        s << a, b;
        return s;
    }
};

inline RegulatorRealization assemble_regulator(const geometry::Decomposition& dec,
                                               const internal_model::FlowIM& fim,
                                               const internal_model::JumpIM& jim,
                                               const internal_model::AugmentedSystem& aug,
                                               const HybridObserver& obs,
                                               const PeriodFeedback& fb) {
    RegulatorRealization reg;
    reg.dec = dec;
    reg.fim = fim;
    reg.jim = jim;
    reg.aug = aug;
    reg.obs = obs;
    reg.fb = fb;
    reg.friend_gain = dec.G * dec.Fbar;
    reg.mix_J = dec.G.leftCols(dec.m1) * jim.C_J1;
    reg.mix_F = dec.G.rightCols(dec.m() - dec.m1) * fim.C_F;
    return reg;
}

namespace detail {

inline void dump_block(std::ostream& os, const std::string& name, const Matrix& M) {
    os << name << " (" << M.rows() << "x" << M.cols() << ")\n";
    char buf[32];
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        for (Eigen::Index j = 0; j < M.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", M(i, j));
            os << (j ? " " : "  ") << buf;
        }
        os << "\n";
    }
}

} // namespace detail

/// Structured text dump of the regulator blocks: A_c (flow generators),
/// B_c (error injection), C_c (input formation), E_c (jump updates).
inline void export_regulator(const RegulatorRealization& reg, std::ostream& os) {
    os << "regulator dim header: n=" << reg.aug.n << " n_F=" << reg.fim.n_F
       << " n_J=" << reg.jim.n_J << " N=" << reg.fb.N << " tau_s=" << reg.fb.tau_s
       << " state_dim=" << reg.state_dim() << "\n";
    os << "[A_c] continuous flow of (x_F, x_J, etahat)\n";
    detail::dump_block(os, "A_F", reg.fim.A_F);
    detail::dump_block(os, "A_J", reg.jim.A_J);
    detail::dump_block(os, "A_hat", reg.aug.A);
    detail::dump_block(os, "B_hat", reg.aug.B);
    os << "[B_c] error injection (one correction per period)\n";
    detail::dump_block(os, "L", reg.obs.L);
    detail::dump_block(os, "C_tilde", reg.obs.Ctilde);
    detail::dump_block(os, "D_tilde", reg.obs.Dtilde);
    os << "[C_c] input formation u = G(Fbar zhat + mix) + spool\n";
    detail::dump_block(os, "friend_gain", reg.friend_gain);
    detail::dump_block(os, "mix_J", reg.mix_J);
    detail::dump_block(os, "mix_F", reg.mix_F);
    detail::dump_block(os, "K", reg.fb.K);
    os << "[E_c] jump updates\n";
    detail::dump_block(os, "C_J2", reg.jim.C_J2);
    detail::dump_block(os, "E_J", reg.jim.E_J);
    detail::dump_block(os, "E_hat", reg.aug.E);
}

inline void export_regulator(const RegulatorRealization& reg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("export_regulator: cannot open " + path);
    export_regulator(reg, os);
}

} // namespace stabilizer
} // namespace regpilot
