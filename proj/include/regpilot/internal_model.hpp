#pragma once

#include "regpilot/geometry.hpp"

namespace regpilot {
namespace internal_model {

// ============================================================================
// Flow internal model: one companion replica of the modes of
// blkdiag(A11, A22, S) per output channel
// ============================================================================

struct FlowIM {
    Matrix A_F;       // n_F x n_F = I_p (x) A_F0
    Matrix C_F;       // p x n_F   = I_p (x) [1 0 ... 0]
    Matrix A_F0;      // n_h x n_h lower companion of mu_h
    PolyCoeffs mu_h;
    Eigen::Index n_h = 0;
    Eigen::Index n_F = 0;
};

namespace detail {

/// Minimal polynomial of blkdiag(A11, A22, S) through its spectrum: clustered
/// eigenvalues (merge radius merge_tol) with the largest Jordan-block size
/// per cluster. Merging keeps estimation round-off from inflating the degree.
inline PolyCoeffs modal_minimal_polynomial(const std::vector<Matrix>& blocks,
                                           double merge_tol) {
    Eigen::Index total = 0;
    for (const auto& M : blocks) total += M.rows();
    Matrix big = Matrix::Zero(total, total);
    Eigen::Index at = 0;
    for (const auto& M : blocks) {
        big.block(at, at, M.rows(), M.rows()) = M;
        at += M.rows();
    }
    if (total == 0) return PolyCoeffs{Vector(0)};

    const Spectrum lam = numerics::eigvals(big);
    struct Cluster {
        Complex rep;
        int count = 0;
    };
    std::vector<Cluster> clusters;
    const double tol = merge_tol * std::max(1.0, lam.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        bool merged = false;
        for (auto& c : clusters) {
            if (std::abs(lam[i] - c.rep) <= tol) {
                c.rep = (c.rep * static_cast<double>(c.count) + lam[i]) /
                        static_cast<double>(c.count + 1);
                ++c.count;
                merged = true;
                break;
            }
        }
        if (!merged) clusters.push_back({lam[i], 1});
    }
    // Conjugate symmetrization of the cluster representatives.
    for (auto& c : clusters) {
        if (std::abs(c.rep.imag()) <= tol) c.rep = Complex(c.rep.real(), 0.0);
    }
    std::vector<Complex> roots;
    const CMatrix bigc = big.cast<Complex>();
    for (const auto& c : clusters) {
        if (c.rep.imag() < 0.0) continue; // conjugate partner covers it
        // Largest Jordan block: smallest k with rank (M - lambda I)^k stalled
        // at total - algebraic multiplicity.
        const CMatrix shift = bigc - c.rep * CMatrix::Identity(total, total);
        CMatrix Pk = shift;
        int k = 1;
        while (numerics::rank_complex(Pk, 1e3 * merge_tol) > total - c.count && k < c.count) {
            Pk = Pk * shift;
            ++k;
        }
        for (int j = 0; j < k; ++j) {
            roots.push_back(c.rep);
            if (c.rep.imag() != 0.0) roots.push_back(std::conj(c.rep));
        }
    }
    return numerics::poly_from_roots(roots);
}

} // namespace detail

inline FlowIM build_flow_im(const Matrix& A11, const Matrix& A22, const Matrix& S,
                            Eigen::Index p, double merge_tol = 1e-6) {
    if (A11.rows() != A11.cols() || A22.rows() != A22.cols() || S.rows() != S.cols())
        throw Error("build_flow_im: blocks must be square");
    FlowIM im;
    im.mu_h = detail::modal_minimal_polynomial({A11, A22, S}, merge_tol);
    im.n_h = im.mu_h.degree();
    im.n_F = p * im.n_h;
    im.A_F0 = numerics::companion(im.mu_h);
    Matrix C0 = Matrix::Zero(1, im.n_h);
    C0(0, 0) = 1.0;
    const Matrix Ip = Matrix::Identity(p, p);
    im.A_F = numerics::kron(Ip, im.A_F0);
    im.C_F = numerics::kron(Ip, C0);
    return im;
}

// ============================================================================
// Jump internal model: m1 + n_F copies of the exosystem
// ============================================================================

struct JumpIM {
    Matrix A_J;  // n_J x n_J = I_{m1+n_F} (x) S
    Matrix E_J;  // n_J x n_J = I_{m1+n_F} (x) J
    Matrix C_J;  // (m1+n_F) x n_J, last coordinate of each copy
    Matrix C_J1; // first m1 rows of C_J
    Matrix C_J2; // remaining n_F rows (they reset the flow internal model)
    Eigen::Index copies = 0;
    Eigen::Index n_J = 0;
};

inline JumpIM build_jump_im(const Matrix& S, const Matrix& J, Eigen::Index m1,
                            Eigen::Index n_F) {
    if (S.rows() != S.cols() || J.rows() != S.rows() || J.cols() != S.cols())
        throw Error("build_jump_im: S and J must be square of equal size");
    if (m1 < 0 || n_F < 0) throw Error("build_jump_im: negative dimensions");
    JumpIM im;
    const Eigen::Index q = S.rows();
    im.copies = m1 + n_F;
    im.n_J = im.copies * q;
    const Matrix Ic = Matrix::Identity(im.copies, im.copies);
    Matrix C0 = Matrix::Zero(1, q);
    C0(0, q - 1) = 1.0;
    im.A_J = numerics::kron(Ic, S);
    im.E_J = numerics::kron(Ic, J);
    im.C_J = numerics::kron(Ic, C0);
    im.C_J1 = im.C_J.topRows(m1);
    im.C_J2 = im.C_J.bottomRows(n_F);
    return im;
}

// ============================================================================
// Augmented system: plant + internal models wired per the regulator topology
// ============================================================================

/// xi = [z; x_F; x_J], inputs vhat = [u_x; u_F; u_J]. The first m1 plant
/// input channels carry C_J1 x_J, the remaining m - m1 carry C_F x_F; the
/// jump resets x_F from C_J2 x_J and advances every exosystem copy by J.
struct AugmentedSystem {
    Matrix A, B, C, E, P;
    Matrix Q;
    /// Flow matrix with the raw (friend-free) plant block. When the friend
    /// term is fed from an observer estimate, the estimation error flows
    /// through this matrix rather than A.
    Matrix A_raw;
    Matrix S_exo, J_exo; // exosystem, for the observer's replica
    Eigen::Index n = 0, n_F = 0, n_J = 0;
    double tau_M = 0.0;

    Eigen::Index dim() const { return n + n_F + n_J; }
    Eigen::Index inputs() const { return B.cols(); }
    Eigen::Index q() const { return S_exo.rows(); }
};

inline AugmentedSystem augment(const geometry::Decomposition& dec, const FlowIM& fim,
                               const JumpIM& jim, const ExosystemSpec& exo) {
    const double tau_M = exo.tau_M;
    const auto n = dec.n();
    const auto m = dec.m();
    const auto p = dec.p();
    const auto nF = fim.n_F;
    const auto nJ = jim.n_J;
    if (m - dec.m1 != p)
        throw Error("augment: B2 column count differs from the flow internal model "
                    "output size (m - m1 != p)");
    if (jim.C_J1.rows() != dec.m1 || jim.C_J2.rows() != nF)
        throw Error("augment: jump internal model rows do not match the reset "
                    "(C_J2 must have n_F rows)");

    AugmentedSystem s;
    s.n = n;
    s.n_F = nF;
    s.n_J = nJ;
    s.tau_M = tau_M;
    const auto d = s.dim();

    s.A = Matrix::Zero(d, d);
    s.A.topLeftCorner(n, n) = dec.AbarF;
    if (nF > 0) s.A.block(0, n, n, nF) = dec.B2() * fim.C_F;
    if (nJ > 0 && dec.m1 > 0) s.A.block(0, n + nF, n, nJ) = dec.B1() * jim.C_J1;
    if (nF > 0) s.A.block(n, n, nF, nF) = fim.A_F;
    if (nJ > 0) s.A.block(n + nF, n + nF, nJ, nJ) = jim.A_J;

    s.B = Matrix::Zero(d, m + nF + nJ);
    s.B.topLeftCorner(n, m) = dec.Bbar;
    if (nF > 0) s.B.block(n, m, nF, nF) = Matrix::Identity(nF, nF);
    if (nJ > 0) s.B.block(n + nF, m + nF, nJ, nJ) = Matrix::Identity(nJ, nJ);

    s.C = Matrix::Zero(p, d);
    s.C.leftCols(n) = dec.Cbar;

    s.E = Matrix::Zero(d, d);
    s.E.topLeftCorner(n, n) = dec.Ebar;
    if (nF > 0 && nJ > 0) s.E.block(n, n + nF, nF, nJ) = jim.C_J2;
    if (nJ > 0) s.E.block(n + nF, n + nF, nJ, nJ) = jim.E_J;

    s.P = Matrix::Zero(d, dec.Pbar.cols());
    s.P.topRows(n) = dec.Pbar;
    s.Q = dec.Q;
    s.S_exo = exo.S;
    s.J_exo = exo.J;

    s.A_raw = s.A;
    s.A_raw.topLeftCorner(n, n) = dec.Abar;
    return s;
}

} // namespace internal_model
} // namespace regpilot
