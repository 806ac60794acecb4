#pragma once

#include "regpilot/plant.hpp"

namespace regpilot {

/// Subspace of R^n carried as an orthonormal basis (n x d).
struct Subspace {
    Matrix basis;

    Eigen::Index dim() const { return basis.cols(); }
    Eigen::Index ambient() const { return basis.rows(); }

    /// Orthogonal projector onto the subspace.
    Matrix projector() const { return basis * basis.transpose(); }

    bool contains(const Subspace& other, double tol = 1e-10) const {
        if (other.dim() == 0) return true;
        const Matrix r = other.basis - projector() * other.basis;
        return r.norm() <= tol * std::max<double>(1.0, other.basis.norm());
    }
};

namespace geometry {

inline Subspace full_space(Eigen::Index n) { return Subspace{Matrix::Identity(n, n)}; }
inline Subspace zero_space(Eigen::Index n) { return Subspace{Matrix(n, 0)}; }

inline Subspace image(const Matrix& M, double tol = -1.0) {
    return Subspace{numerics::orth(M, tol)};
}

inline Subspace kernel_of(const Matrix& M, double tol = -1.0) {
    return Subspace{numerics::kernel(M, tol)};
}

inline Subspace sum(const Subspace& a, const Subspace& b, double tol = -1.0) {
    Matrix W(a.ambient(), a.dim() + b.dim());
    W << a.basis, b.basis;
    return Subspace{numerics::orth(W, tol)};
}

/// Intersection through the stacked-projector kernel: x in both subspaces iff
/// both complementary projections vanish. Projectors have unit scale, which
/// anchors the rank cutoff when a factor degenerates to roundoff.
inline Subspace intersect(const Subspace& a, const Subspace& b, double tol = -1.0) {
    const auto n = a.ambient();
    Matrix S(2 * n, n);
    S.topRows(n) = Matrix::Identity(n, n) - a.projector();
    S.bottomRows(n) = Matrix::Identity(n, n) - b.projector();
    return Subspace{numerics::kernel(S, tol, 1.0)};
}

/// Preimage {x : M x in W}. The cutoff is anchored to the scale of M.
inline Subspace preimage(const Matrix& M, const Subspace& W, double tol = -1.0) {
    const Matrix R = (Matrix::Identity(M.rows(), M.rows()) - W.projector()) * M;
    return Subspace{numerics::kernel(R, tol, M.norm())};
}

/// sin of the largest principal angle between two subspaces (projector gap).
inline double distance(const Subspace& a, const Subspace& b) {
    const Matrix D = a.projector() - b.projector();
    if (D.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(D);
    return svd.singularValues().size() ? svd.singularValues()[0] : 0.0;
}

// ----------------------------------------------------------------------------
// V*: largest subspace of ker(C) with A V <= V + im(B)
// ----------------------------------------------------------------------------

inline Subspace vstar(const Matrix& A, const Matrix& B, const Matrix& C, double tol = -1.0) {
    const auto n = A.rows();
    if (A.cols() != n || B.rows() != n || C.cols() != n)
        throw Error("vstar: dimension mismatch");
    const Subspace kerC = C.rows() == 0 ? full_space(n) : kernel_of(C, tol);
    const Subspace imB = image(B, tol);
    Subspace V = kerC;
    for (Eigen::Index it = 0; it < n + 1; ++it) {
        const Subspace next = intersect(kerC, preimage(A, sum(V, imB, tol), tol), tol);
        if (next.dim() == V.dim()) return next;
        V = next;
    }
    return V;
}

// ----------------------------------------------------------------------------
// Friend feedback: (A + BF) V* <= V*, controllable spectrum of the
// R*-restriction placed at shift_targets
// ----------------------------------------------------------------------------

inline Spectrum default_shift_targets(Eigen::Index count) {
    Spectrum t(count);
    for (Eigen::Index i = 0; i < count; ++i) t[i] = Complex(-1.0 - 0.1 * i, 0.0);
    return t;
}

namespace detail {

/// Any friend of V: solve A v = V x + B u column-wise and fold u into F.
inline Matrix base_friend(const Matrix& A, const Matrix& B, const Subspace& V) {
    const auto n = A.rows();
    const auto m = B.cols();
    if (V.dim() == 0) return Matrix::Zero(m, n);
    Matrix VB(n, V.dim() + m);
    VB << V.basis, B;
    const auto solver = VB.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Matrix AV = A * V.basis;
    Matrix U(m, V.dim());
    for (Eigen::Index j = 0; j < V.dim(); ++j) {
        const Vector sol = solver.solve(AV.col(j));
        const double resid = (VB * sol - AV.col(j)).norm();
        if (resid > 1e-8 * std::max(1.0, AV.col(j).norm()))
            throw Error("friend: subspace is not controlled-invariant");
        U.col(j) = sol.tail(m);
    }
    return -U * V.basis.transpose();
}

} // namespace detail

inline Matrix friend_feedback(const Matrix& A, const Matrix& B, const Subspace& V,
                              const Spectrum& shift_targets = Spectrum(0),
                              double tol = -1.0) {
    const auto m = B.cols();
    const auto n = A.rows();
    if (V.dim() == 0) return Matrix::Zero(m, n);

    const Matrix F0 = detail::base_friend(A, B, V);
    // Restriction of the closed flow to V and the input directions staying in V.
    const Matrix X0 = V.basis.transpose() * (A + B * F0) * V.basis;
    const Subspace W = preimage(B, V, tol); // u with B u in V
    if (W.dim() == 0) return F0;
    const Matrix G = V.basis.transpose() * B * W.basis;

    const Matrix Vc = numerics::controllable_subspace(X0, G, tol);
    const auto nc = Vc.cols();
    Spectrum wanted = shift_targets.size() >= nc ? Spectrum(shift_targets.head(nc))
                                                 : default_shift_targets(nc);
    Spectrum full(V.dim());
    full.head(nc) = wanted;
    if (nc < V.dim()) {
        const Matrix Vu = numerics::kernel(Vc.transpose());
        full.tail(V.dim() - nc) = numerics::eigvals(Vu.transpose() * X0 * Vu);
    }
    const Matrix Z = numerics::place_poles(X0, G, full);
    return F0 + W.basis * Z * V.basis.transpose();
}

// ----------------------------------------------------------------------------
// R*: smallest (A + BF)-invariant subspace containing im(B) ^ V*
// ----------------------------------------------------------------------------

inline Subspace rstar(const Matrix& A, const Matrix& B, const Matrix& C, const Subspace& V,
                      double tol = -1.0) {
    (void)C;
    const auto n = A.rows();
    const Subspace seed = intersect(image(B, tol), V, tol);
    if (seed.dim() == 0) return zero_space(n);
    const Matrix F = detail::base_friend(A, B, V);
    const Matrix Acl = A + B * F;
    const Matrix PV = V.projector(); // R* lives inside V*; keep the iteration there
    Subspace R = seed;
    for (Eigen::Index it = 0; it < n; ++it) {
        const Subspace next = sum(R, image(PV * (Acl * R.basis), tol), tol);
        if (next.dim() == R.dim()) break;
        R = next;
    }
    return R;
}

// ----------------------------------------------------------------------------
// Input partition: G = [G1 G2] invertible, im(G1) = B^{-1} R*
// ----------------------------------------------------------------------------

inline Matrix input_partition(const Matrix& B, const Subspace& R, double tol = -1.0) {
    const auto m = B.cols();
    const Subspace pre = preimage(B, R, tol);
    Matrix G(m, m);
    G.leftCols(pre.dim()) = pre.basis;
    G.rightCols(m - pre.dim()) = numerics::kernel(pre.basis.transpose());
    return G;
}

// ----------------------------------------------------------------------------
// Full decomposition
// ----------------------------------------------------------------------------

/// Coordinate change, input partition, friend feedback and the block form of
/// the transformed plant. First rho columns of T span R*, first nu span V*.
struct Decomposition {
    Matrix T;      // n x n state transformation, z = T^{-1} x
    Matrix G;      // m x m input partition [G1 G2]
    Matrix F;      // m x n friend (physical coordinates), u = F x + G ubar
    Matrix Fbar;   // m x n, G^{-1} F T (transformed coordinates)
    Eigen::Index rho = 0;
    Eigen::Index nu = 0;
    Eigen::Index m1 = 0;

    Matrix Abar;   // T^{-1} A T (no friend)
    Matrix AbarF;  // T^{-1} (A + B F) T
    Matrix Bbar;   // T^{-1} B G
    Matrix Cbar;   // C T
    Matrix Ebar;   // T^{-1} E T
    Matrix Pbar;   // T^{-1} P
    Matrix Q;

    Eigen::Index n() const { return T.rows(); }
    Eigen::Index m() const { return G.rows(); }
    Eigen::Index p() const { return Cbar.rows(); }
    Eigen::Index n3() const { return n() - nu; }

    Matrix A11() const { return AbarF.topLeftCorner(rho, rho); }
    Matrix A12() const { return AbarF.block(0, rho, rho, nu - rho); }
    Matrix A13() const { return AbarF.block(0, nu, rho, n3()); }
    Matrix A22() const { return AbarF.block(rho, rho, nu - rho, nu - rho); }
    Matrix A23() const { return AbarF.block(rho, nu, nu - rho, n3()); }
    Matrix A33() const { return AbarF.bottomRightCorner(n3(), n3()); }
    Matrix B1() const { return Bbar.leftCols(m1); }
    Matrix B2() const { return Bbar.rightCols(m() - m1); }
    Matrix B32() const { return Bbar.bottomRightCorner(n3(), m() - m1); }
    Matrix C3() const { return Cbar.rightCols(n3()); }

    /// Invariant zeros of the plant = spectrum of the fixed flow zero-dynamics.
    Spectrum invariant_zeros() const { return numerics::eigvals(A22()); }
};

inline Decomposition decompose(const HybridPlant& plant,
                               const Spectrum& shift_targets = Spectrum(0),
                               double tol = -1.0, double pattern_tol = 1e-9) {
    plant.validate();
    const auto n = plant.n();
    const auto m = plant.m();
    if (numerics::rank(plant.B) != m) throw Error("decompose: B is not full column rank");
    if (plant.p() > 0 && numerics::rank(plant.C) != plant.p())
        throw Error("decompose: C is not full row rank");

    const Subspace V = vstar(plant.A, plant.B, plant.C, tol);
    const Subspace R = rstar(plant.A, plant.B, plant.C, V, tol);
    const Matrix F = friend_feedback(plant.A, plant.B, V, shift_targets, tol);
    const Matrix G = input_partition(plant.B, R, tol);

    Decomposition d;
    d.rho = R.dim();
    d.nu = V.dim();
    d.m1 = preimage(plant.B, R, tol).dim();

    // T columns: R* basis, orthonormal completion inside V*, orthogonal completion.
    Matrix T(n, n);
    T.leftCols(d.rho) = R.basis;
    if (d.nu > d.rho) {
        const Matrix res = (Matrix::Identity(n, n) - R.projector()) * V.basis;
        const Matrix V2 = numerics::orth(res);
        if (V2.cols() != d.nu - d.rho) throw Error("decompose: degenerate V*/R* completion");
        T.block(0, d.rho, n, d.nu - d.rho) = V2;
    }
    if (n > d.nu)
        T.rightCols(n - d.nu) = numerics::kernel(T.leftCols(d.nu).transpose());
    d.T = T;
    d.G = G;
    d.F = F;

    const Matrix Tinv = T.inverse();
    d.Abar = Tinv * plant.A * T;
    d.AbarF = Tinv * (plant.A + plant.B * F) * T;
    d.Bbar = Tinv * plant.B * G;
    d.Cbar = plant.C * T;
    d.Ebar = Tinv * plant.E * T;
    d.Pbar = Tinv * plant.P;
    d.Q = plant.Q;
    d.Fbar = G.inverse() * F * T;

    // Zero pattern of the transformed matrices, relative residuals.
    const double sA = std::max(1.0, d.AbarF.norm());
    const double sB = std::max(1.0, d.Bbar.norm());
    const double sC = std::max(1.0, d.Cbar.norm());
    double resid = 0.0;
    resid = std::max(resid, d.AbarF.block(d.rho, 0, n - d.rho, d.rho).norm() / sA);
    resid = std::max(resid, d.AbarF.block(d.nu, d.rho, n - d.nu, d.nu - d.rho).norm() / sA);
    resid = std::max(resid, d.Bbar.block(d.rho, 0, n - d.rho, d.m1).norm() / sB);
    if (d.nu > 0) resid = std::max(resid, d.Cbar.leftCols(d.nu).norm() / sC);
    if (resid > pattern_tol)
        throw Error("decompose: zero pattern residual " + std::to_string(resid) +
                    " (numerically dependent basis)");
    // Enforce the pattern exactly; downstream block algebra relies on it.
    d.AbarF.block(d.rho, 0, n - d.rho, d.rho).setZero();
    d.AbarF.block(d.nu, d.rho, n - d.nu, d.nu - d.rho).setZero();
    d.Bbar.block(d.rho, 0, n - d.rho, d.m1).setZero();
    if (d.nu > 0) d.Cbar.leftCols(d.nu).setZero();
    return d;
}

} // namespace geometry
} // namespace regpilot
