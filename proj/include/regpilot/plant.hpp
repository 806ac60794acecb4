#pragma once

#include "regpilot/numerics.hpp"

namespace regpilot {

/// Linear hybrid plant with periodic time-driven jumps:
///   xdot = A x + B u + P w,   e = C x + Q w,   x+ = E x.
struct HybridPlant {
    Matrix A, B, P, C, Q, E;

    Eigen::Index n() const { return A.rows(); }
    Eigen::Index m() const { return B.cols(); }
    Eigen::Index p() const { return C.rows(); }
    Eigen::Index q() const { return P.cols(); }

    void validate() const {
        const auto nn = n();
        if (A.cols() != nn) throw Error("plant: A must be square");
        if (B.rows() != nn) throw Error("plant: B row count mismatch");
        if (C.cols() != nn) throw Error("plant: C column count mismatch");
        if (E.rows() != nn || E.cols() != nn) throw Error("plant: E must be n x n");
        if (P.rows() != nn) throw Error("plant: P row count mismatch");
        if (Q.rows() != C.rows() || Q.cols() != P.cols())
            throw Error("plant: Q must be p x q");
        if (!A.allFinite() || !B.allFinite() || !P.allFinite() || !C.allFinite() ||
            !Q.allFinite() || !E.allFinite())
            throw Error("plant: non-finite entries");
    }
};

/// Exosystem  wdot = S w,  w+ = J w,  with jump period tau_M.
struct ExosystemSpec {
    Matrix S, J;
    double tau_M = 0.0;

    Eigen::Index q() const { return S.rows(); }

    void validate() const {
        if (S.rows() != S.cols()) throw Error("exosystem: S must be square");
        if (J.rows() != S.rows() || J.cols() != S.cols())
            throw Error("exosystem: J must match S");
        if (!(tau_M > 0.0)) throw Error("exosystem: tau_M must be positive");
    }

    /// One-period exosystem map J e^{S tau_M}.
    Matrix monodromy() const { return J * numerics::expm(S, tau_M); }
};

} // namespace regpilot
