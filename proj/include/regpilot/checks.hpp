#pragma once

#include "regpilot/geometry.hpp"

#include <sstream>

namespace regpilot {
namespace checks {

struct RankWitness {
    Complex at;             // tested point (eigenvalue), 0 for scalar clauses
    Eigen::Index achieved;
    Eigen::Index required;
    double sigma;           // required-th singular value at the tested point
};

struct CheckReport {
    std::string name;
    bool passed = true;
    std::vector<RankWitness> witnesses;
    double margin = std::numeric_limits<double>::infinity();
    std::string note;

    void add(const RankWitness& w) {
        witnesses.push_back(w);
        passed = passed && (w.achieved >= w.required);
        margin = std::min(margin, w.sigma);
    }

    std::string to_string() const {
        std::ostringstream os;
        os << (passed ? "[PASS] " : "[FAIL] ") << name;
        if (!witnesses.empty()) {
            os.setf(std::ios::scientific);
            os.precision(3);
            os << " (margin " << margin << ")";
        }
        if (!note.empty()) os << " -- " << note;
        os << "\n";
        for (const auto& w : witnesses) {
            os << "    at s = " << w.at.real();
            if (w.at.imag() >= 0) os << "+";
            os << w.at.imag() << "i: rank " << w.achieved << "/" << w.required
               << (w.achieved >= w.required ? "" : "  <-- deficient") << "\n";
        }
        return os.str();
    }
};

/// [B, A B, ..., A^{n-1} B].
inline Matrix reachability_matrix(const Matrix& A, const Matrix& B) {
    const auto n = A.rows();
    Matrix R(n, n * B.cols());
    Matrix P = B;
    for (Eigen::Index k = 0; k < n; ++k) {
        R.middleCols(k * B.cols(), B.cols()) = P;
        P = A * P;
    }
    return R;
}

/// [C; C A; ...; C A^{n-1}].
inline Matrix observability_matrix(const Matrix& A, const Matrix& C) {
    const auto n = A.rows();
    Matrix O(n * C.rows(), n);
    Matrix P = C;
    for (Eigen::Index k = 0; k < n; ++k) {
        O.middleRows(k * C.rows(), C.rows()) = P;
        P = P * A;
    }
    return O;
}

namespace detail {

/// k-th largest singular value of a complex matrix via the real embedding
/// (each complex singular value appears twice).
inline double kth_sigma_complex(const CMatrix& M, Eigen::Index k) {
    if (M.size() == 0) return 0.0;
    Matrix R(2 * M.rows(), 2 * M.cols());
    R << M.real(), -M.imag(), M.imag(), M.real();
    Eigen::JacobiSVD<Matrix> svd(R);
    const auto& sv = svd.singularValues();
    const Eigen::Index idx = 2 * (k - 1);
    return idx < sv.size() ? sv[idx] : 0.0;
}

inline RankWitness rank_witness(const CMatrix& M, Complex at, Eigen::Index required) {
    RankWitness w;
    w.at = at;
    w.achieved = numerics::rank_complex(M);
    w.required = required;
    w.sigma = kth_sigma_complex(M, required);
    return w;
}

/// Eigenvalues of M clustered to within tol; returns (representative, count).
inline std::vector<std::pair<Complex, int>> cluster(const Spectrum& s, double tol) {
    std::vector<std::pair<Complex, int>> out;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        bool merged = false;
        for (auto& [rep, cnt] : out) {
            if (std::abs(s[i] - rep) <= tol) {
                rep = (rep * static_cast<double>(cnt) + s[i]) / static_cast<double>(cnt + 1);
                ++cnt;
                merged = true;
                break;
            }
        }
        if (!merged) out.emplace_back(s[i], 1);
    }
    return out;
}

} // namespace detail

// ----------------------------------------------------------------------------
// Monodromy and the GES test
// ----------------------------------------------------------------------------

struct MonodromyResult {
    Matrix Etilde;
    Spectrum spectrum;
    bool ges = false;
};

inline MonodromyResult monodromy(const Matrix& E_a, const Matrix& A_a, double tau_M) {
    if (E_a.rows() != E_a.cols() || A_a.rows() != A_a.cols() || E_a.rows() != A_a.rows())
        throw Error("monodromy: matrices must be square and of equal size");
    MonodromyResult r;
    r.Etilde = E_a * numerics::expm(A_a, tau_M);
    r.spectrum = numerics::eigvals(r.Etilde);
    r.ges = numerics::inside_unit_disk(r.spectrum);
    return r;
}

// ----------------------------------------------------------------------------
// Assumption 1: over-actuation, full ranks, semi-simple boundary exosystem
// ----------------------------------------------------------------------------

inline CheckReport check_assumption1(const HybridPlant& plant, const ExosystemSpec& exo) {
    plant.validate();
    exo.validate();
    CheckReport rep;
    rep.name = "assumption1";

    const bool overactuated = plant.m() > plant.p();
    rep.add({Complex(0, 0), overactuated ? 1 : 0, 1,
             static_cast<double>(plant.m() - plant.p())});
    rep.add({Complex(0, 0), numerics::rank(plant.B), plant.m(), numerics::sigma_min(plant.B)});
    rep.add({Complex(0, 0), numerics::rank(plant.C), plant.p(), numerics::sigma_min(plant.C)});

    const Matrix Jt = exo.monodromy();
    const Spectrum lam = numerics::eigvals(Jt);
    const double ctol = 1e-6 * std::max(1.0, lam.cwiseAbs().maxCoeff());
    for (const auto& [rep_lam, alg] : detail::cluster(lam, ctol)) {
        // Semi-simplicity: geometric multiplicity must reach the algebraic one.
        const CMatrix shifted = Jt.cast<Complex>() - rep_lam * CMatrix::Identity(Jt.rows(), Jt.cols());
        const Eigen::Index geo = Jt.rows() - numerics::rank_complex(shifted);
        rep.add({rep_lam, geo, alg, std::abs(rep_lam)});
        // No exosystem mode may decay: |lambda| >= 1.
        const bool onb = std::abs(rep_lam) >= 1.0 - 1e-9;
        rep.add({rep_lam, onb ? 1 : 0, 1, std::abs(rep_lam)});
    }
    if (!overactuated) rep.note = "plant is not over-actuated (m <= p)";
    return rep;
}

// ----------------------------------------------------------------------------
// PBH-style hybrid stabilizability / detectability at unstable monodromy modes
// ----------------------------------------------------------------------------

inline CheckReport hybrid_stabilizability_raw(const std::string& name, const Matrix& Ejump,
                                              const Matrix& Aflow, const Matrix& B, double tau_M) {
    CheckReport rep;
    rep.name = name;
    const auto n = Aflow.rows();
    const Matrix mono = Ejump * numerics::expm(Aflow, tau_M);
    const Matrix reach = reachability_matrix(Aflow, B);
    const Spectrum lam = numerics::eigvals(mono);
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        if (std::abs(lam[i]) < 1.0 - 1e-9) continue;
        if (lam[i].imag() < -1e-12) continue; // one witness per conjugate pair
        CMatrix P(n, n + reach.cols());
        P << mono.cast<Complex>() - lam[i] * CMatrix::Identity(n, n), reach.cast<Complex>();
        rep.add(detail::rank_witness(P, lam[i], n));
    }
    if (rep.witnesses.empty()) rep.note = "monodromy already contractive (vacuous)";
    return rep;
}

inline CheckReport hybrid_detectability_raw(const std::string& name, const Matrix& Ejump,
                                            const Matrix& Aflow, const Matrix& C, double tau_M) {
    CheckReport rep;
    rep.name = name;
    const auto n = Aflow.rows();
    const Matrix mono = Ejump * numerics::expm(Aflow, tau_M);
    const Matrix obs = observability_matrix(Aflow, C);
    const Spectrum lam = numerics::eigvals(mono);
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        if (std::abs(lam[i]) < 1.0 - 1e-9) continue;
        if (lam[i].imag() < -1e-12) continue;
        CMatrix P(n + obs.rows(), n);
        P.topRows(n) = mono.cast<Complex>() - lam[i] * CMatrix::Identity(n, n);
        P.bottomRows(obs.rows()) = obs.cast<Complex>();
        rep.add(detail::rank_witness(P, lam[i], n));
    }
    if (rep.witnesses.empty()) rep.note = "monodromy already contractive (vacuous)";
    return rep;
}

inline CheckReport check_hybrid_stabilizability(const geometry::Decomposition& dec, double tau_M) {
    return hybrid_stabilizability_raw("hybrid_stabilizability", dec.Ebar, dec.AbarF, dec.Bbar,
                                      tau_M);
}

inline CheckReport check_hybrid_detectability(const geometry::Decomposition& dec, double tau_M) {
    return hybrid_detectability_raw("hybrid_detectability", dec.Ebar, dec.AbarF, dec.Cbar, tau_M);
}

// ----------------------------------------------------------------------------
// Non-resonance conditions at the exosystem modes
// ----------------------------------------------------------------------------

inline CheckReport check_nonresonance_flow(const geometry::Decomposition& dec,
                                           const ExosystemSpec& exo) {
    CheckReport rep;
    rep.name = "nonresonance_flow";
    const auto n3 = dec.n3();
    const auto p = dec.p();
    const auto m2 = dec.m() - dec.m1;
    const Matrix A33 = dec.A33();
    const Matrix B32 = dec.B32();
    const Matrix C3 = dec.C3();
    const Spectrum lam = numerics::eigvals(exo.S);
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        if (lam[i].imag() < -1e-12) continue;
        CMatrix P = CMatrix::Zero(n3 + p, n3 + m2);
        P.topLeftCorner(n3, n3) = A33.cast<Complex>() - lam[i] * CMatrix::Identity(n3, n3);
        P.topRightCorner(n3, m2) = B32.cast<Complex>();
        P.bottomLeftCorner(p, n3) = C3.cast<Complex>();
        rep.add(detail::rank_witness(P, lam[i], n3 + p));
    }
    return rep;
}

/// Jump non-resonance pencil. The printed pencil reuses the first block
/// column of Ebar as its third block column; ph_variant = true substitutes
/// the actual third block column instead.
inline CheckReport check_nonresonance_jump(const geometry::Decomposition& dec,
                                           const ExosystemSpec& exo, bool ph_variant = false) {
    CheckReport rep;
    rep.name = ph_variant ? "nonresonance_jump(variant)" : "nonresonance_jump";
    const auto n = dec.n();
    const auto nu = dec.nu;
    const auto rho = dec.rho;
    const double tau_M = exo.tau_M;

    Matrix Anu = Matrix::Zero(nu, nu);
    Anu.topLeftCorner(rho, rho) = dec.A11();
    Anu.topRightCorner(rho, nu - rho) = dec.A12();
    Anu.bottomRightCorner(nu - rho, nu - rho) = dec.A22();
    const Matrix Enu = numerics::expm(Anu, tau_M);

    const Eigen::Index wcols = ph_variant ? (n - nu) : rho;
    const Matrix third = ph_variant ? Matrix(dec.Ebar.rightCols(n - nu))
                                    : Matrix(dec.Ebar.leftCols(rho));

    const Matrix left = dec.Ebar.leftCols(nu) * Enu;
    const Spectrum lam = numerics::eigvals(exo.monodromy());
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        if (lam[i].imag() < -1e-12) continue;
        CMatrix P(n, nu + wcols);
        P.leftCols(nu) = left.cast<Complex>();
        P.rightCols(wcols) = third.cast<Complex>();
        for (Eigen::Index r = 0; r < nu; ++r) P(r, r) -= lam[i];
        rep.add(detail::rank_witness(P, lam[i], n));
    }
    if (nu + wcols < n)
        rep.note = "pencil is narrower than n; rank n unattainable";
    return rep;
}

/// All Assumption 2 conditions on a decomposed plant.
inline std::vector<CheckReport> check_all(const HybridPlant& plant, const ExosystemSpec& exo,
                                          const geometry::Decomposition& dec,
                                          bool ph_variant = false) {
    std::vector<CheckReport> reps;
    reps.push_back(check_assumption1(plant, exo));
    reps.push_back(check_hybrid_stabilizability(dec, exo.tau_M));
    reps.push_back(check_hybrid_detectability(dec, exo.tau_M));
    reps.push_back(check_nonresonance_flow(dec, exo));
    reps.push_back(check_nonresonance_jump(dec, exo, ph_variant));
    return reps;
}

} // namespace checks
} // namespace regpilot
