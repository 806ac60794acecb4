#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace regpilot {

using Matrix  = Eigen::MatrixXd;
using Vector  = Eigen::VectorXd;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using Complex = std::complex<double>;

/// Full spectrum of a square matrix, with multiplicity.
using Spectrum = Eigen::VectorXcd;

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Monic real polynomial. coeffs[j] multiplies s^j; the leading coefficient
/// (degree = coeffs.size()) is an implicit 1.
struct PolyCoeffs {
    Vector coeffs;

    int degree() const { return static_cast<int>(coeffs.size()); }

    double eval(double s) const {
        double v = 1.0;
        for (int j = degree() - 1; j >= 0; --j)
            v = v * s + coeffs[j];
        return v;
    }

    Complex eval(Complex s) const {
        Complex v = 1.0;
        for (int j = degree() - 1; j >= 0; --j)
            v = v * s + coeffs[j];
        return v;
    }

    // Horner in matrix arithmetic; p(M).
    Matrix eval(const Matrix& M) const {
        const auto n = M.rows();
        Matrix v = Matrix::Identity(n, n);
        for (int j = degree() - 1; j >= 0; --j)
            v = v * M + coeffs[j] * Matrix::Identity(n, n);
        return v;
    }
};

namespace numerics {

// ============================================================================
// Tolerances
// ============================================================================

/// Relative rank cutoff scale. REGPILOT_TOL, when set, replaces the default
/// max(rows,cols)*eps factor (still relative to the largest singular value).
inline double rank_tol_override() {
    static const double v = [] {
        if (const char* s = std::getenv("REGPILOT_TOL")) {
            char* end = nullptr;
            double x = std::strtod(s, &end);
            if (end != s && x > 0.0) return x;
        }
        return -1.0;
    }();
    return v;
}

inline double default_rank_rel_tol(Eigen::Index rows, Eigen::Index cols) {
    const double o = rank_tol_override();
    if (o > 0.0) return o;
    return static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon();
}

// ============================================================================
// Rank / pseudo-inverse / subspace kernels (SVD-backed)
// ============================================================================

inline Eigen::Index rank(const Matrix& M, double rel_tol = -1.0) {
    if (M.size() == 0) return 0;
    Eigen::JacobiSVD<Matrix> svd(M);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv[0] == 0.0) return 0;
    if (rel_tol <= 0.0) rel_tol = default_rank_rel_tol(M.rows(), M.cols());
    const double cut = rel_tol * sv[0];
    Eigen::Index r = 0;
    while (r < sv.size() && sv[r] > cut) ++r;
    return r;
}

/// Smallest singular value (0 for empty input).
inline double sigma_min(const Matrix& M) {
    if (M.size() == 0) return 0.0;
    Eigen::JacobiSVD<Matrix> svd(M);
    return svd.singularValues().minCoeff();
}

inline Matrix pinv(const Matrix& M, double rel_tol = -1.0) {
    if (M.size() == 0) return Matrix(M.cols(), M.rows());
    Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (rel_tol <= 0.0) rel_tol = default_rank_rel_tol(M.rows(), M.cols());
    const double cut = (sv.size() > 0) ? rel_tol * sv[0] : 0.0;
    Vector inv = Vector::Zero(sv.size());
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv[i] > cut) inv[i] = 1.0 / sv[i];
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

/// Orthonormal basis of im(M); n x r with r = rank(M).
inline Matrix orth(const Matrix& M, double rel_tol = -1.0) {
    if (M.size() == 0 || M.cols() == 0) return Matrix(M.rows(), 0);
    Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    if (rel_tol <= 0.0) rel_tol = default_rank_rel_tol(M.rows(), M.cols());
    const double cut = (sv.size() > 0) ? rel_tol * sv[0] : 0.0;
    Eigen::Index r = 0;
    while (r < sv.size() && sv[r] > cut) ++r;
    return svd.matrixU().leftCols(r);
}

/// Orthonormal basis of ker(M); cols(M) x (cols - rank). `scale_floor` sets a
/// lower bound on the quantity the relative cutoff applies to, so that a
/// matrix that is pure roundoff relative to its source data reads as zero.
inline Matrix kernel(const Matrix& M, double rel_tol = -1.0, double scale_floor = 0.0) {
    if (M.rows() == 0 || M.size() == 0) return Matrix::Identity(M.cols(), M.cols());
    Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (rel_tol <= 0.0) rel_tol = default_rank_rel_tol(M.rows(), M.cols());
    const double scale = std::max(sv.size() > 0 ? sv[0] : 0.0, scale_floor);
    const double cut = rel_tol * scale;
    Eigen::Index r = 0;
    while (r < sv.size() && sv[r] > cut) ++r;
    return svd.matrixV().rightCols(M.cols() - r);
}

/// Rank of a complex matrix through the doubled real embedding
/// [Re -Im; Im Re]; the embedding has every singular value twice.
inline Eigen::Index rank_complex(const CMatrix& M, double rel_tol = -1.0) {
    if (M.size() == 0) return 0;
    Matrix R(2 * M.rows(), 2 * M.cols());
    R << M.real(), -M.imag(), M.imag(), M.real();
    return rank(R, rel_tol) / 2;
}

inline double sigma_min_complex(const CMatrix& M) {
    if (M.size() == 0) return 0.0;
    Matrix R(2 * M.rows(), 2 * M.cols());
    R << M.real(), -M.imag(), M.imag(), M.real();
    return sigma_min(R);
}

// ============================================================================
// Kronecker product
// ============================================================================

inline Matrix kron(const Matrix& A, const Matrix& B) {
    Matrix K(A.rows() * B.rows(), A.cols() * B.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j)
            K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    return K;
}

// ============================================================================
// Matrix exponential: scaling-and-squaring with the [13/13] diagonal Pade
// approximant
// ============================================================================

namespace detail {

inline Matrix expm_pade13(const Matrix& A) {
    static const double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                               1187353796428800.0,  129060195264000.0,   10559470521600.0,
                               670442572800.0,      33522128640.0,       1323241920.0,
                               40840800.0,          960960.0,            16380.0,
                               182.0,               1.0};
    const auto n = A.rows();
    const Matrix I = Matrix::Identity(n, n);
    const Matrix A2 = A * A;
    const Matrix A4 = A2 * A2;
    const Matrix A6 = A2 * A4;
    const Matrix U = A * (A6 * (b[13] * A6 + b[11] * A4 + b[9] * A2) +
                          b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I);
    const Matrix V = A6 * (b[12] * A6 + b[10] * A4 + b[8] * A2) +
                     b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I;
    return (V - U).partialPivLu().solve(V + U);
}

} // namespace detail

/// e^{M t}.
inline Matrix expm(const Matrix& M, double t = 1.0) {
    if (M.rows() != M.cols()) throw Error("expm: matrix must be square");
    if (!std::isfinite(t)) throw Error("expm: non-finite scale");
    const auto n = M.rows();
    if (n == 0) return Matrix(0, 0);
    Matrix A = M * t;
    if (!A.allFinite()) throw Error("expm: non-finite entries");
    const double theta13 = 5.371920351148152;
    const double nrm = A.cwiseAbs().colwise().sum().maxCoeff(); // 1-norm
    int s = 0;
    if (nrm > theta13) s = static_cast<int>(std::ceil(std::log2(nrm / theta13)));
    A /= std::pow(2.0, s);
    Matrix E = detail::expm_pade13(A);
    for (int i = 0; i < s; ++i) E = E * E;
    return E;
}

/// Integral of the exponential: phi1(M, t) = \int_0^t e^{M s} ds.
/// Series with repeated doubling; well defined for singular M.
inline Matrix expm_integral(const Matrix& M, double t) {
    if (M.rows() != M.cols()) throw Error("expm_integral: matrix must be square");
    const auto n = M.rows();
    if (n == 0) return Matrix(0, 0);
    const Matrix I = Matrix::Identity(n, n);
    double nrm = (M * t).cwiseAbs().colwise().sum().maxCoeff();
    int s = 0;
    while (nrm > 0.5) { nrm /= 2.0; ++s; }
    const double h = t / std::pow(2.0, s);
    // Phi = \int_0^h e^{Ms} ds = sum_k M^k h^{k+1} / (k+1)!
    Matrix Phi = Matrix::Zero(n, n);
    Matrix term = h * I;
    for (int k = 0; k < 24; ++k) {
        Phi += term;
        term = (term * M) * (h / (k + 2.0));
    }
    Matrix E = expm(M, h);
    for (int i = 0; i < s; ++i) {
        Phi = Phi + E * Phi; // \int_0^{2h} = \int_0^h + e^{Mh} \int_0^h
        E = E * E;
    }
    return Phi;
}

// ============================================================================
// Principal matrix logarithm: inverse scaling-and-squaring on the complex
// Schur form, Gauss-Legendre Pade evaluation of log(I+X)
// ============================================================================

namespace detail {

/// Principal square root of an upper-triangular complex matrix
/// (Bjorck-Hammarling recurrence).
inline CMatrix sqrtm_triangular(const CMatrix& T) {
    const auto n = T.rows();
    CMatrix R = CMatrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) R(i, i) = std::sqrt(T(i, i));
    for (Eigen::Index d = 1; d < n; ++d) {
        for (Eigen::Index i = 0; i + d < n; ++i) {
            const Eigen::Index j = i + d;
            Complex s = T(i, j);
            for (Eigen::Index k = i + 1; k < j; ++k) s -= R(i, k) * R(k, j);
            const Complex den = R(i, i) + R(j, j);
            if (std::abs(den) == 0.0) throw Error("logm: singular square-root recurrence");
            R(i, j) = s / den;
        }
    }
    return R;
}

/// Gauss-Legendre nodes/weights on [0,1] via the Golub-Welsch tridiagonal.
inline void gauss_legendre01(int m, Vector& nodes, Vector& weights) {
    Matrix J = Matrix::Zero(m, m);
    for (int k = 1; k < m; ++k) {
        const double b = k / std::sqrt(4.0 * k * k - 1.0);
        J(k - 1, k) = b;
        J(k, k - 1) = b;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(J);
    nodes.resize(m);
    weights.resize(m);
    for (int k = 0; k < m; ++k) {
        nodes[k] = 0.5 * (es.eigenvalues()[k] + 1.0);
        const double v0 = es.eigenvectors()(0, k);
        weights[k] = v0 * v0; // 2*v0^2 on [-1,1], halved by the interval map
    }
}

} // namespace detail

/// Principal logarithm; requires an invertible input with no eigenvalue on
/// the closed negative real axis.
inline Matrix logm(const Matrix& M) {
    if (M.rows() != M.cols()) throw Error("logm: matrix must be square");
    const auto n = M.rows();
    if (n == 0) return Matrix(0, 0);
    Eigen::ComplexSchur<CMatrix> schur(M.cast<Complex>());
    if (schur.info() != Eigen::Success) throw Error("logm: Schur reduction failed");
    CMatrix T = schur.matrixT();
    const CMatrix Q = schur.matrixU();
    const double scale = M.norm();
    for (Eigen::Index i = 0; i < n; ++i) {
        const Complex lam = T(i, i);
        if (std::abs(lam) <= 1e-14 * std::max(1.0, scale))
            throw Error("logm: singular matrix");
        if (lam.real() <= 0.0 && std::abs(lam.imag()) <= 1e-14 * std::abs(lam))
            throw Error("logm: eigenvalue on the negative real axis (sampling time too coarse)");
    }
    const CMatrix I = CMatrix::Identity(n, n);
    int k = 0;
    while ((T - I).norm() > 0.25) {
        if (++k > 80) throw Error("logm: square-root iteration did not converge");
        T = detail::sqrtm_triangular(T);
    }
    Vector nodes, weights;
    detail::gauss_legendre01(8, nodes, weights);
    const CMatrix X = T - I;
    CMatrix L = CMatrix::Zero(n, n);
    for (int j = 0; j < 8; ++j)
        L += weights[j] * (X * (I + nodes[j] * X).partialPivLu().solve(I));
    L *= std::pow(2.0, k);
    const CMatrix out = Q * L * Q.adjoint();
    if (out.imag().norm() > 1e-8 * (1.0 + out.real().norm()))
        throw Error("logm: result failed to realify (non-principal spectrum?)");
    return out.real();
}

// ============================================================================
// Eigenvalues (real Schur reduction via Eigen; 2x2 blocks give the pairs)
// ============================================================================

inline Spectrum eigvals(const Matrix& M) {
    if (M.rows() != M.cols()) throw Error("eigvals: matrix must be square");
    if (M.rows() == 0) return Spectrum(0);
    Eigen::EigenSolver<Matrix> es(M, /*computeEigenvectors=*/false);
    if (es.info() != Eigen::Success) throw Error("eigvals: QR iteration did not converge");
    return es.eigenvalues();
}

inline double spectral_radius(const Matrix& M) {
    if (M.rows() == 0) return 0.0;
    return eigvals(M).cwiseAbs().maxCoeff();
}

inline std::vector<Complex> sorted_spectrum(const Spectrum& s) {
    std::vector<Complex> v(s.data(), s.data() + s.size());
    std::sort(v.begin(), v.end(), [](const Complex& a, const Complex& b) {
        if (a.real() != b.real()) return a.real() < b.real();
        return a.imag() < b.imag();
    });
    return v;
}

/// Largest pairing distance under a best-first greedy matching of the two
/// multisets; infinity on size mismatch.
inline double spectrum_distance(const Spectrum& a, const Spectrum& b) {
    if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
    const auto n = a.size();
    std::vector<bool> ua(n, false), ub(n, false);
    double worst = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
        double best = std::numeric_limits<double>::infinity();
        Eigen::Index bi = -1, bj = -1;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (ua[i]) continue;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (ub[j]) continue;
                const double d = std::abs(a[i] - b[j]);
                if (d < best) { best = d; bi = i; bj = j; }
            }
        }
        ua[bi] = ub[bj] = true;
        worst = std::max(worst, best);
    }
    return worst;
}

inline bool inside_unit_disk(const Spectrum& s, double margin = 0.0) {
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (std::abs(s[i]) >= 1.0 - margin) return false;
    return true;
}

inline bool conjugate_closed(const Spectrum& s, double tol = 1e-9) {
    Spectrum c = s.conjugate();
    return spectrum_distance(s, c) <= tol;
}

// ============================================================================
// Minimal polynomial via rank of stacked vectorized powers
// ============================================================================

inline PolyCoeffs minimal_polynomial(const Matrix& M, double tol = -1.0) {
    if (M.rows() != M.cols()) throw Error("minimal_polynomial: matrix must be square");
    const auto n = M.rows();
    if (n == 0) return PolyCoeffs{Vector(0)};
    const double alpha = std::max(1.0, M.cwiseAbs().maxCoeff());
    const Matrix Ms = M / alpha;
    std::vector<Matrix> powers;
    powers.push_back(Matrix::Identity(n, n));
    Matrix stacked(n * n, n + 1);
    for (int k = 1; k <= n; ++k) {
        powers.push_back(powers.back() * Ms);
        for (int j = 0; j <= k; ++j)
            stacked.col(j) = Eigen::Map<const Vector>(powers[j].data(), n * n);
        const Matrix W = stacked.leftCols(k + 1);
        const Eigen::Index r = rank(W, tol);
        if (r < k + 1) {
            // vec(Ms^k) depends on the lower powers; solve for the combination.
            const Matrix V = W.leftCols(k);
            const Vector rhs = W.col(k);
            const Vector c = V.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(rhs);
            Vector a(k);
            for (int j = 0; j < k; ++j)
                a[j] = -c[j] * std::pow(alpha, k - j); // undo the scaling
            return PolyCoeffs{a};
        }
    }
    // Full degree: the characteristic polynomial, from the spectrum.
    const Spectrum lam = eigvals(M);
    std::vector<Complex> asc{1.0}; // ascending coefficients of prod (s - lam_i)
    for (Eigen::Index i = 0; i < n; ++i) {
        std::vector<Complex> nxt(asc.size() + 1, 0.0);
        for (std::size_t j = 0; j < asc.size(); ++j) {
            nxt[j + 1] += asc[j];
            nxt[j] -= lam[i] * asc[j];
        }
        asc = std::move(nxt);
    }
    Vector a(n);
    for (Eigen::Index j = 0; j < n; ++j) a[j] = asc[static_cast<std::size_t>(j)].real();
    return PolyCoeffs{a};
}

/// Product of two monic polynomials.
inline PolyCoeffs poly_mul(const PolyCoeffs& a, const PolyCoeffs& b) {
    const int da = a.degree(), db = b.degree();
    Vector full_a(da + 1), full_b(db + 1);
    full_a << a.coeffs, 1.0;
    full_b << b.coeffs, 1.0;
    Vector prod = Vector::Zero(da + db + 1);
    for (int i = 0; i <= da; ++i)
        for (int j = 0; j <= db; ++j) prod[i + j] += full_a[i] * full_b[j];
    return PolyCoeffs{prod.head(da + db)};
}

/// Monic real polynomial with the given conjugate-closed root multiset.
inline PolyCoeffs poly_from_roots(const std::vector<Complex>& roots) {
    std::vector<Complex> asc{1.0};
    for (const Complex& r : roots) {
        std::vector<Complex> nxt(asc.size() + 1, 0.0);
        for (std::size_t j = 0; j < asc.size(); ++j) {
            nxt[j + 1] += asc[j];
            nxt[j] -= r * asc[j];
        }
        asc = std::move(nxt);
    }
    Vector a(static_cast<Eigen::Index>(roots.size()));
    for (std::size_t j = 0; j < roots.size(); ++j) a[static_cast<Eigen::Index>(j)] = asc[j].real();
    return PolyCoeffs{a};
}

/// Characteristic polynomial (full multiplicity) from the spectrum.
inline PolyCoeffs char_poly(const Matrix& M) {
    const Spectrum lam = eigvals(M);
    return poly_from_roots({lam.data(), lam.data() + lam.size()});
}

// ============================================================================
// Companion matrix (lower form: superdiagonal ones, last row -a_0..-a_{d-1})
// ============================================================================

inline Matrix companion(const PolyCoeffs& p) {
    const int d = p.degree();
    if (d < 1) throw Error("companion: degree must be >= 1");
    Matrix C = Matrix::Zero(d, d);
    for (int i = 0; i + 1 < d; ++i) C(i, i + 1) = 1.0;
    for (int j = 0; j < d; ++j) C(d - 1, j) = -p.coeffs[j];
    return C;
}

// ============================================================================
// Controllable-subspace staircase split
// ============================================================================

/// Orthonormal basis of the reachable subspace of (Phi, Gam).
inline Matrix controllable_subspace(const Matrix& Phi, const Matrix& Gam, double tol = -1.0) {
    const auto n = Phi.rows();
    Matrix V = orth(Gam, tol);
    for (Eigen::Index it = 0; it < n; ++it) {
        if (V.cols() == 0 || V.cols() == n) break;
        Matrix W(n, 2 * V.cols());
        W << V, Phi * V;
        Matrix V2 = orth(W, tol);
        if (V2.cols() == V.cols()) { V = V2; break; }
        V = V2;
    }
    return V;
}

// ============================================================================
// Pole placement: sequential orthogonal deflation (1-dim steps for real
// targets, 2-dim for conjugate pairs) on the controllable part
// ============================================================================

namespace detail {

struct TargetGroup {
    Complex lambda;
    bool pair; // true: lambda and conj(lambda)
};

inline std::vector<TargetGroup> group_targets(const Spectrum& targets, double tol) {
    std::vector<Complex> pool = sorted_spectrum(targets);
    std::vector<TargetGroup> groups;
    std::vector<bool> used(pool.size(), false);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (used[i]) continue;
        used[i] = true;
        if (std::abs(pool[i].imag()) <= tol) {
            groups.push_back({Complex(pool[i].real(), 0.0), false});
            continue;
        }
        bool matched = false;
        for (std::size_t j = i + 1; j < pool.size(); ++j) {
            if (!used[j] && std::abs(pool[j] - std::conj(pool[i])) <= tol) {
                used[j] = true;
                matched = true;
                break;
            }
        }
        if (!matched) throw Error("pole placement: targets are not conjugate-closed");
        groups.push_back({pool[i].imag() > 0 ? std::conj(pool[i]) : pool[i], true});
    }
    std::stable_sort(groups.begin(), groups.end(), [](const TargetGroup& a, const TargetGroup& b) {
        return std::abs(a.lambda) < std::abs(b.lambda);
    });
    return groups;
}

/// Kernel direction of [A - lambda I | B] with the largest state component.
inline bool assignable_direction(const CMatrix& A, const CMatrix& B, Complex lambda,
                                 CVector& x, CVector& u) {
    const auto d = A.rows();
    const auto m = B.cols();
    CMatrix P(d, d + m);
    P << A - lambda * CMatrix::Identity(d, d), B;
    Eigen::JacobiSVD<CMatrix> svd(P, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double cut = (sv.size() > 0 ? sv[0] : 0.0) * default_rank_rel_tol(d, d + m) * 16.0;
    Eigen::Index r = 0;
    while (r < sv.size() && sv[r] > cut) ++r;
    const Eigen::Index z = d + m - r;
    if (z <= 0) return false;
    const CMatrix Z = svd.matrixV().rightCols(z);
    // Combination maximizing the state part.
    Eigen::JacobiSVD<CMatrix> top(Z.topRows(d), Eigen::ComputeFullV);
    if (top.singularValues().size() == 0 || top.singularValues()[0] < 1e-12) return false;
    const CVector c = top.matrixV().col(0);
    const CVector v = Z * c;
    x = v.head(d);
    u = v.tail(m);
    const double nx = x.norm();
    if (nx < 1e-12) return false;
    x /= nx;
    u /= nx;
    return true;
}

inline Matrix place_recursive(const Matrix& A, const Matrix& B,
                              const std::vector<TargetGroup>& groups, std::size_t gi) {
    const auto d = A.rows();
    const auto m = B.cols();
    if (d == 0) return Matrix(m, 0);
    if (gi >= groups.size()) throw Error("pole placement: target count mismatch");
    const TargetGroup& g = groups[gi];

    CVector xc, uc;
    if (!assignable_direction(A.cast<Complex>(), B.cast<Complex>(), g.lambda, xc, uc))
        throw Error("pole placement: mode is not assignable (uncontrollable target)");

    if (!g.pair) {
        Vector x = xc.real();
        Vector u = uc.real();
        // A real eigenvalue of a real pencil admits a real kernel direction;
        // rotate the complex phase out if the SVD returned one.
        if (x.norm() < 0.5) {
            Eigen::Index imax;
            xc.cwiseAbs().maxCoeff(&imax);
            const Complex phase = xc[imax] / std::abs(xc[imax]);
            x = (xc / phase).real();
            u = (uc / phase).real();
        }
        const double nx = x.norm();
        if (nx < 1e-12) throw Error("pole placement: degenerate direction");
        x /= nx;
        u /= nx;
        Eigen::HouseholderQR<Matrix> qr(x);
        const Matrix Q = qr.householderQ();       // Q e1 = +-x
        const double sgn = (Q.col(0).dot(x) >= 0) ? 1.0 : -1.0;
        const Matrix H = Q.transpose();           // H x = sgn * e1
        const Matrix A1 = H * A * H.transpose();
        const Matrix B1 = H * B;
        Matrix K1 = Matrix::Zero(m, d);
        K1.col(0) = sgn * u;
        const Matrix M1 = A1 + B1 * K1;
        Matrix K(m, d);
        if (d > 1) {
            const Matrix K2 = place_recursive(M1.bottomRightCorner(d - 1, d - 1),
                                              B1.bottomRows(d - 1), groups, gi + 1);
            Matrix Kt = K1;
            Kt.rightCols(d - 1) += K2;
            K = Kt * H;
        } else {
            K = K1 * H;
        }
        return K;
    }

    // Conjugate pair: two-dimensional real deflation.
    if (d < 2) throw Error("pole placement: conjugate pair does not fit");
    Matrix X(d, 2), U(m, 2);
    X.col(0) = xc.real();
    X.col(1) = xc.imag();
    U.col(0) = uc.real();
    U.col(1) = uc.imag();
    if (rank(X) < 2)
        throw Error("pole placement: degenerate complex direction");
    Eigen::HouseholderQR<Matrix> qr(X);
    const Matrix Q = qr.householderQ();
    const Matrix H = Q.transpose();
    const Matrix R = (H * X).topRows(2); // X = H' [R; 0]
    const Matrix A1 = H * A * H.transpose();
    const Matrix B1 = H * B;
    Matrix K1 = Matrix::Zero(m, d);
    K1.leftCols(2) = U * R.inverse();
    const Matrix M1 = A1 + B1 * K1;
    Matrix K(m, d);
    if (d > 2) {
        const Matrix K2 = place_recursive(M1.bottomRightCorner(d - 2, d - 2),
                                          B1.bottomRows(d - 2), groups, gi + 1);
        Matrix Kt = K1;
        Kt.rightCols(d - 2) += K2;
        K = Kt * H;
    } else {
        K = K1 * H;
    }
    return K;
}

} // namespace detail

/// Core placement: K with Lambda(Phi + Gam K) = targets. Targets matching the
/// uncontrollable spectrum (within match_tol) are pinned there; any other
/// uncontrollable requirement throws.
inline Matrix place_poles(const Matrix& Phi, const Matrix& Gam, const Spectrum& targets,
                          double match_tol = 1e-6) {
    if (Phi.rows() != Phi.cols()) throw Error("place_poles: non-square state matrix");
    if (Gam.rows() != Phi.rows()) throw Error("place_poles: dimension mismatch");
    if (targets.size() != Phi.rows()) throw Error("place_poles: need one target per state");
    const auto n = Phi.rows();
    const auto m = Gam.cols();
    if (n == 0) return Matrix(m, 0);

    const Matrix Vc = controllable_subspace(Phi, Gam);
    const auto nc = Vc.cols();
    Matrix K = Matrix::Zero(m, n);

    std::vector<Complex> want = sorted_spectrum(targets);
    if (nc < n) {
        Matrix U(n, n);
        U.leftCols(nc) = Vc;
        U.rightCols(n - nc) = kernel(Vc.transpose());
        const Matrix Phiu = U.rightCols(n - nc).transpose() * Phi * U.rightCols(n - nc);
        const Spectrum fixed = eigvals(Phiu);
        // Remove the frozen spectrum from the request.
        for (Eigen::Index i = 0; i < fixed.size(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t bj = 0;
            for (std::size_t j = 0; j < want.size(); ++j) {
                const double dd = std::abs(want[j] - fixed[i]);
                if (dd < best) { best = dd; bj = j; }
            }
            if (want.empty() || best > match_tol)
                throw Error("place_poles: uncontrollable mode not covered by targets "
                            "(solvability violation)");
            want.erase(want.begin() + static_cast<std::ptrdiff_t>(bj));
        }
        const Matrix Phic = Vc.transpose() * Phi * Vc;
        const Matrix Gamc = Vc.transpose() * Gam;
        Spectrum tc(static_cast<Eigen::Index>(want.size()));
        for (std::size_t j = 0; j < want.size(); ++j) tc[static_cast<Eigen::Index>(j)] = want[j];
        const auto groups = detail::group_targets(tc, match_tol);
        const Matrix Kc = detail::place_recursive(Phic, Gamc, groups, 0);
        K = Kc * Vc.transpose();
    } else {
        const auto groups = detail::group_targets(targets, match_tol);
        K = detail::place_recursive(Phi, Gam, groups, 0);
    }
    return K;
}

/// Discrete-time placement per the stabilizer contract: targets must be
/// conjugate-closed and strictly inside the unit disk; achieved spectrum is
/// verified to 1e-6.
inline Matrix place_discrete(const Matrix& Phi, const Matrix& Gam, const Spectrum& targets) {
    if (!conjugate_closed(targets))
        throw Error("place_discrete: targets must be conjugate-closed");
    if (!inside_unit_disk(targets))
        throw Error("place_discrete: targets must lie strictly inside the unit disk");
    const Matrix K = place_poles(Phi, Gam, targets);
    const Spectrum got = eigvals(Phi + Gam * K);
    if (spectrum_distance(got, targets) > 1e-6)
        throw Error("place_discrete: requested spectrum not achieved");
    return K;
}

} // namespace numerics
} // namespace regpilot
