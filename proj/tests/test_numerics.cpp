#include "regpilot/numerics.hpp"

#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace regpilot;
using namespace regpilot::numerics;

namespace {

Matrix siv_A() {
    Matrix A(3, 3);
    A << -0.505, 0.707, 0.0, 0.303, -0.303, 0.0, 0.303, 0.707, -0.505;
    return A;
}

Matrix siv_B() {
    Matrix B(3, 2);
    B << 1.012, 1.012, 0.0, 1.012, 0.0, 1.012;
    return B;
}

Matrix rotation_gen() {
    Matrix S(2, 2);
    S << 0.0, 1.0, -1.0, 0.0;
    return S;
}

} // namespace

TEST_CASE("expm basics") {
    CHECK((expm(Matrix::Zero(3, 3), 5.0) - Matrix::Identity(3, 3)).norm() < 1e-14);

    Matrix D = Matrix::Zero(2, 2);
    D(0, 0) = 0.7;
    D(1, 1) = -1.3;
    const Matrix E = expm(D, 1.0);
    CHECK(E(0, 0) == Catch::Approx(std::exp(0.7)).epsilon(1e-13));
    CHECK(E(1, 1) == Catch::Approx(std::exp(-1.3)).epsilon(1e-13));
    CHECK(std::abs(E(0, 1)) + std::abs(E(1, 0)) < 1e-15);

    // Skew generator integrates to a rotation.
    for (double t : {0.3, 1.7, 6.5}) {
        const Matrix R = expm(rotation_gen(), t);
        Matrix Rexp(2, 2);
        Rexp << std::cos(t), std::sin(t), -std::sin(t), std::cos(t);
        CHECK((R - Rexp).norm() < 1e-13);
    }

    CHECK_THROWS_AS(expm(Matrix::Zero(2, 3), 1.0), Error);
}

TEST_CASE("expm agrees with the Taylor oracle") {
    std::mt19937 gen(42);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Index n = 2 + trial % 4; // up to 5x5
        Matrix M = oracles::random_matrix(n, n, gen);
        M *= 2.0 / std::max(1.0, M.norm());
        const Matrix err = expm(M, 1.0) - oracles::expm_taylor(M, 30);
        CHECK(err.norm() < 1e-10);
    }
}

TEST_CASE("expm_integral matches the invertible-case formula and semigroup") {
    std::mt19937 gen(7);
    Matrix A = oracles::random_matrix(4, 4, gen);
    const double t = 0.8;
    const Matrix Phi = expm_integral(A, t);
    const Matrix direct = A.inverse() * (expm(A, t) - Matrix::Identity(4, 4));
    CHECK((Phi - direct).norm() < 1e-11 * direct.norm());

    // Singular generator: phi1 still defined.
    Matrix N = Matrix::Zero(2, 2);
    N(0, 1) = 1.0;
    const Matrix PhiN = expm_integral(N, 2.0);
    CHECK(PhiN(0, 0) == Catch::Approx(2.0));
    CHECK(PhiN(0, 1) == Catch::Approx(2.0)); // \int_0^2 s ds
    CHECK(PhiN(1, 1) == Catch::Approx(2.0));
}

TEST_CASE("logm basics and round trips") {
    CHECK(logm(Matrix::Identity(3, 3)).norm() < 1e-14);

    Matrix D = Matrix::Zero(2, 2);
    D(0, 0) = std::exp(1.0);
    D(1, 1) = std::exp(2.0);
    const Matrix L = logm(D);
    CHECK(L(0, 0) == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(L(1, 1) == Catch::Approx(2.0).epsilon(1e-12));

    const double tau = 0.5;
    const Matrix A = siv_A();
    const Matrix back = logm(expm(A, tau)) / tau;
    CHECK((back - A).norm() < 1e-10 * A.norm());

    std::mt19937 gen(11);
    for (int trial = 0; trial < 10; ++trial) {
        Matrix M = oracles::random_matrix(4, 4, gen);
        M *= 1.5 / std::max(1.0, M.norm());
        const Matrix X = expm(M, 1.0);
        CHECK((expm(logm(X), 1.0) - X).norm() < 1e-9 * X.norm());
    }

    Matrix neg = -Matrix::Identity(2, 2);
    CHECK_THROWS_AS(logm(neg), Error);
    CHECK_THROWS_AS(logm(Matrix::Zero(2, 2)), Error);
}

TEST_CASE("eigvals") {
    Matrix D = Matrix::Zero(3, 3);
    D(0, 0) = 1;
    D(1, 1) = 2;
    D(2, 2) = 3;
    auto s = sorted_spectrum(eigvals(D));
    CHECK(std::abs(s[0] - Complex(1, 0)) < 1e-12);
    CHECK(std::abs(s[2] - Complex(3, 0)) < 1e-12);

    const Spectrum rot = eigvals(rotation_gen());
    CHECK(spectrum_distance(rot, (Spectrum(2) << Complex(0, 1), Complex(0, -1)).finished()) <
          1e-12);

    // Exosystem monodromy of the worked example: product of plane rotations,
    // hence orthogonal with a modulus-one spectrum.
    Matrix J = rotation_gen();
    const Matrix Jt = J * expm(rotation_gen(), 6.5);
    const Spectrum lam = eigvals(Jt);
    REQUIRE(lam.size() == 2);
    CHECK(std::abs(std::abs(lam[0]) - 1.0) < 1e-12);
    CHECK(std::abs(std::abs(lam[1]) - 1.0) < 1e-12);
}

TEST_CASE("rank and pinv") {
    CHECK(rank(Matrix::Identity(4, 4)) == 4);
    CHECK(rank(Matrix::Zero(3, 2)) == 0);
    CHECK(rank(siv_B()) == 2);

    CHECK((pinv(Matrix::Identity(3, 3)) - Matrix::Identity(3, 3)).norm() < 1e-14);
    Matrix D = Matrix::Zero(2, 2);
    D(0, 0) = 2.0;
    const Matrix Dp = pinv(D);
    CHECK(Dp(0, 0) == Catch::Approx(0.5));
    CHECK(Dp(1, 1) == 0.0);

    std::mt19937 gen(3);
    for (int trial = 0; trial < 8; ++trial) {
        const Matrix M = oracles::random_matrix(5, 3, gen);
        const Matrix Mp = pinv(M);
        CHECK((M * Mp * M - M).norm() < 1e-10);
        CHECK((Mp * M * Mp - Mp).norm() < 1e-10);
        CHECK((M * Mp - (M * Mp).transpose()).norm() < 1e-10);
        CHECK((Mp * M - (Mp * M).transpose()).norm() < 1e-10);
    }
}

TEST_CASE("kron") {
    std::mt19937 gen(5);
    const Matrix M = oracles::random_matrix(2, 3, gen);
    const Matrix K = kron(Matrix::Identity(2, 2), M);
    CHECK((K.topLeftCorner(2, 3) - M).norm() == 0.0);
    CHECK((K.bottomRightCorner(2, 3) - M).norm() == 0.0);
    CHECK(K.topRightCorner(2, 3).norm() == 0.0);

    Matrix e1(2, 1);
    e1 << 1, 0;
    const Matrix K2 = kron(e1, M);
    CHECK((K2.topRows(2) - M).norm() == 0.0);
    CHECK(K2.bottomRows(2).norm() == 0.0);

    // Mixed product property on conformable random triples.
    const Matrix A = oracles::random_matrix(2, 2, gen);
    const Matrix B = oracles::random_matrix(3, 2, gen);
    const Matrix C = oracles::random_matrix(2, 4, gen);
    const Matrix D = oracles::random_matrix(2, 3, gen);
    CHECK((kron(A, B) * kron(C, D) - kron(A * C, B * D)).norm() < 1e-12);
}

TEST_CASE("minimal polynomial") {
    const PolyCoeffs p1 = minimal_polynomial(Matrix::Identity(3, 3));
    REQUIRE(p1.degree() == 1);
    CHECK(p1.coeffs[0] == Catch::Approx(-1.0));

    Matrix D = Matrix::Zero(3, 3);
    D(0, 0) = 1;
    D(1, 1) = 1;
    D(2, 2) = 2;
    const PolyCoeffs p2 = minimal_polynomial(D);
    REQUIRE(p2.degree() == 2);
    CHECK(p2.coeffs[0] == Catch::Approx(2.0));  // (s-1)(s-2) = s^2 - 3s + 2
    CHECK(p2.coeffs[1] == Catch::Approx(-3.0));

    // Defective block needs the full power.
    Matrix Jb = Matrix::Zero(2, 2);
    Jb(0, 0) = Jb(1, 1) = 1.0;
    Jb(0, 1) = 1.0;
    CHECK(minimal_polynomial(Jb).degree() == 2);

    // Annihilation property via matrix Horner.
    std::mt19937 gen(17);
    for (int trial = 0; trial < 6; ++trial) {
        const Matrix M = oracles::random_matrix(4, 4, gen);
        const PolyCoeffs mu = minimal_polynomial(M);
        const double bound = 1e-8 * std::pow(std::max(1.0, M.norm()), mu.degree());
        CHECK(mu.eval(M).norm() <= bound);
    }
}

TEST_CASE("companion") {
    PolyCoeffs lin{(Vector(1) << -3.5).finished()}; // s - 3.5
    const Matrix C1 = companion(lin);
    REQUIRE(C1.rows() == 1);
    CHECK(C1(0, 0) == Catch::Approx(3.5));

    PolyCoeffs quad{(Vector(2) << 1.0, 0.0).finished()}; // s^2 + 1
    const Matrix C2 = companion(quad);
    CHECK(C2(0, 1) == 1.0);
    CHECK(C2(1, 0) == -1.0);
    CHECK(C2(1, 1) == 0.0);

    // Char poly of companion(p) equals p: compare spectra with poly roots.
    std::mt19937 gen(23);
    Vector a(6);
    for (int i = 0; i < 6; ++i) a[i] = oracles::random_matrix(1, 1, gen)(0, 0);
    const PolyCoeffs p{a};
    const Spectrum lam = eigvals(companion(p));
    for (Eigen::Index i = 0; i < lam.size(); ++i)
        CHECK(std::abs(p.eval(lam[i])) < 1e-8);
    const PolyCoeffs back = minimal_polynomial(companion(p));
    REQUIRE(back.degree() == 6);
    CHECK((back.coeffs - a).norm() < 1e-8);
}

TEST_CASE("poly_from_roots produces real monic coefficients") {
    std::vector<Complex> roots{{-1.0, 0.0}, {0.0, 1.0}, {0.0, -1.0}};
    const PolyCoeffs p = poly_from_roots(roots);
    REQUIRE(p.degree() == 3);
    // (s+1)(s^2+1) = s^3 + s^2 + s + 1
    CHECK(p.coeffs[0] == Catch::Approx(1.0));
    CHECK(p.coeffs[1] == Catch::Approx(1.0));
    CHECK(p.coeffs[2] == Catch::Approx(1.0));
}

TEST_CASE("place_discrete trivial cases") {
    const Matrix K0 = place_discrete(Matrix::Zero(3, 3), Matrix::Identity(3, 3),
                                     Spectrum::Zero(3));
    CHECK(K0.norm() < 1e-12);

    Matrix Phi(1, 1), Gam(1, 1);
    Phi << 2.0;
    Gam << 1.0;
    Spectrum t(1);
    t << Complex(0.5, 0.0);
    const Matrix K = place_discrete(Phi, Gam, t);
    CHECK(K(0, 0) == Catch::Approx(-1.5));
}

TEST_CASE("place_discrete achieves requested spectra") {
    std::mt19937 gen(31);
    for (int trial = 0; trial < 12; ++trial) {
        const Eigen::Index n = 3 + trial % 4;
        const Eigen::Index m = 1 + trial % 3;
        const Matrix Phi = oracles::random_matrix(n, n, gen);
        const Matrix Gam = oracles::random_matrix(n, m, gen);
        if (controllable_subspace(Phi, Gam).cols() != n) continue;
        Spectrum targets(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double th = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n);
            targets[i] = 0.4 * Complex(std::cos(th), std::sin(th));
        }
        // Ring targets of even order are conjugate-closed by construction.
        const Matrix K = place_discrete(Phi, Gam, targets);
        CHECK(spectrum_distance(eigvals(Phi + Gam * K), targets) < 1e-6);
    }
}

TEST_CASE("place_discrete with a wide input matrix") {
    std::mt19937 gen(37);
    const Eigen::Index n = 10, m = 40;
    const Matrix Phi = oracles::random_matrix(n, n, gen);
    const Matrix Gam = oracles::random_matrix(n, m, gen);
    Spectrum targets(n);
    targets[0] = Complex(0.05, 0.0);
    targets[1] = Complex(-0.3, 0.0);
    for (Eigen::Index i = 2; i + 1 < n; i += 2) {
        targets[i] = Complex(0.1 * i / 8.0, 0.2);
        targets[i + 1] = std::conj(targets[i]);
    }
    const Matrix K = place_discrete(Phi, Gam, targets);
    CHECK(spectrum_distance(eigvals(Phi + Gam * K), targets) < 1e-6);
}

TEST_CASE("place_poles pins uncontrollable modes and rejects impossible requests") {
    // Block system: second state unreachable with eigenvalue 0.3.
    Matrix Phi = Matrix::Zero(2, 2);
    Phi(0, 0) = 1.4;
    Phi(1, 1) = 0.3;
    Matrix Gam = Matrix::Zero(2, 1);
    Gam(0, 0) = 1.0;

    Spectrum ok(2);
    ok << Complex(0.1, 0.0), Complex(0.3, 0.0);
    const Matrix K = place_poles(Phi, Gam, ok);
    CHECK(spectrum_distance(eigvals(Phi + Gam * K), ok) < 1e-9);

    Spectrum bad(2);
    bad << Complex(0.1, 0.0), Complex(0.2, 0.0);
    CHECK_THROWS_AS(place_poles(Phi, Gam, bad), Error);
}

TEST_CASE("rank_complex via the real embedding") {
    CMatrix M(2, 2);
    M << Complex(1, 1), Complex(0, 0), Complex(0, 0), Complex(0, 0);
    CHECK(rank_complex(M) == 1);
    M(1, 1) = Complex(0, -2);
    CHECK(rank_complex(M) == 2);
}
