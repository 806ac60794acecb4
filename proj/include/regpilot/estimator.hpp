#pragma once

#include "regpilot/checks.hpp"

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

namespace regpilot {
namespace estimator {

// ============================================================================
// Sampled input/output data
// ============================================================================

/// ZOH-sampled experiment data. Sample i sits at t = i*tau; jump_indices
/// lists the first sample index of each new flow interval (strictly
/// increasing). The input u[i] is held on [i*tau, (i+1)*tau).
struct SampleLog {
    double tau = 0.0;
    std::vector<Vector> inputs;
    std::vector<Vector> outputs;
    std::vector<Eigen::Index> jump_indices;

    Eigen::Index size() const { return static_cast<Eigen::Index>(inputs.size()); }
    Eigen::Index m() const { return inputs.empty() ? 0 : inputs.front().size(); }
    Eigen::Index p() const { return outputs.empty() ? 0 : outputs.front().size(); }

    /// Index of the flow interval containing sample i.
    Eigen::Index interval_of(Eigen::Index i) const {
        Eigen::Index k = 0;
        for (const auto j : jump_indices)
            if (j <= i) ++k;
        return k;
    }

    /// First sample index after sample i that belongs to a later interval,
    /// or size() if none.
    Eigen::Index interval_end(Eigen::Index i) const {
        for (const auto j : jump_indices)
            if (j > i) return j;
        return size();
    }

    void validate() const {
        if (!(tau > 0.0)) throw Error("sample log: tau must be positive");
        if (inputs.size() != outputs.size())
            throw Error("sample log: input/output length mismatch");
        for (std::size_t i = 1; i < jump_indices.size(); ++i)
            if (jump_indices[i] <= jump_indices[i - 1])
                throw Error("sample log: jump indices must be strictly increasing");
    }
};

inline void save_csv(const SampleLog& log, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("sample log: cannot open " + path);
    os << "i,t,k";
    for (Eigen::Index j = 0; j < log.m(); ++j) os << ",u_" << (j + 1);
    for (Eigen::Index j = 0; j < log.p(); ++j) os << ",y_" << (j + 1);
    os << ",jumped\n";
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << ',' << buf;
    };
    for (Eigen::Index i = 0; i < log.size(); ++i) {
        const bool jumped =
            std::find(log.jump_indices.begin(), log.jump_indices.end(), i) !=
            log.jump_indices.end();
        os << i;
        put(i * log.tau);
        os << ',' << log.interval_of(i);
        for (Eigen::Index j = 0; j < log.m(); ++j) put(log.inputs[i][j]);
        for (Eigen::Index j = 0; j < log.p(); ++j) put(log.outputs[i][j]);
        os << ',' << (jumped ? 1 : 0) << "\n";
    }
}

inline SampleLog load_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("sample log: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw Error("sample log: empty file");
    Eigen::Index m = 0, p = 0;
    {
        std::stringstream hs(line);
        std::string col;
        while (std::getline(hs, col, ',')) {
            if (col.rfind("u_", 0) == 0) ++m;
            if (col.rfind("y_", 0) == 0) ++p;
        }
    }
    SampleLog log;
    double prev_t = 0.0;
    Eigen::Index i = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ls(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ls, cell, ',')) vals.push_back(std::stod(cell));
        if (static_cast<Eigen::Index>(vals.size()) != 3 + m + p + 1)
            throw Error("sample log: malformed row");
        if (i == 1) log.tau = vals[1] - prev_t;
        prev_t = vals[1];
        Vector u(m), y(p);
        for (Eigen::Index j = 0; j < m; ++j) u[j] = vals[3 + j];
        for (Eigen::Index j = 0; j < p; ++j) y[j] = vals[3 + m + j];
        log.inputs.push_back(u);
        log.outputs.push_back(y);
        if (vals.back() != 0.0) log.jump_indices.push_back(i);
        ++i;
    }
    if (log.size() >= 2 && !(log.tau > 0)) throw Error("sample log: bad time column");
    if (log.size() == 1) log.tau = 1.0;
    return log;
}

// ============================================================================
// Experiment design
// ============================================================================

struct Pulse {
    Eigen::Index channel;
    Eigen::Index at; // sample index of the unit pulse
};

/// Identification schedule. Phase 1 is a zero-input window of 2n samples in
/// the first flow interval. Phase 2 applies one unit pulse per input channel;
/// when everything fits inside the first interval the pulses follow phase 1
/// directly, otherwise each later interval starts with an n-sample zero-input
/// window that re-anchors the state before its pulses.
struct ExperimentPlan {
    double tau = 0.0;
    Eigen::Index samples_per_period = 0;
    Eigen::Index n = 0, m = 0, p = 0;
    Eigen::Index phase1_len = 0;
    std::vector<Pulse> pulses;
    Eigen::Index periods = 0;       // flow intervals consumed
    Eigen::Index total_samples = 0; // = periods * samples_per_period

    Vector input_at(Eigen::Index i) const {
        Vector u = Vector::Zero(m);
        for (const auto& pl : pulses)
            if (pl.at == i) u[pl.channel] = 1.0;
        return u;
    }
};

/// With q > 0 the measured error carries the exosystem through Q w, so every
/// state-reading window grows by q (the exosystem modes are annihilated with
/// its known characteristic polynomial, and anchors live in the combined
/// plant+exosystem form).
inline ExperimentPlan design_experiment(Eigen::Index n, Eigen::Index m, Eigen::Index p,
                                        double tau_M, Eigen::Index q = 0) {
    if (!(tau_M > 0.0)) throw Error("design_experiment: tau_M must be positive");
    if (n < 1 || m < 1 || p < 1 || q < 0) throw Error("design_experiment: bad dimensions");
    const Eigen::Index phase1 = 2 * n + q;
    const Eigen::Index anchor = n + q;
    const Eigen::Index phase2 = m * (n * p + 1);

    Eigen::Index N = 1;
    while (N < std::max(phase1, phase2)) N *= 2;

    for (; N <= (1 << 20); N *= 2) {
        ExperimentPlan plan;
        plan.samples_per_period = N;
        plan.tau = tau_M / static_cast<double>(N);
        plan.n = n;
        plan.m = m;
        plan.p = p;
        plan.phase1_len = phase1;

        if (phase1 + phase2 <= N) {
            // Everything inside the first flow interval, paper pattern.
            for (Eigen::Index c = 0; c < m; ++c)
                plan.pulses.push_back({c, phase1 + c * (n * p + 1)});
            plan.periods = 1;
            plan.total_samples = N;
            return plan;
        }
        // One anchored interval per batch of pulses; each pulse needs its n
        // response samples before the interval ends.
        const Eigen::Index last_slot = N - 1 - anchor - n;
        if (last_slot < 0) continue;
        const Eigen::Index per_interval = last_slot / (n + 1) + 1;
        Eigen::Index c = 0;
        Eigen::Index k = 1;
        while (c < m) {
            for (Eigen::Index j = 0; j < per_interval && c < m; ++j, ++c)
                plan.pulses.push_back({c, k * N + anchor + j * (n + 1)});
            ++k;
        }
        plan.periods = k;
        plan.total_samples = k * N;
        return plan;
    }
    throw Error("design_experiment: no admissible sampling time above tau_M/2^20 "
                "(infeasible experiment)");
}

// ============================================================================
// Characteristic polynomial from the zero-input window
// ============================================================================

namespace detail {

/// First run of at least `len` consecutive zero-input samples lying inside a
/// single flow interval.
inline Eigen::Index find_zero_window(const SampleLog& log, Eigen::Index len) {
    Eigen::Index run = 0;
    for (Eigen::Index i = 0; i < log.size(); ++i) {
        const bool zero = log.inputs[i].norm() == 0.0;
        const bool fresh =
            std::find(log.jump_indices.begin(), log.jump_indices.end(), i) !=
            log.jump_indices.end();
        run = (zero && !fresh) ? run + 1 : (zero ? 1 : 0);
        if (run >= len) return i - len + 1;
    }
    throw Error("estimator: no zero-input window of the required length");
}

} // namespace detail

/// Coefficients a = [a_0..a_{n-1}] of the characteristic polynomial of the
/// sampled flow map, from the zero-input recursion Y_[n] = -Ycal a. With a
/// nonempty exo_poly the raw outputs are first run through that annihilating
/// filter, which removes any exosystem content from the measured error.
inline PolyCoeffs estimate_char_poly(const SampleLog& log, Eigen::Index n,
                                     const PolyCoeffs& exo_poly = PolyCoeffs{Vector(0)}) {
    log.validate();
    const Eigen::Index p = log.p();
    const Eigen::Index q = exo_poly.degree();
    const Eigen::Index w = detail::find_zero_window(log, 2 * n + q);
    const Eigen::Index end = std::min<Eigen::Index>(log.interval_end(w), w + 2 * n + q);

    // Filtered samples yf_i = sum_k c_k y_{w+i+k} with the monic filter.
    const Eigen::Index fl = end - w - q;
    std::vector<Vector> yf(fl);
    for (Eigen::Index i = 0; i < fl; ++i) {
        Vector v = log.outputs[w + i + q];
        for (Eigen::Index k = 0; k < q; ++k) v += exo_poly.coeffs[k] * log.outputs[w + i + k];
        yf[i] = v;
    }

    const Eigen::Index shifts = fl - n;
    if (shifts < n) throw Error("estimator: zero-input window too short");
    Matrix Ycal(p * shifts, n);
    Vector rhs(p * shifts);
    for (Eigen::Index i = 0; i < shifts; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) Ycal.block(i * p, j, p, 1) = yf[i + j];
        rhs.segment(i * p, p) = yf[i + n];
    }
    if (numerics::rank(Ycal) < n)
        throw Error("estimator: stacked output matrix is rank deficient "
                    "(insufficiently exciting initial state; rerun with a new window)");
    const Vector a = -(numerics::pinv(Ycal) * rhs);
    return PolyCoeffs{a};
}

// ============================================================================
// Observable form
// ============================================================================

/// Block companion realization I_p x A_O0 with output picking the first
/// coordinate of each block; the flow dynamics of the sampled plant are
/// immersed in it.
struct ObservableForm {
    Matrix A_O; // np x np
    Matrix B_O; // np x m
    Matrix C_O; // p x np
    PolyCoeffs a;
    Eigen::Index n = 0, m = 0, p = 0;

    Eigen::Index dim() const { return n * p; }
};

inline ObservableForm make_observable_form(const PolyCoeffs& a, Eigen::Index m,
                                           Eigen::Index p) {
    ObservableForm obs;
    obs.n = a.degree();
    obs.m = m;
    obs.p = p;
    const Matrix A0 = numerics::companion(a);
    Matrix C0 = Matrix::Zero(1, obs.n);
    C0(0, 0) = 1.0;
    const Matrix Ip = Matrix::Identity(p, p);
    obs.A_O = numerics::kron(Ip, A0);
    obs.C_O = numerics::kron(Ip, C0);
    obs.B_O = Matrix::Zero(obs.n * p, m);
    obs.a = a;
    return obs;
}

namespace detail {

/// State of the observable form read directly from n zero-input output
/// samples starting at index s0: block l of the state holds the next n
/// values of output channel l.
inline Vector state_from_outputs(const SampleLog& log, Eigen::Index s0, Eigen::Index n,
                                 Eigen::Index p) {
    Vector eta(n * p);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index l = 0; l < p; ++l) eta[l * n + j] = log.outputs[s0 + j][l];
    return eta;
}

} // namespace detail

/// Recovers B_O column by column from the unit-pulse responses. State
/// anchoring and bookkeeping run in the combined plant+exosystem observable
/// form (the measured error may carry exosystem content through Q w); the
/// pulse residuals are the plant Markov parameters either way.
inline Matrix estimate_input_matrix(const SampleLog& log, const ObservableForm& obs,
                                    const PolyCoeffs& exo_poly = PolyCoeffs{Vector(0)}) {
    log.validate();
    const Eigen::Index n = obs.n, p = obs.p, m = obs.m;

    // Combined bookkeeping model: its outputs reproduce plant + exosystem
    // free responses, its Markov parameters equal the plant's.
    const PolyCoeffs comb_poly =
        exo_poly.degree() > 0 ? numerics::poly_mul(obs.a, exo_poly) : obs.a;
    const Eigen::Index nc = comb_poly.degree();
    const ObservableForm comb = make_observable_form(comb_poly, m, p);
    Matrix B_Oc = Matrix::Zero(comb.dim(), m);

    // Locate the unit pulses.
    std::vector<Pulse> pulses;
    for (Eigen::Index i = 0; i < log.size(); ++i) {
        if (log.inputs[i].norm() == 0.0) continue;
        Eigen::Index c = -1;
        for (Eigen::Index j = 0; j < m; ++j) {
            if (log.inputs[i][j] != 0.0) {
                if (c >= 0 || log.inputs[i][j] != 1.0)
                    throw Error("estimator: inputs are not a unit-pulse schedule");
                c = j;
            }
        }
        pulses.push_back({c, i});
    }
    if (static_cast<Eigen::Index>(pulses.size()) != m)
        throw Error("estimator: expected exactly one pulse per input channel");

    std::vector<Matrix> markov(m); // per channel, p x n stack H_0..H_{n-1}
    std::vector<bool> resolved(m, false);

    std::size_t pi = 0;
    while (pi < pulses.size()) {
        // All pulses sharing one flow interval are handled in one pass.
        const Eigen::Index istart = pulses[pi].at;
        const Eigen::Index iend = log.interval_end(istart);

        // State anchor: nc zero-input samples immediately before the first pulse.
        const Eigen::Index s0 = istart - nc;
        if (s0 < 0 || log.interval_of(s0) != log.interval_of(istart))
            throw Error("estimator: pulse lacks a state anchor window");
        for (Eigen::Index j = s0; j < istart; ++j)
            if (log.inputs[j].norm() != 0.0)
                throw Error("estimator: anchor window is not input-free");
        Vector eta = detail::state_from_outputs(log, s0, nc, p);

        Eigen::Index s = s0;
        while (pi < pulses.size() && pulses[pi].at < iend) {
            const auto [c, at] = pulses[pi];
            if (at + n >= iend)
                throw Error("estimator: pulse response window straddles a jump");
            // Advance the anchor state to the pulse sample (inputs resolved).
            for (; s < at; ++s) eta = comb.A_O * eta + B_Oc * log.inputs[s];
            // Zero-input prediction from the pulse; the residuals are the
            // plant Markov parameters H_0..H_{n-1}.
            if (resolved[c]) throw Error("estimator: duplicate pulse for one channel");
            Matrix H(p, nc);
            Vector free = eta;
            for (Eigen::Index j = 1; j <= n; ++j) {
                free = comb.A_O * free;
                H.col(j - 1) = log.outputs[at + j] - comb.C_O * free;
            }
            // Later parameters follow the plant recursion.
            for (Eigen::Index r = n; r < nc; ++r) {
                Vector h = Vector::Zero(p);
                for (Eigen::Index j = 0; j < n; ++j) h -= obs.a.coeffs[j] * H.col(r - n + j);
                H.col(r) = h;
            }
            markov[c] = H.leftCols(n);
            for (Eigen::Index r = 0; r < nc; ++r)
                for (Eigen::Index l = 0; l < p; ++l) B_Oc(l * nc + r, c) = H(l, r);
            resolved[c] = true;
            ++pi;
        }
    }
    for (Eigen::Index c = 0; c < m; ++c)
        if (!resolved[c]) throw Error("estimator: missing pulse for channel");

    Matrix B_O = Matrix::Zero(obs.dim(), m);
    for (Eigen::Index c = 0; c < m; ++c)
        for (Eigen::Index r = 0; r < n; ++r)
            for (Eigen::Index l = 0; l < p; ++l) B_O(l * n + r, c) = markov[c](l, r);
    return B_O;
}

// ============================================================================
// Continuous-time lift and flow-data extraction
// ============================================================================

struct ContinuousModel {
    Matrix A, B, C;
};

/// Inverts the ZOH relations: A = log(A_O)/tau, B from the exponential
/// integral. The realization is similar to the plant only when its dimension
/// matches (single-output immersion or minimal plant).
inline ContinuousModel to_continuous(const ObservableForm& obs, double tau) {
    if (!(tau > 0.0)) throw Error("to_continuous: tau must be positive");
    ContinuousModel cm;
    try {
        cm.A = numerics::logm(obs.A_O) / tau;
    } catch (const Error& e) {
        throw Error(std::string("to_continuous: ") + e.what() + " -- decrease tau");
    }
    const Matrix Phi1 = numerics::expm_integral(cm.A, tau);
    const auto lu = Phi1.partialPivLu();
    cm.B = lu.solve(obs.B_O);
    if ((Phi1 * cm.B - obs.B_O).norm() > 1e-6 * std::max(1.0, obs.B_O.norm()))
        throw Error("to_continuous: exponential integral is near singular -- decrease tau");
    cm.C = obs.C_O;
    return cm;
}

struct FlowData {
    Matrix A11, A22, G;
    Eigen::Index m1 = 0;
    geometry::Decomposition dec;
};

/// Runs the geometric decomposition on an estimated realization. Only the
/// spectra of A11/A22 and the input-space objects (G, m1) are similarity
/// invariants of the data.
inline FlowData extract_flow_data(const ContinuousModel& cm,
                                  const Spectrum& shift_targets = Spectrum(0),
                                  double geometry_tol = 1e-8) {
    const auto n = cm.A.rows();
    if (numerics::rank(checks::observability_matrix(cm.A, cm.C)) < n)
        throw Error("extract_flow_data: estimated realization is unobservable");
    HybridPlant plant;
    plant.A = cm.A;
    plant.B = cm.B;
    plant.C = cm.C;
    plant.P = Matrix::Zero(n, 0);
    plant.Q = Matrix::Zero(cm.C.rows(), 0);
    plant.E = Matrix::Identity(n, n);
    FlowData fd;
    fd.dec = geometry::decompose(plant, shift_targets, geometry_tol,
                                 std::max(1e-9, 10.0 * geometry_tol));
    fd.A11 = fd.dec.A11();
    fd.A22 = fd.dec.A22();
    fd.G = fd.dec.G;
    fd.m1 = fd.dec.m1;
    return fd;
}

/// Change of basis aligning an estimated realization with the coordinates of
/// a nominal model, through the two observability matrices. Requires equal
/// dimensions and an observable nominal pair.
inline ContinuousModel align_to(const ContinuousModel& est, const Matrix& A0,
                                const Matrix& C0) {
    const auto n = A0.rows();
    if (est.A.rows() != n)
        throw Error("align_to: realization dimension differs from the nominal model "
                    "(non-minimal immersion)");
    const Matrix O0 = checks::observability_matrix(A0, C0);
    if (numerics::rank(O0) < n) throw Error("align_to: nominal pair is unobservable");
    const Matrix Oh = checks::observability_matrix(est.A, est.C);
    const Matrix M = numerics::pinv(O0) * Oh; // x = M eta
    const Matrix Minv = M.inverse();
    ContinuousModel out;
    out.A = M * est.A * Minv;
    out.B = M * est.B;
    out.C = est.C * Minv;
    return out;
}

} // namespace estimator
} // namespace regpilot
