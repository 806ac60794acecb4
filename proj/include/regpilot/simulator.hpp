#pragma once

#include "regpilot/estimator.hpp"
#include "regpilot/stabilizer.hpp"

#include <functional>

namespace regpilot {
namespace simulator {

// ============================================================================
// Hybrid time and trajectories
// ============================================================================

struct HybridTime {
    double t = 0.0;
    Eigen::Index k = 0;
};

struct TrajectorySample {
    double t = 0.0;
    Eigen::Index k = 0;
    Vector x, w, e, u;
    bool jumped = false; // first record after a jump
};

struct HybridTrajectory {
    std::vector<TrajectorySample> samples;
    double estimation_end_time = 0.0;
    Eigen::Index estimation_periods = 0;

    double max_error_in_period(Eigen::Index k) const {
        double m = 0.0;
        for (const auto& s : samples)
            if (s.k == k) m = std::max(m, s.e.size() ? s.e.cwiseAbs().maxCoeff() : 0.0);
        return m;
    }

    Eigen::Index last_period() const {
        Eigen::Index k = 0;
        for (const auto& s : samples) k = std::max(k, s.k);
        return k;
    }
};

// ============================================================================
// Elementary exact steps
// ============================================================================

/// Exact flow propagation over dt.
inline Vector step_flow(const Matrix& A_cl, const Vector& state, double dt) {
    if (!(dt > 0.0)) throw Error("step_flow: dt must be positive");
    return numerics::expm(A_cl, dt) * state;
}

inline Vector step_jump(const Matrix& E_cl, const Vector& state) { return E_cl * state; }

// ============================================================================
// Scenario
// ============================================================================

struct StabilizerSettings {
    /// Extend the observer with an exosystem replica (the measured error
    /// carries Q w; without the replica the estimate keeps a w-driven bias).
    bool observer_exo_replica = true;
};

struct EstimationSettings {
    bool enabled = true;
    bool reuse_nominal_G = false; // apply the nominal input partition instead
    double merge_tol = 1e-6;      // eigenvalue merge radius for the flow IM
    /// Rank cutoff for the geometry of the estimated realization. Estimation
    /// carries linear-algebra round-off well above machine epsilon, and exact
    /// structural degeneracies of the data must still resolve as such.
    double geometry_tol = 1e-8;
};

struct Scenario {
    HybridPlant plant;   // true plant driven in simulation
    HybridPlant nominal; // design knowledge
    ExosystemSpec exo;
    Vector x0, w0;
    Eigen::Index horizon_periods = 40;
    EstimationSettings estimation;
    StabilizerSettings stabilizer;
    Spectrum shift_targets;          // empty -> defaults
    double placement_radius = 0.1;
    double tau_s = 0.0;              // 0 -> the experiment sampling time
    Eigen::Index plot_points_per_period = 50;
    bool ph_variant = false;

    void validate() const {
        plant.validate();
        nominal.validate();
        exo.validate();
        if (plant.n() != nominal.n() || plant.m() != nominal.m() ||
            plant.p() != nominal.p() || plant.q() != nominal.q())
            throw Error("scenario: true and nominal dimensions differ");
        if (plant.q() != exo.q()) throw Error("scenario: exosystem dimension mismatch");
        if (x0.size() != plant.n() || w0.size() != exo.q())
            throw Error("scenario: initial state dimension mismatch");
        if (horizon_periods < 1) throw Error("scenario: horizon must be at least one period");
    }
};

// ============================================================================
// Open-loop plant stepper (estimation phase)
// ============================================================================

namespace detail {

struct OpenLoop {
    Matrix Phi, Gam; // tau-step of [x; w] with ZOH input
    Matrix Phi_sub, Gam_sub;
    Eigen::Index substeps = 1;
    Matrix E, J;
    Eigen::Index n = 0, q = 0;

    OpenLoop(const HybridPlant& pl, const ExosystemSpec& exo, double tau,
             Eigen::Index subs) {
        n = pl.n();
        q = pl.q();
        substeps = std::max<Eigen::Index>(1, subs);
        Matrix A = Matrix::Zero(n + q, n + q);
        A.topLeftCorner(n, n) = pl.A;
        A.topRightCorner(n, q) = pl.P;
        A.bottomRightCorner(q, q) = exo.S;
        Matrix B = Matrix::Zero(n + q, pl.m());
        B.topRows(n) = pl.B;
        Phi = numerics::expm(A, tau);
        Gam = numerics::expm_integral(A, tau) * B;
        const double h = tau / static_cast<double>(substeps);
        Phi_sub = numerics::expm(A, h);
        Gam_sub = numerics::expm_integral(A, h) * B;
        E = pl.E;
        J = exo.J;
    }
};

} // namespace detail

// ============================================================================
// Exact closed-loop engine
// ============================================================================

namespace detail {

/// Joint exact propagation of [x; w; x_F; x_J; etahat] with the spooled
/// stabilizer inputs, one correction per period.
class ClosedLoop {
public:
    ClosedLoop(const stabilizer::RegulatorRealization& reg, const HybridPlant& truth,
               const ExosystemSpec& exo, const Matrix& G_used, Eigen::Index substeps)
        : reg_(reg), truth_(truth), exo_(exo), G_used_(G_used),
          substeps_(std::max<Eigen::Index>(1, substeps)) {
        n_ = truth.n();
        q_ = truth.q();
        nF_ = reg.fim.n_F;
        nJ_ = reg.jim.n_J;
        nd_ = reg.aug.dim();
        no_ = nd_ + reg.obs.q; // estimate carries the exosystem replica
        mh_ = reg.aug.inputs();
        N_ = reg.fb.N;
        p_ = truth.p();
        const Eigen::Index D = dim();

        Matrix A = Matrix::Zero(D, D);
        A.block(0, 0, n_, n_) = truth.A;
        A.block(0, n_, n_, q_) = truth.P;
        A.block(0, n_ + q_, n_, nF_) = truth.B * reg.mix_F;
        A.block(0, n_ + q_ + nF_, n_, nJ_) = truth.B * reg.mix_J;
        A.block(0, n_ + q_ + nF_ + nJ_, n_, n_) = truth.B * reg.friend_gain;
        A.block(n_, n_, q_, q_) = exo.S;
        A.block(n_ + q_, n_ + q_, nF_, nF_) = reg.fim.A_F;
        A.block(n_ + q_ + nF_, n_ + q_ + nF_, nJ_, nJ_) = reg.jim.A_J;
        A.block(n_ + q_ + nF_ + nJ_, n_ + q_ + nF_ + nJ_, no_, no_) = reg.obs.A_flow;

        Matrix B = Matrix::Zero(D, mh_);
        B.block(0, 0, n_, truth.m()) = truth.B * G_used;
        B.block(n_ + q_, truth.m(), nF_, nF_) = Matrix::Identity(nF_, nF_);
        B.block(n_ + q_ + nF_, truth.m() + nF_, nJ_, nJ_) = Matrix::Identity(nJ_, nJ_);
        B.block(n_ + q_ + nF_ + nJ_, 0, no_, mh_) = reg.obs.B_flow;

        const double tau_s = reg.fb.tau_s;
        Phi_ = numerics::expm(A, tau_s);
        Gam_ = numerics::expm_integral(A, tau_s) * B;
        Phi_sub_ = numerics::expm(A, tau_s / static_cast<double>(substeps_));
        Gam_sub_ = numerics::expm_integral(A, tau_s / static_cast<double>(substeps_)) * B;
    }

    Eigen::Index dim() const { return n_ + q_ + nF_ + nJ_ + no_; }
    Eigen::Index samples_per_period() const { return N_; }
    Eigen::Index substeps() const { return substeps_; }

    Vector eta(const Vector& X) const { return X.tail(no_); }

    /// Physical plant input at the current instant, given the active u_x slice.
    Vector input_of(const Vector& X, const Vector& u_x) const {
        const Vector zhat = X.segment(n_ + q_ + nF_ + nJ_, n_);
        const Vector xF = X.segment(n_ + q_, nF_);
        const Vector xJ = X.segment(n_ + q_ + nF_, nJ_);
        return reg_.friend_gain * zhat + reg_.mix_F * xF + reg_.mix_J * xJ + G_used_ * u_x;
    }

    Vector error_of(const Vector& X) const {
        return truth_.C * X.head(n_) + truth_.Q * X.segment(n_, q_);
    }

    /// Runs one full period including the final jump; `record` is called with
    /// (X, u_x_active, substep_index) at every plot point plus the pre-jump
    /// instant (substep_index < 0 marks it).
    void run_period(Vector& X,
                    const std::function<void(const Vector&, const Vector&, Eigen::Index)>&
                        record = nullptr) const {
        const Vector U = reg_.fb.K * eta(X).head(nd_);
        Vector Ybuf(N_ * p_);
        Vector Vbuf(N_ * mh_);
        const Vector eta0 = eta(X);
        for (Eigen::Index h = 0; h < N_; ++h) {
            const Vector vh = U.segment(h * mh_, mh_);
            Ybuf.segment(h * p_, p_) = error_of(X);
            Vbuf.segment(h * mh_, mh_) = vh;
            if (record) {
                record(X, vh.head(truth_.m()), h * substeps_);
                // Plot points come from a side copy; the mainline advances
                // with the one cached full-step propagator.
                Vector Xs = X;
                for (Eigen::Index s = 1; s < substeps_; ++s) {
                    Xs = Phi_sub_ * Xs + Gam_sub_ * vh;
                    record(Xs, vh.head(truth_.m()), h * substeps_ + s);
                }
            }
            X = Phi_ * X + Gam_ * vh;
        }
        if (record) record(X, U.segment((N_ - 1) * mh_, mh_).head(truth_.m()), -1);
        jump(X, Ybuf, Vbuf, eta0);
    }

private:
    void jump(Vector& X, const Vector& Ybuf, const Vector& Vbuf, const Vector& eta0) const {
        const Vector innovation = Ybuf - reg_.obs.Dtilde * Vbuf - reg_.obs.Ctilde * eta0;
        const Vector x = X.head(n_);
        const Vector w = X.segment(n_, q_);
        const Vector xF = X.segment(n_ + q_, nF_);
        const Vector xJ = X.segment(n_ + q_ + nF_, nJ_);
        const Vector et = eta(X);
        X.head(n_) = truth_.E * x;
        X.segment(n_, q_) = exo_.J * w;
        X.segment(n_ + q_, nF_) = reg_.jim.C_J2 * xJ;
        X.segment(n_ + q_ + nF_, nJ_) = reg_.jim.E_J * xJ;
        X.tail(no_) = reg_.obs.Ejump * et + reg_.obs.L * innovation;
    }

    const stabilizer::RegulatorRealization& reg_;
    HybridPlant truth_;
    ExosystemSpec exo_;
    Matrix G_used_;
    Eigen::Index substeps_;
    Eigen::Index n_ = 0, q_ = 0, nF_ = 0, nJ_ = 0, nd_ = 0, no_ = 0, mh_ = 0, N_ = 0,
                 p_ = 0;
    Matrix Phi_, Gam_, Phi_sub_, Gam_sub_;
};

} // namespace detail

// ============================================================================
// Pipeline
// ============================================================================

struct Diagnostics {
    std::vector<checks::CheckReport> nominal_reports;
    PolyCoeffs a_hat;
    Spectrum estimated_flow_spectrum;
    Spectrum estimated_zeros;
    Eigen::Index n_h = 0, n_F = 0, n_J = 0, m1 = 0;
    double tau = 0.0, tau_s = 0.0;
    Eigen::Index samples_per_period = 0;
    Spectrum separation_spectrum;
    Matrix closed_period_map; // w-free closed-loop period map
    double closed_radius = 0.0;
    std::vector<double> per_period_max_e;
    double final_period_max_e = 0.0;
    bool used_estimation = true;
};

struct PipelineResult {
    HybridTrajectory trajectory;
    stabilizer::RegulatorRealization regulator;
    Diagnostics diagnostics;
    estimator::SampleLog experiment_log;
};

namespace detail {

/// Closed-loop one-period linear map on [x; x_F; x_J; etahat] with w = 0.
inline Matrix period_map_w0(const ClosedLoop& loop, Eigen::Index n, Eigen::Index q) {
    const Eigen::Index D = loop.dim();
    const Eigen::Index d = D - q;
    Matrix M(d, d);
    for (Eigen::Index j = 0; j < d; ++j) {
        Vector X = Vector::Zero(D);
        const Eigen::Index src = (j < n) ? j : j + q;
        X[src] = 1.0;
        loop.run_period(X);
        Vector col(d);
        col.head(n) = X.head(n);
        col.tail(d - n) = X.tail(d - n);
        M.col(j) = col;
    }
    return M;
}

} // namespace detail

inline PipelineResult run_pipeline(const Scenario& scn) {
    scn.validate();
    PipelineResult out;
    Diagnostics& diag = out.diagnostics;
    diag.used_estimation = scn.estimation.enabled;

    const auto n = scn.nominal.n();
    const auto m = scn.nominal.m();
    const auto p = scn.nominal.p();
    const double tau_M = scn.exo.tau_M;

    // Nominal solvability checks gate the whole pipeline.
    const auto dec0 = geometry::decompose(scn.nominal, scn.shift_targets);
    diag.nominal_reports = checks::check_all(scn.nominal, scn.exo, dec0, scn.ph_variant);
    for (const auto& r : diag.nominal_reports)
        if (!r.passed)
            throw Error("run_pipeline: nominal plant fails " + r.name + "\n" + r.to_string());

    const auto plan = estimator::design_experiment(n, m, p, tau_M, scn.exo.q());
    diag.tau = plan.tau;
    const double tau_s = scn.tau_s > 0.0 ? scn.tau_s : plan.tau;
    diag.tau_s = tau_s;
    const Eigen::Index substeps = std::max<Eigen::Index>(
        1, (scn.plot_points_per_period + plan.samples_per_period - 1) /
               plan.samples_per_period);

    HybridTrajectory& traj = out.trajectory;
    Vector xw(n + scn.exo.q());
    xw << scn.x0, scn.w0;

    // ---- Phase 1/2: open-loop experiment --------------------------------
    HybridPlant design = scn.nominal;
    if (scn.estimation.enabled) {
        const detail::OpenLoop ol(scn.plant, scn.exo, plan.tau, substeps);
        estimator::SampleLog log;
        log.tau = plan.tau;
        const Eigen::Index Ns = plan.samples_per_period;
        auto open_record = [&](const Vector& state, double t, Eigen::Index k, const Vector& u,
                               bool jumped) {
            traj.samples.push_back({t, k, Vector(state.head(n)),
                                    Vector(state.tail(scn.exo.q())),
                                    Vector(scn.plant.C * state.head(n) +
                                           scn.plant.Q * state.tail(scn.exo.q())),
                                    u, jumped});
        };
        for (Eigen::Index i = 0; i < plan.total_samples; ++i) {
            if (i > 0 && i % Ns == 0) {
                // Pre-jump record, then the jump.
                open_record(xw, i * plan.tau, i / Ns - 1, plan.input_at(i - 1), false);
                xw.head(n) = scn.plant.E * xw.head(n);
                xw.tail(scn.exo.q()) = scn.exo.J * xw.tail(scn.exo.q());
                log.jump_indices.push_back(i);
            }
            const Vector u = plan.input_at(i);
            const Vector y = scn.plant.C * xw.head(n) + scn.plant.Q * xw.tail(scn.exo.q());
            log.inputs.push_back(u);
            log.outputs.push_back(y);
            open_record(xw, i * plan.tau, i / Ns, u, i > 0 && i % Ns == 0);
            Vector xs = xw;
            for (Eigen::Index s = 1; s < substeps; ++s) {
                xs = ol.Phi_sub * xs + ol.Gam_sub * u;
                open_record(xs, (i + static_cast<double>(s) / substeps) * plan.tau, i / Ns, u,
                            false);
            }
            xw = ol.Phi * xw + ol.Gam * u;
        }
        out.experiment_log = log;

        // ---- Estimation ---------------------------------------------------
        // The measured error carries the exosystem through Q w; its sampled
        // characteristic polynomial is known exactly and annihilates it.
        const PolyCoeffs exo_poly =
            numerics::char_poly(numerics::expm(scn.exo.S, plan.tau));
        diag.a_hat = estimator::estimate_char_poly(log, n, exo_poly);
        auto obs = estimator::make_observable_form(diag.a_hat, m, p);
        obs.B_O = estimator::estimate_input_matrix(log, obs, exo_poly);
        const auto cm = estimator::to_continuous(obs, plan.tau);
        const auto aligned = estimator::align_to(cm, scn.nominal.A, scn.nominal.C);
        design.A = aligned.A;
        design.B = aligned.B;
        design.C = aligned.C;
        diag.estimated_flow_spectrum = numerics::eigvals(design.A);
        // Jump to the closed-loop start boundary.
        open_record(xw, plan.total_samples * plan.tau, plan.periods - 1,
                    plan.input_at(plan.total_samples - 1), false);
        xw.head(n) = scn.plant.E * xw.head(n);
        xw.tail(scn.exo.q()) = scn.exo.J * xw.tail(scn.exo.q());
        traj.estimation_periods = plan.periods;
        traj.estimation_end_time = plan.periods * tau_M;
    }

    // ---- Synthesis --------------------------------------------------------
    const auto dec = scn.estimation.enabled
                         ? geometry::decompose(design, scn.shift_targets,
                                               scn.estimation.geometry_tol,
                                               std::max(1e-9, 10.0 * scn.estimation.geometry_tol))
                         : dec0;
    diag.estimated_zeros = dec.invariant_zeros();
    diag.m1 = dec.m1;
    const auto fim = internal_model::build_flow_im(dec.A11(), dec.A22(), scn.exo.S, p,
                                                   scn.estimation.merge_tol);
    const auto jim = internal_model::build_jump_im(scn.exo.S, scn.exo.J, dec.m1, fim.n_F);
    diag.n_h = fim.n_h;
    diag.n_F = fim.n_F;
    diag.n_J = jim.n_J;
    const auto aug = internal_model::augment(dec, fim, jim, scn.exo);
    const auto hob = stabilizer::design_observer(aug, tau_s, scn.placement_radius,
                                                 scn.stabilizer.observer_exo_replica);
    const auto pfb = stabilizer::design_feedback(aug, tau_s, scn.placement_radius);
    out.regulator = stabilizer::assemble_regulator(dec, fim, jim, aug, hob, pfb);
    diag.samples_per_period = pfb.N;
    diag.separation_spectrum = out.regulator.separation_spectrum();

    const Matrix G_used = scn.estimation.reuse_nominal_G ? dec0.G : dec.G;

    // ---- Closed loop ------------------------------------------------------
    const detail::ClosedLoop loop(out.regulator, scn.plant, scn.exo, G_used, substeps);
    Vector X = Vector::Zero(loop.dim());
    X.head(n) = xw.head(n);
    X.segment(n, scn.exo.q()) = xw.tail(scn.exo.q());

    const Eigen::Index k0 = traj.estimation_periods;
    for (Eigen::Index kk = 0; kk < scn.horizon_periods; ++kk) {
        const Eigen::Index k = k0 + kk;
        double maxe = 0.0;
        loop.run_period(X, [&](const Vector& Xs, const Vector& ux, Eigen::Index idx) {
            const double trel =
                (idx < 0) ? tau_M
                          : static_cast<double>(idx) * pfb.tau_s / static_cast<double>(substeps);
            TrajectorySample smp;
            smp.t = k * tau_M + trel;
            smp.k = k;
            smp.x = Xs.head(n);
            smp.w = Xs.segment(n, scn.exo.q());
            smp.e = loop.error_of(Xs);
            smp.u = loop.input_of(Xs, ux);
            smp.jumped = (idx == 0) && (kk > 0 || scn.estimation.enabled);
            traj.samples.push_back(std::move(smp));
            maxe = std::max(maxe, traj.samples.back().e.size()
                                      ? traj.samples.back().e.cwiseAbs().maxCoeff()
                                      : 0.0);
        });
        diag.per_period_max_e.push_back(maxe);
    }
    diag.final_period_max_e = diag.per_period_max_e.empty() ? 0.0
                                                            : diag.per_period_max_e.back();

    // ---- Closed-loop monodromy (w = 0) ------------------------------------
    diag.closed_period_map = detail::period_map_w0(loop, n, scn.exo.q());
    diag.closed_radius = numerics::spectral_radius(diag.closed_period_map);
    return out;
}

// ============================================================================
// Trajectory export
// ============================================================================

inline void export_trajectory(const HybridTrajectory& traj, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("export_trajectory: cannot open " + path);
    Eigen::Index nm = 0, np = 0, nx = 0, nw = 0;
    if (!traj.samples.empty()) {
        nm = traj.samples.front().u.size();
        np = traj.samples.front().e.size();
        nx = traj.samples.front().x.size();
        nw = traj.samples.front().w.size();
    }
    os << "i,t,k";
    for (Eigen::Index j = 0; j < nm; ++j) os << ",u_" << (j + 1);
    for (Eigen::Index j = 0; j < np; ++j) os << ",y_" << (j + 1);
    os << ",jumped";
    for (Eigen::Index j = 0; j < nx; ++j) os << ",x_" << (j + 1);
    for (Eigen::Index j = 0; j < nw; ++j) os << ",w_" << (j + 1);
    os << "\n";
    char buf[32];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << ',' << buf;
    };
    Eigen::Index i = 0;
    for (const auto& s : traj.samples) {
        os << i++;
        put(s.t);
        os << ',' << s.k;
        for (Eigen::Index j = 0; j < nm; ++j) put(s.u[j]);
        for (Eigen::Index j = 0; j < np; ++j) put(s.e[j]);
        os << ',' << (s.jumped ? 1 : 0);
        for (Eigen::Index j = 0; j < nx; ++j) put(s.x[j]);
        for (Eigen::Index j = 0; j < nw; ++j) put(s.w[j]);
        os << "\n";
    }
}

} // namespace simulator
} // namespace regpilot
