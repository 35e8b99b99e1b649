#include "qjlab/mcwf.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "qjlab/random.hpp"

namespace qjlab {

void TrajectoryConfig::validate() const {
    if (!(dt > 0.0)) throw std::invalid_argument("TrajectoryConfig: dt must be > 0");
    if (!(duration >= dt)) throw std::invalid_argument("TrajectoryConfig: duration < dt");
    if (sample_stride < 1) throw std::invalid_argument("TrajectoryConfig: sample_stride < 1");
    if (burn_in < 0.0) throw std::invalid_argument("TrajectoryConfig: negative burn_in");
    if (!(ring_window > 0.0)) throw std::invalid_argument("TrajectoryConfig: ring_window <= 0");
    if (!pin_times.empty() && !store_snapshots)
        throw std::invalid_argument("TrajectoryConfig: pin_times need store_snapshots");
    if (!initial_state && initial_preset != "vacuum" && initial_preset != "steady-sample")
        throw std::invalid_argument("TrajectoryConfig: unknown initial_preset");
}

void SnapshotRing::push(double t, const PureStateVector& psi) {
    ring_.emplace_back(t, psi);
    std::size_t drop = 0;
    while (drop < ring_.size() && ring_[drop].first < t - window_) ++drop;
    if (drop > 0) ring_.erase(ring_.begin(), ring_.begin() + static_cast<std::ptrdiff_t>(drop));
}

bool SnapshotRing::pin(double t) {
    if (ring_.empty()) return false;
    std::size_t best = 0;
    for (std::size_t i = 1; i < ring_.size(); ++i)
        if (std::abs(ring_[i].first - t) < std::abs(ring_[best].first - t)) best = i;
    sink_->insert_or_assign(ring_[best].first, ring_[best].second);
    return true;
}

SparseOperator build_effective_hamiltonian(const JCParams& p) {
    return build_hamiltonian(p) + number_operator(p.hilbert).scaled(cx(0.0, -1.0));
}

namespace {

/* preallocated RK4 workspace for d psi/dt = -i heff psi */
struct WaveStepper {
    const SparseOperator& heff;
    std::vector<cx> k1, k2, k3, k4, stage;

    explicit WaveStepper(const SparseOperator& h)
        : heff(h),
          k1(static_cast<std::size_t>(h.dim())),
          k2(k1.size()),
          k3(k1.size()),
          k4(k1.size()),
          stage(k1.size()) {}

    /* out may alias in */
    void step(const std::vector<cx>& in, std::vector<cx>& out, double dt) {
        const std::size_t n = in.size();
        const cx mi(0.0, -1.0);
        heff.apply(in.data(), k1.data());
        for (std::size_t i = 0; i < n; ++i) stage[i] = in[i] + 0.5 * dt * mi * k1[i];
        heff.apply(stage.data(), k2.data());
        for (std::size_t i = 0; i < n; ++i) stage[i] = in[i] + 0.5 * dt * mi * k2[i];
        heff.apply(stage.data(), k3.data());
        for (std::size_t i = 0; i < n; ++i) stage[i] = in[i] + dt * mi * k3[i];
        heff.apply(stage.data(), k4.data());
        for (std::size_t i = 0; i < n; ++i)
            out[i] = in[i] + dt / 6.0 * mi * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
};

double norm2_of(const std::vector<cx>& v) {
    double s = 0.0;
    for (const cx& a : v) s += std::norm(a);
    return s;
}

/* scale on which the occupied part of the spectrum actually oscillates:
 * vacuum Rabi at the bright occupation, detuning and drive shifts, decay */
double active_frequency(const JCParams& p) {
    double m1 = 0.0;
    const SemiclassicalRoots roots = solve_neoclassical(p);
    if (!roots.roots.empty()) m1 = roots.bright().modulus2;
    const double span = std::sqrt(m1 + 1.0);
    return p.g_over_k * span + std::abs(p.detuning) + 2.0 * std::abs(p.drive) / span + 1.0;
}

PureStateVector initial_state_for(const JCParams& p, const TrajectoryConfig& cfg) {
    if (cfg.initial_state) {
        if (cfg.initial_state->dim != p.hilbert.dim())
            throw std::invalid_argument("run_trajectory: initial state dimension mismatch");
        PureStateVector psi = *cfg.initial_state;
        psi.normalize();
        return psi;
    }
    if (cfg.initial_preset == "vacuum") {
        PureStateVector psi = PureStateVector::zero(p.hilbert.dim());
        psi.amplitudes[static_cast<std::size_t>(p.hilbert.index(0, 0))] = cx(1.0, 0.0);
        return psi;
    }
    /* steady-sample: draw one eigenstate of the steady-state density matrix
     * with probability equal to its weight */
    const SteadyStateReport ss = steady_state(p);
    const int d = ss.rho.dim;
    Eigen::MatrixXcd m(d, d);
    for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) m(r, c) = ss.rho.at(r, c);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(m);
    Rng pick(derive_seed(cfg.seed, 0x53616d70u));
    double u = pick.uniform01();
    int chosen = d - 1;
    double acc = 0.0;
    for (int i = d - 1; i >= 0; --i) { /* largest weights first */
        acc += std::max(0.0, es.eigenvalues()(i));
        if (u < acc) {
            chosen = i;
            break;
        }
    }
    PureStateVector psi = PureStateVector::zero(d);
    for (int r = 0; r < d; ++r) psi.amplitudes[static_cast<std::size_t>(r)] = es.eigenvectors()(r, chosen);
    psi.normalize();
    return psi;
}

} // namespace

PureStateVector integrate_step(const PureStateVector& psi, const SparseOperator& heff,
                               double dt) {
    if (psi.dim != heff.dim()) throw std::invalid_argument("integrate_step: dimension mismatch");
    if (!(dt > 0.0)) throw std::invalid_argument("integrate_step: dt must be > 0");
    if (dt * heff.gershgorin_bound() >= 2.5)
        throw std::invalid_argument("integrate_step: step outruns the spectral bound");
    WaveStepper stepper(heff);
    PureStateVector out = psi;
    stepper.step(psi.amplitudes, out.amplitudes, dt);
    if (out.norm2() > psi.norm2() * (1.0 + 1e-12))
        throw NumericalError("integrate_step: norm grew, step too large");
    return out;
}

TrajectoryRecord run_trajectory(const JCParams& p, const TrajectoryConfig& config,
                                const SampleObserver& observer) {
    p.validate();
    config.validate();
    const SparseOperator heff = build_effective_hamiltonian(p);
    if (config.dt * active_frequency(p) >= 0.1)
        throw std::invalid_argument("run_trajectory: dt too large for the occupied band");
    if (config.dt * heff.gershgorin_bound() >= 2.5)
        throw std::invalid_argument("run_trajectory: dt outruns the spectral bound");

    const int d = p.hilbert.dim();
    WaveStepper stepper(heff);
    Rng rng(config.seed);
    const SparseOperator a_op = annihilation(p.hilbert);
    const SparseOperator n_op = number_operator(p.hilbert);

    TrajectoryRecord rec;
    rec.seed = config.seed;
    rec.dt = config.dt;
    rec.sample_stride = config.sample_stride;
    SnapshotRing ring(config.ring_window, rec.snapshots);

    PureStateVector psi = initial_state_for(p, config);
    std::vector<cx> trial(static_cast<std::size_t>(d)), segment(static_cast<std::size_t>(d));
    double r_click = rng.uniform_pos();

    /* advance one step of length h, splitting at norm crossings; returns
     * click times relative to the step start */
    auto advance = [&](double h, double t0, std::vector<double>* clicks) {
        double offset = 0.0;
        while (h - offset > 0.0) {
            const double span = h - offset;
            stepper.step(psi.amplitudes, trial, span);
            if (norm2_of(trial) > r_click) {
                psi.amplitudes.swap(trial);
                break;
            }
            /* bisect the crossing time within (0, span] */
            double lo = 0.0, hi = span;
            segment = psi.amplitudes;
            while (hi - lo > 1e-3 * config.dt) {
                const double mid = 0.5 * (lo + hi);
                stepper.step(segment, trial, mid);
                (norm2_of(trial) > r_click ? lo : hi) = mid;
            }
            stepper.step(segment, trial, hi);
            psi.amplitudes.swap(trial);
            /* collapse, renormalize, fresh variate */
            std::vector<cx> dropped(static_cast<std::size_t>(d));
            a_op.apply(psi.amplitudes.data(), dropped.data());
            for (cx& v : dropped) v *= std::sqrt(2.0);
            psi.amplitudes.swap(dropped);
            psi.normalize();
            r_click = rng.uniform_pos();
            offset += hi;
            if (clicks) clicks->push_back(t0 + offset);
        }
    };

    /* burn-in: same dynamics, nothing recorded */
    const long burn_steps = std::lround(std::ceil(config.burn_in / config.dt - 1e-9));
    for (long s = 0; s < burn_steps; ++s) {
        const double h = std::min(config.dt, config.burn_in - s * config.dt);
        if (h <= 0.0) break;
        advance(h, 0.0, nullptr);
    }

    const long n_steps = std::lround(std::ceil(config.duration / config.dt - 1e-9));
    std::vector<double> pins_sorted = config.pin_times;
    std::sort(pins_sorted.begin(), pins_sorted.end());
    std::size_t next_pin = 0;
    auto take_sample = [&](double t) {
        TrajectorySample s;
        s.t = t;
        s.survival = psi.norm2();
        s.mean_a = expectation(a_op, psi);
        s.mean_n = expectation(n_op, psi).real();
        s.x0 = s.mean_a.real();
        s.y0 = s.mean_a.imag();
        const double top = (std::norm(psi.amplitudes[static_cast<std::size_t>(
                                p.hilbert.index(0, p.hilbert.n_max))]) +
                            (p.hilbert.include_atom
                                 ? std::norm(psi.amplitudes[static_cast<std::size_t>(
                                       p.hilbert.index(1, p.hilbert.n_max))])
                                 : 0.0)) /
                           s.survival;
        rec.max_top_population = std::max(rec.max_top_population, top);
        if (top > 1e-8) rec.truncation_warning = true;
        rec.samples.push_back(s);
        if (config.store_snapshots) {
            PureStateVector snap = psi;
            snap.normalize();
            ring.push(t, snap);
            /* pre-declared pins fire at the first sample past the target,
             * when both neighbours of the target are still in the window */
            while (next_pin < pins_sorted.size() && t >= pins_sorted[next_pin] - 1e-12) {
                ring.pin(pins_sorted[next_pin]);
                ++next_pin;
            }
        }
        if (observer) observer(s, ring);
    };

    take_sample(0.0);
    for (long s = 0; s < n_steps; ++s) {
        const double t0 = s * config.dt;
        const double h = std::min(config.dt, config.duration - t0);
        if (h <= 0.0) break;
        advance(h, t0, &rec.click_times);
        if ((s + 1) % config.sample_stride == 0 || s + 1 == n_steps)
            take_sample(std::min((s + 1) * config.dt, config.duration));
    }

    /* pins past the end of the run grab the final ring entry */
    for (; next_pin < pins_sorted.size(); ++next_pin) ring.pin(pins_sorted[next_pin]);
    return rec;
}

std::vector<TrajectoryRecord> run_ensemble_serial(const JCParams& p,
                                                  const TrajectoryConfig& base,
                                                  int n_trajectories) {
    if (n_trajectories < 1) throw std::invalid_argument("run_ensemble: need at least one");
    std::vector<TrajectoryRecord> out(static_cast<std::size_t>(n_trajectories));
    for (int i = 0; i < n_trajectories; ++i) {
        TrajectoryConfig cfg = base;
        cfg.seed = derive_seed(base.seed, static_cast<std::uint64_t>(i));
        out[static_cast<std::size_t>(i)] = run_trajectory(p, cfg);
    }
    return out;
}

std::vector<TrajectoryRecord> run_ensemble(const JCParams& p, const TrajectoryConfig& base,
                                           int n_trajectories, int workers) {
    if (n_trajectories < 1) throw std::invalid_argument("run_ensemble: need at least one");
    std::vector<TrajectoryRecord> out(static_cast<std::size_t>(n_trajectories));
#ifdef _OPENMP
    if (workers <= 0) workers = omp_get_max_threads();
#else
    workers = 1;
#endif
#pragma omp parallel for schedule(dynamic) num_threads(workers)
    for (int i = 0; i < n_trajectories; ++i) {
        TrajectoryConfig cfg = base;
        cfg.seed = derive_seed(base.seed, static_cast<std::uint64_t>(i));
        out[static_cast<std::size_t>(i)] = run_trajectory(p, cfg);
    }
    return out;
}

ConditionedQ conditioned_q_snapshot(const TrajectoryRecord& record, const HilbertConfig& cfg,
                                    double t, const QGridSpec& spec) {
    if (record.snapshots.empty())
        throw std::invalid_argument("conditioned_q_snapshot: record holds no snapshots");
    double best_t = record.snapshots.begin()->first;
    for (const auto& [st, psi] : record.snapshots)
        if (std::abs(st - t) < std::abs(best_t - t)) best_t = st;
    if (std::abs(best_t - t) > record.dt * record.sample_stride + 1e-12)
        throw std::invalid_argument("conditioned_q_snapshot: no snapshot near requested time");
    const PureStateVector& psi = record.snapshots.at(best_t);
    const DensityMatrix rho_c = reduced_cavity_dm(DensityMatrix::from_pure(psi), cfg);
    ConditionedQ out;
    out.grid = q_function(rho_c, spec);
    out.snapshot_time = best_t;
    return out;
}

} // namespace qjlab
