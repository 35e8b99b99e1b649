#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "qjlab/mcwf.hpp"
#include "qjlab/random.hpp"

using namespace qjlab;

namespace {

JCParams reduced_bistable() {
    JCParams p;
    p.g_over_k = 10.0;
    p.drive = cx(0.0, 2.5);
    p.detuning = -2.0;
    p.hilbert = HilbertConfig{35, true};
    return p;
}

JCParams linear_cavity(cx drive, double detuning, int n_max) {
    JCParams p;
    p.g_over_k = 0.0;
    p.drive = drive;
    p.detuning = detuning;
    p.hilbert = HilbertConfig{n_max, true};
    return p;
}

PureStateVector lower_coherent(cx alpha, const HilbertConfig& cfg) {
    const CoherentState c = coherent_state(alpha, HilbertConfig{cfg.n_max, false});
    PureStateVector psi = PureStateVector::zero(cfg.dim());
    for (int n = 0; n <= cfg.n_max; ++n)
        psi.amplitudes[static_cast<std::size_t>(cfg.index(0, n))] =
            c.state.amplitudes[static_cast<std::size_t>(n)];
    return psi;
}

bool identical_records(const TrajectoryRecord& a, const TrajectoryRecord& b) {
    if (a.click_times != b.click_times) return false;
    if (a.samples.size() != b.samples.size()) return false;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const TrajectorySample &sa = a.samples[i], &sb = b.samples[i];
        if (sa.t != sb.t || sa.mean_a != sb.mean_a || sa.mean_n != sb.mean_n ||
            sa.survival != sb.survival)
            return false;
    }
    return true;
}

} // namespace

TEST_CASE("dark cavity never clicks") {
    JCParams p = linear_cavity(cx(0.0, 0.0), -1.0, 6);
    TrajectoryConfig cfg;
    cfg.dt = 1e-3;
    cfg.duration = 2.0;
    cfg.sample_stride = 100;
    cfg.seed = 42;
    const TrajectoryRecord rec = run_trajectory(p, cfg);
    CHECK(rec.click_times.empty());
    for (const TrajectorySample& s : rec.samples) {
        CHECK(s.mean_n == 0.0);
        CHECK(s.survival == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_FALSE(rec.truncation_warning);
}

TEST_CASE("single-step integrator") {
    SUBCASE("pure decay of one photon") {
        JCParams p = linear_cavity(cx(0.0, 0.0), 0.0, 4);
        const SparseOperator heff = build_effective_hamiltonian(p);
        PureStateVector psi = PureStateVector::zero(p.hilbert.dim());
        psi.amplitudes[static_cast<std::size_t>(p.hilbert.index(0, 1))] = cx(1.0, 0.0);
        const double dt = 0.01;
        const PureStateVector out = integrate_step(psi, heff, dt);
        CHECK(std::abs(out.norm2() - std::exp(-2.0 * dt)) < 1e-10);
    }

    SUBCASE("hermitian generator preserves the norm") {
        JCParams p;
        p.g_over_k = 1.0;
        p.drive = cx(0.3, 0.1);
        p.detuning = -0.4;
        p.hilbert = HilbertConfig{6, true};
        const SparseOperator h = build_hamiltonian(p);
        PureStateVector psi = PureStateVector::zero(p.hilbert.dim());
        psi.amplitudes[1] = cx(0.8, 0.0);
        psi.amplitudes[8] = cx(0.0, 0.6);
        const PureStateVector out = integrate_step(psi, h, 1e-3);
        CHECK(std::abs(out.norm2() - psi.norm2()) < 1e-12);
    }

    SUBCASE("fourth-order convergence on a fixed interval") {
        JCParams p;
        p.g_over_k = 3.0;
        p.drive = cx(0.0, 0.7);
        p.detuning = -1.0;
        p.hilbert = HilbertConfig{8, true};
        const SparseOperator heff = build_effective_hamiltonian(p);
        PureStateVector psi0 = lower_coherent(cx(0.6, -0.2), p.hilbert);
        psi0.normalize();

        auto integrate_to = [&](double dt, int steps) {
            PureStateVector psi = psi0;
            for (int s = 0; s < steps; ++s) psi = integrate_step(psi, heff, dt);
            return psi;
        };
        const PureStateVector ref = integrate_to(0.0005, 200);
        auto err = [&](const PureStateVector& psi) {
            double s = 0.0;
            for (std::size_t i = 0; i < psi.amplitudes.size(); ++i)
                s += std::norm(psi.amplitudes[i] - ref.amplitudes[i]);
            return std::sqrt(s);
        };
        const double e1 = err(integrate_to(0.01, 10));
        const double e2 = err(integrate_to(0.005, 20));
        CHECK(e1 / e2 > 12.0);
        CHECK(e1 / e2 < 22.0);
    }

    SUBCASE("oversized step is rejected") {
        JCParams p = reduced_bistable();
        const SparseOperator heff = build_effective_hamiltonian(p);
        PureStateVector psi = PureStateVector::zero(p.hilbert.dim());
        psi.amplitudes[0] = cx(1.0, 0.0);
        CHECK_THROWS_AS((void)integrate_step(psi, heff, 1.0), std::invalid_argument);

        TrajectoryConfig cfg;
        cfg.dt = 0.05;
        cfg.duration = 1.0;
        CHECK_THROWS_AS((void)run_trajectory(p, cfg), std::invalid_argument);
    }
}

TEST_CASE("trajectories are deterministic in the seed") {
    JCParams p = reduced_bistable();
    TrajectoryConfig cfg;
    cfg.dt = 1e-3;
    cfg.duration = 1.0;
    cfg.sample_stride = 20;
    cfg.seed = 777;
    cfg.initial_state = lower_coherent(solve_neoclassical(p).bright().alpha, p.hilbert);
    const TrajectoryRecord a = run_trajectory(p, cfg);
    const TrajectoryRecord b = run_trajectory(p, cfg);
    CHECK(identical_records(a, b));
    CHECK(!a.click_times.empty());

    cfg.seed = 778;
    const TrajectoryRecord c = run_trajectory(p, cfg);
    CHECK_FALSE(identical_records(a, c));
}

TEST_CASE("survival decreases strictly between clicks") {
    JCParams p = reduced_bistable();
    TrajectoryConfig cfg;
    cfg.dt = 1e-3;
    cfg.duration = 2.0;
    cfg.sample_stride = 1;
    cfg.seed = 31;
    const TrajectoryRecord rec = run_trajectory(p, cfg);
    REQUIRE(rec.samples.size() > 100);

    std::size_t next_click = 0;
    int strict = 0;
    for (std::size_t i = 1; i < rec.samples.size(); ++i) {
        const double t0 = rec.samples[i - 1].t, t1 = rec.samples[i].t;
        bool clicked = false;
        while (next_click < rec.click_times.size() && rec.click_times[next_click] <= t1) {
            if (rec.click_times[next_click] > t0) clicked = true;
            ++next_click;
        }
        if (!clicked) {
            CHECK(rec.samples[i].survival < rec.samples[i - 1].survival);
            ++strict;
        }
    }
    CHECK(strict > 1000);

    for (std::size_t i = 1; i < rec.click_times.size(); ++i)
        CHECK(rec.click_times[i] > rec.click_times[i - 1]);
}

TEST_CASE("linear cavity click statistics") {
    const cx drive(0.0, 1.2);
    const double detuning = -1.5;
    JCParams p = linear_cavity(drive, detuning, 15);
    TrajectoryConfig cfg;
    cfg.dt = 2e-3;
    cfg.duration = 10.0;
    cfg.burn_in = 3.0;
    cfg.sample_stride = 500;
    cfg.seed = 99;

    const int n_traj = 200;
    const std::vector<TrajectoryRecord> recs = run_ensemble(p, cfg, n_traj);

    double clicks = 0.0;
    for (const TrajectoryRecord& r : recs) {
        clicks += static_cast<double>(r.click_times.size());
        for (std::size_t i = 1; i < r.click_times.size(); ++i)
            REQUIRE(r.click_times[i] > r.click_times[i - 1]);
    }
    const double rate = 2.0 * std::norm(drive) / (1.0 + detuning * detuning);
    const double expected = rate * cfg.duration * n_traj;
    CHECK(std::abs(clicks - expected) < 3.0 * std::sqrt(expected));

    /* stationary photon number across the ensemble */
    double mean_n = 0.0;
    int count = 0;
    for (const TrajectoryRecord& r : recs)
        for (const TrajectorySample& s : r.samples) {
            mean_n += s.mean_n;
            ++count;
        }
    mean_n /= count;
    CHECK(std::abs(mean_n - rate / 2.0) < 0.05 * rate);
}

TEST_CASE("ensemble mean follows the master equation") {
    JCParams p = reduced_bistable();
    TrajectoryConfig cfg;
    cfg.dt = 1e-3;
    cfg.duration = 3.0;
    cfg.sample_stride = 50;
    cfg.seed = 2024;
    PureStateVector bright = lower_coherent(solve_neoclassical(p).bright().alpha, p.hilbert);
    bright.normalize();
    cfg.initial_state = bright;

    const int n_traj = 256;
    const std::vector<TrajectoryRecord> recs = run_ensemble(p, cfg, n_traj);

    const MESolution me = me_evolve(p, DensityMatrix::from_pure(bright), 1e-3, 3.0, 50);

    REQUIRE(recs[0].samples.size() == me.times.size());
    int checked = 0;
    for (std::size_t k = 6; k < me.times.size(); k += 6) {
        REQUIRE(std::abs(recs[0].samples[k].t - me.times[k]) < 1e-9);
        double mean = 0.0, m2 = 0.0;
        for (const TrajectoryRecord& r : recs) {
            const double v = r.samples[k].mean_n;
            mean += v;
            m2 += v * v;
        }
        mean /= n_traj;
        const double var = std::max(0.0, m2 / n_traj - mean * mean);
        const double se = std::sqrt(var / n_traj);
        CHECK(std::abs(mean - me.mean_n[k]) < 3.0 * se + 1e-6);
        ++checked;
    }
    CHECK(checked == 10);
}

TEST_CASE("parallel ensemble equals serial ensemble") {
    JCParams p = reduced_bistable();
    TrajectoryConfig cfg;
    cfg.dt = 1e-3;
    cfg.duration = 0.5;
    cfg.sample_stride = 25;
    cfg.seed = 5150;
    const std::vector<TrajectoryRecord> par = run_ensemble(p, cfg, 12, 3);
    const std::vector<TrajectoryRecord> ser = run_ensemble_serial(p, cfg, 12);
    REQUIRE(par.size() == ser.size());
    for (std::size_t i = 0; i < par.size(); ++i) {
        CHECK(par[i].seed == ser[i].seed);
        CHECK(identical_records(par[i], ser[i]));
    }
    CHECK(par[0].seed != par[1].seed);
}

TEST_CASE("decaying coherent state stays coherent along the record") {
    /* with no coupling and no drive, clicks leave a coherent state intact
     * and the conditioned amplitude follows alpha0 e^{-t} exactly */
    JCParams p = linear_cavity(cx(0.0, 0.0), 0.0, 16);
    const cx alpha0(1.5, 0.0);
    TrajectoryConfig cfg;
    cfg.dt = 1e-3;
    cfg.duration = 1.0;
    cfg.sample_stride = 100;
    cfg.seed = 8;
    cfg.initial_state = lower_coherent(alpha0, p.hilbert);
    cfg.store_snapshots = true;
    cfg.pin_times = {0.5};

    const TrajectoryRecord rec = run_trajectory(p, cfg);
    for (const TrajectorySample& s : rec.samples)
        CHECK(std::abs(s.mean_a - alpha0 * std::exp(-s.t)) < 1e-6);

    REQUIRE(!rec.snapshots.empty());
    const QGridSpec spec{-1.0, 3.0, -2.0, 2.0, 0.05};
    const ConditionedQ q = conditioned_q_snapshot(rec, p.hilbert, 0.5, spec);
    CHECK(std::abs(q.snapshot_time - 0.5) <= cfg.dt * cfg.sample_stride + 1e-12);
    const std::vector<QPeak> peaks = find_peaks(q.grid, 0.5);
    REQUIRE(peaks.size() == 1);
    const cx expected = alpha0 * std::exp(-q.snapshot_time);
    CHECK(std::abs(peaks[0].position - expected) < 2e-2);

    CHECK_THROWS_AS((void)conditioned_q_snapshot(rec, p.hilbert, 0.0, spec),
                    std::invalid_argument);
}

TEST_CASE("snapshot configuration is validated") {
    TrajectoryConfig cfg;
    cfg.pin_times = {1.0};
    cfg.store_snapshots = false;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg.pin_times.clear();
    cfg.dt = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    cfg.dt = 1e-3;
    cfg.initial_preset = "bogus";
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("steady-sample initial preset") {
    JCParams p = reduced_bistable();
    p.hilbert = HilbertConfig{30, true};
    TrajectoryConfig cfg;
    cfg.dt = 1e-3;
    cfg.duration = 0.2;
    cfg.sample_stride = 20;
    cfg.seed = 606;
    cfg.initial_preset = "steady-sample";
    const TrajectoryRecord a = run_trajectory(p, cfg);
    const TrajectoryRecord b = run_trajectory(p, cfg);
    CHECK(identical_records(a, b));
    CHECK(a.samples.front().survival <= 1.0 + 1e-12);
    CHECK(a.samples.front().mean_n >= 0.0);
}

TEST_CASE("truncation pressure raises the warning flag") {
    JCParams p = linear_cavity(cx(0.0, 2.0), 0.0, 6);
    TrajectoryConfig cfg;
    cfg.dt = 1e-3;
    cfg.duration = 3.0;
    cfg.sample_stride = 50;
    cfg.seed = 12;
    const TrajectoryRecord rec = run_trajectory(p, cfg);
    CHECK(rec.truncation_warning);
    CHECK(rec.max_top_population > 1e-8);
}
