#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "qjlab/charge.hpp"
#include "qjlab/random.hpp"

using namespace qjlab;

namespace {

InitialSuperposition fig_superposition() {
    InitialSuperposition s;
    s.c1 = cx(1.0 / std::sqrt(2.0), 0.0);
    s.c2 = cx(1.0 / std::sqrt(2.0), 0.0);
    s.alpha1 = cx(1.95, -5.45);
    s.alpha2 = cx(-1.40, 0.85);
    return s;
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

double var_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return acc / double(v.size());
}

} // namespace

TEST_CASE("initial superposition and cat frame") {
    auto s = fig_superposition();
    CHECK_NOTHROW(s.validate());
    s.c1 = cx(0.8, 0.0);
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = fig_superposition();
    s.alpha2 = s.alpha1;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);

    SUBCASE("conditioned amplitudes of the decay experiment") {
        const auto f = to_cat_frame(cx(2.95, -5.35), cx(-2.05, -0.20));
        CHECK(f.A == doctest::Approx(3.59).epsilon(0.002));
        CHECK(std::abs(f.offset - cx(0.45, -2.775)) < 1e-12);
        CHECK(f.phi0 == 0.0);
        /* rotation carries alpha1 - offset onto the positive real axis */
        const cx rotated = std::exp(cx(0.0, -f.rotation)) * (cx(2.95, -5.35) - f.offset);
        CHECK(std::abs(rotated - cx(f.A, 0.0)) < 1e-12);
    }

    SUBCASE("a symmetric pair needs no offset or rotation") {
        const auto f = to_cat_frame(cx(2.5, 0.0), cx(-2.5, 0.0));
        CHECK(f.offset == cx(0.0, 0.0));
        CHECK(f.rotation == 0.0);
        CHECK(f.A == doctest::Approx(2.5).epsilon(1e-14));
    }

    SUBCASE("a global phase leaves the separation unchanged") {
        const cx a1(1.95, -5.45), a2(-1.40, 0.85);
        const double A0 = to_cat_frame(a1, a2).A;
        for (double phi : {0.3, 1.7, 2.9, -1.1}) {
            const cx rot = std::exp(cx(0.0, phi));
            CHECK(to_cat_frame(rot * a1, rot * a2).A == doctest::Approx(A0).epsilon(1e-13));
        }
        CHECK_THROWS_AS(to_cat_frame(a1, a1), std::invalid_argument);
    }
}

TEST_CASE("heterodyne drift") {
    const auto s = fig_superposition();

    SUBCASE("a single well pins the drift to its amplitude") {
        InitialSuperposition one = s;
        one.c1 = cx(1.0, 0.0);
        one.c2 = cx(0.0, 0.0);
        for (cx q : {cx(0.0, 0.0), cx(3.0, -2.0), cx(-8.0, 5.0)}) {
            for (double t : {0.0, 0.3, 4.0}) {
                CHECK(std::abs(heterodyne_drift(q, t, one, 1.0) - std::conj(one.alpha1)) <
                      1e-15);
            }
        }
    }

    SUBCASE("equal moduli and weights balance at the midpoint") {
        InitialSuperposition sym;
        sym.c1 = sym.c2 = cx(1.0 / std::sqrt(2.0), 0.0);
        sym.alpha1 = cx(3.0, 4.0);
        sym.alpha2 = cx(-3.0, 4.0); /* same modulus */
        const cx mid = 0.5 * (std::conj(sym.alpha1) + std::conj(sym.alpha2));
        CHECK(std::abs(heterodyne_drift(cx(0.0, 0.0), 0.0, sym, 1.0) - mid) < 1e-15);
    }

    SUBCASE("deep in a well the drift locks to it") {
        const cx deep = 5.0 * std::conj(s.alpha1);
        CHECK(std::abs(heterodyne_drift(deep, 2.0, s, 1.0) - std::conj(s.alpha1)) < 1e-12);
        const cx deep2 = 5.0 * std::conj(s.alpha2);
        CHECK(std::abs(heterodyne_drift(deep2, 2.0, s, 1.0) - std::conj(s.alpha2)) < 1e-12);
    }

    SUBCASE("drift stays on the segment joining the conjugate amplitudes") {
        Rng rng(20260819);
        const cx e1 = std::conj(s.alpha1), e2 = std::conj(s.alpha2);
        const double span = std::abs(e1 - e2);
        for (int k = 0; k < 200; ++k) {
            const cx q(8.0 * (rng.uniform01() - 0.5), 8.0 * (rng.uniform01() - 0.5));
            const double t = 3.0 * rng.uniform01();
            const cx d = heterodyne_drift(q, t, s, 1.0);
            CHECK(std::abs(d - e1) + std::abs(d - e2) <= span + 1e-12);
        }
    }
}

TEST_CASE("heterodyne target density") {
    const auto s = fig_superposition();
    CHECK(separated_well(s));

    SUBCASE("wells sit at the conjugate amplitudes") {
        const cx p1 = std::conj(s.alpha1);
        for (cx step : {cx(0.05, 0.0), cx(0.0, 0.05), cx(-0.05, 0.0), cx(0.0, -0.05)}) {
            CHECK(heterodyne_target_density(p1, s) > heterodyne_target_density(p1 + step, s));
        }
        CHECK(heterodyne_target_density(p1, s) ==
              doctest::Approx(0.5 / pi).epsilon(1e-6));
    }

    SUBCASE("the density integrates to one") {
        /* midpoint quadrature over a box covering both wells */
        const double lo_x = -8.0, hi_x = 9.0, lo_y = -8.0, hi_y = 12.0;
        const int n = 850;
        const double hx = (hi_x - lo_x) / n, hy = (hi_y - lo_y) / n;
        double acc = 0.0;
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < n; ++i) {
                acc += heterodyne_target_density(
                    cx(lo_x + (i + 0.5) * hx, lo_y + (j + 0.5) * hy), s);
            }
        }
        CHECK(acc * hx * hy == doctest::Approx(1.0).epsilon(1e-6));
    }

    SUBCASE("a single weight gives a single Gaussian") {
        InitialSuperposition one = s;
        one.c1 = cx(1.0, 0.0);
        one.c2 = cx(0.0, 0.0);
        for (cx q : {cx(1.0, 5.0), cx(2.5, 5.8), cx(0.0, 0.0)}) {
            CHECK(heterodyne_target_density(q, one) ==
                  doctest::Approx(std::exp(-std::norm(one.alpha1 - std::conj(q))) / pi)
                      .epsilon(1e-12));
        }
    }
}

TEST_CASE("heterodyne path statistics") {
    SUBCASE("configuration preconditions") {
        HeterodyneConfig cfg;
        cfg.init = fig_superposition();
        cfg.dt = 2e-3;
        CHECK_THROWS_AS(simulate_heterodyne(cfg, 1), std::invalid_argument);
        cfg.dt = 1e-3;
        cfg.t_end = 3.0;
        CHECK_THROWS_AS(simulate_heterodyne(cfg, 1), std::invalid_argument);
    }

    SUBCASE("records are deterministic in the seed and start at zero") {
        HeterodyneConfig cfg;
        cfg.init = fig_superposition();
        cfg.t_end = 5.0;
        cfg.path_stride = 500;
        const auto a = simulate_heterodyne(cfg, 99);
        const auto b = simulate_heterodyne(cfg, 99);
        const auto c = simulate_heterodyne(cfg, 100);
        CHECK(a.final == b.final);
        CHECK(a.path == b.path);
        CHECK(a.final != c.final);
        CHECK(a.path.front() == cx(0.0, 0.0));
        CHECK(a.grid.front() == 0.0);
        CHECK(a.grid.back() == doctest::Approx(5.0).epsilon(1e-12));
        CHECK(a.path.back() == a.final);
        CHECK(std::is_sorted(a.grid.begin(), a.grid.end()));
    }

    SUBCASE("single-well decay reproduces the known mean and variance") {
        /* drift is constant conj(alpha), so Q(t) is Gaussian with mean
         * conj(alpha)(1 - e^{-2 kappa t}) and variance 1/2 per component */
        InitialSuperposition one;
        one.c1 = cx(1.0, 0.0);
        one.c2 = cx(0.0, 0.0);
        one.alpha1 = cx(0.8, -0.6);
        one.alpha2 = cx(0.0, 0.0);
        HeterodyneConfig cfg;
        cfg.init = one;
        cfg.t_end = 5.0;
        const long n = 6000;
        std::vector<double> xs, ys;
        cx mid_sum{};
        for (long i = 0; i < n; ++i) {
            HeterodyneConfig path_cfg = cfg;
            path_cfg.path_stride = 1000; /* grid point at t = 1 */
            const auto rec = simulate_heterodyne(path_cfg, derive_seed(4242, std::uint64_t(i)));
            xs.push_back(rec.final.real());
            ys.push_back(rec.final.imag());
            CHECK(rec.grid[1] == doctest::Approx(1.0).epsilon(1e-12));
            mid_sum += rec.path[1];
        }
        const cx target = std::conj(one.alpha1);
        const double se = std::sqrt(0.5 / double(n));
        CHECK(std::abs(mean_of(xs) - target.real()) < 3.0 * se);
        CHECK(std::abs(mean_of(ys) - target.imag()) < 3.0 * se);
        const double var_tol = 3.0 * 0.5 * std::sqrt(2.0 / double(n));
        CHECK(std::abs(var_of(xs) - 0.5) < var_tol);
        CHECK(std::abs(var_of(ys) - 0.5) < var_tol);

        const cx mid_mean = mid_sum / double(n);
        const cx mid_target = target * (1.0 - std::exp(-2.0));
        const double se_mid = 3.0 * std::sqrt(0.5 * (1.0 - std::exp(-2.0)) / double(n));
        CHECK(std::abs(mid_mean.real() - mid_target.real()) < se_mid);
        CHECK(std::abs(mid_mean.imag() - mid_target.imag()) < se_mid);
    }
}

TEST_CASE("heterodyne ensemble against its terminal density") {
    HeterodyneConfig cfg;
    cfg.init = fig_superposition();
    const long n = 4000;
    FluctuationModel none;
    const auto ens = run_ensemble_serial(cfg, n, none, 31);
    REQUIRE(long(ens.finals.size()) == n);

    /* terminal mean telescopes to the weight-averaged conjugate amplitude */
    std::vector<double> xs, ys;
    for (cx q : ens.finals) {
        xs.push_back(q.real());
        ys.push_back(q.imag());
    }
    const cx target = 0.5 * (std::conj(cfg.init.alpha1) + std::conj(cfg.init.alpha2));
    /* per-component spread: noise 1/2 plus the well separation */
    const cx d = std::conj(cfg.init.alpha1) - target;
    const double sx = std::sqrt(0.5 + d.real() * d.real());
    const double sy = std::sqrt(0.5 + d.imag() * d.imag());
    CHECK(std::abs(mean_of(xs) - target.real()) < 3.0 * sx / std::sqrt(double(n)));
    CHECK(std::abs(mean_of(ys) - target.imag()) < 3.0 * sy / std::sqrt(double(n)));

    const auto hist = histogram_2d(ens.finals, -5.5, 6.5, 24, -4.5, 9.5, 28);
    const double l1 = l1_distance(
        hist, [&](cx q) { return heterodyne_target_density(q, cfg.init); });
    CHECK(l1 < 0.15);
    CHECK(hist.outside < n / 100);

    SUBCASE("parallel ensembles match the serial path exactly") {
        HeterodyneConfig small = cfg;
        small.t_end = 5.0;
        const auto ser = run_ensemble_serial(small, 48, none, 7);
        const auto par = run_ensemble(small, 48, none, 7, 3);
        CHECK(ser.finals == par.finals);
        const auto rep = run_ensemble(small, 48, none, 7, 2);
        CHECK(par.finals == rep.finals);
    }
}

TEST_CASE("heterodyne ensemble with weight and phase scatter") {
    HeterodyneConfig cfg;
    cfg.init = fig_superposition();
    cfg.t_end = 6.0;
    FluctuationModel fluct;
    fluct.mode = FluctuationMode::weight_phase;
    fluct.seed = 12;
    const long n = 3000;
    const auto ens = run_ensemble_serial(cfg, n, fluct, 77);
    REQUIRE(long(ens.weight_draws.size()) == n);
    REQUIRE(long(ens.phase_draws.size()) == n);

    /* draws cover their ranges */
    const double wmin = *std::min_element(ens.weight_draws.begin(), ens.weight_draws.end());
    const double wmax = *std::max_element(ens.weight_draws.begin(), ens.weight_draws.end());
    CHECK(wmin >= 0.0);
    CHECK(wmax < 1.0);
    CHECK(mean_of(ens.weight_draws) == doctest::Approx(0.5).epsilon(0.05));
    CHECK(mean_of(ens.phase_draws) == doctest::Approx(pi).epsilon(0.05));

    /* the bright well survives; the randomized-phase well averages out, so
     * the ensemble mean is the half-weighted bright amplitude */
    std::vector<double> xs, ys;
    for (cx q : ens.finals) {
        xs.push_back(q.real());
        ys.push_back(q.imag());
    }
    const cx half = 0.5 * std::conj(cfg.init.alpha1);
    const double spread = std::abs(cfg.init.alpha1) + 1.0;
    CHECK(std::abs(mean_of(xs) - half.real()) < 3.0 * spread / std::sqrt(double(n)));
    CHECK(std::abs(mean_of(ys) - half.imag()) < 3.0 * spread / std::sqrt(double(n)));

    /* paths drawn to the randomized well land on a ring of radius |alpha2|,
     * which keeps mass at radii the fixed-parameter target cannot reach */
    const double r2 = std::abs(cfg.init.alpha2);
    long ring = 0;
    for (cx q : ens.finals) {
        const double r = std::abs(q);
        if (std::abs(r - r2) < 1.2 && std::abs(q - std::conj(cfg.init.alpha1)) > 3.0) ++ring;
    }
    CHECK(ring > n / 6);

    /* the ring covers all four quadrants of the phase circle */
    int quadrant_hits[4] = {0, 0, 0, 0};
    for (std::size_t i = 0; i < ens.finals.size(); ++i) {
        const cx q = ens.finals[i];
        if (std::abs(std::abs(q) - r2) < 1.2 &&
            std::abs(q - std::conj(cfg.init.alpha1)) > 3.0) {
            const double a = std::arg(q);
            const int quad = (a >= 0.0) ? (a < pi / 2 ? 0 : 1) : (a < -pi / 2 ? 2 : 3);
            ++quadrant_hits[quad];
        }
    }
    for (int q = 0; q < 4; ++q) CHECK(quadrant_hits[q] > 20);

    SUBCASE("fluctuation draws are independent of the path seed") {
        const auto other = run_ensemble_serial(cfg, 100, fluct, 78);
        const auto base = run_ensemble_serial(cfg, 100, fluct, 77);
        CHECK(other.weight_draws == base.weight_draws);
        CHECK(other.phase_draws == base.phase_draws);
        CHECK(other.finals != base.finals);
    }

    SUBCASE("gaussian_A is rejected for heterodyne ensembles") {
        FluctuationModel bad;
        bad.mode = FluctuationMode::gaussian_A;
        CHECK_THROWS_AS(run_ensemble_serial(cfg, 10, bad, 1), std::invalid_argument);
    }
}

TEST_CASE("homodyne drift") {
    CatFrame frame;
    frame.A = 9.0;
    frame.phi0 = 0.0;

    SUBCASE("symmetry and limits") {
        CHECK(homodyne_drift(0.0, 0.3, frame, 0.0) == 0.0);
        CatFrame free;
        free.A = 0.0;
        for (double q : {-3.0, 0.0, 2.0}) {
            CHECK(homodyne_drift(q, 0.5, free, 1.1) == 0.0);
        }
        /* odd in Q for phi0 in {0, pi} */
        for (double phi0 : {0.0, pi}) {
            CatFrame f = frame;
            f.phi0 = phi0;
            for (double theta : {0.0, 0.7, pi / 2}) {
                for (double q : {0.4, 1.3, 2.8}) {
                    CHECK(homodyne_drift(-q, 0.4, f, theta) ==
                          doctest::Approx(-homodyne_drift(q, 0.4, f, theta)).epsilon(1e-12));
                }
            }
        }
        CHECK_THROWS_AS(homodyne_drift(0.0, 1.0, frame, 0.0), std::invalid_argument);
    }

    SUBCASE("position quadrature locks to the +2A well") {
        for (double q : {2.0, 3.0, 5.0}) {
            CHECK(homodyne_drift(q, 0.5, frame, 0.0) ==
                  doctest::Approx(2.0 * frame.A).epsilon(1e-12));
        }
        CHECK(homodyne_drift(-3.0, 0.5, frame, 0.0) ==
              doctest::Approx(-2.0 * frame.A).epsilon(1e-12));
    }

    SUBCASE("fringe nodes activate the clamp") {
        /* at theta = pi/2, eta -> 1 the density vanishes where
         * cos(2 Q A) = -1; just off the node the raw drift peaks near
         * 1/sqrt(1 - eta), independent of A */
        const double eta = 1.0 - 1e-6;
        const double near9 = pi / (2.0 * frame.A) - 1e-3;
        const double d9 = homodyne_drift(near9, eta, frame, pi / 2);
        CHECK(std::abs(d9) > 100.0);
        CHECK(std::abs(d9) < homodyne_drift_clamp_factor * frame.A);

        /* with a small amplitude the bound sits below that peak and the
         * clamp engages, with the sign of the raw drift */
        CatFrame small;
        small.A = 0.5;
        const double bound = homodyne_drift_clamp_factor * small.A;
        const double node = pi / (2.0 * small.A);
        CHECK(homodyne_drift(node - 1e-3, eta, small, pi / 2) == -bound);
        CHECK(homodyne_drift(node + 1e-3, eta, small, pi / 2) == bound);

        /* away from nodes the drift is modest */
        CHECK(std::abs(homodyne_drift(0.0, 0.5, frame, pi / 2)) < 2.0 * frame.A);
    }
}

TEST_CASE("homodyne target density") {
    SUBCASE("free field limit is the standard normal") {
        CatFrame free;
        free.A = 0.0;
        for (double q : {-2.0, -0.3, 0.0, 1.4, 3.0}) {
            CHECK(homodyne_target_density(q, free, 0.9) ==
                  doctest::Approx(std::exp(-0.5 * q * q) / std::sqrt(2.0 * pi))
                      .epsilon(1e-12));
        }
    }

    SUBCASE("interference fringes are spaced by pi over A") {
        CatFrame f;
        f.A = 9.0;
        const auto peaks = density_maxima(
            [&](double q) { return homodyne_target_density(q, f, pi / 2); }, -2.0, 2.0,
            20001, 0.01);
        REQUIRE(peaks.size() >= 8);
        for (std::size_t k = 0; k + 1 < peaks.size(); ++k) {
            CHECK(peaks[k + 1] - peaks[k] == doctest::Approx(pi / f.A).epsilon(0.02));
        }
    }

    SUBCASE("position quadrature is two Gaussians at +-2A") {
        CatFrame f;
        f.A = 9.0;
        const auto peaks = density_maxima(
            [&](double q) { return homodyne_target_density(q, f, 0.0); }, -25.0, 25.0, 20001,
            0.2);
        REQUIRE(peaks.size() == 2);
        CHECK(peaks[0] == doctest::Approx(-18.0).epsilon(1e-4));
        CHECK(peaks[1] == doctest::Approx(18.0).epsilon(1e-4));
        const double p = homodyne_target_density(18.0, f, 0.0);
        CHECK(p == doctest::Approx(0.5 / std::sqrt(2.0 * pi)).epsilon(1e-6));
    }

    SUBCASE("total mass follows the closed form") {
        /* integral equals (1 + cos(phi0) e^{-2A^2}) / (1 + e^{-2A^2}) */
        for (double A : {0.7, 1.5, 3.59}) {
            for (double phi0 : {0.0, pi / 3, pi}) {
                for (double theta : {0.0, 0.9, pi / 2}) {
                    CatFrame f;
                    f.A = A;
                    f.phi0 = phi0;
                    const double lo = -(2.0 * A + 10.0), hi = 2.0 * A + 10.0;
                    const int n = 200001;
                    const double h = (hi - lo) / (n - 1);
                    double acc = homodyne_target_density(lo, f, theta) +
                                 homodyne_target_density(hi, f, theta);
                    for (int k = 1; k + 1 < n; ++k) {
                        acc += (k % 2 == 1 ? 4.0 : 2.0) *
                               homodyne_target_density(lo + k * h, f, theta);
                    }
                    const double integral = acc * h / 3.0;
                    const double expect = (1.0 + std::cos(phi0) * std::exp(-2.0 * A * A)) /
                                          (1.0 + std::exp(-2.0 * A * A));
                    CHECK(integral == doctest::Approx(expect).epsilon(1e-8));
                }
            }
        }
    }

    SUBCASE("a pi phase turns the central peak into a zero") {
        CatFrame f;
        f.A = 3.59;
        f.phi0 = pi;
        const double at0 = homodyne_target_density(0.0, f, pi / 2);
        const double nearby = homodyne_target_density(pi / (2.0 * f.A), f, pi / 2);
        CHECK(at0 < 1e-12 * nearby + 1e-300);
        /* still symmetric */
        for (double q : {0.3, 0.9, 2.2}) {
            CHECK(homodyne_target_density(q, f, pi / 2) ==
                  doctest::Approx(homodyne_target_density(-q, f, pi / 2)).epsilon(1e-12));
        }
    }
}

TEST_CASE("homodyne path statistics") {
    SUBCASE("configuration preconditions") {
        HomodyneConfig cfg;
        cfg.frame.A = 1.0;
        cfg.d_eta = 2e-4;
        CHECK_THROWS_AS(simulate_homodyne(cfg, 1), std::invalid_argument);
        cfg.d_eta = 1e-4;
        cfg.eta_max = 1.0;
        CHECK_THROWS_AS(simulate_homodyne(cfg, 1), std::invalid_argument);
    }

    SUBCASE("records are deterministic and well-formed") {
        HomodyneConfig cfg;
        cfg.frame = to_cat_frame(cx(2.95, -5.35), cx(-2.05, -0.20));
        cfg.theta = pi / 2;
        cfg.path_stride = 400;
        const auto a = simulate_homodyne(cfg, 5);
        const auto b = simulate_homodyne(cfg, 5);
        CHECK(a.final == b.final);
        CHECK(a.path == b.path);
        CHECK(a.kind == ChargeKind::homodyne);
        CHECK(a.theta == pi / 2);
        CHECK(a.path.front() == cx(0.0, 0.0));
        CHECK(a.grid.back() == doctest::Approx(cfg.eta_max).epsilon(1e-12));
        CHECK(std::is_sorted(a.grid.begin(), a.grid.end()));
        for (const cx q : a.path) CHECK(q.imag() == 0.0);
        CHECK(simulate_homodyne(cfg, 6).final != a.final);
    }

    SUBCASE("free charge accumulates a standard normal") {
        HomodyneConfig cfg;
        cfg.frame.A = 0.0;
        const long n = 2500;
        std::vector<double> finals;
        FluctuationModel none;
        const auto ens = run_ensemble_serial(cfg, n, none, 2024);
        finals = ens.finals;
        CHECK(std::abs(mean_of(finals)) < 3.0 / std::sqrt(double(n)));
        CHECK(std::abs(var_of(finals) - 1.0) < 3.0 * std::sqrt(2.0 / double(n)));
        const double ks = ks_distance(
            finals,
            [](double q) { return std::exp(-0.5 * q * q) / std::sqrt(2.0 * pi); }, -6.0,
            6.0);
        CHECK(ks < 0.03);
        CHECK(ens.clamp_total == 0);
    }

    SUBCASE("position measurement splits into wells at +-2A") {
        HomodyneConfig cfg;
        cfg.frame.A = 9.0;
        const long n = 400;
        FluctuationModel none;
        const auto ens = run_ensemble_serial(cfg, n, none, 88);
        long plus = 0;
        for (double q : ens.finals) {
            CHECK(std::abs(std::abs(q) - 18.0) < 4.5);
            if (q > 0.0) ++plus;
        }
        /* equal weights split the ensemble evenly */
        CHECK(std::abs(double(plus) / double(n) - 0.5) < 3.0 * 0.5 / std::sqrt(double(n)));
        const double ks = ks_distance(
            ens.finals,
            [&](double q) { return homodyne_target_density(q, cfg.frame, 0.0); }, -26.0,
            26.0);
        CHECK(ks < 0.06);
    }
}

TEST_CASE("homodyne ensemble interference") {
    CatFrame frame = to_cat_frame(cx(2.95, -5.35), cx(-2.05, -0.20));
    HomodyneConfig cfg;
    cfg.frame = frame;
    cfg.theta = pi / 2;
    FluctuationModel none;
    const long n = 4000;
    const auto ens = run_ensemble_serial(cfg, n, none, 314);

    SUBCASE("terminal distribution matches the analytic density") {
        const double ks = ks_distance(
            ens.finals,
            [&](double q) { return homodyne_target_density(q, frame, pi / 2); }, -6.0, 6.0);
        CHECK(ks < 0.035);
    }

    SUBCASE("fringe frequency sits at twice the separation") {
        const double u = dominant_frequency(ens.finals, 2.0 * frame.A - 1.5,
                                            2.0 * frame.A + 1.5, 601);
        CHECK(2.0 * pi / u == doctest::Approx(pi / frame.A).epsilon(0.02));
    }

    SUBCASE("parallel ensembles match the serial path exactly") {
        HomodyneConfig small = cfg;
        const auto ser = run_ensemble_serial(small, 32, none, 7);
        const auto par = run_ensemble(small, 32, none, 7, 3);
        CHECK(ser.finals == par.finals);
    }

    SUBCASE("grid refinement leaves the terminal statistics unchanged") {
        HomodyneConfig fine = cfg;
        fine.d_eta = 5e-5;
        const auto fine_ens = run_ensemble_serial(fine, 1500, none, 555);
        const auto base_ens = run_ensemble_serial(cfg, 1500, none, 555);
        auto ks_of = [&](const std::vector<double>& v) {
            return ks_distance(
                v, [&](double q) { return homodyne_target_density(q, frame, pi / 2); },
                -6.0, 6.0);
        };
        CHECK(std::abs(ks_of(fine_ens.finals) - ks_of(base_ens.finals)) < 0.02);
    }
}

TEST_CASE("homodyne ensemble with amplitude scatter") {
    CatFrame frame;
    frame.A = 9.0;
    HomodyneConfig cfg;
    cfg.frame = frame;
    cfg.theta = pi / 2;
    FluctuationModel fluct;
    fluct.mode = FluctuationMode::gaussian_A;
    fluct.sigma_over_sqrtA = 0.5;
    fluct.seed = 99;
    const long n = 2000;
    const auto noisy = run_ensemble_serial(cfg, n, fluct, 1001);
    FluctuationModel none;
    const auto clean = run_ensemble_serial(cfg, n, none, 1001);

    REQUIRE(long(noisy.amplitude_draws.size()) == n);
    const double sigma = 0.5 * std::sqrt(9.0);
    CHECK(mean_of(noisy.amplitude_draws) == doctest::Approx(9.0).epsilon(0.02));
    CHECK(std::sqrt(var_of(noisy.amplitude_draws)) == doctest::Approx(sigma).epsilon(0.1));
    for (double a : noisy.amplitude_draws) CHECK(a > 0.0);

    /* amplitude scatter washes out the fringe contrast but keeps the spacing:
     * compare empirical characteristic functions at the fringe frequency */
    auto ecf_mag = [](const std::vector<double>& v, double u) {
        double re = 0.0, im = 0.0;
        for (double q : v) {
            re += std::cos(u * q);
            im += std::sin(u * q);
        }
        return std::hypot(re, im) / double(v.size());
    };
    const double u0 = 2.0 * frame.A;
    CHECK(ecf_mag(clean.finals, u0) > 0.25);
    CHECK(ecf_mag(noisy.finals, u0) < 0.5 * ecf_mag(clean.finals, u0));
    const double u_noisy = dominant_frequency(noisy.finals, u0 - 2.0, u0 + 2.0, 401);
    CHECK(2.0 * pi / u_noisy == doctest::Approx(pi / frame.A).epsilon(0.02));

    SUBCASE("weight_phase is rejected for homodyne ensembles") {
        FluctuationModel bad;
        bad.mode = FluctuationMode::weight_phase;
        CHECK_THROWS_AS(run_ensemble_serial(cfg, 10, bad, 1), std::invalid_argument);
    }
}

TEST_CASE("histogram and comparison utilities") {
    SUBCASE("1d bins, outside counts and density normalization") {
        std::vector<double> vals{-1.5, 0.1, 0.2, 0.3, 0.9, 2.5};
        const auto h = histogram_1d(vals, 0.0, 1.0, 4);
        CHECK(h.total == 6);
        CHECK(h.outside == 2);
        CHECK(h.centers.front() == doctest::Approx(0.125));
        /* bin [0, 0.25) holds {0.1, 0.2}: density 2 / (6 * 0.25) */
        CHECK(h.density[0] == doctest::Approx(2.0 / 1.5));
        double mass = 0.0;
        for (double d : h.density) mass += d * 0.25;
        CHECK(mass == doctest::Approx(4.0 / 6.0));
    }

    SUBCASE("2d bins") {
        std::vector<cx> vals{cx(0.1, 0.1), cx(0.1, 0.9), cx(0.6, 0.6), cx(2.0, 0.0)};
        const auto h = histogram_2d(vals, 0.0, 1.0, 2, 0.0, 1.0, 2);
        CHECK(h.total == 4);
        CHECK(h.outside == 1);
        CHECK(h.density[0] == doctest::Approx(1.0 / (4.0 * 0.25)));
        CHECK(h.density[3] == doctest::Approx(1.0 / (4.0 * 0.25)));
    }

    SUBCASE("ks distance vanishes for matched quantiles") {
        /* feed the exact quantile midpoints of a triangular density */
        auto tri = [](double x) { return (x >= 0.0 && x <= 1.0) ? 2.0 * x : 0.0; };
        std::vector<double> qs;
        const int n = 200;
        for (int i = 0; i < n; ++i) {
            qs.push_back(std::sqrt((i + 0.5) / n)); /* CDF x^2 inverted */
        }
        CHECK(ks_distance(qs, tri, 0.0, 1.0) < 0.5 / n + 1e-4);
    }

    SUBCASE("density maxima finds both modes with refinement") {
        auto two = [](double x) {
            return std::exp(-(x - 1.0) * (x - 1.0)) + 0.6 * std::exp(-(x + 2.0) * (x + 2.0));
        };
        const auto peaks = density_maxima(two, -6.0, 6.0, 4001, 0.1);
        REQUIRE(peaks.size() == 2);
        CHECK(peaks[0] == doctest::Approx(-2.0).epsilon(1e-3));
        CHECK(peaks[1] == doctest::Approx(1.0).epsilon(1e-3));
    }

    SUBCASE("dominant frequency recovers a planted tone") {
        std::vector<double> vals;
        Rng rng(5);
        /* samples drawn from density prop to 1 + cos(7 q) on [-pi, pi] via rejection */
        while (vals.size() < 3000) {
            const double q = (rng.uniform01() * 2.0 - 1.0) * pi;
            if (2.0 * rng.uniform01() < 1.0 + std::cos(7.0 * q)) vals.push_back(q);
        }
        CHECK(dominant_frequency(vals, 5.0, 9.0, 801) == doctest::Approx(7.0).epsilon(0.01));
    }
}
