#include "qjlab/charge.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "qjlab/random.hpp"

namespace qjlab {

void InitialSuperposition::validate() const {
    const double norm = std::norm(c1) + std::norm(c2);
    if (std::abs(norm - 1.0) > 1e-12) {
        throw std::invalid_argument("superposition weights must satisfy |c1|^2+|c2|^2=1");
    }
    if (alpha1 == alpha2) {
        throw std::invalid_argument("superposition amplitudes must be distinct");
    }
}

void CatFrame::validate() const {
    if (!(A >= 0.0)) {
        throw std::invalid_argument("cat frame requires A >= 0");
    }
}

CatFrame to_cat_frame(cx alpha1, cx alpha2, double phi0) {
    if (alpha1 == alpha2) {
        throw std::invalid_argument("cat frame is undefined for equal amplitudes");
    }
    CatFrame f;
    f.offset = 0.5 * (alpha1 + alpha2);
    const cx half = alpha1 - f.offset;
    f.rotation = std::arg(half);
    f.A = std::abs(half);
    f.phi0 = phi0;
    return f;
}

void HeterodyneConfig::validate() const {
    init.validate();
    if (!(kappa > 0.0)) throw std::invalid_argument("kappa must be positive");
    if (!(dt > 0.0) || dt > 1e-3 / kappa + 1e-15) {
        throw std::invalid_argument("heterodyne step must satisfy dt <= 1e-3 / kappa");
    }
    if (!(t_end >= 5.0 / kappa)) {
        throw std::invalid_argument("heterodyne run must cover at least 5 cavity lifetimes");
    }
    if (path_stride < 0) throw std::invalid_argument("path_stride must be >= 0");
}

void HomodyneConfig::validate() const {
    frame.validate();
    if (!(d_eta > 0.0) || d_eta > 1e-4 + 1e-18) {
        throw std::invalid_argument("homodyne step must satisfy d_eta <= 1e-4");
    }
    if (!(eta_max > 0.0) || eta_max > 1.0 - 1e-6 + 1e-15) {
        throw std::invalid_argument("eta_max must stay below 1 by at least 1e-6");
    }
    if (path_stride < 0) throw std::invalid_argument("path_stride must be >= 0");
}

void FluctuationModel::validate() const {
    if (!(sigma_over_sqrtA >= 0.0)) {
        throw std::invalid_argument("fluctuation spread must be nonnegative");
    }
}

/* ---------------- heterodyne ---------------- */

cx heterodyne_drift(cx Q, double t, const InitialSuperposition& init, double kappa) {
    const double depletion = 1.0 - std::exp(-2.0 * kappa * t);
    const double b1 = std::norm(init.c1);
    const double b2 = std::norm(init.c2);
    if (b2 <= 0.0) return std::conj(init.alpha1);
    if (b1 <= 0.0) return std::conj(init.alpha2);
    /* log-weight difference of the two wells */
    const double delta = std::log(b1 / b2) -
                         (std::norm(init.alpha1) - std::norm(init.alpha2)) * depletion +
                         2.0 * ((init.alpha1 - init.alpha2) * Q).real();
    double w1;
    if (delta > 40.0) {
        w1 = 1.0;
    } else if (delta < -40.0) {
        w1 = 0.0;
    } else {
        w1 = 1.0 / (1.0 + std::exp(-delta));
    }
    return w1 * std::conj(init.alpha1) + (1.0 - w1) * std::conj(init.alpha2);
}

namespace {

struct HetTables {
    std::vector<double> depletion; /* 1 - e^{-2 kappa t_k} */
    std::vector<double> drift_fac; /* 2 kappa e^{-2 kappa t_k} dt */
    std::vector<double> noise_fac; /* sqrt(kappa dt) e^{-kappa t_k} */
    double dt = 0.0;
    std::size_t steps = 0;
};

HetTables het_tables(const HeterodyneConfig& cfg) {
    HetTables tb;
    tb.steps = std::size_t(std::ceil(cfg.t_end / cfg.dt - 1e-9));
    tb.dt = cfg.dt;
    tb.depletion.resize(tb.steps);
    tb.drift_fac.resize(tb.steps);
    tb.noise_fac.resize(tb.steps);
    for (std::size_t k = 0; k < tb.steps; ++k) {
        const double t = double(k) * cfg.dt;
        const double e2 = std::exp(-2.0 * cfg.kappa * t);
        tb.depletion[k] = 1.0 - e2;
        tb.drift_fac[k] = 2.0 * cfg.kappa * e2 * cfg.dt;
        tb.noise_fac[k] = std::sqrt(cfg.kappa * cfg.dt) * std::sqrt(e2);
    }
    return tb;
}

cx het_path(const InitialSuperposition& init, const HetTables& tb, std::uint64_t seed,
            int path_stride, ChargeRecord* record) {
    Rng rng(seed);
    const cx a1c = std::conj(init.alpha1);
    const cx a2c = std::conj(init.alpha2);
    const double b1 = std::norm(init.c1);
    const double b2 = std::norm(init.c2);
    const bool two_wells = b1 > 0.0 && b2 > 0.0;
    const double log_ratio = two_wells ? std::log(b1 / b2) : 0.0;
    const double dm2 = std::norm(init.alpha1) - std::norm(init.alpha2);
    const cx da = init.alpha1 - init.alpha2;

    cx Q{};
    if (record != nullptr) {
        record->grid.push_back(0.0);
        record->path.push_back(Q);
    }
    for (std::size_t k = 0; k < tb.steps; ++k) {
        cx drift;
        if (!two_wells) {
            drift = (b2 <= 0.0) ? a1c : a2c;
        } else {
            const double delta = log_ratio - dm2 * tb.depletion[k] + 2.0 * (da * Q).real();
            double w1;
            if (delta > 40.0) {
                w1 = 1.0;
            } else if (delta < -40.0) {
                w1 = 0.0;
            } else {
                w1 = 1.0 / (1.0 + std::exp(-delta));
            }
            drift = w1 * a1c + (1.0 - w1) * a2c;
        }
        Q += drift * tb.drift_fac[k] + tb.noise_fac[k] * rng.normal_pair();
        if (record != nullptr && path_stride > 0 && (k + 1) % std::size_t(path_stride) == 0) {
            record->grid.push_back(double(k + 1) * tb.dt);
            record->path.push_back(Q);
        }
    }
    if (record != nullptr) {
        const double t_last = double(tb.steps) * tb.dt;
        if (record->grid.back() != t_last) {
            record->grid.push_back(t_last);
            record->path.push_back(Q);
        }
    }
    return Q;
}

} // namespace

ChargeRecord simulate_heterodyne(const HeterodyneConfig& config, std::uint64_t seed) {
    config.validate();
    const HetTables tb = het_tables(config);
    ChargeRecord rec;
    rec.kind = ChargeKind::heterodyne;
    rec.seed = seed;
    rec.final = het_path(config.init, tb, seed, config.path_stride, &rec);
    return rec;
}

double heterodyne_target_density(cx Q, const InitialSuperposition& init) {
    const cx Qc = std::conj(Q);
    return (std::norm(init.c1) * std::exp(-std::norm(init.alpha1 - Qc)) +
            std::norm(init.c2) * std::exp(-std::norm(init.alpha2 - Qc))) /
           pi;
}

bool separated_well(const InitialSuperposition& init) {
    return std::norm(init.alpha1 - init.alpha2) >= 10.0;
}

/* ---------------- homodyne ---------------- */

namespace {

/* drift pieces shared by the public evaluator and the path loop */
inline double homodyne_drift_core(double Q, double eta, double A, double phi0, double cth,
                                  double sth, bool* clamped) {
    if (A <= 0.0) return 0.0;
    const double Ac = A * cth;
    const double As = A * sth;
    const double A2 = A * A;
    const double Lp = 2.0 * Q * Ac + A2 * (1.0 - 2.0 * eta * cth * cth);
    const double Lm = -2.0 * Q * Ac + A2 * (1.0 - 2.0 * eta * cth * cth);
    const double L2 = -A2 * (1.0 - 2.0 * eta * sth * sth);
    const double M = std::max({Lp, Lm, L2});
    const double ep = std::exp(Lp - M);
    const double em = std::exp(Lm - M);
    const double e2 = std::exp(L2 - M);
    const double phase = phi0 + 2.0 * Q * As;
    const double num = Ac * (ep - em) - 2.0 * As * std::sin(phase) * e2;
    const double den = 0.5 * (ep + em) + std::cos(phase) * e2;
    const double bound = homodyne_drift_clamp_factor * A;
    double drift;
    if (!(den > 0.0)) {
        drift = (num >= 0.0) ? bound : -bound;
    } else {
        drift = num / den;
    }
    if (drift > bound) {
        drift = bound;
    } else if (drift < -bound) {
        drift = -bound;
    } else {
        return drift;
    }
    if (clamped != nullptr) *clamped = true;
    return drift;
}

} // namespace

double homodyne_drift(double Q_theta, double eta, const CatFrame& frame, double theta) {
    if (!(eta >= 0.0) || !(eta < 1.0)) {
        throw std::invalid_argument("homodyne drift needs 0 <= eta < 1");
    }
    return homodyne_drift_core(Q_theta, eta, frame.A, frame.phi0, std::cos(theta),
                               std::sin(theta), nullptr);
}

namespace {

/* Near eta -> 1 the drift stiffens: at a fringe node its slope grows like
   1/(1-eta), so a uniform step h loses stability once h > (1-eta) and the
   per-step noise sqrt(h) re-smears dips the exact bridge would sharpen.  The
   terminal density then looks smoothed at scale sqrt(d_eta) instead of
   sqrt(1-eta_max), leaving spurious mass at the nodes (ratio ~ A^2 d_eta).
   Shrinking the step to a fraction of (1-eta) in the tail restores stability
   for ~150 extra steps per path. */
constexpr double hom_tail_fraction = 0.05;

double hom_path(double A, double phi0, double theta, double d_eta, double eta_max,
                std::uint64_t seed, int path_stride, ChargeRecord* record,
                long* clamp_count) {
    Rng rng(seed);
    const double cth = std::cos(theta);
    const double sth = std::sin(theta);
    double Q = 0.0;
    double eta = 0.0;
    if (record != nullptr) {
        record->grid.push_back(0.0);
        record->path.push_back(cx{});
    }
    const double sqrt_deta = std::sqrt(d_eta);
    std::size_t k = 0;
    while (eta < eta_max) {
        const double step =
            std::min({d_eta, hom_tail_fraction * (1.0 - eta), eta_max - eta});
        bool clamped = false;
        const double drift = homodyne_drift_core(Q, eta, A, phi0, cth, sth, &clamped);
        if (clamped && clamp_count != nullptr) ++(*clamp_count);
        const double noise = (step == d_eta) ? sqrt_deta : std::sqrt(step);
        Q += drift * step + noise * rng.normal();
        eta = (eta_max - eta <= step) ? eta_max : eta + step;
        ++k;
        if (record != nullptr && path_stride > 0 && k % std::size_t(path_stride) == 0) {
            record->grid.push_back(eta);
            record->path.push_back(cx(Q, 0.0));
        }
    }
    if (record != nullptr && record->grid.back() != eta_max) {
        record->grid.push_back(eta_max);
        record->path.push_back(cx(Q, 0.0));
    }
    return Q;
}

} // namespace

ChargeRecord simulate_homodyne(const HomodyneConfig& config, std::uint64_t seed) {
    config.validate();
    ChargeRecord rec;
    rec.kind = ChargeKind::homodyne;
    rec.seed = seed;
    rec.theta = config.theta;
    const double Q =
        hom_path(config.frame.A, config.frame.phi0, config.theta, config.d_eta,
                 config.eta_max, seed, config.path_stride, &rec, &rec.clamp_count);
    rec.final = cx(Q, 0.0);
    return rec;
}

double homodyne_target_density(double Q_theta, const CatFrame& frame, double theta) {
    const double A = frame.A;
    const double A2 = A * A;
    const double cth = std::cos(theta);
    const double sth = std::sin(theta);
    const double half_q2 = 0.5 * Q_theta * Q_theta;
    const double Lp = -half_q2 + 2.0 * Q_theta * A * cth + A2 * (1.0 - 2.0 * cth * cth);
    const double Lm = -half_q2 - 2.0 * Q_theta * A * cth + A2 * (1.0 - 2.0 * cth * cth);
    const double L2 = -half_q2 - A2 * (1.0 - 2.0 * sth * sth);
    const double M = std::max({Lp, Lm, L2});
    const double bracket = 0.5 * (std::exp(Lp - M) + std::exp(Lm - M)) +
                           std::cos(frame.phi0 + 2.0 * Q_theta * A * sth) * std::exp(L2 - M);
    /* 2 cosh(A^2) = e^{A^2} (1 + e^{-2A^2}) */
    const double log_norm = A2 + std::log1p(std::exp(-2.0 * A2)) + 0.5 * std::log(2.0 * pi);
    return std::max(0.0, bracket) * std::exp(M - log_norm);
}

/* ---------------- ensembles ---------------- */

namespace {

struct PathDraws {
    InitialSuperposition init;
    double weight = 0.0;
    double phase = 0.0;
    double A = 0.0;
};

PathDraws draws_for(const InitialSuperposition& base, double base_A, double phi0,
                    const FluctuationModel& fluct, std::uint64_t path_index) {
    PathDraws d;
    d.init = base;
    d.A = base_A;
    (void)phi0;
    if (fluct.mode == FluctuationMode::weight_phase) {
        Rng rng(derive_seed(fluct.seed, path_index));
        d.weight = rng.uniform01();
        d.phase = 2.0 * pi * rng.uniform01();
        d.init.c2 = cx(std::sqrt(d.weight), 0.0);
        d.init.c1 = cx(std::sqrt(1.0 - d.weight), 0.0);
        d.init.alpha2 = std::abs(base.alpha2) * std::exp(cx(0.0, d.phase));
    } else if (fluct.mode == FluctuationMode::gaussian_A) {
        Rng rng(derive_seed(fluct.seed, path_index));
        const double sigma = fluct.sigma_over_sqrtA * std::sqrt(base_A);
        double a = 0.0;
        do {
            a = base_A + sigma * rng.normal();
        } while (a <= 0.0);
        d.A = a;
    }
    return d;
}

template <typename Body>
void ensemble_loop(long n, int workers, bool parallel, const Body& body) {
#ifdef _OPENMP
    if (parallel) {
        const int threads = workers > 0 ? workers : omp_get_max_threads();
#pragma omp parallel for schedule(static) num_threads(threads)
        for (long i = 0; i < n; ++i) body(i);
        return;
    }
#else
    (void)workers;
    (void)parallel;
#endif
    for (long i = 0; i < n; ++i) body(i);
}

HeterodyneEnsemble run_het(const HeterodyneConfig& config, long n,
                           const FluctuationModel& fluct, std::uint64_t seed, int workers,
                           bool parallel) {
    config.validate();
    fluct.validate();
    if (n < 1) throw std::invalid_argument("ensemble size must be >= 1");
    if (fluct.mode == FluctuationMode::gaussian_A) {
        throw std::invalid_argument("gaussian_A fluctuations apply to homodyne ensembles");
    }
    const HetTables tb = het_tables(config);
    HeterodyneEnsemble ens;
    ens.seed = seed;
    ens.finals.resize(std::size_t(n));
    const bool fluctuating = fluct.mode == FluctuationMode::weight_phase;
    if (fluctuating) {
        ens.weight_draws.resize(std::size_t(n));
        ens.phase_draws.resize(std::size_t(n));
    }
    ensemble_loop(n, workers, parallel, [&](long i) {
        const auto d = draws_for(config.init, 0.0, 0.0, fluct, std::uint64_t(i));
        if (fluctuating) {
            ens.weight_draws[std::size_t(i)] = d.weight;
            ens.phase_draws[std::size_t(i)] = d.phase;
        }
        ens.finals[std::size_t(i)] =
            het_path(d.init, tb, derive_seed(seed, std::uint64_t(i)), 0, nullptr);
    });
    return ens;
}

HomodyneEnsemble run_hom(const HomodyneConfig& config, long n, const FluctuationModel& fluct,
                         std::uint64_t seed, int workers, bool parallel) {
    config.validate();
    fluct.validate();
    if (n < 1) throw std::invalid_argument("ensemble size must be >= 1");
    if (fluct.mode == FluctuationMode::weight_phase) {
        throw std::invalid_argument("weight_phase fluctuations apply to heterodyne ensembles");
    }
    HomodyneEnsemble ens;
    ens.seed = seed;
    ens.theta = config.theta;
    ens.finals.resize(std::size_t(n));
    const bool fluctuating = fluct.mode == FluctuationMode::gaussian_A;
    if (fluctuating) ens.amplitude_draws.resize(std::size_t(n));
    std::vector<long> clamps(std::size_t(n), 0);
    ensemble_loop(n, workers, parallel, [&](long i) {
        const auto d = draws_for({}, config.frame.A, config.frame.phi0, fluct,
                                 std::uint64_t(i));
        if (fluctuating) ens.amplitude_draws[std::size_t(i)] = d.A;
        ens.finals[std::size_t(i)] =
            hom_path(d.A, config.frame.phi0, config.theta, config.d_eta, config.eta_max,
                     derive_seed(seed, std::uint64_t(i)), 0, nullptr,
                     &clamps[std::size_t(i)]);
    });
    for (long c : clamps) ens.clamp_total += c;
    return ens;
}

} // namespace

HeterodyneEnsemble run_ensemble(const HeterodyneConfig& config, long n,
                                const FluctuationModel& fluct, std::uint64_t seed,
                                int workers) {
    return run_het(config, n, fluct, seed, workers, true);
}

HeterodyneEnsemble run_ensemble_serial(const HeterodyneConfig& config, long n,
                                       const FluctuationModel& fluct, std::uint64_t seed) {
    return run_het(config, n, fluct, seed, 0, false);
}

HomodyneEnsemble run_ensemble(const HomodyneConfig& config, long n,
                              const FluctuationModel& fluct, std::uint64_t seed,
                              int workers) {
    return run_hom(config, n, fluct, seed, workers, true);
}

HomodyneEnsemble run_ensemble_serial(const HomodyneConfig& config, long n,
                                     const FluctuationModel& fluct, std::uint64_t seed) {
    return run_hom(config, n, fluct, seed, 0, false);
}

/* ---------------- histograms and comparisons ---------------- */

Histogram1D histogram_1d(std::span<const double> values, double lo, double hi, int bins) {
    if (!(hi > lo) || bins < 1) throw std::invalid_argument("bad histogram range");
    Histogram1D h;
    h.lo = lo;
    h.hi = hi;
    h.bins = bins;
    h.total = long(values.size());
    const double width = (hi - lo) / bins;
    std::vector<long> counts(std::size_t(bins), 0);
    for (double v : values) {
        const double u = (v - lo) / width;
        if (u < 0.0 || u >= double(bins)) {
            ++h.outside;
            continue;
        }
        ++counts[std::size_t(u)];
    }
    h.centers.resize(std::size_t(bins));
    h.density.resize(std::size_t(bins));
    for (int b = 0; b < bins; ++b) {
        h.centers[std::size_t(b)] = lo + (b + 0.5) * width;
        h.density[std::size_t(b)] =
            double(counts[std::size_t(b)]) / (double(h.total) * width);
    }
    return h;
}

Histogram2D histogram_2d(std::span<const cx> values, double x_lo, double x_hi, int x_bins,
                         double y_lo, double y_hi, int y_bins) {
    if (!(x_hi > x_lo) || !(y_hi > y_lo) || x_bins < 1 || y_bins < 1) {
        throw std::invalid_argument("bad histogram range");
    }
    Histogram2D h;
    h.x_lo = x_lo;
    h.x_hi = x_hi;
    h.y_lo = y_lo;
    h.y_hi = y_hi;
    h.x_bins = x_bins;
    h.y_bins = y_bins;
    h.total = long(values.size());
    const double wx = (x_hi - x_lo) / x_bins;
    const double wy = (y_hi - y_lo) / y_bins;
    std::vector<long> counts(std::size_t(x_bins) * std::size_t(y_bins), 0);
    for (cx v : values) {
        const double ux = (v.real() - x_lo) / wx;
        const double uy = (v.imag() - y_lo) / wy;
        if (ux < 0.0 || ux >= double(x_bins) || uy < 0.0 || uy >= double(y_bins)) {
            ++h.outside;
            continue;
        }
        ++counts[std::size_t(uy) * std::size_t(x_bins) + std::size_t(ux)];
    }
    h.x_centers.resize(std::size_t(x_bins));
    h.y_centers.resize(std::size_t(y_bins));
    for (int b = 0; b < x_bins; ++b) h.x_centers[std::size_t(b)] = x_lo + (b + 0.5) * wx;
    for (int b = 0; b < y_bins; ++b) h.y_centers[std::size_t(b)] = y_lo + (b + 0.5) * wy;
    h.density.resize(counts.size());
    for (std::size_t k = 0; k < counts.size(); ++k) {
        h.density[k] = double(counts[k]) / (double(h.total) * wx * wy);
    }
    return h;
}

double l1_distance(const Histogram1D& hist, const std::function<double(double)>& density) {
    const double width = (hist.hi - hist.lo) / hist.bins;
    double l1 = 0.0;
    double model_inside = 0.0;
    for (std::size_t b = 0; b < hist.centers.size(); ++b) {
        const double p = hist.density[b] * width;
        const double q = density(hist.centers[b]) * width;
        model_inside += q;
        l1 += std::abs(p - q);
    }
    const double p_out = double(hist.outside) / double(hist.total);
    l1 += std::abs(p_out - std::max(0.0, 1.0 - model_inside));
    return l1;
}

double l1_distance(const Histogram2D& hist, const std::function<double(cx)>& density) {
    const double wx = (hist.x_hi - hist.x_lo) / hist.x_bins;
    const double wy = (hist.y_hi - hist.y_lo) / hist.y_bins;
    const double area = wx * wy;
    double l1 = 0.0;
    double model_inside = 0.0;
    for (std::size_t j = 0; j < hist.y_centers.size(); ++j) {
        for (std::size_t i = 0; i < hist.x_centers.size(); ++i) {
            const double p = hist.density[j * hist.x_centers.size() + i] * area;
            const double q = density(cx(hist.x_centers[i], hist.y_centers[j])) * area;
            model_inside += q;
            l1 += std::abs(p - q);
        }
    }
    const double p_out = double(hist.outside) / double(hist.total);
    l1 += std::abs(p_out - std::max(0.0, 1.0 - model_inside));
    return l1;
}

double ks_distance(std::span<const double> samples,
                   const std::function<double(double)>& density, double lo, double hi,
                   int n_grid) {
    if (samples.empty()) throw std::invalid_argument("ks_distance needs samples");
    if (n_grid < 5) throw std::invalid_argument("ks_distance needs a denser grid");
    if (n_grid % 2 == 0) ++n_grid;
    const double h = (hi - lo) / double(n_grid - 1);
    std::vector<double> f(static_cast<std::size_t>(n_grid));
    for (int k = 0; k < n_grid; ++k) f[std::size_t(k)] = density(lo + k * h);
    /* composite Simpson prefix integrals on pairs of intervals; odd nodes get
     * the midpoint of their neighbours' cumulative values plus a local rule */
    std::vector<double> cdf(std::size_t(n_grid), 0.0);
    for (int k = 2; k < n_grid; k += 2) {
        const double panel =
            (h / 3.0) * (f[std::size_t(k - 2)] + 4.0 * f[std::size_t(k - 1)] + f[std::size_t(k)]);
        cdf[std::size_t(k)] = cdf[std::size_t(k - 2)] + panel;
        cdf[std::size_t(k - 1)] =
            cdf[std::size_t(k - 2)] +
            (h / 12.0) * (5.0 * f[std::size_t(k - 2)] + 8.0 * f[std::size_t(k - 1)] -
                          f[std::size_t(k)]);
    }
    const double total = cdf[std::size_t(n_grid - 1)];
    if (!(total > 0.0)) throw std::invalid_argument("ks_distance: density has no mass");
    for (auto& c : cdf) c /= total;

    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = double(sorted.size());
    double ks = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const double x = sorted[i];
        double F;
        if (x <= lo) {
            F = 0.0;
        } else if (x >= hi) {
            F = 1.0;
        } else {
            const double u = (x - lo) / h;
            const std::size_t k = std::size_t(u);
            const double frac = u - double(k);
            F = cdf[k] + frac * (cdf[k + 1] - cdf[k]);
        }
        ks = std::max(ks, std::abs(double(i + 1) / n - F));
        ks = std::max(ks, std::abs(double(i) / n - F));
    }
    return ks;
}

std::vector<double> density_maxima(const std::function<double(double)>& f, double lo,
                                   double hi, int n_scan, double min_fraction) {
    if (n_scan < 5) throw std::invalid_argument("density_maxima needs a denser scan");
    const double h = (hi - lo) / double(n_scan - 1);
    std::vector<double> v(static_cast<std::size_t>(n_scan));
    double vmax = 0.0;
    for (int k = 0; k < n_scan; ++k) {
        v[std::size_t(k)] = f(lo + k * h);
        vmax = std::max(vmax, v[std::size_t(k)]);
    }
    std::vector<double> peaks;
    for (int k = 1; k + 1 < n_scan; ++k) {
        const double c = v[std::size_t(k)];
        if (c <= v[std::size_t(k - 1)] || c <= v[std::size_t(k + 1)]) continue;
        if (c < min_fraction * vmax) continue;
        const double denom = v[std::size_t(k - 1)] - 2.0 * c + v[std::size_t(k + 1)];
        double d = 0.0;
        if (denom < -1e-300) {
            d = std::clamp(0.5 * (v[std::size_t(k - 1)] - v[std::size_t(k + 1)]) / denom,
                           -0.5, 0.5);
        }
        peaks.push_back(lo + (k + d) * h);
    }
    return peaks;
}

double dominant_frequency(std::span<const double> values, double u_lo, double u_hi,
                          int n_scan) {
    if (values.empty()) throw std::invalid_argument("dominant_frequency needs samples");
    if (n_scan < 5) throw std::invalid_argument("dominant_frequency needs a denser scan");
    const double h = (u_hi - u_lo) / double(n_scan - 1);
    std::vector<double> mag(static_cast<std::size_t>(n_scan));
    for (int k = 0; k < n_scan; ++k) {
        const double u = u_lo + k * h;
        double re = 0.0, im = 0.0;
        for (double q : values) {
            re += std::cos(u * q);
            im += std::sin(u * q);
        }
        mag[std::size_t(k)] = std::hypot(re, im) / double(values.size());
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < mag.size(); ++k) {
        if (mag[k] > mag[best]) best = k;
    }
    double d = 0.0;
    if (best > 0 && best + 1 < mag.size()) {
        const double denom = mag[best - 1] - 2.0 * mag[best] + mag[best + 1];
        if (denom < -1e-300) {
            d = std::clamp(0.5 * (mag[best - 1] - mag[best + 1]) / denom, -0.5, 0.5);
        }
    }
    return u_lo + (double(best) + d) * h;
}

} // namespace qjlab
