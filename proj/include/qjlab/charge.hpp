#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qjlab/common.hpp"

namespace qjlab {

/* Integrated-charge records from balanced, mode-matched heterodyne or
 * homodyne detection of a freely decaying cavity prepared in a superposition
 * of two coherent states. Detector gain and electronic charge are scaled out;
 * times are in units of 1/kappa. */

struct InitialSuperposition {
    cx c1{1.0, 0.0};
    cx c2{};
    cx alpha1{};
    cx alpha2{};
    void validate() const; /* |c1|^2 + |c2|^2 = 1, distinct amplitudes */
};

/* Frame in which the superposition reads (|A> + e^{i phi0}|-A>)/sqrt(norm):
 * offset is the field value subtracted at the first beam splitter, rotation
 * aligns alpha1 - offset with the positive real axis. */
struct CatFrame {
    cx offset{};
    double rotation = 0.0;
    double A = 0.0;
    double phi0 = 0.0;
    void validate() const; /* A >= 0; A = 0 is the free-field limit */
};

CatFrame to_cat_frame(cx alpha1, cx alpha2, double phi0 = 0.0);

enum class ChargeKind { heterodyne, homodyne };

struct ChargeRecord {
    ChargeKind kind = ChargeKind::heterodyne;
    std::vector<double> grid; /* t for heterodyne, eta = 1 - e^{-2 kappa t} for homodyne */
    std::vector<cx> path;     /* Q along grid; imaginary part 0 for homodyne */
    cx final{};
    std::uint64_t seed = 0;
    double theta = 0.0; /* homodyne LO phase */
    long clamp_count = 0;
};

struct HeterodyneConfig {
    InitialSuperposition init;
    double kappa = 1.0;
    double dt = 1e-3;    /* must satisfy dt <= 1e-3 / kappa */
    double t_end = 10.0; /* must cover at least 5 / kappa */
    int path_stride = 0; /* 0 keeps endpoints only */
    void validate() const;
};

struct HomodyneConfig {
    CatFrame frame;
    double theta = 0.0;
    double d_eta = 1e-4;          /* must satisfy d_eta <= 1e-4 */
    double eta_max = 1.0 - 1e-6;  /* must stay below 1 */
    int path_stride = 0;
    void validate() const;
};

/* Weight-averaged conjugate amplitude pulled out of the two-well potential;
 * always inside the segment joining conj(alpha1) and conj(alpha2). */
cx heterodyne_drift(cx Q, double t, const InitialSuperposition& init, double kappa);

ChargeRecord simulate_heterodyne(const HeterodyneConfig& config, std::uint64_t seed);

/* Terminal density of the heterodyne charge: the Husimi function of the
 * initial field, a weighted pair of unit-variance Gaussians at conj(alpha_i).
 * Valid for well-separated amplitudes; see separated_well. */
double heterodyne_target_density(cx Q, const InitialSuperposition& init);
bool separated_well(const InitialSuperposition& init); /* |a1 - a2|^2 >= 10 */

inline constexpr double homodyne_drift_clamp_factor = 1e3; /* |drift| <= 1e3 A */

/* Exact derivative of the interference potential, evaluated in log-domain;
 * magnitude clamped at 1e3 A near fringe nodes where the density vanishes. */
double homodyne_drift(double Q_theta, double eta, const CatFrame& frame, double theta);

ChargeRecord simulate_homodyne(const HomodyneConfig& config, std::uint64_t seed);

/* Terminal (eta -> 1) charge density: Gaussian envelope times the two-well
 * plus interference structure; integrates to
 * (1 + cos(phi0) e^{-2A^2}) / (1 + e^{-2A^2}). */
double homodyne_target_density(double Q_theta, const CatFrame& frame, double theta);

enum class FluctuationMode { none, weight_phase, gaussian_A };

/* Per-realization parameter scatter across an ensemble: weight_phase draws
 * |c2|^2 ~ U(0,1) and a uniform phase for alpha2 (heterodyne); gaussian_A
 * draws A ~ Normal(A, sigma_over_sqrtA * sqrt(A)) truncated to A > 0
 * (homodyne). Draw streams are seeded independently of the path noise. */
struct FluctuationModel {
    FluctuationMode mode = FluctuationMode::none;
    double sigma_over_sqrtA = 0.1;
    std::uint64_t seed = 7;
    void validate() const;
};

struct HeterodyneEnsemble {
    std::vector<cx> finals;
    std::vector<double> weight_draws; /* |c2|^2 per path (weight_phase) */
    std::vector<double> phase_draws;  /* arg alpha2 per path (weight_phase) */
    std::uint64_t seed = 0;
};

struct HomodyneEnsemble {
    std::vector<double> finals;
    std::vector<double> amplitude_draws; /* A per path (gaussian_A) */
    double theta = 0.0;
    long clamp_total = 0;
    std::uint64_t seed = 0;
};

HeterodyneEnsemble run_ensemble(const HeterodyneConfig& config, long n,
                                const FluctuationModel& fluct, std::uint64_t seed,
                                int workers = 0);
HeterodyneEnsemble run_ensemble_serial(const HeterodyneConfig& config, long n,
                                       const FluctuationModel& fluct, std::uint64_t seed);
HomodyneEnsemble run_ensemble(const HomodyneConfig& config, long n,
                              const FluctuationModel& fluct, std::uint64_t seed,
                              int workers = 0);
HomodyneEnsemble run_ensemble_serial(const HomodyneConfig& config, long n,
                                     const FluctuationModel& fluct, std::uint64_t seed);

struct Histogram1D {
    double lo = 0.0, hi = 0.0;
    int bins = 0;
    long total = 0;
    long outside = 0;
    std::vector<double> centers;
    std::vector<double> density; /* counts / (total * width) */
};

struct Histogram2D {
    double x_lo = 0.0, x_hi = 0.0, y_lo = 0.0, y_hi = 0.0;
    int x_bins = 0, y_bins = 0;
    long total = 0;
    long outside = 0;
    std::vector<double> x_centers, y_centers;
    std::vector<double> density; /* row-major [iy * x_bins + ix], counts / (total * area) */
};

Histogram1D histogram_1d(std::span<const double> values, double lo, double hi, int bins);
Histogram2D histogram_2d(std::span<const cx> values, double x_lo, double x_hi, int x_bins,
                         double y_lo, double y_hi, int y_bins);

/* Sum over bins of |empirical mass - model mass| plus the mismatch of the
 * out-of-range remainders; the model mass per bin is density at the bin
 * center times the bin measure. */
double l1_distance(const Histogram1D& hist, const std::function<double(double)>& density);
double l1_distance(const Histogram2D& hist, const std::function<double(cx)>& density);

/* Two-sided Kolmogorov-Smirnov distance between samples and a density known
 * on [lo, hi]; the model CDF comes from composite-Simpson accumulation on
 * n_grid points (odd) and is normalized to end at 1. */
double ks_distance(std::span<const double> samples, const std::function<double(double)>& density,
                   double lo, double hi, int n_grid = 20001);

/* Strict local maxima of a 1D function on a uniform scan, parabolically
 * refined, keeping those above min_fraction of the global maximum. */
std::vector<double> density_maxima(const std::function<double(double)>& f, double lo,
                                   double hi, int n_scan, double min_fraction = 0.05);

/* Location of the peak of the empirical characteristic function magnitude
 * |mean(e^{i u Q})| inside [u_lo, u_hi]; an unbiased fringe-frequency
 * estimator (fringe spacing = 2 pi / u). */
double dominant_frequency(std::span<const double> values, double u_lo, double u_hi,
                          int n_scan = 801);

} // namespace qjlab
