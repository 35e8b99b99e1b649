#pragma once

#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "qjlab/fock.hpp"

namespace qjlab {

/* Driven Jaynes-Cummings cavity with a single two-level emitter. Everything
 * is expressed in units of the cavity field decay rate kappa: time in
 * 1/kappa, frequencies in kappa. The drive is epsilon/kappa, the detuning is
 * (omega_drive - omega_cavity)/kappa sign-convention free of hbar. */
struct JCParams {
    double g_over_k = 60.0;
    cx drive{0.0, 13.5};
    double detuning = -8.0;
    HilbertConfig hilbert{120, true};

    void validate() const;
};

/* (g / 2 kappa)^2: photon scale on which the emitter response saturates */
double saturation_photon_number(const JCParams& p);

struct SemiclassicalRoot {
    cx alpha{};
    double modulus2 = 0.0;
    int branch = +1;       /* +1: emitter follows in its lower state; -1: inverted */
    double residual = 0.0; /* |alpha - rhs(alpha)| of the fixed-point form */
    double inversion = 0.0;
    char label = 'S'; /* B / U / D, or S for a single root */
};

struct SemiclassicalRoots {
    std::vector<SemiclassicalRoot> roots;       /* descending modulus, labeled */
    std::vector<SemiclassicalRoot> extra_roots; /* inverted-branch fixed points, unlabeled */

    bool bistable() const { return roots.size() == 3; }
    const SemiclassicalRoot& bright() const;
    const SemiclassicalRoot& dim() const;
    const SemiclassicalRoot* unstable() const;

    nlohmann::json to_json() const;
};

/* All steady-state amplitudes of the mean-field (neoclassical) response.
 * In the bistable regime this returns exactly three roots labeled
 * B (bright), U (unstable), D (dim) by descending modulus. */
SemiclassicalRoots solve_neoclassical(const JCParams& p);

/* Lower bound on the duration of the coherent localization between the
 * bright amplitude alpha1 and the unstable amplitude alpha2 during a
 * downward switch, in units of 1/kappa. Depends only on the moduli. */
double localization_time(cx alpha1, cx alpha2);

struct AdiabaticReport {
    double kp_over_k = 0.0;
    double kp_over_gp = 0.0;
    double weak_coupling_value = 0.0;    /* g'^2 / (kappa kappa') */
    double jump_resolution_need = 0.0;   /* |alpha1|^2 / ln |alpha1|^2 */
    bool meter_faster_than_system = false; /* kappa' >> kappa */
    bool meter_overdamped = false;         /* kappa' >> g' */
    bool weak_coupling = false;            /* g'^2/(kappa kappa') <= 0.05 */
    bool jump_resolution = false;          /* kappa'/kappa > |a1|^2 / ln|a1|^2 */
    bool all_pass = false;

    nlohmann::json to_json() const;
};

/* Validity conditions for treating the meter cavity as an instantaneous
 * follower of the system field. Ratios >= 20 count as "much larger". */
AdiabaticReport check_adiabatic_conditions(double kp_over_k, double kp_over_gp,
                                           const JCParams& p);

/* H / (hbar kappa) on the composite space; hermiticity is verified. */
SparseOperator build_hamiltonian(const JCParams& p);

/* Generator of the master equation acting on column-stacked density
 * matrices (dimension D^2). Units of kappa. */
SparseOperator build_liouvillian(const JCParams& p);

/* rho_dot = -i[H, rho] + 2 a rho a^dag - (a^dag a rho + rho a^dag a) */
struct MESolution {
    std::vector<double> times;
    std::vector<double> mean_n;
    std::vector<cx> mean_a;
    DensityMatrix final;
};
MESolution me_evolve(const JCParams& p, const DensityMatrix& rho0, double dt, double t_end,
                     int record_stride);

struct SteadyStateReport {
    DensityMatrix rho;
    double residual = 0.0; /* Frobenius norm of L rho */
    bool used_fallback = false;
    std::vector<double> residual_history;
};

/* Null vector of the Liouvillian with unit trace, via a sparse direct solve
 * with the trace condition replacing one row. Falls back to long-time
 * integration when the factorization cannot be allocated. */
SteadyStateReport steady_state(const JCParams& p);

/* Trace out the emitter: rho_c[n, m] = sum_s rho[(s,n), (s,m)] */
DensityMatrix reduced_cavity_dm(const DensityMatrix& rho, const HilbertConfig& cfg);

struct QGridSpec {
    double x_min = -5.0, x_max = 5.0;
    double y_min = -5.0, y_max = 5.0;
    double spacing = 0.05;

    /* smallest grid at the default spacing whose border clears every listed
     * amplitude by `margin` */
    static QGridSpec around(std::span<const cx> amplitudes, double margin = 3.0,
                            double spacing = 0.05);
    int nx() const;
    int ny() const;
    void validate() const;
};

/* Husimi function without the 1/pi prefactor: integrates to pi * tr(rho).
 * values are stored row-major by y index: values[iy * nx + ix]. */
struct QGrid {
    QGridSpec spec;
    std::vector<double> xs, ys;
    std::vector<double> values;
    double integral = 0.0;
    double reference_trace = 1.0;
    bool coverage_warning = false; /* grid misses > 1% of the mass */
};

QGrid q_function(const DensityMatrix& rho_c, const QGridSpec& spec, int workers = 0);
QGrid q_function_serial(const DensityMatrix& rho_c, const QGridSpec& spec);

struct QPeak {
    cx position{};
    double height = 0.0;
};

/* Strict 8-neighbour local maxima at least min_height_fraction of the global
 * maximum, positions refined by a one-dimensional parabola per axis,
 * tallest first. */
std::vector<QPeak> find_peaks(const QGrid& grid, double min_height_fraction);

} // namespace qjlab
