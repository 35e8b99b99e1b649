#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qjlab/jcmodel.hpp"

namespace qjlab {

/* Auxiliary readout cavity slaved to the conditioned main-cavity field.
 * The meter mode is never given a Hilbert space: in the overdamped,
 * weak-coupling regime its amplitude obeys the classical ODE
 *   d alpha'/dt = -kp alpha' + gp (alpha_t + drive_prime),
 * with drive_prime expressed in units of gp, so the coherent-cancellation
 * choice reads drive_prime = -alpha1_bar / 2. All rates are in units of the
 * main-cavity kappa. */

struct MeterParams {
    double kp_over_k = 100.0;  /* kappa' / kappa */
    double kp_over_gp = 100.0; /* kappa' / g' */
    cx drive_prime{};          /* epsilon' / g' */

    double gp_over_k() const { return kp_over_k / kp_over_gp; }
    void validate() const;
};

/* the offset that makes the meter drive vanish midway through a downward
 * switch: -alpha1_bar / 2, in units of gp */
cx cancellation_drive(cx alpha1_bar);

struct MeterSample {
    double t = 0.0;
    cx alpha_prime{};
    double transmission = 0.0; /* (kp/gp)^2 |alpha'|^2 */
    double flux = 0.0;         /* equal to transmission in this limit */
    double x_prime = 0.0;      /* Re alpha' */
    double y_prime = 0.0;      /* Im alpha' */
};

struct MeterTrace {
    MeterParams params;
    std::vector<MeterSample> samples;
};

/* Streaming exact integrator: each interval treats the drive as constant,
 * so the update alpha' <- alpha' e^{-kp dt} + (gp/kp) D (1 - e^{-kp dt})
 * is exact for piecewise-constant signals and unconditionally stable. The
 * first pushed sample primes the meter at its steady response. Sampling
 * intervals must satisfy kp * dt <= 0.2. */
class MeterIntegrator {
public:
    explicit MeterIntegrator(const MeterParams& params);
    MeterSample push(double t, cx alpha_t);
    const MeterParams& params() const { return params_; }

private:
    MeterParams params_;
    bool primed_ = false;
    double t_prev_ = 0.0;
    cx alpha_prime_{};
    MeterSample make_sample(double t) const;
};

MeterTrace propagate(std::span<const double> times, std::span<const cx> alpha_t,
                     const MeterParams& params);

struct ConsistencyReport {
    cx scaled_meter_mean{}; /* (kp/gp) mean(alpha') */
    cx drive_mean{};        /* mean(alpha_t) + drive_prime */
    double relative_error = 0.0;
    bool pass = false;
};

/* Adiabatic-tracking check over a quasi-steady segment [t0, t1]: the scaled
 * meter mean must match the mean drive within 5%. The segment must span at
 * least 5 meter lifetimes. */
ConsistencyReport consistency_check_mean(const MeterTrace& trace,
                                         std::span<const double> times,
                                         std::span<const cx> alpha_t, double t0, double t1);

enum class DipClass { metastable_jump, fluctuation, indeterminate };

struct DipEvent {
    double t_dip = 0.0;
    double t_min_sample = 0.0; /* unrefined argmin sample time */
    double transmission_min = 0.0;
    double bright_start = 0.0;
    double bright_end = 0.0;
    DipClass classification = DipClass::indeterminate;
    std::optional<cx> alpha1; /* populated by extract_conditioned_amplitudes */
    std::optional<cx> alpha2;
    std::optional<double> t_min_dx; /* populated by quadrature_extrema */
    std::optional<double> t_max_dy;
};

struct DipConfig {
    double threshold_fraction = 0.05; /* dip depth relative to |drive'|^2 */
    double bright_band = 0.5;         /* bright window: |T' - R| <= band * R */
    double bright_min_duration = 2.0; /* units 1/kappa */
    double max_gap = 0.5; /* latest the bright window may end before the dip */
};

/* Coherent-cancellation dips: local minima of T' below threshold * R with a
 * long-enough bright window just before them; R = |drive_prime|^2 is the
 * common bright/dim transmission level under the cancellation choice.
 * t_dip is parabolically refined around the argmin. */
std::vector<DipEvent> detect_dip(const MeterTrace& trace, const DipConfig& config = {});

struct QuadratureExtrema {
    double t_min_dx = 0.0; /* argmin of dx'/dt */
    double t_max_dy = 0.0; /* argmax of dy'/dt */
    bool degenerate = false; /* derivatives numerically flat */
};

/* Central-difference derivative extrema inside [t0, t1]; needs >= 5 samples. */
QuadratureExtrema quadrature_extrema(const MeterTrace& trace, double t0, double t1);

struct ClassifyConfig {
    double window = 2.0;           /* post-dip span examined, units 1/kappa */
    double settle_fraction = 0.25; /* leading part of the window ignored */
    double level_band = 0.5;       /* mean |T' - R| <= level_band * R */
    double variance_band = 0.5;    /* std(T') <= variance_band * R */
    double cv_threshold = 0.25;    /* zero-crossing interval CV bound */
    double min_oscillation = 1e-6; /* relative RMS below which coherence holds trivially */
    int min_crossings = 5;
};

/* Jump-vs-fluctuation decision: a metastable jump settles back onto the
 * cancellation level with bounded variance and temporally coherent residual
 * oscillations; a fluctuation breaks the level or the coherence criterion;
 * too little oscillation structure to decide is indeterminate. */
DipClass classify_post_dip(const MeterTrace& trace, const DipEvent& event,
                           const ClassifyConfig& config = {});

struct ExtractedAmplitudes {
    std::optional<cx> alpha1; /* peak nearer the reference bright amplitude */
    std::optional<cx> alpha2;
    bool ok = false;
    std::string diagnostic;
};

/* Reads the two conditioned coherent amplitudes off a bimodal Q snapshot;
 * anything but exactly two peaks above 20% of the maximum is refused. */
ExtractedAmplitudes extract_conditioned_amplitudes(const QGrid& grid, cx alpha1_bar);

} // namespace qjlab
