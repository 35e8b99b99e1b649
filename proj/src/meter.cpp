#include "qjlab/meter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "qjlab/common.hpp"

namespace qjlab {

namespace {

double interval_or_throw(double t_prev, double t, double kp) {
    const double dt = t - t_prev;
    if (!(dt > 0.0)) {
        throw std::invalid_argument("meter: sample times must be strictly increasing");
    }
    if (kp * dt > 0.2 + 1e-12) {
        throw std::invalid_argument(
            "meter: sampling interval violates kp * dt <= 0.2; sample the signal "
            "finer or slow the readout cavity");
    }
    return dt;
}

} // namespace

void MeterParams::validate() const {
    if (!(kp_over_k > 0.0) || !(kp_over_gp > 0.0)) {
        throw std::invalid_argument("meter: rate ratios must be positive");
    }
}

cx cancellation_drive(cx alpha1_bar) { return -0.5 * alpha1_bar; }

MeterIntegrator::MeterIntegrator(const MeterParams& params) : params_(params) {
    params_.validate();
}

MeterSample MeterIntegrator::make_sample(double t) const {
    MeterSample s;
    s.t = t;
    s.alpha_prime = alpha_prime_;
    const double T = std::norm(params_.kp_over_gp * alpha_prime_);
    s.transmission = T;
    s.flux = T;
    s.x_prime = alpha_prime_.real();
    s.y_prime = alpha_prime_.imag();
    return s;
}

MeterSample MeterIntegrator::push(double t, cx alpha_t) {
    const cx drive = alpha_t + params_.drive_prime;
    const double gp_over_kp = 1.0 / params_.kp_over_gp;
    if (!primed_) {
        /* prime at the steady response so constant signals have no transient */
        alpha_prime_ = gp_over_kp * drive;
        primed_ = true;
        t_prev_ = t;
        return make_sample(t);
    }
    const double dt = interval_or_throw(t_prev_, t, params_.kp_over_k);
    const double decay = std::exp(-params_.kp_over_k * dt);
    alpha_prime_ = alpha_prime_ * decay + gp_over_kp * drive * (1.0 - decay);
    t_prev_ = t;
    return make_sample(t);
}

MeterTrace propagate(std::span<const double> times, std::span<const cx> alpha_t,
                     const MeterParams& params) {
    if (times.size() != alpha_t.size()) {
        throw std::invalid_argument("meter: time and signal arrays differ in length");
    }
    MeterTrace trace;
    trace.params = params;
    trace.samples.reserve(times.size());
    MeterIntegrator integ(params);
    for (std::size_t i = 0; i < times.size(); ++i) {
        trace.samples.push_back(integ.push(times[i], alpha_t[i]));
    }
    return trace;
}

ConsistencyReport consistency_check_mean(const MeterTrace& trace,
                                         std::span<const double> times,
                                         std::span<const cx> alpha_t, double t0, double t1) {
    if (times.size() != alpha_t.size()) {
        throw std::invalid_argument("meter: time and signal arrays differ in length");
    }
    const double kp = trace.params.kp_over_k;
    if (!((t1 - t0) * kp >= 5.0)) {
        throw std::invalid_argument(
            "meter: consistency segment shorter than 5 meter lifetimes");
    }
    cx meter_sum{};
    std::size_t meter_n = 0;
    for (const auto& s : trace.samples) {
        if (s.t >= t0 && s.t <= t1) {
            meter_sum += s.alpha_prime;
            ++meter_n;
        }
    }
    cx drive_sum{};
    std::size_t drive_n = 0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (times[i] >= t0 && times[i] <= t1) {
            drive_sum += alpha_t[i];
            ++drive_n;
        }
    }
    if (meter_n == 0 || drive_n == 0) {
        throw std::invalid_argument("meter: consistency segment contains no samples");
    }
    ConsistencyReport rep;
    rep.scaled_meter_mean = trace.params.kp_over_gp * (meter_sum / double(meter_n));
    rep.drive_mean = drive_sum / double(drive_n) + trace.params.drive_prime;
    const double scale = std::max(std::abs(rep.drive_mean), 1e-12);
    rep.relative_error = std::abs(rep.scaled_meter_mean - rep.drive_mean) / scale;
    rep.pass = rep.relative_error <= 0.05;
    return rep;
}

std::vector<DipEvent> detect_dip(const MeterTrace& trace, const DipConfig& config) {
    const auto& ss = trace.samples;
    std::vector<DipEvent> events;
    if (ss.size() < 3) return events;
    const double level = std::norm(trace.params.drive_prime);
    if (!(level > 0.0)) {
        throw std::invalid_argument(
            "meter: dip detection needs a nonzero cancellation drive to set the "
            "reference level");
    }
    const double thr = config.threshold_fraction * level;
    const double band = config.bright_band * level;

    /* contiguous bright runs: |T' - level| <= band */
    struct Run { double start, end; };
    std::vector<Run> bright;
    bool in_run = false;
    double run_start = 0.0, run_end = 0.0;
    for (const auto& s : ss) {
        const bool ok = std::abs(s.transmission - level) <= band;
        if (ok && !in_run) {
            in_run = true;
            run_start = s.t;
        }
        if (ok) run_end = s.t;
        if (!ok && in_run) {
            in_run = false;
            bright.push_back({run_start, run_end});
        }
    }
    if (in_run) bright.push_back({run_start, run_end});

    /* contiguous sub-threshold regions, argmin in each */
    std::size_t i = 0;
    while (i < ss.size()) {
        if (ss[i].transmission >= thr) {
            ++i;
            continue;
        }
        std::size_t best = i;
        std::size_t j = i;
        while (j < ss.size() && ss[j].transmission < thr) {
            if (ss[j].transmission < ss[best].transmission) best = j;
            ++j;
        }
        const double region_start = ss[i].t;
        /* latest bright run ending before the region, long enough, close enough */
        const Run* window = nullptr;
        for (const auto& r : bright) {
            if (r.end <= region_start + 1e-12 &&
                r.end - r.start >= config.bright_min_duration &&
                region_start - r.end <= config.max_gap) {
                window = &r;
            }
        }
        if (window != nullptr) {
            DipEvent ev;
            ev.t_min_sample = ss[best].t;
            ev.t_dip = ss[best].t;
            ev.transmission_min = ss[best].transmission;
            if (best > 0 && best + 1 < ss.size()) {
                const double vl = ss[best - 1].transmission;
                const double v0 = ss[best].transmission;
                const double vr = ss[best + 1].transmission;
                const double denom = vl - 2.0 * v0 + vr;
                if (denom > 1e-300) {
                    double d = 0.5 * (vl - vr) / denom;
                    d = std::clamp(d, -0.5, 0.5);
                    const double h = 0.5 * (ss[best + 1].t - ss[best - 1].t);
                    ev.t_dip = ss[best].t + d * h;
                    ev.transmission_min = std::max(0.0, v0 - 0.25 * (vl - vr) * d);
                }
            }
            ev.bright_start = window->start;
            ev.bright_end = window->end;
            events.push_back(ev);
        }
        i = j;
    }
    return events;
}

QuadratureExtrema quadrature_extrema(const MeterTrace& trace, double t0, double t1) {
    const auto& ss = trace.samples;
    std::size_t lo = 0;
    while (lo < ss.size() && ss[lo].t < t0) ++lo;
    std::size_t hi = lo;
    while (hi < ss.size() && ss[hi].t <= t1) ++hi;
    if (hi - lo < 5) {
        throw std::invalid_argument(
            "meter: quadrature window holds fewer than 5 samples");
    }
    QuadratureExtrema ex;
    double best_dx = 0.0, best_dy = 0.0;
    double min_dx = 0.0, max_dx = 0.0, min_dy = 0.0, max_dy = 0.0;
    bool first = true;
    for (std::size_t k = std::max<std::size_t>(lo, 1); k + 1 < ss.size() && k < hi; ++k) {
        const double span = ss[k + 1].t - ss[k - 1].t;
        if (!(span > 0.0)) continue;
        const double dx = (ss[k + 1].x_prime - ss[k - 1].x_prime) / span;
        const double dy = (ss[k + 1].y_prime - ss[k - 1].y_prime) / span;
        if (first || dx < best_dx) {
            best_dx = dx;
            ex.t_min_dx = ss[k].t;
        }
        if (first || dy > best_dy) {
            best_dy = dy;
            ex.t_max_dy = ss[k].t;
        }
        min_dx = first ? dx : std::min(min_dx, dx);
        max_dx = first ? dx : std::max(max_dx, dx);
        min_dy = first ? dy : std::min(min_dy, dy);
        max_dy = first ? dy : std::max(max_dy, dy);
        first = false;
    }
    if (first) {
        throw std::invalid_argument("meter: quadrature window has no interior samples");
    }
    double amp = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
        amp = std::max(amp, std::abs(ss[k].x_prime) + std::abs(ss[k].y_prime));
    }
    const double spread = (max_dx - min_dx) + (max_dy - min_dy);
    ex.degenerate = spread <= 1e-12 * std::max(1.0, amp);
    return ex;
}

namespace {

/* coefficient of variation of zero-crossing intervals of a detrended signal;
 * returns nullopt when there are too few crossings to judge */
std::optional<double> crossing_cv(std::span<const double> ts, std::span<const double> vs,
                                  int min_crossings) {
    std::vector<double> crossings;
    for (std::size_t k = 1; k < vs.size(); ++k) {
        if ((vs[k - 1] < 0.0 && vs[k] >= 0.0) || (vs[k - 1] > 0.0 && vs[k] <= 0.0)) {
            const double f = vs[k - 1] / (vs[k - 1] - vs[k]);
            crossings.push_back(ts[k - 1] + f * (ts[k] - ts[k - 1]));
        }
    }
    if (int(crossings.size()) < min_crossings) return std::nullopt;
    std::vector<double> gaps(crossings.size() - 1);
    for (std::size_t k = 0; k + 1 < crossings.size(); ++k) {
        gaps[k] = crossings[k + 1] - crossings[k];
    }
    const double mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / double(gaps.size());
    if (!(mean > 0.0)) return std::nullopt;
    double var = 0.0;
    for (double g : gaps) var += (g - mean) * (g - mean);
    var /= double(gaps.size());
    return std::sqrt(var) / mean;
}

} // namespace

DipClass classify_post_dip(const MeterTrace& trace, const DipEvent& event,
                           const ClassifyConfig& config) {
    const auto& ss = trace.samples;
    const double level = std::norm(trace.params.drive_prime);
    const double t0 = event.t_dip + config.settle_fraction * config.window;
    const double t1 = event.t_dip + config.window;
    if (ss.empty() || ss.back().t + 1e-12 < t1) {
        throw std::invalid_argument(
            "meter: trace ends before the post-dip classification window");
    }
    std::vector<double> ts, Ts, xs, ys;
    for (const auto& s : ss) {
        if (s.t >= t0 && s.t <= t1) {
            ts.push_back(s.t);
            Ts.push_back(s.transmission);
            xs.push_back(s.x_prime);
            ys.push_back(s.y_prime);
        }
    }
    if (ts.size() < 8) return DipClass::indeterminate;

    const double n = double(Ts.size());
    const double T_mean = std::accumulate(Ts.begin(), Ts.end(), 0.0) / n;
    double dev = 0.0, var = 0.0;
    for (double T : Ts) {
        dev += std::abs(T - level);
        var += (T - T_mean) * (T - T_mean);
    }
    dev /= n;
    var /= n;
    const bool level_ok =
        dev <= config.level_band * level && std::sqrt(var) <= config.variance_band * level;
    if (!level_ok) return DipClass::fluctuation;

    /* coherence of the residual oscillation on the dominant quadrature */
    const double x_mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double y_mean = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double x_rms = 0.0, y_rms = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        xs[k] -= x_mean;
        ys[k] -= y_mean;
        x_rms += xs[k] * xs[k];
        y_rms += ys[k] * ys[k];
    }
    x_rms = std::sqrt(x_rms / n);
    y_rms = std::sqrt(y_rms / n);
    const double carrier = std::max({std::abs(x_mean), std::abs(y_mean), 1e-12});
    if (std::max(x_rms, y_rms) <= config.min_oscillation * carrier) {
        return DipClass::metastable_jump; /* flat settle: trivially coherent */
    }
    const auto& dom = (x_rms >= y_rms) ? xs : ys;
    const auto cv = crossing_cv(ts, dom, config.min_crossings);
    if (!cv.has_value()) return DipClass::indeterminate;
    return (*cv < config.cv_threshold) ? DipClass::metastable_jump : DipClass::fluctuation;
}

ExtractedAmplitudes extract_conditioned_amplitudes(const QGrid& grid, cx alpha1_bar) {
    ExtractedAmplitudes out;
    const auto peaks = find_peaks(grid, 0.2);
    if (peaks.size() != 2) {
        out.ok = false;
        out.diagnostic = "expected a bimodal snapshot, found " +
                         std::to_string(peaks.size()) +
                         " peak(s) above 20% of the maximum";
        return out;
    }
    const double d0 = std::abs(peaks[0].position - alpha1_bar);
    const double d1 = std::abs(peaks[1].position - alpha1_bar);
    out.alpha1 = (d0 <= d1) ? peaks[0].position : peaks[1].position;
    out.alpha2 = (d0 <= d1) ? peaks[1].position : peaks[0].position;
    out.ok = true;
    return out;
}

} // namespace qjlab
