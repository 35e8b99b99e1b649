#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qjlab/jcmodel.hpp"

namespace qjlab {

/* Single-trajectory unraveling of the damped, driven dynamics under direct
 * photodetection, using the waiting-time algorithm: the unnormalized state
 * evolves under H_eff = H - i a^dag a until its squared norm crosses a
 * pre-drawn uniform variate, at which point the collapse sqrt(2) a is
 * applied, the state renormalized and a fresh variate drawn. */

struct TrajectoryConfig {
    double dt = 1e-4;          /* units 1/kappa */
    double duration = 10.0;    /* units 1/kappa, recorded after burn-in */
    std::uint64_t seed = 1;
    int sample_stride = 10;    /* samples stored every stride steps */
    double burn_in = 0.0;      /* discarded lead-in, units 1/kappa */
    std::optional<PureStateVector> initial_state;
    std::string initial_preset = "vacuum"; /* "vacuum" or "steady-sample" */
    bool store_snapshots = false;          /* trailing ring + pinning */
    double ring_window = 2.0;              /* ring look-back, units 1/kappa */
    std::vector<double> pin_times;         /* snapshots to keep, nearest sample */

    void validate() const;
};

struct TrajectorySample {
    double t = 0.0;
    cx mean_a{};        /* <a>_REC */
    double mean_n = 0.0; /* <a^dag a>_REC */
    double x0 = 0.0;     /* <A_0>_REC */
    double y0 = 0.0;     /* <A_{pi/2}>_REC */
    double survival = 0.0; /* squared norm since the last click */
};

struct TrajectoryRecord {
    std::vector<double> click_times; /* strictly increasing, post burn-in */
    std::vector<TrajectorySample> samples;
    std::map<double, PureStateVector> snapshots; /* pinned, normalized */
    std::uint64_t seed = 0;
    double dt = 0.0;
    int sample_stride = 1;
    bool truncation_warning = false; /* top-Fock population exceeded 1e-8 */
    double max_top_population = 0.0;
};

/* Trailing window of recent normalized states; pin(t) promotes the entry
 * nearest t into the record permanently. Handed to the sample observer so
 * online detectors can keep what they need. */
class SnapshotRing {
public:
    SnapshotRing(double window, std::map<double, PureStateVector>& sink)
        : window_(window), sink_(&sink) {}
    void push(double t, const PureStateVector& psi);
    bool pin(double t); /* false when t has already left the window */
    std::size_t size() const { return ring_.size(); }

private:
    double window_;
    std::map<double, PureStateVector>* sink_;
    std::vector<std::pair<double, PureStateVector>> ring_;
};

using SampleObserver = std::function<void(const TrajectorySample&, SnapshotRing&)>;

/* H - i a^dag a: generator of the no-click evolution */
SparseOperator build_effective_hamiltonian(const JCParams& p);

/* One 4th-order step of d psi/dt = -i heff psi. The result's norm must not
 * grow; growth beyond 1e-12 means the step outran stability and throws. */
PureStateVector integrate_step(const PureStateVector& psi, const SparseOperator& heff,
                               double dt);

TrajectoryRecord run_trajectory(const JCParams& p, const TrajectoryConfig& config,
                                const SampleObserver& observer = {});

/* Independent trajectories with per-index derived seeds; results ordered by
 * index regardless of scheduling. */
std::vector<TrajectoryRecord> run_ensemble(const JCParams& p, const TrajectoryConfig& base,
                                           int n_trajectories, int workers = 0);
std::vector<TrajectoryRecord> run_ensemble_serial(const JCParams& p,
                                                  const TrajectoryConfig& base,
                                                  int n_trajectories);

struct ConditionedQ {
    QGrid grid;
    double snapshot_time = 0.0; /* the stored time actually used */
};

/* Q function of the cavity reduction of the pinned snapshot nearest t.
 * Throws when no snapshot lies within dt * sample_stride of t. */
ConditionedQ conditioned_q_snapshot(const TrajectoryRecord& record, const HilbertConfig& cfg,
                                    double t, const QGridSpec& spec);

} // namespace qjlab
