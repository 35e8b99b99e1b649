/* Timing driver for the parallel kernels against their serial references.
 *
 * Each kernel family ships in two versions: an OpenMP one used by the runs
 * and a plain serial one kept for testing. This target times both on the
 * same inputs and checks that they produce identical results, since every
 * work item derives its own seed from its index.
 *
 *   bench [--workers N] [--reps R] [--scale S]
 *
 * --scale multiplies the problem sizes (default 1).
 */

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "qjlab/charge.hpp"
#include "qjlab/fock.hpp"
#include "qjlab/jcmodel.hpp"
#include "qjlab/mcwf.hpp"

using namespace qjlab;

namespace {

std::string fmt_grid(const QGrid& g) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "q_function %dx%d n=120", g.spec.nx(), g.spec.ny());
    return buf;
}

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

double time_best(int reps, const std::function<void()>& fn) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const double t0 = now_s();
        fn();
        best = std::min(best, now_s() - t0);
    }
    return best;
}

void report(const char* name, double serial, double parallel, double max_diff) {
    std::printf("%-28s serial %8.3f s   parallel %8.3f s   speedup %5.2fx   max |diff| %.3g\n",
                name, serial, parallel, serial / parallel, max_diff);
}

} // namespace

int main(int argc, char** argv) {
    int workers = 0;
    int reps = 3;
    int scale = 1;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--workers" && i + 1 < argc) {
            workers = std::atoi(argv[++i]);
        } else if (arg == "--reps" && i + 1 < argc) {
            reps = std::atoi(argv[++i]);
        } else if (arg == "--scale" && i + 1 < argc) {
            scale = std::atoi(argv[++i]);
        } else {
            std::fprintf(stderr, "usage: %s [--workers N] [--reps R] [--scale S]\n", argv[0]);
            return 2;
        }
    }
#ifdef _OPENMP
    const int max_threads = omp_get_max_threads();
#else
    const int max_threads = 1;
#endif
    std::printf("threads available: %d   requested: %d   reps: %d   scale: %d\n\n",
                max_threads, workers == 0 ? max_threads : workers, reps, scale);

    /* Phase-space grid of a two-component superposition, the shape the
     * conditioned snapshots produce. Cost per point grows with the cutoff. */
    {
        HilbertConfig hilbert{120, false};
        const auto bright = coherent_state(cx(1.95, -5.45), hilbert);
        const auto dim = coherent_state(cx(-1.40, 0.85), hilbert);
        PureStateVector psi = PureStateVector::zero(bright.state.dim);
        for (int n = 0; n < psi.dim; ++n) {
            const auto k = std::size_t(n);
            psi.amplitudes[k] = (bright.state.amplitudes[k] + dim.state.amplitudes[k]) /
                                std::sqrt(2.0);
        }
        psi.normalize();
        const DensityMatrix rho = DensityMatrix::from_pure(psi);
        QGridSpec spec;
        spec.x_min = -9.0;
        spec.x_max = 9.0;
        spec.y_min = -9.0;
        spec.y_max = 9.0;
        spec.spacing = 0.15 / scale;
        QGrid gs, gp;
        const double ts = time_best(reps, [&] { gs = q_function_serial(rho, spec); });
        const double tp = time_best(reps, [&] { gp = q_function(rho, spec, workers); });
        double diff = 0.0;
        for (std::size_t i = 0; i < gs.values.size(); ++i) {
            diff = std::max(diff, std::abs(gs.values[i] - gp.values[i]));
        }
        report(fmt_grid(gs).c_str(), ts, tp, diff);
    }

    /* Quantum-trajectory ensemble on the reduced system. */
    {
        JCParams p;
        p.g_over_k = 10.0;
        p.drive = cx(0.0, 2.25);
        p.detuning = -1.2;
        p.hilbert = HilbertConfig{30, true};
        TrajectoryConfig tc;
        tc.dt = 1e-3;
        tc.duration = 2.0;
        tc.seed = 7001;
        tc.sample_stride = 100;
        const int n_traj = 16 * scale;
        std::vector<TrajectoryRecord> rs, rp;
        const double ts = time_best(reps, [&] { rs = run_ensemble_serial(p, tc, n_traj); });
        const double tp = time_best(reps, [&] { rp = run_ensemble(p, tc, n_traj, workers); });
        double diff = 0.0;
        for (int i = 0; i < n_traj; ++i) {
            diff = std::max(diff, std::abs(rs[std::size_t(i)].samples.back().mean_n -
                                           rp[std::size_t(i)].samples.back().mean_n));
        }
        report("mcwf ensemble g/k=10", ts, tp, diff);
    }

    /* Integrated-charge ensembles, one per detection scheme. */
    {
        HeterodyneConfig het;
        het.init.c1 = cx(1.0 / std::sqrt(2.0), 0.0);
        het.init.c2 = cx(1.0 / std::sqrt(2.0), 0.0);
        het.init.alpha1 = cx(3.59, 0.0);
        het.init.alpha2 = cx(-3.59, 0.0);
        const long n = 4000 * scale;
        HeterodyneEnsemble es, ep;
        const double ts =
            time_best(reps, [&] { es = run_ensemble_serial(het, n, {}, 6001); });
        const double tp =
            time_best(reps, [&] { ep = run_ensemble(het, n, {}, 6001, workers); });
        double diff = 0.0;
        for (long i = 0; i < n; ++i) {
            diff = std::max(diff, std::abs(es.finals[std::size_t(i)] -
                                           ep.finals[std::size_t(i)]));
        }
        report("heterodyne ensemble", ts, tp, diff);
    }
    {
        HomodyneConfig hom;
        hom.frame.A = 3.59;
        hom.frame.phi0 = 0.0;
        hom.theta = 1.5707963267948966;
        const long n = 400 * scale;
        HomodyneEnsemble es, ep;
        const double ts =
            time_best(reps, [&] { es = run_ensemble_serial(hom, n, {}, 6002); });
        const double tp =
            time_best(reps, [&] { ep = run_ensemble(hom, n, {}, 6002, workers); });
        double diff = 0.0;
        for (long i = 0; i < n; ++i) {
            diff = std::max(diff, std::abs(es.finals[std::size_t(i)] -
                                           ep.finals[std::size_t(i)]));
        }
        report("homodyne ensemble", ts, tp, diff);
    }
    return 0;
}
