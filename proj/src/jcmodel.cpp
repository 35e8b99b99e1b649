#include "qjlab/jcmodel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <nlohmann/json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace qjlab {

void JCParams::validate() const {
    hilbert.validate();
    if (!hilbert.include_atom)
        throw std::invalid_argument("JCParams: the composite space needs the emitter");
    if (g_over_k < 0.0) throw std::invalid_argument("JCParams: g_over_k must be >= 0");
    if (!std::isfinite(g_over_k) || !std::isfinite(detuning) || !std::isfinite(drive.real()) ||
        !std::isfinite(drive.imag()))
        throw std::invalid_argument("JCParams: non-finite parameter");
}

double saturation_photon_number(const JCParams& p) {
    return 0.25 * p.g_over_k * p.g_over_k;
}

const SemiclassicalRoot& SemiclassicalRoots::bright() const {
    if (roots.empty()) throw NumericalError("SemiclassicalRoots: no roots");
    return roots.front();
}

const SemiclassicalRoot& SemiclassicalRoots::dim() const {
    if (roots.empty()) throw NumericalError("SemiclassicalRoots: no roots");
    return roots.back();
}

const SemiclassicalRoot* SemiclassicalRoots::unstable() const {
    return roots.size() == 3 ? &roots[1] : nullptr;
}

nlohmann::json SemiclassicalRoots::to_json() const {
    auto root_json = [](const SemiclassicalRoot& r) {
        return nlohmann::json{{"alpha", {r.alpha.real(), r.alpha.imag()}},
                              {"modulus2", r.modulus2},
                              {"branch", r.branch},
                              {"residual", r.residual},
                              {"inversion", r.inversion},
                              {"label", std::string(1, r.label)}};
    };
    nlohmann::json jr = nlohmann::json::array(), je = nlohmann::json::array();
    for (const auto& r : roots) jr.push_back(root_json(r));
    for (const auto& r : extra_roots) je.push_back(root_json(r));
    return {{"roots", std::move(jr)}, {"extra_roots", std::move(je)}, {"bistable", bistable()}};
}

namespace {

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

/* Effective detuning seen by the cavity once the emitter's steady response
 * is folded in. The emitter contribution saturates through
 * sqrt(dw^2 + 4 g^2 m), m = |alpha|^2; branch +1 keeps the emitter near its
 * lower state, branch -1 is the inverted fixed point. */
double chi_of_m(const JCParams& p, double m, int branch) {
    const double dw = p.detuning;
    const double g2 = p.g_over_k * p.g_over_k;
    const double root = std::sqrt(dw * dw + 4.0 * g2 * m);
    return dw - branch * sgn(dw) * g2 / root;
}

cx alpha_of_chi(const JCParams& p, double chi) {
    return cx(0.0, -1.0) * p.drive / cx(1.0, -chi);
}

double scalar_f(const JCParams& p, double m, int branch) {
    const double chi = chi_of_m(p, m, branch);
    return m * (1.0 + chi * chi) - std::norm(p.drive);
}

double emitter_inversion(const JCParams& p, double m, int branch) {
    const double dw = p.detuning;
    const double g2 = p.g_over_k * p.g_over_k;
    if (dw == 0.0) return -static_cast<double>(branch);
    return -branch / std::sqrt(1.0 + 4.0 * g2 * m / (dw * dw));
}

std::vector<SemiclassicalRoot> roots_on_branch(const JCParams& p, int branch) {
    const double e2 = std::norm(p.drive);
    std::vector<SemiclassicalRoot> out;
    if (e2 == 0.0) {
        out.push_back({cx(0.0, 0.0), 0.0, branch, 0.0, emitter_inversion(p, 0.0, branch), 'S'});
        return out;
    }
    const double hi = 4.0 * e2 * (1.0 + p.detuning * p.detuning);
    const double lo = std::min(1e-6, hi * 1e-9);

    /* log-spaced scan, with one extra probe below the grid so vanishingly
     * small responses still get bracketed */
    const int n_scan = 4000;
    std::vector<double> ms(static_cast<std::size_t>(n_scan) + 1);
    ms[0] = hi * 1e-15;
    const double ratio = std::log(hi / lo) / (n_scan - 1);
    for (int i = 0; i < n_scan; ++i) ms[static_cast<std::size_t>(i) + 1] = lo * std::exp(ratio * i);

    double f_prev = scalar_f(p, ms[0], branch);
    for (std::size_t i = 1; i < ms.size(); ++i) {
        const double f_cur = scalar_f(p, ms[i], branch);
        if ((f_prev < 0.0) != (f_cur < 0.0)) {
            double a = ms[i - 1], b = ms[i], fa = f_prev;
            for (int it = 0; it < 200 && (b - a) > 1e-12 * b; ++it) {
                const double mid = 0.5 * (a + b);
                const double fm = scalar_f(p, mid, branch);
                if ((fa < 0.0) == (fm < 0.0)) {
                    a = mid;
                    fa = fm;
                } else {
                    b = mid;
                }
            }
            const double m_star = 0.5 * (a + b);
            const cx alpha = alpha_of_chi(p, chi_of_m(p, m_star, branch));
            const cx recon = alpha_of_chi(p, chi_of_m(p, std::norm(alpha), branch));
            SemiclassicalRoot r;
            r.alpha = alpha;
            r.modulus2 = std::norm(alpha);
            r.branch = branch;
            r.residual = std::abs(alpha - recon);
            r.inversion = emitter_inversion(p, m_star, branch);
            if (r.residual < 1e-8) out.push_back(r);
        }
        f_prev = f_cur;
    }
    return out;
}

void dedupe_roots(std::vector<SemiclassicalRoot>& rs) {
    std::vector<SemiclassicalRoot> out;
    for (const auto& r : rs) {
        bool dup = false;
        for (const auto& o : out)
            if (std::abs(r.alpha - o.alpha) < 1e-6) dup = true;
        if (!dup) out.push_back(r);
    }
    rs = std::move(out);
}

} // namespace

SemiclassicalRoots solve_neoclassical(const JCParams& p) {
    if (!std::isfinite(p.g_over_k) || p.g_over_k < 0.0)
        throw std::invalid_argument("solve_neoclassical: bad coupling");

    SemiclassicalRoots result;
    result.roots = roots_on_branch(p, +1);
    result.extra_roots = roots_on_branch(p, -1);
    dedupe_roots(result.roots);
    dedupe_roots(result.extra_roots);

    /* The labeled set is the lower-state branch: the inverted-branch fixed
     * point pairs with the dim root at nearly the same modulus but is not a
     * state the driven, damped dynamics settles into. Keep it visible in
     * extra_roots. Cross-branch duplicates (e.g. the undriven origin) are
     * removed from extras. */
    std::erase_if(result.extra_roots, [&](const SemiclassicalRoot& e) {
        for (const auto& r : result.roots)
            if (std::abs(r.alpha - e.alpha) < 1e-6) return true;
        return false;
    });

    auto by_modulus = [](const SemiclassicalRoot& a, const SemiclassicalRoot& b) {
        return a.modulus2 > b.modulus2;
    };
    std::sort(result.roots.begin(), result.roots.end(), by_modulus);
    std::sort(result.extra_roots.begin(), result.extra_roots.end(), by_modulus);
    if (result.roots.size() == 3) {
        result.roots[0].label = 'B';
        result.roots[1].label = 'U';
        result.roots[2].label = 'D';
    } else if (result.roots.size() == 2) {
        result.roots[0].label = 'B';
        result.roots[1].label = 'D';
    } else {
        for (auto& r : result.roots) r.label = 'S';
    }
    return result;
}

double localization_time(cx alpha1, cx alpha2) {
    const double r1 = std::abs(alpha1), r2 = std::abs(alpha2);
    if (!(r1 > r2)) throw std::invalid_argument("localization_time: needs |alpha1| > |alpha2|");
    const double m1 = r1 * r1, m2 = r2 * r2;
    const double denom = m1 - r2 * (r2 - 1.0);
    const double arg = r2 / denom;
    if (!(denom > 0.0) || !(arg > 0.0))
        throw NumericalError("localization_time: outside the validity regime");
    return -std::log(arg) / (m1 - m2);
}

nlohmann::json AdiabaticReport::to_json() const {
    return {{"kp_over_k", kp_over_k},
            {"kp_over_gp", kp_over_gp},
            {"weak_coupling_value", weak_coupling_value},
            {"jump_resolution_need", jump_resolution_need},
            {"meter_faster_than_system", meter_faster_than_system},
            {"meter_overdamped", meter_overdamped},
            {"weak_coupling", weak_coupling},
            {"jump_resolution", jump_resolution},
            {"all_pass", all_pass}};
}

AdiabaticReport check_adiabatic_conditions(double kp_over_k, double kp_over_gp,
                                           const JCParams& p) {
    if (!(kp_over_k > 0.0) || !(kp_over_gp > 0.0))
        throw std::invalid_argument("check_adiabatic_conditions: ratios must be positive");
    AdiabaticReport rep;
    rep.kp_over_k = kp_over_k;
    rep.kp_over_gp = kp_over_gp;
    rep.weak_coupling_value = kp_over_k / (kp_over_gp * kp_over_gp);
    const SemiclassicalRoots roots = solve_neoclassical(p);
    const double m1 = roots.bright().modulus2;
    rep.jump_resolution_need = m1 > 1.0 + 1e-12 ? m1 / std::log(m1) : 0.0;
    rep.meter_faster_than_system = kp_over_k >= 20.0;
    rep.meter_overdamped = kp_over_gp >= 20.0;
    rep.weak_coupling = rep.weak_coupling_value <= 0.05;
    rep.jump_resolution = kp_over_k > rep.jump_resolution_need;
    rep.all_pass = rep.meter_faster_than_system && rep.meter_overdamped && rep.weak_coupling &&
                   rep.jump_resolution;
    return rep;
}

SparseOperator build_hamiltonian(const JCParams& p) {
    p.validate();
    const HilbertConfig& cfg = p.hilbert;
    const SparseOperator a = annihilation(cfg);
    const SparseOperator ad = creation(cfg);
    const SparseOperator excite = number_operator(cfg) + atom_excitation(cfg);
    const SparseOperator coupling =
        (ad * sigma_minus(cfg) - a * sigma_plus(cfg)).scaled(cx(0.0, p.g_over_k));
    const SparseOperator drive = ad.scaled(p.drive) + a.scaled(std::conj(p.drive));
    SparseOperator h = excite.scaled(-p.detuning) + coupling + drive;
    if (!h.is_hermitian(1e-12)) throw NumericalError("build_hamiltonian: hermiticity lost");
    return h;
}

SparseOperator build_liouvillian(const JCParams& p) {
    const HilbertConfig& cfg = p.hilbert;
    const int d = cfg.dim();
    const SparseOperator h = build_hamiltonian(p);
    const SparseOperator a = annihilation(cfg);
    const SparseOperator num = number_operator(cfg);
    const SparseOperator id = SparseOperator::identity(d);

    /* column-stacked convention: vec(A rho B) = kron(B^T, A) vec(rho) */
    SparseOperator L = SparseOperator::kron(id, h).scaled(cx(0.0, -1.0)) +
                       SparseOperator::kron(h.transpose(), id).scaled(cx(0.0, 1.0)) +
                       SparseOperator::kron(a.conjugate(), a).scaled(cx(2.0, 0.0)) +
                       SparseOperator::kron(id, num).scaled(cx(-1.0, 0.0)) +
                       SparseOperator::kron(num.transpose(), id).scaled(cx(-1.0, 0.0));
    return L;
}

namespace {

/* operations on row-major d x d matrices stored flat */

void left_mul_accum(const SparseOperator& op, const cx* m, cx* out, cx s, int d) {
    for (const Triplet& t : op.entries()) {
        const cx v = s * t.value;
        const cx* src = m + static_cast<std::size_t>(t.col) * d;
        cx* dst = out + static_cast<std::size_t>(t.row) * d;
        for (int j = 0; j < d; ++j) dst[j] += v * src[j];
    }
}

void right_mul_accum(const SparseOperator& op, const cx* m, cx* out, cx s, int d) {
    for (const Triplet& t : op.entries()) {
        const cx v = s * t.value;
        const cx* src = m + t.row;
        cx* dst = out + t.col;
        for (int i = 0; i < d; ++i)
            dst[static_cast<std::size_t>(i) * d] += v * src[static_cast<std::size_t>(i) * d];
    }
}

struct MEWork {
    const SparseOperator h, a, ad, num;
    const int d;
    std::vector<cx> tmp;

    explicit MEWork(const JCParams& p)
        : h(build_hamiltonian(p)),
          a(annihilation(p.hilbert)),
          ad(creation(p.hilbert)),
          num(number_operator(p.hilbert)),
          d(p.hilbert.dim()),
          tmp(static_cast<std::size_t>(d) * d) {}

    void rhs(const cx* rho, cx* out) {
        const std::size_t n = static_cast<std::size_t>(d) * d;
        std::fill(out, out + n, cx(0.0, 0.0));
        left_mul_accum(h, rho, out, cx(0.0, -1.0), d);
        right_mul_accum(h, rho, out, cx(0.0, 1.0), d);
        std::fill(tmp.begin(), tmp.end(), cx(0.0, 0.0));
        left_mul_accum(a, rho, tmp.data(), cx(1.0, 0.0), d);
        right_mul_accum(ad, tmp.data(), out, cx(2.0, 0.0), d);
        left_mul_accum(num, rho, out, cx(-1.0, 0.0), d);
        right_mul_accum(num, rho, out, cx(-1.0, 0.0), d);
    }
};

cx trace_op_rho(const SparseOperator& op, const cx* rho, int d) {
    cx acc{};
    for (const Triplet& t : op.entries())
        acc += t.value * rho[static_cast<std::size_t>(t.col) * d + t.row];
    return acc;
}

} // namespace

MESolution me_evolve(const JCParams& p, const DensityMatrix& rho0, double dt, double t_end,
                     int record_stride) {
    p.validate();
    const int d = p.hilbert.dim();
    if (rho0.dim != d) throw std::invalid_argument("me_evolve: state dimension mismatch");
    if (!(dt > 0.0) || !(t_end >= 0.0)) throw std::invalid_argument("me_evolve: bad time step");
    if (record_stride < 1) record_stride = 1;

    MEWork w(p);
    const std::size_t n = static_cast<std::size_t>(d) * d;
    std::vector<cx> rho(rho0.elements), k1(n), k2(n), k3(n), k4(n), stage(n);
    const SparseOperator num = number_operator(p.hilbert);
    const SparseOperator a = annihilation(p.hilbert);

    MESolution sol;
    const long n_steps = std::lround(t_end / dt);
    auto record = [&](double t) {
        sol.times.push_back(t);
        sol.mean_n.push_back(trace_op_rho(num, rho.data(), d).real());
        sol.mean_a.push_back(trace_op_rho(a, rho.data(), d));
    };
    record(0.0);
    for (long s = 0; s < n_steps; ++s) {
        w.rhs(rho.data(), k1.data());
        for (std::size_t i = 0; i < n; ++i) stage[i] = rho[i] + 0.5 * dt * k1[i];
        w.rhs(stage.data(), k2.data());
        for (std::size_t i = 0; i < n; ++i) stage[i] = rho[i] + 0.5 * dt * k2[i];
        w.rhs(stage.data(), k3.data());
        for (std::size_t i = 0; i < n; ++i) stage[i] = rho[i] + dt * k3[i];
        w.rhs(stage.data(), k4.data());
        for (std::size_t i = 0; i < n; ++i)
            rho[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        if ((s + 1) % record_stride == 0 || s + 1 == n_steps) record((s + 1) * dt);
    }
    sol.final.dim = d;
    sol.final.elements = std::move(rho);
    return sol;
}

DensityMatrix reduced_cavity_dm(const DensityMatrix& rho, const HilbertConfig& cfg) {
    if (!cfg.include_atom)
        throw std::invalid_argument("reduced_cavity_dm: config must describe the composite space");
    if (rho.dim != cfg.dim()) throw std::invalid_argument("reduced_cavity_dm: dimension mismatch");
    const int nc = cfg.cavity_dim();
    DensityMatrix out = DensityMatrix::zero(nc);
    for (int s = 0; s < 2; ++s)
        for (int n = 0; n < nc; ++n)
            for (int m = 0; m < nc; ++m) out.at(n, m) += rho.at(cfg.index(s, n), cfg.index(s, m));
    return out;
}

namespace {

double liouvillian_residual(const SparseOperator& L, const DensityMatrix& rho) {
    const int d = rho.dim;
    std::vector<cx> v(static_cast<std::size_t>(d) * d), Lv(v.size());
    for (int c = 0; c < d; ++c)
        for (int r = 0; r < d; ++r) v[static_cast<std::size_t>(c) * d + r] = rho.at(r, c);
    L.apply(v.data(), Lv.data());
    double s = 0.0;
    for (const cx& e : Lv) s += std::norm(e);
    return std::sqrt(s);
}

DensityMatrix vacuum_lower_state(const HilbertConfig& cfg) {
    PureStateVector psi = PureStateVector::zero(cfg.dim());
    psi.amplitudes[static_cast<std::size_t>(cfg.index(0, 0))] = cx(1.0, 0.0);
    return DensityMatrix::from_pure(psi);
}

} // namespace

SteadyStateReport steady_state(const JCParams& p) {
    p.validate();
    const int d = p.hilbert.dim();
    const long d2 = static_cast<long>(d) * d;
    const SparseOperator L = build_liouvillian(p);

    SteadyStateReport rep;
    bool direct_ok = false;
    try {
        Eigen::SparseMatrix<cx> A(d2, d2);
        {
            std::vector<Eigen::Triplet<cx>> ts;
            ts.reserve(L.nnz() + static_cast<std::size_t>(d));
            const int trace_row = 0;
            for (const Triplet& t : L.entries())
                if (t.row != trace_row) ts.emplace_back(t.row, t.col, t.value);
            for (int i = 0; i < d; ++i)
                ts.emplace_back(trace_row, i * (d + 1), cx(1.0, 0.0));
            A.setFromTriplets(ts.begin(), ts.end());
        }
        A.makeCompressed();
        Eigen::SparseLU<Eigen::SparseMatrix<cx>, Eigen::COLAMDOrdering<int>> lu;
        lu.analyzePattern(A);
        lu.factorize(A);
        if (lu.info() == Eigen::Success) {
            Eigen::VectorXcd b = Eigen::VectorXcd::Zero(d2);
            b(0) = cx(1.0, 0.0);
            Eigen::VectorXcd x = lu.solve(b);
            for (int pass = 0; pass < 3; ++pass) {
                Eigen::VectorXcd r = b - A * x;
                rep.residual_history.push_back(r.norm());
                if (r.norm() < 1e-13) break;
                x += lu.solve(r);
            }
            DensityMatrix rho = DensityMatrix::zero(d);
            for (int c = 0; c < d; ++c)
                for (int r = 0; r < d; ++r) rho.at(r, c) = x(static_cast<long>(c) * d + r);
            rho.hermitize();
            rho.normalize_trace();
            rep.rho = std::move(rho);
            rep.residual = liouvillian_residual(L, rep.rho);
            rep.residual_history.push_back(rep.residual);
            direct_ok = rep.residual < 1e-10;
        }
    } catch (const std::bad_alloc&) {
        direct_ok = false;
    }
    if (direct_ok) return rep;

    /* fallback: integrate the master equation until the generator residual
     * is at the target; bound the step by the spectral extent */
    rep.used_fallback = true;
    const double freq = 2.0 * build_hamiltonian(p).gershgorin_bound() + 4.0;
    const double dt = std::min(1e-3, 1.0 / freq);
    DensityMatrix rho = vacuum_lower_state(p.hilbert);
    const double block = 5.0;
    const double t_cap = 3000.0;
    for (double t = 0.0; t < t_cap; t += block) {
        MESolution sol = me_evolve(p, rho, dt, block, 1 << 30);
        rho = std::move(sol.final);
        rho.hermitize();
        rho.normalize_trace();
        const double res = liouvillian_residual(L, rho);
        rep.residual_history.push_back(res);
        if (res < 1e-10) {
            rep.rho = std::move(rho);
            rep.residual = res;
            return rep;
        }
    }
    std::ostringstream msg;
    msg << "steady_state: no convergence; residual history:";
    for (double r : rep.residual_history) msg << " " << r;
    throw NumericalError(msg.str());
}

QGridSpec QGridSpec::around(std::span<const cx> amplitudes, double margin, double spacing) {
    if (amplitudes.empty()) throw std::invalid_argument("QGridSpec::around: no amplitudes");
    double x_lo = amplitudes[0].real(), x_hi = x_lo;
    double y_lo = amplitudes[0].imag(), y_hi = y_lo;
    for (const cx& a : amplitudes) {
        x_lo = std::min(x_lo, a.real());
        x_hi = std::max(x_hi, a.real());
        y_lo = std::min(y_lo, a.imag());
        y_hi = std::max(y_hi, a.imag());
    }
    return {x_lo - margin, x_hi + margin, y_lo - margin, y_hi + margin, spacing};
}

int QGridSpec::nx() const {
    return static_cast<int>(std::floor((x_max - x_min) / spacing + 1e-9)) + 1;
}

int QGridSpec::ny() const {
    return static_cast<int>(std::floor((y_max - y_min) / spacing + 1e-9)) + 1;
}

void QGridSpec::validate() const {
    if (!(spacing > 0.0) || !(x_max > x_min) || !(y_max > y_min))
        throw std::invalid_argument("QGridSpec: degenerate grid");
}

namespace {

double q_value_at(const DensityMatrix& rho, cx beta, std::vector<cx>& coh, std::vector<cx>& acc) {
    const int d = rho.dim;
    /* coh[n] = <n|beta> */
    cx c = cx(std::exp(-0.5 * std::norm(beta)), 0.0);
    for (int n = 0; n < d; ++n) {
        coh[static_cast<std::size_t>(n)] = c;
        c *= beta / std::sqrt(static_cast<double>(n + 1));
    }
    for (int n = 0; n < d; ++n) {
        cx s{};
        const cx* row = rho.elements.data() + static_cast<std::size_t>(n) * d;
        for (int m = 0; m < d; ++m) s += row[m] * coh[static_cast<std::size_t>(m)];
        acc[static_cast<std::size_t>(n)] = s;
    }
    cx q{};
    for (int n = 0; n < d; ++n) q += std::conj(coh[static_cast<std::size_t>(n)]) * acc[static_cast<std::size_t>(n)];
    return q.real();
}

QGrid q_grid_common(const DensityMatrix& rho_c, const QGridSpec& spec) {
    spec.validate();
    if (rho_c.dim < 1 || rho_c.elements.empty())
        throw std::invalid_argument("q_function: empty state");
    QGrid g;
    g.spec = spec;
    g.xs.resize(static_cast<std::size_t>(spec.nx()));
    g.ys.resize(static_cast<std::size_t>(spec.ny()));
    for (int i = 0; i < spec.nx(); ++i) g.xs[static_cast<std::size_t>(i)] = spec.x_min + i * spec.spacing;
    for (int j = 0; j < spec.ny(); ++j) g.ys[static_cast<std::size_t>(j)] = spec.y_min + j * spec.spacing;
    g.values.assign(g.xs.size() * g.ys.size(), 0.0);
    g.reference_trace = rho_c.trace().real();
    return g;
}

void q_grid_finish(QGrid& g) {
    double s = 0.0;
    for (double v : g.values) s += v;
    g.integral = s * g.spec.spacing * g.spec.spacing;
    const double target = pi * g.reference_trace;
    g.coverage_warning = !(std::abs(g.integral - target) <= 0.01 * std::abs(target));
}

} // namespace

QGrid q_function_serial(const DensityMatrix& rho_c, const QGridSpec& spec) {
    QGrid g = q_grid_common(rho_c, spec);
    const int nx = spec.nx(), ny = spec.ny();
    std::vector<cx> coh(static_cast<std::size_t>(rho_c.dim)), acc(coh.size());
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
            g.values[static_cast<std::size_t>(j) * nx + i] =
                q_value_at(rho_c, cx(g.xs[static_cast<std::size_t>(i)], g.ys[static_cast<std::size_t>(j)]), coh, acc);
    q_grid_finish(g);
    return g;
}

QGrid q_function(const DensityMatrix& rho_c, const QGridSpec& spec, int workers) {
    QGrid g = q_grid_common(rho_c, spec);
    const int nx = spec.nx(), ny = spec.ny();
#ifdef _OPENMP
    if (workers <= 0) workers = omp_get_max_threads();
#else
    workers = 1;
#endif
#pragma omp parallel num_threads(workers)
    {
        std::vector<cx> coh(static_cast<std::size_t>(rho_c.dim)), acc(coh.size());
#pragma omp for schedule(static)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i)
                g.values[static_cast<std::size_t>(j) * nx + i] = q_value_at(
                    rho_c, cx(g.xs[static_cast<std::size_t>(i)], g.ys[static_cast<std::size_t>(j)]), coh, acc);
    }
    q_grid_finish(g);
    return g;
}

std::vector<QPeak> find_peaks(const QGrid& grid, double min_height_fraction) {
    if (grid.values.empty()) throw std::invalid_argument("find_peaks: empty grid");
    const int nx = grid.spec.nx(), ny = grid.spec.ny();
    double vmax = grid.values[0];
    for (double v : grid.values) vmax = std::max(vmax, v);
    const double floor_h = min_height_fraction * vmax;

    auto at = [&](int j, int i) { return grid.values[static_cast<std::size_t>(j) * nx + i]; };
    auto refine = [](double vl, double v0, double vr) {
        const double denom = vl - 2.0 * v0 + vr;
        if (denom >= -1e-300) return 0.0;
        return std::clamp(0.5 * (vl - vr) / denom, -0.5, 0.5);
    };

    std::vector<QPeak> peaks;
    for (int j = 1; j + 1 < ny; ++j)
        for (int i = 1; i + 1 < nx; ++i) {
            const double v0 = at(j, i);
            if (v0 < floor_h) continue;
            bool strict = true;
            for (int dj = -1; dj <= 1 && strict; ++dj)
                for (int di = -1; di <= 1; ++di) {
                    if (di == 0 && dj == 0) continue;
                    if (!(v0 > at(j + dj, i + di))) {
                        strict = false;
                        break;
                    }
                }
            if (!strict) continue;
            const double dx = refine(at(j, i - 1), v0, at(j, i + 1));
            const double dy = refine(at(j - 1, i), v0, at(j + 1, i));
            QPeak pk;
            pk.position = cx(grid.xs[static_cast<std::size_t>(i)] + dx * grid.spec.spacing,
                             grid.ys[static_cast<std::size_t>(j)] + dy * grid.spec.spacing);
            pk.height = v0;
            peaks.push_back(pk);
        }
    std::sort(peaks.begin(), peaks.end(),
              [](const QPeak& a, const QPeak& b) { return a.height > b.height; });
    return peaks;
}

} // namespace qjlab
