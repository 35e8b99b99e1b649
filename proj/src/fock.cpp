#include "qjlab/fock.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace qjlab {

void HilbertConfig::validate() const {
    if (n_max < 1) throw std::invalid_argument("HilbertConfig: n_max must be >= 1");
}

void SparseOperator::canonicalize() {
    std::sort(entries_.begin(), entries_.end(), [](const Triplet& a, const Triplet& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    std::vector<Triplet> out;
    out.reserve(entries_.size());
    for (const Triplet& t : entries_) {
        if (!out.empty() && out.back().row == t.row && out.back().col == t.col)
            out.back().value += t.value;
        else
            out.push_back(t);
    }
    std::erase_if(out, [](const Triplet& t) { return t.value == cx(0.0, 0.0); });
    entries_ = std::move(out);
}

SparseOperator SparseOperator::from_triplets(int dim, std::vector<Triplet> ts) {
    if (dim <= 0) throw std::invalid_argument("SparseOperator: dim must be positive");
    for (const Triplet& t : ts)
        if (t.row < 0 || t.row >= dim || t.col < 0 || t.col >= dim)
            throw std::invalid_argument("SparseOperator: triplet index out of range");
    SparseOperator op(dim);
    op.entries_ = std::move(ts);
    op.canonicalize();
    return op;
}

SparseOperator SparseOperator::identity(int dim) {
    std::vector<Triplet> ts;
    ts.reserve(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i) ts.push_back({i, i, cx(1.0, 0.0)});
    return from_triplets(dim, std::move(ts));
}

SparseOperator SparseOperator::kron(const SparseOperator& slow, const SparseOperator& fast) {
    const int df = fast.dim_;
    std::vector<Triplet> ts;
    ts.reserve(slow.entries_.size() * fast.entries_.size());
    for (const Triplet& s : slow.entries_)
        for (const Triplet& f : fast.entries_)
            ts.push_back({s.row * df + f.row, s.col * df + f.col, s.value * f.value});
    return from_triplets(slow.dim_ * df, std::move(ts));
}

void SparseOperator::apply(const cx* in, cx* out) const {
    std::fill(out, out + dim_, cx(0.0, 0.0));
    for (const Triplet& t : entries_) out[t.row] += t.value * in[t.col];
}

void SparseOperator::apply_accum(const cx* in, cx* out, cx s) const {
    for (const Triplet& t : entries_) out[t.row] += s * t.value * in[t.col];
}

std::vector<cx> SparseOperator::apply(const std::vector<cx>& in) const {
    if (static_cast<int>(in.size()) != dim_)
        throw std::invalid_argument("SparseOperator::apply: dimension mismatch");
    std::vector<cx> out(in.size());
    apply(in.data(), out.data());
    return out;
}

SparseOperator SparseOperator::adjoint() const {
    std::vector<Triplet> ts;
    ts.reserve(entries_.size());
    for (const Triplet& t : entries_) ts.push_back({t.col, t.row, std::conj(t.value)});
    return from_triplets(dim_, std::move(ts));
}

SparseOperator SparseOperator::transpose() const {
    std::vector<Triplet> ts;
    ts.reserve(entries_.size());
    for (const Triplet& t : entries_) ts.push_back({t.col, t.row, t.value});
    return from_triplets(dim_, std::move(ts));
}

SparseOperator SparseOperator::conjugate() const {
    std::vector<Triplet> ts;
    ts.reserve(entries_.size());
    for (const Triplet& t : entries_) ts.push_back({t.row, t.col, std::conj(t.value)});
    return from_triplets(dim_, std::move(ts));
}

SparseOperator SparseOperator::scaled(cx s) const {
    std::vector<Triplet> ts = entries_;
    for (Triplet& t : ts) t.value *= s;
    return from_triplets(dim_, std::move(ts));
}

cx SparseOperator::element(int row, int col) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), std::pair{row, col},
                               [](const Triplet& t, const std::pair<int, int>& rc) {
                                   return t.row != rc.first ? t.row < rc.first : t.col < rc.second;
                               });
    if (it != entries_.end() && it->row == row && it->col == col) return it->value;
    return {};
}

bool SparseOperator::is_hermitian(double tol) const {
    const SparseOperator diff = *this - adjoint();
    return diff.max_abs() <= tol;
}

double SparseOperator::max_abs() const {
    double m = 0.0;
    for (const Triplet& t : entries_) m = std::max(m, std::abs(t.value));
    return m;
}

double SparseOperator::gershgorin_bound() const {
    std::vector<double> row_sum(static_cast<std::size_t>(dim_), 0.0);
    for (const Triplet& t : entries_) row_sum[static_cast<std::size_t>(t.row)] += std::abs(t.value);
    double m = 0.0;
    for (double r : row_sum) m = std::max(m, r);
    return m;
}

SparseOperator operator+(const SparseOperator& a, const SparseOperator& b) {
    if (a.dim_ != b.dim_) throw std::invalid_argument("SparseOperator: dimension mismatch");
    std::vector<Triplet> ts = a.entries_;
    ts.insert(ts.end(), b.entries_.begin(), b.entries_.end());
    return SparseOperator::from_triplets(a.dim_, std::move(ts));
}

SparseOperator operator-(const SparseOperator& a, const SparseOperator& b) {
    return a + b.scaled(cx(-1.0, 0.0));
}

SparseOperator operator*(const SparseOperator& a, const SparseOperator& b) {
    if (a.dim_ != b.dim_) throw std::invalid_argument("SparseOperator: dimension mismatch");
    /* column-bucketed accumulation; dims here are small enough for this */
    std::vector<std::vector<Triplet>> by_row(static_cast<std::size_t>(b.dim_));
    for (const Triplet& t : b.entries_) by_row[static_cast<std::size_t>(t.row)].push_back(t);
    std::vector<Triplet> ts;
    for (const Triplet& ta : a.entries_)
        for (const Triplet& tb : by_row[static_cast<std::size_t>(ta.col)])
            ts.push_back({ta.row, tb.col, ta.value * tb.value});
    return SparseOperator::from_triplets(a.dim_, std::move(ts));
}

nlohmann::json SparseOperator::to_json() const {
    nlohmann::json entries = nlohmann::json::array();
    for (const Triplet& t : entries_)
        entries.push_back({t.row, t.col, t.value.real(), t.value.imag()});
    return {{"dimension", dim_}, {"entries", std::move(entries)}};
}

SparseOperator SparseOperator::from_json(const nlohmann::json& j) {
    const int dim = j.at("dimension").get<int>();
    std::vector<Triplet> ts;
    for (const auto& e : j.at("entries"))
        ts.push_back({e.at(0).get<int>(), e.at(1).get<int>(),
                      cx(e.at(2).get<double>(), e.at(3).get<double>())});
    return from_triplets(dim, std::move(ts));
}

PureStateVector PureStateVector::zero(int dim) {
    PureStateVector s;
    s.dim = dim;
    s.amplitudes.assign(static_cast<std::size_t>(dim), cx(0.0, 0.0));
    return s;
}

double PureStateVector::norm2() const {
    double n = 0.0;
    for (const cx& a : amplitudes) n += std::norm(a);
    return n;
}

double PureStateVector::norm() const { return std::sqrt(norm2()); }

bool PureStateVector::is_normalized(double tol) const { return std::abs(norm() - 1.0) <= tol; }

void PureStateVector::normalize() {
    const double n2 = norm2();
    if (!(n2 > 1e-280))
        throw NumericalError("PureStateVector::normalize: norm underflow");
    const double inv = 1.0 / std::sqrt(n2);
    for (cx& a : amplitudes) a *= inv;
}

nlohmann::json PureStateVector::to_json() const {
    nlohmann::json amps = nlohmann::json::array();
    for (const cx& a : amplitudes) amps.push_back({a.real(), a.imag()});
    return {{"dimension", dim}, {"amplitudes", std::move(amps)}};
}

PureStateVector PureStateVector::from_json(const nlohmann::json& j) {
    PureStateVector s;
    s.dim = j.at("dimension").get<int>();
    for (const auto& e : j.at("amplitudes"))
        s.amplitudes.emplace_back(e.at(0).get<double>(), e.at(1).get<double>());
    if (static_cast<int>(s.amplitudes.size()) != s.dim)
        throw std::invalid_argument("PureStateVector::from_json: amplitude count mismatch");
    return s;
}

DensityMatrix DensityMatrix::zero(int dim) {
    DensityMatrix r;
    r.dim = dim;
    r.elements.assign(static_cast<std::size_t>(dim) * dim, cx(0.0, 0.0));
    return r;
}

DensityMatrix DensityMatrix::from_pure(const PureStateVector& psi) {
    DensityMatrix r = zero(psi.dim);
    const double n2 = psi.norm2();
    if (!(n2 > 0.0)) throw NumericalError("DensityMatrix::from_pure: zero state");
    const double inv = 1.0 / n2;
    for (int i = 0; i < psi.dim; ++i)
        for (int j = 0; j < psi.dim; ++j)
            r.at(i, j) = psi.amplitudes[static_cast<std::size_t>(i)] *
                         std::conj(psi.amplitudes[static_cast<std::size_t>(j)]) * inv;
    return r;
}

cx DensityMatrix::trace() const {
    cx t{};
    for (int i = 0; i < dim; ++i) t += at(i, i);
    return t;
}

bool DensityMatrix::is_hermitian(double tol) const {
    for (int i = 0; i < dim; ++i)
        for (int j = i; j < dim; ++j)
            if (std::abs(at(i, j) - std::conj(at(j, i))) > tol) return false;
    return true;
}

double DensityMatrix::min_eigenvalue() const {
    Eigen::MatrixXcd m(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) m(i, j) = at(i, j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

void DensityMatrix::hermitize() {
    for (int i = 0; i < dim; ++i)
        for (int j = i; j < dim; ++j) {
            const cx v = 0.5 * (at(i, j) + std::conj(at(j, i)));
            at(i, j) = v;
            at(j, i) = std::conj(v);
        }
}

void DensityMatrix::normalize_trace() {
    const cx t = trace();
    if (!(std::abs(t) > 1e-280)) throw NumericalError("DensityMatrix: trace underflow");
    const cx inv = 1.0 / t;
    for (cx& e : elements) e *= inv;
}

nlohmann::json DensityMatrix::to_json() const {
    nlohmann::json entries = nlohmann::json::array();
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) {
            const cx v = at(i, j);
            if (v != cx(0.0, 0.0)) entries.push_back({i, j, v.real(), v.imag()});
        }
    return {{"dimension", dim}, {"entries", std::move(entries)}};
}

DensityMatrix DensityMatrix::from_json(const nlohmann::json& j) {
    DensityMatrix r = zero(j.at("dimension").get<int>());
    for (const auto& e : j.at("entries"))
        r.at(e.at(0).get<int>(), e.at(1).get<int>()) =
            cx(e.at(2).get<double>(), e.at(3).get<double>());
    return r;
}

namespace {

SparseOperator cavity_op_with_atom(const HilbertConfig& cfg, const SparseOperator& cav) {
    if (!cfg.include_atom) return cav;
    return SparseOperator::kron(SparseOperator::identity(2), cav);
}

SparseOperator annihilation_cavity(const HilbertConfig& cfg) {
    std::vector<Triplet> ts;
    for (int n = 1; n <= cfg.n_max; ++n)
        ts.push_back({n - 1, n, cx(std::sqrt(static_cast<double>(n)), 0.0)});
    return SparseOperator::from_triplets(cfg.cavity_dim(), std::move(ts));
}

SparseOperator atom_lowering() {
    /* |lower><upper| in the atom factor: row 0, col 1 */
    return SparseOperator::from_triplets(2, {{0, 1, cx(1.0, 0.0)}});
}

} // namespace

SparseOperator annihilation(const HilbertConfig& cfg) {
    cfg.validate();
    return cavity_op_with_atom(cfg, annihilation_cavity(cfg));
}

SparseOperator creation(const HilbertConfig& cfg) { return annihilation(cfg).adjoint(); }

SparseOperator number_operator(const HilbertConfig& cfg) {
    cfg.validate();
    std::vector<Triplet> ts;
    for (int n = 1; n <= cfg.n_max; ++n) ts.push_back({n, n, cx(static_cast<double>(n), 0.0)});
    return cavity_op_with_atom(cfg, SparseOperator::from_triplets(cfg.cavity_dim(), std::move(ts)));
}

SparseOperator sigma_minus(const HilbertConfig& cfg) {
    cfg.validate();
    if (!cfg.include_atom) throw std::invalid_argument("sigma_minus: config has no atom");
    return SparseOperator::kron(atom_lowering(), SparseOperator::identity(cfg.cavity_dim()));
}

SparseOperator sigma_plus(const HilbertConfig& cfg) { return sigma_minus(cfg).adjoint(); }

SparseOperator atom_excitation(const HilbertConfig& cfg) {
    cfg.validate();
    if (!cfg.include_atom) throw std::invalid_argument("atom_excitation: config has no atom");
    std::vector<Triplet> ts{{1, 1, cx(1.0, 0.0)}};
    return SparseOperator::kron(SparseOperator::from_triplets(2, std::move(ts)),
                                SparseOperator::identity(cfg.cavity_dim()));
}

SparseOperator quadrature(const HilbertConfig& cfg, double theta) {
    const SparseOperator a = annihilation(cfg);
    const cx ph = std::polar(1.0, -theta);
    return a.scaled(0.5 * ph) + a.adjoint().scaled(0.5 * std::conj(ph));
}

CoherentState coherent_state(cx alpha, const HilbertConfig& cfg) {
    cfg.validate();
    if (cfg.include_atom)
        throw std::invalid_argument("coherent_state: expects a cavity-only config");
    PureStateVector psi = PureStateVector::zero(cfg.cavity_dim());
    cx c = cx(std::exp(-0.5 * std::norm(alpha)), 0.0);
    double captured = 0.0;
    for (int n = 0; n <= cfg.n_max; ++n) {
        psi.amplitudes[static_cast<std::size_t>(n)] = c;
        captured += std::norm(c);
        c *= alpha / std::sqrt(static_cast<double>(n + 1));
    }
    const double deficiency = std::max(0.0, 1.0 - captured);
    if (deficiency > 1e-8)
        throw NumericalError("coherent_state: truncation loses more than 1e-8 of the norm");
    return {std::move(psi), deficiency};
}

cx expectation(const SparseOperator& op, const PureStateVector& psi) {
    if (op.dim() != psi.dim) throw std::invalid_argument("expectation: dimension mismatch");
    const double n2 = psi.norm2();
    if (!(n2 > 0.0)) throw NumericalError("expectation: zero state");
    cx acc{};
    for (const Triplet& t : op.entries())
        acc += std::conj(psi.amplitudes[static_cast<std::size_t>(t.row)]) * t.value *
               psi.amplitudes[static_cast<std::size_t>(t.col)];
    return acc / n2;
}

cx expectation(const SparseOperator& op, const DensityMatrix& rho) {
    if (op.dim() != rho.dim) throw std::invalid_argument("expectation: dimension mismatch");
    cx acc{};
    for (const Triplet& t : op.entries()) acc += t.value * rho.at(t.col, t.row);
    return acc;
}

} // namespace qjlab
