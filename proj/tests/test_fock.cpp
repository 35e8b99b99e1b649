#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include <nlohmann/json.hpp>

#include "qjlab/fock.hpp"

using namespace qjlab;

namespace {

/* dense matrix product oracle over triplet operators */
std::vector<cx> dense(const SparseOperator& op) {
    std::vector<cx> m(static_cast<std::size_t>(op.dim()) * op.dim(), cx(0.0, 0.0));
    for (const Triplet& t : op.entries())
        m[static_cast<std::size_t>(t.row) * op.dim() + t.col] = t.value;
    return m;
}

std::vector<cx> dense_mul(const std::vector<cx>& a, const std::vector<cx>& b, int d) {
    std::vector<cx> c(static_cast<std::size_t>(d) * d, cx(0.0, 0.0));
    for (int i = 0; i < d; ++i)
        for (int k = 0; k < d; ++k) {
            const cx aik = a[static_cast<std::size_t>(i) * d + k];
            if (aik == cx(0.0, 0.0)) continue;
            for (int j = 0; j < d; ++j)
                c[static_cast<std::size_t>(i) * d + j] += aik * b[static_cast<std::size_t>(k) * d + j];
        }
    return c;
}

} // namespace

TEST_CASE("commutator of a with a^dag is the identity below the truncation boundary") {
    HilbertConfig cfg{.n_max = 12, .include_atom = false};
    const int d = cfg.dim();
    const auto a = dense(annihilation(cfg));
    const auto ad = dense(creation(cfg));
    const auto comm_lhs = dense_mul(a, ad, d);
    const auto comm_rhs = dense_mul(ad, a, d);
    for (int i = 0; i < d - 1; ++i)
        for (int j = 0; j < d - 1; ++j) {
            const cx c = comm_lhs[static_cast<std::size_t>(i) * d + j] -
                         comm_rhs[static_cast<std::size_t>(i) * d + j];
            const cx want = i == j ? cx(1.0, 0.0) : cx(0.0, 0.0);
            CHECK(std::abs(c - want) < 1e-14);
        }
    /* the corner element carries the truncation artifact -n_max */
    const cx corner = comm_lhs.back() - comm_rhs.back();
    CHECK(std::abs(corner - cx(-cfg.n_max, 0.0)) < 1e-12);
}

TEST_CASE("number operator spectrum is 0..n_max on each atom sector") {
    HilbertConfig cfg{.n_max = 7, .include_atom = true};
    const SparseOperator n = number_operator(cfg);
    for (int s = 0; s < 2; ++s)
        for (int k = 0; k <= cfg.n_max; ++k)
            CHECK(std::abs(n.element(cfg.index(s, k), cfg.index(s, k)) - cx(k, 0.0)) < 1e-15);
    CHECK(n.is_hermitian());
}

TEST_CASE("coherent state amplitudes, moments, truncation deficiency") {
    HilbertConfig cfg{.n_max = 120, .include_atom = false};
    const cx alpha(1.95, -5.45);
    const auto [psi, deficiency] = coherent_state(alpha, cfg);

    CHECK(deficiency < 1e-10);

    /* independent tail oracle: Poisson mass above n_max via log-gamma */
    const double lam = std::norm(alpha);
    double tail = 0.0;
    for (int n = cfg.n_max + 1; n <= cfg.n_max + 400; ++n)
        tail += std::exp(-lam + n * std::log(lam) - std::lgamma(n + 1.0));
    CHECK(deficiency == doctest::Approx(tail).epsilon(1e-3));

    CHECK(std::abs(psi.norm() - 1.0) < 1e-9);
    const cx abar = expectation(annihilation(cfg), psi);
    CHECK(std::abs(abar - alpha) < 1e-7);
    const cx nbar = expectation(number_operator(cfg), psi);
    CHECK(std::abs(nbar - cx(lam, 0.0)) < 1e-6);

    /* quadrature means of a coherent state */
    const cx x0 = expectation(quadrature(cfg, 0.0), psi);
    const cx xq = expectation(quadrature(cfg, 0.5 * pi), psi);
    CHECK(x0.real() == doctest::Approx(alpha.real()).epsilon(1e-9));
    CHECK(xq.real() == doctest::Approx(alpha.imag()).epsilon(1e-9));
}

TEST_CASE("coherent state rejects a truncation that clips the distribution") {
    HilbertConfig cfg{.n_max = 10, .include_atom = false};
    CHECK_THROWS_AS((void)coherent_state(cx(6.0, 0.0), cfg), NumericalError);
}

TEST_CASE("composite operators act on the documented index layout") {
    HilbertConfig cfg{.n_max = 3, .include_atom = true};
    const SparseOperator sm = sigma_minus(cfg);
    /* sigma_minus maps (upper, n) to (lower, n) */
    for (int n = 0; n <= cfg.n_max; ++n) {
        CHECK(std::abs(sm.element(cfg.index(0, n), cfg.index(1, n)) - cx(1.0, 0.0)) < 1e-15);
    }
    CHECK(sm.nnz() == 4);
    const SparseOperator proj = atom_excitation(cfg);
    CHECK(std::abs(proj.element(cfg.index(1, 2), cfg.index(1, 2)) - cx(1.0, 0.0)) < 1e-15);
    CHECK(proj.element(cfg.index(0, 2), cfg.index(0, 2)) == cx(0.0, 0.0));

    /* annihilation leaves the atom factor alone */
    const SparseOperator a = annihilation(cfg);
    CHECK(std::abs(a.element(cfg.index(1, 1), cfg.index(1, 2)) - cx(std::sqrt(2.0), 0.0)) < 1e-15);
    CHECK(a.element(cfg.index(0, 1), cfg.index(1, 2)) == cx(0.0, 0.0));
}

TEST_CASE("sparse algebra matches dense oracles") {
    HilbertConfig cfg{.n_max = 6, .include_atom = true};
    const SparseOperator A = annihilation(cfg);
    const SparseOperator B = sigma_plus(cfg);
    const int d = cfg.dim();

    const auto ab = dense_mul(dense(A), dense(B), d);
    const auto AB = dense(A * B);
    for (std::size_t i = 0; i < ab.size(); ++i) CHECK(std::abs(ab[i] - AB[i]) < 1e-14);

    /* (AB)^dag = B^dag A^dag */
    const SparseOperator lhs = (A * B).adjoint();
    const SparseOperator rhs = B.adjoint() * A.adjoint();
    CHECK((lhs - rhs).max_abs() < 1e-14);

    /* matvec against dense */
    PureStateVector v = PureStateVector::zero(d);
    for (int i = 0; i < d; ++i) v.amplitudes[static_cast<std::size_t>(i)] = cx(0.1 * i, -0.05 * i * i);
    const auto out = A.apply(v.amplitudes);
    const auto ad2 = dense(A);
    for (int i = 0; i < d; ++i) {
        cx want{};
        for (int j = 0; j < d; ++j) want += ad2[static_cast<std::size_t>(i) * d + j] * v.amplitudes[static_cast<std::size_t>(j)];
        CHECK(std::abs(out[static_cast<std::size_t>(i)] - want) < 1e-13);
    }
}

TEST_CASE("triplet canonicalization merges duplicates and drops zeros") {
    auto op = SparseOperator::from_triplets(
        3, {{1, 2, cx(0.5, 0.0)}, {1, 2, cx(0.25, 0.0)}, {0, 0, cx(1.0, 0.0)}, {2, 2, cx(0.0, 0.0)}});
    CHECK(op.nnz() == 2);
    CHECK(std::abs(op.element(1, 2) - cx(0.75, 0.0)) < 1e-15);
    CHECK(op.element(2, 2) == cx(0.0, 0.0));
    /* out-of-range triplets are rejected */
    CHECK_THROWS_AS(SparseOperator::from_triplets(2, {{0, 2, cx(1.0, 0.0)}}), std::invalid_argument);
}

TEST_CASE("operator and state serialization round-trips exactly") {
    HilbertConfig cfg{.n_max = 5, .include_atom = true};
    const SparseOperator a = annihilation(cfg);
    const SparseOperator a2 = SparseOperator::from_json(a.to_json());
    REQUIRE(a2.nnz() == a.nnz());
    for (std::size_t i = 0; i < a.entries().size(); ++i) {
        CHECK(a.entries()[i].row == a2.entries()[i].row);
        CHECK(a.entries()[i].col == a2.entries()[i].col);
        CHECK(a.entries()[i].value == a2.entries()[i].value);
    }
    /* documented shape */
    const nlohmann::json j = a.to_json();
    CHECK(j.contains("dimension"));
    CHECK(j.at("entries").at(0).size() == 4);

    HilbertConfig ccfg{.n_max = 40, .include_atom = false};
    const PureStateVector psi = coherent_state(cx(0.7, -1.1), ccfg).state;
    const PureStateVector psi2 = PureStateVector::from_json(psi.to_json());
    REQUIRE(psi2.dim == psi.dim);
    for (int i = 0; i < psi.dim; ++i)
        CHECK(psi.amplitudes[static_cast<std::size_t>(i)] == psi2.amplitudes[static_cast<std::size_t>(i)]);
}

TEST_CASE("density matrix basics") {
    HilbertConfig cfg{.n_max = 30, .include_atom = false};
    const PureStateVector psi = coherent_state(cx(1.0, 0.5), cfg).state;
    DensityMatrix rho = DensityMatrix::from_pure(psi);
    CHECK(std::abs(rho.trace() - cx(1.0, 0.0)) < 1e-12);
    CHECK(rho.is_hermitian());
    CHECK(rho.min_eigenvalue() > -1e-12);

    const cx n_pure = expectation(number_operator(cfg), psi);
    const cx n_mixed = expectation(number_operator(cfg), rho);
    CHECK(std::abs(n_pure - n_mixed) < 1e-10);

    DensityMatrix r2 = DensityMatrix::from_json(rho.to_json());
    CHECK(std::abs(r2.at(3, 4) - rho.at(3, 4)) == 0.0);
}

TEST_CASE("normalize guards against underflow") {
    PureStateVector s = PureStateVector::zero(4);
    CHECK_THROWS_AS(s.normalize(), NumericalError);
    s.amplitudes[1] = cx(3.0, 4.0);
    s.normalize();
    CHECK(s.is_normalized());
}
