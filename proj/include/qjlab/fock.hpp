#pragma once

#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "qjlab/common.hpp"

namespace qjlab {

/* Truncated cavity Fock space, optionally tensored with a two-level atom.
 * Composite basis ordering: flat index = atom * (n_max + 1) + n, with
 * atom = 0 the lower state and atom = 1 the upper state. */
struct HilbertConfig {
    int n_max = 1;
    bool include_atom = true;

    int cavity_dim() const { return n_max + 1; }
    int dim() const { return (include_atom ? 2 : 1) * cavity_dim(); }
    int index(int atom, int n) const { return atom * cavity_dim() + n; }
    void validate() const;
    bool operator==(const HilbertConfig&) const = default;
};

struct Triplet {
    int row = 0;
    int col = 0;
    cx value{};
};

/* Coordinate-triplet sparse matrix. Canonical form: entries sorted by
 * (row, col), duplicates merged, exact zeros dropped. All hot loops are
 * matrix-vector products. */
class SparseOperator {
public:
    SparseOperator() = default;
    explicit SparseOperator(int dim) : dim_(dim) {}
    static SparseOperator from_triplets(int dim, std::vector<Triplet> ts);
    static SparseOperator identity(int dim);
    /* kron(S, F): S indexes the slow factor, F the fast one, matching the
     * flat ordering slow * dim(F) + fast. */
    static SparseOperator kron(const SparseOperator& slow, const SparseOperator& fast);

    int dim() const { return dim_; }
    const std::vector<Triplet>& entries() const { return entries_; }
    std::size_t nnz() const { return entries_.size(); }

    void apply(const cx* in, cx* out) const;            /* out = A in   */
    void apply_accum(const cx* in, cx* out, cx s) const; /* out += s A in */
    std::vector<cx> apply(const std::vector<cx>& in) const;

    SparseOperator adjoint() const;
    SparseOperator transpose() const;
    SparseOperator conjugate() const;
    SparseOperator scaled(cx s) const;
    cx element(int row, int col) const;
    bool is_hermitian(double tol = 1e-12) const;
    double max_abs() const;
    /* max over rows of the absolute row sum; crude spectral bound */
    double gershgorin_bound() const;

    friend SparseOperator operator+(const SparseOperator& a, const SparseOperator& b);
    friend SparseOperator operator-(const SparseOperator& a, const SparseOperator& b);
    friend SparseOperator operator*(const SparseOperator& a, const SparseOperator& b);

    nlohmann::json to_json() const;
    static SparseOperator from_json(const nlohmann::json& j);

private:
    int dim_ = 0;
    std::vector<Triplet> entries_;
    void canonicalize();
};

struct PureStateVector {
    int dim = 0;
    std::vector<cx> amplitudes;

    static PureStateVector zero(int dim);
    double norm2() const;
    double norm() const;
    bool is_normalized(double tol = 1e-12) const;
    void normalize(); /* throws NumericalError when the norm has underflowed */

    nlohmann::json to_json() const;
    static PureStateVector from_json(const nlohmann::json& j);
};

struct DensityMatrix {
    int dim = 0;
    std::vector<cx> elements; /* row-major, dim x dim */

    static DensityMatrix zero(int dim);
    static DensityMatrix from_pure(const PureStateVector& psi);
    cx& at(int r, int c) { return elements[static_cast<std::size_t>(r) * dim + c]; }
    const cx& at(int r, int c) const { return elements[static_cast<std::size_t>(r) * dim + c]; }
    cx trace() const;
    bool is_hermitian(double tol = 1e-10) const;
    double min_eigenvalue() const;
    void hermitize();        /* replace by (rho + rho^dag)/2 */
    void normalize_trace();  /* throws NumericalError when |tr| underflows */

    nlohmann::json to_json() const;
    static DensityMatrix from_json(const nlohmann::json& j);
};

SparseOperator annihilation(const HilbertConfig& cfg);
SparseOperator creation(const HilbertConfig& cfg);
SparseOperator number_operator(const HilbertConfig& cfg);
SparseOperator sigma_minus(const HilbertConfig& cfg);
SparseOperator sigma_plus(const HilbertConfig& cfg);
SparseOperator atom_excitation(const HilbertConfig& cfg); /* sigma+ sigma- */
/* field quadrature (a e^{-i theta} + a^dag e^{i theta}) / 2 */
SparseOperator quadrature(const HilbertConfig& cfg, double theta);

struct CoherentState {
    PureStateVector state;
    double norm_deficiency = 0.0;
};

/* Coherent state |alpha> on a cavity-only config. Rejects truncations that
 * lose more than 1e-8 of the norm. */
CoherentState coherent_state(cx alpha, const HilbertConfig& cfg);

/* <psi|A|psi> / <psi|psi> */
cx expectation(const SparseOperator& op, const PureStateVector& psi);
/* tr(A rho) */
cx expectation(const SparseOperator& op, const DensityMatrix& rho);

} // namespace qjlab
