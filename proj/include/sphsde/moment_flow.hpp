#pragma once

#include <cstddef>
#include <complex>
#include <map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sphsde/geometry.hpp"

namespace sphsde {

using MultiIndex = std::vector<int>;
/// Sparse polynomial on R^d: exponent -> coefficient.
using Polynomial = std::map<MultiIndex, double>;

/// All monomials of total degree <= degree in `ambient_dim` variables, ordered
/// by degree, then lexicographically descending within a degree
/// (1, z1, z2, z3, z1^2, z1 z2, ...).
///
/// ambient_dim is 3 for S^2 and 9 for SO(3); in the SO(3) case variable
/// 3*j + l is the matrix entry z_{jl}.
struct MonomialBasis {
    int ambient_dim = 3;
    int degree = 1;
    std::vector<MultiIndex> exponents;

    static MonomialBasis make(int ambient_dim, int degree);

    std::size_t size() const { return exponents.size(); }
    /// Throws std::out_of_range for an exponent not in the basis.
    std::size_t index_of(const MultiIndex& alpha) const;
    /// (f_1(x), ..., f_n(x)).
    Eigen::VectorXd evaluate(const Eigen::VectorXd& x) const;
};

struct GeneratorMatrix {
    MonomialBasis basis;
    /// Row i holds the coefficients of A f_i:  A f_i = sum_j entries(i, j) f_j.
    Eigen::MatrixXd entries;
};

/// Matrix of the linear field x -> Lx induced by M on the ambient space:
/// M itself for d = 3, and Z -> MZ (row-major flattening) for d = 9.
Eigen::MatrixXd ambient_field(const AntisymMatrix3& m, int ambient_dim);

double evaluate(const Polynomial& p, const Eigen::VectorXd& x);

/// (X z^alpha)(z) = sum_{j,l} L_{jl} alpha_j z^{alpha - e_j + e_l} for the linear
/// field X z = L z. Exact; the total degree never increases.
Polynomial apply_field_to_monomial(const Eigen::MatrixXd& field, const MultiIndex& alpha);
Polynomial apply_field_to_monomial(const AntisymMatrix3& m, const MultiIndex& alpha);
Polynomial apply_field(const Eigen::MatrixXd& field, const Polynomial& p);

/// Matrix of  A f = F f + 1/2 sum_k G_k (G_k f)  on C_degree. For ambient_dim 9
/// only degree <= 2 is supported (NotImplementedError otherwise).
GeneratorMatrix generator_matrix(const AntisymMatrix3& drift, const std::vector<AntisymMatrix3>& noises, int degree,
                                 int ambient_dim = 3);

/// exp(G t), scaling-and-squaring Pade.
Eigen::MatrixXd propagator(const GeneratorMatrix& g, double t);

/// Moments at time t: entry i is E f_i(u(t)). Throws DomainError for t < 0.
Eigen::VectorXd evolve_moments(const GeneratorMatrix& g, const Eigen::VectorXd& initial, double t);

/// Classification of the generator spectrum used by limiting_moments.
struct SpectrumReport {
    std::vector<std::complex<double>> eigenvalues;
    std::size_t kernel_dimension = 0;
    double max_real_part = 0.0;
};

/// Throws SpectralAnomalyError on an eigenvalue with positive real part or a
/// nonzero purely imaginary eigenvalue (thresholds 1e-10).
SpectrumReport check_spectrum(const GeneratorMatrix& g);

/// ||exp(G t)||_2 at t in {1, 10, 100, 1000}.
std::vector<double> propagator_norms(const GeneratorMatrix& g);

/// Projection onto ker G along the stable subspace, i.e. lim exp(G t).
Eigen::MatrixXd limiting_projector(const GeneratorMatrix& g);

/// t -> infinity limit of evolve_moments. Throws SpectralAnomalyError if the
/// flow is not convergent.
Eigen::VectorXd limiting_moments(const GeneratorMatrix& g, const Eigen::VectorXd& initial);

/// Moments of the normalized surface measure on S^2, degree <= 4.
Eigen::VectorXd uniform_sphere_moments(const MonomialBasis& basis);

nlohmann::json to_json(const GeneratorMatrix& g);
GeneratorMatrix generator_from_json(const nlohmann::json& j);

}  // namespace sphsde
