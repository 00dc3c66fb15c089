#include "sphsde/moment_flow.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numeric>
#include <sstream>

#include <json.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include "sphsde/error.hpp"

namespace sphsde {

namespace {

constexpr double kSpectralTolerance = 1e-10;
constexpr double kNullspaceThreshold = 1e-9;

void monomials_of_degree(int dim, int degree, MultiIndex& current, int var, std::vector<MultiIndex>& out) {
    if (var == dim - 1) {
        current[static_cast<std::size_t>(var)] = degree;
        out.push_back(current);
        return;
    }
    for (int e = degree; e >= 0; --e) {
        current[static_cast<std::size_t>(var)] = e;
        monomials_of_degree(dim, degree - e, current, var + 1, out);
    }
    current[static_cast<std::size_t>(var)] = 0;
}

int total_degree(const MultiIndex& a) { return std::accumulate(a.begin(), a.end(), 0); }

// (n-1)!! for even n, with (-1)!! = 1.
double odd_double_factorial(int n) {
    double r = 1.0;
    for (int i = n - 1; i > 1; i -= 2) {
        r *= i;
    }
    return r;
}

Eigen::MatrixXd nullspace(const Eigen::MatrixXd& a) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double cutoff = kNullspaceThreshold * std::max(1.0, sv.size() > 0 ? sv(0) : 0.0);
    Eigen::Index rank = 0;
    while (rank < sv.size() && sv(rank) > cutoff) {
        ++rank;
    }
    return svd.matrixV().rightCols(a.cols() - rank);
}

}  // namespace

MonomialBasis MonomialBasis::make(int ambient_dim, int degree) {
    if (ambient_dim < 1 || degree < 0) {
        throw DomainError("MonomialBasis: need ambient_dim >= 1 and degree >= 0");
    }
    MonomialBasis b;
    b.ambient_dim = ambient_dim;
    b.degree = degree;
    MultiIndex current(static_cast<std::size_t>(ambient_dim), 0);
    for (int d = 0; d <= degree; ++d) {
        monomials_of_degree(ambient_dim, d, current, 0, b.exponents);
    }
    return b;
}

std::size_t MonomialBasis::index_of(const MultiIndex& alpha) const {
    const auto it = std::find(exponents.begin(), exponents.end(), alpha);
    if (it == exponents.end()) {
        throw std::out_of_range("MonomialBasis::index_of: exponent not in basis");
    }
    return static_cast<std::size_t>(it - exponents.begin());
}

Eigen::VectorXd MonomialBasis::evaluate(const Eigen::VectorXd& x) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(exponents.size()));
    for (std::size_t i = 0; i < exponents.size(); ++i) {
        double v = 1.0;
        for (std::size_t j = 0; j < exponents[i].size(); ++j) {
            for (int e = 0; e < exponents[i][j]; ++e) {
                v *= x(static_cast<Eigen::Index>(j));
            }
        }
        out(static_cast<Eigen::Index>(i)) = v;
    }
    return out;
}

Eigen::MatrixXd ambient_field(const AntisymMatrix3& m, int ambient_dim) {
    const Matrix3 mm = m.matrix();
    if (ambient_dim == 3) {
        return mm;
    }
    if (ambient_dim == 9) {
        // (MZ)_{jk} = sum_l m_{jl} z_{lk}
        Eigen::MatrixXd l = Eigen::MatrixXd::Zero(9, 9);
        for (int j = 0; j < 3; ++j) {
            for (int k = 0; k < 3; ++k) {
                for (int i = 0; i < 3; ++i) {
                    l(3 * j + k, 3 * i + k) = mm(j, i);
                }
            }
        }
        return l;
    }
    throw DomainError("ambient_field: ambient dimension must be 3 or 9");
}

double evaluate(const Polynomial& p, const Eigen::VectorXd& x) {
    double sum = 0.0;
    for (const auto& [alpha, c] : p) {
        double v = c;
        for (std::size_t j = 0; j < alpha.size(); ++j) {
            v *= std::pow(x(static_cast<Eigen::Index>(j)), alpha[j]);
        }
        sum += v;
    }
    return sum;
}

Polynomial apply_field_to_monomial(const Eigen::MatrixXd& field, const MultiIndex& alpha) {
    if (static_cast<Eigen::Index>(alpha.size()) != field.rows()) {
        throw DomainError("apply_field_to_monomial: exponent length does not match the ambient dimension");
    }
    Polynomial out;
    const auto d = alpha.size();
    for (std::size_t j = 0; j < d; ++j) {
        if (alpha[j] == 0) {
            continue;
        }
        for (std::size_t l = 0; l < d; ++l) {
            const double c = field(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(l));
            if (c == 0.0) {
                continue;
            }
            MultiIndex beta = alpha;
            --beta[j];
            ++beta[l];
            out[beta] += c * alpha[j];
        }
    }
    std::erase_if(out, [](const auto& kv) { return kv.second == 0.0; });
    return out;
}

Polynomial apply_field_to_monomial(const AntisymMatrix3& m, const MultiIndex& alpha) {
    return apply_field_to_monomial(ambient_field(m, static_cast<int>(alpha.size())), alpha);
}

Polynomial apply_field(const Eigen::MatrixXd& field, const Polynomial& p) {
    Polynomial out;
    for (const auto& [alpha, c] : p) {
        for (const auto& [beta, d] : apply_field_to_monomial(field, alpha)) {
            out[beta] += c * d;
        }
    }
    std::erase_if(out, [](const auto& kv) { return kv.second == 0.0; });
    return out;
}

GeneratorMatrix generator_matrix(const AntisymMatrix3& drift, const std::vector<AntisymMatrix3>& noises, int degree,
                                 int ambient_dim) {
    if (degree < 1) {
        throw DomainError("generator_matrix: degree must be >= 1");
    }
    if (ambient_dim == 9 && degree > 2) {
        throw NotImplementedError("generator_matrix: SO(3) moments are limited to degree <= 2");
    }
    GeneratorMatrix g;
    g.basis = MonomialBasis::make(ambient_dim, degree);
    const auto n = static_cast<Eigen::Index>(g.basis.size());
    g.entries = Eigen::MatrixXd::Zero(n, n);

    const Eigen::MatrixXd f = ambient_field(drift, ambient_dim);
    std::vector<Eigen::MatrixXd> gs;
    for (const auto& b : noises) {
        gs.push_back(ambient_field(b, ambient_dim));
    }

    for (std::size_t i = 0; i < g.basis.size(); ++i) {
        const Polynomial fi{{g.basis.exponents[i], 1.0}};
        Polynomial a = apply_field(f, fi);
        for (const auto& gk : gs) {
            for (const auto& [beta, c] : apply_field(gk, apply_field(gk, fi))) {
                a[beta] += 0.5 * c;
            }
        }
        for (const auto& [beta, c] : a) {
            g.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g.basis.index_of(beta))) += c;
        }
    }
    return g;
}

Eigen::MatrixXd propagator(const GeneratorMatrix& g, double t) {
    if (t < 0.0) {
        throw DomainError("propagator: t must be >= 0");
    }
    const Eigen::MatrixXd gt = g.entries * t;
    return gt.exp();
}

Eigen::VectorXd evolve_moments(const GeneratorMatrix& g, const Eigen::VectorXd& initial, double t) {
    if (t < 0.0) {
        throw DomainError("evolve_moments: t must be >= 0");
    }
    if (initial.size() != static_cast<Eigen::Index>(g.basis.size())) {
        throw DomainError("evolve_moments: moment vector does not match the basis");
    }
    return propagator(g, t) * initial;
}

SpectrumReport check_spectrum(const GeneratorMatrix& g) {
    SpectrumReport report;
    Eigen::EigenSolver<Eigen::MatrixXd> es(g.entries, false);
    report.max_real_part = -HUGE_VAL;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        const std::complex<double> ev = es.eigenvalues()(i);
        report.eigenvalues.push_back(ev);
        report.max_real_part = std::max(report.max_real_part, ev.real());
        const bool zero_real = std::abs(ev.real()) < kSpectralTolerance;
        const bool zero_imag = std::abs(ev.imag()) < kSpectralTolerance;
        if (ev.real() >= kSpectralTolerance) {
            std::ostringstream msg;
            msg << "generator has an eigenvalue with positive real part: " << ev;
            throw SpectralAnomalyError(msg.str(), ev.real(), ev.imag());
        }
        if (zero_real && !zero_imag) {
            std::ostringstream msg;
            msg << "generator has a nonzero purely imaginary eigenvalue: " << ev;
            throw SpectralAnomalyError(msg.str(), ev.real(), ev.imag());
        }
        if (zero_real && zero_imag) {
            ++report.kernel_dimension;
        }
    }
    return report;
}

std::vector<double> propagator_norms(const GeneratorMatrix& g) {
    std::vector<double> norms;
    for (double t : {1.0, 10.0, 100.0, 1000.0}) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(propagator(g, t));
        norms.push_back(svd.singularValues()(0));
    }
    return norms;
}

Eigen::MatrixXd limiting_projector(const GeneratorMatrix& g) {
    const SpectrumReport spectrum = check_spectrum(g);
    const auto norms = propagator_norms(g);
    const auto [lo, hi] = std::minmax_element(norms.begin(), norms.end());
    if (*hi > 10.0 * *lo) {
        std::ostringstream msg;
        msg << "moment flow is not bounded: ||exp(Gt)|| ranges over [" << *lo << ", " << *hi << "]";
        throw SpectralAnomalyError(msg.str(), spectrum.max_real_part, 0.0);
    }

    const auto n = static_cast<Eigen::Index>(g.basis.size());
    const Eigen::MatrixXd right = nullspace(g.entries);
    const Eigen::MatrixXd left = nullspace(g.entries.transpose()).transpose();
    if (static_cast<std::size_t>(right.cols()) != spectrum.kernel_dimension || left.rows() != right.cols()) {
        std::ostringstream msg;
        msg << "kernel of the generator is not semisimple (eigenvalue count " << spectrum.kernel_dimension
            << ", nullspace dimension " << right.cols() << ")";
        throw SpectralAnomalyError(msg.str(), 0.0, 0.0);
    }
    if (right.cols() == 0) {
        return Eigen::MatrixXd::Zero(n, n);
    }
    // P = R (L R)^{-1} L projects onto ker G along range G.
    return right * (left * right).inverse() * left;
}

Eigen::VectorXd limiting_moments(const GeneratorMatrix& g, const Eigen::VectorXd& initial) {
    if (initial.size() != static_cast<Eigen::Index>(g.basis.size())) {
        throw DomainError("limiting_moments: moment vector does not match the basis");
    }
    return limiting_projector(g) * initial;
}

Eigen::VectorXd uniform_sphere_moments(const MonomialBasis& basis) {
    if (basis.ambient_dim != 3) {
        throw DomainError("uniform_sphere_moments: only S^2 (ambient dimension 3) is supported");
    }
    if (basis.degree > 4) {
        throw NotImplementedError("uniform_sphere_moments: degree > 4 is not supported");
    }
    // int x^a y^b z^c dA / 4pi = (a-1)!! (b-1)!! (c-1)!! / (a+b+c+1)!!  for a, b, c even.
    Eigen::VectorXd out(static_cast<Eigen::Index>(basis.size()));
    for (std::size_t i = 0; i < basis.size(); ++i) {
        const auto& a = basis.exponents[i];
        double v = 0.0;
        if (std::all_of(a.begin(), a.end(), [](int e) { return e % 2 == 0; })) {
            v = odd_double_factorial(a[0]) * odd_double_factorial(a[1]) * odd_double_factorial(a[2]) /
                odd_double_factorial(total_degree(a) + 2);
        }
        out(static_cast<Eigen::Index>(i)) = v;
    }
    return out;
}

nlohmann::json to_json(const GeneratorMatrix& g) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["ambient_dimension"] = g.basis.ambient_dim;
    j["degree"] = g.basis.degree;
    j["ordering"] = "graded; lexicographically descending within a degree";
    j["basis"] = g.basis.exponents;
    std::vector<double> entries;
    entries.reserve(static_cast<std::size_t>(g.entries.size()));
    for (Eigen::Index r = 0; r < g.entries.rows(); ++r) {
        for (Eigen::Index c = 0; c < g.entries.cols(); ++c) {
            entries.push_back(g.entries(r, c));
        }
    }
    j["entries"] = entries;
    return j;
}

GeneratorMatrix generator_from_json(const nlohmann::json& j) {
    GeneratorMatrix g;
    g.basis.ambient_dim = j.at("ambient_dimension").get<int>();
    g.basis.degree = j.at("degree").get<int>();
    g.basis.exponents = j.at("basis").get<std::vector<MultiIndex>>();
    const auto entries = j.at("entries").get<std::vector<double>>();
    const auto n = static_cast<Eigen::Index>(g.basis.size());
    if (static_cast<Eigen::Index>(entries.size()) != n * n) {
        throw DomainError("generator_from_json: entry count does not match the basis");
    }
    g.entries.resize(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        for (Eigen::Index c = 0; c < n; ++c) {
            g.entries(r, c) = entries[static_cast<std::size_t>(r * n + c)];
        }
    }
    return g;
}

}  // namespace sphsde
