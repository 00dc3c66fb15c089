#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sphsde/error.hpp"
#include "sphsde/harness.hpp"
#include "sphsde/integrators.hpp"
#include "sphsde/lie.hpp"
#include "sphsde/measures.hpp"
#include "sphsde/moment_flow.hpp"
#include "sphsde/version.hpp"

namespace py = pybind11;
using namespace sphsde;

namespace {

LlgParams llg_params(const Vector3& h, const Vector3& h_perp, double k) {
    LlgParams p{UnitVector3(h), h_perp, k};
    p.validate();
    return p;
}

GeodesicParams geodesic_params(double D, double k, double eps) {
    GeodesicParams p;
    p.D = D;
    p.k = k;
    p.eps = eps;
    p.validate();
    return p;
}

std::vector<AntisymMatrix3> hats(const std::vector<Vector3>& axes) {
    std::vector<AntisymMatrix3> out;
    for (const auto& a : axes) {
        out.push_back(hat(a));
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Structure-preserving integrators for SDEs on the sphere, SO(3) and TS^2";
    m.attr("__version__") = kVersion;

    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
    py::register_exception<NotImplementedError>(m, "NotImplementedError", PyExc_NotImplementedError);
    py::register_exception<AbsentOutputError>(m, "AbsentOutputError", PyExc_KeyError);

    // geometry / lie
    m.def("hat", [](const Vector3& v) { return hat(v).matrix(); }, py::arg("v"));
    m.def("unhat", [](const Matrix3& a) { return unhat(AntisymMatrix3::from_matrix(a)); }, py::arg("a"));
    m.def("rodrigues_exp", [](const Vector3& axis, double s) { return rodrigues_exp(hat(axis), s).matrix(); },
          py::arg("axis"), py::arg("s") = 1.0, "exp(s hat(axis)) as a 3x3 rotation matrix.");
    m.def("cayley", &cayley, py::arg("m"));
    m.def("hormander_rank", [](const Vector3& a, const Vector3& b) { return hormander_rank(hat(a), {hat(b)}); },
          py::arg("a"), py::arg("b"), "Rank of the Lie algebra generated by hat(a), hat(b).");
    m.def("orbit_sample", [](const Vector3& z, const Vector3& b, double theta) { return orbit_sample(z, hat(b), theta); },
          py::arg("z"), py::arg("b"), py::arg("theta"));

    // integrators
    m.def(
        "llg_step",
        [](const Vector3& z, const Vector3& h, const Vector3& h_perp, double k, double dw) {
            return llg_step(z, llg_params(h, h_perp, k), dw);
        },
        py::arg("z"), py::arg("h"), py::arg("h_perp"), py::arg("k"), py::arg("dw"));
    m.def(
        "llg_path",
        [](const Vector3& z0, const Vector3& h, const Vector3& h_perp, double k, const std::vector<double>& dw) {
            return llg_path(UnitVector3(z0), llg_params(h, h_perp, k), dw);
        },
        py::arg("z0"), py::arg("h"), py::arg("h_perp"), py::arg("k"), py::arg("increments"));
    m.def(
        "so3_step",
        [](const Matrix3& z, const Vector3& a, const Vector3& b, double k, double dw) {
            return so3_step(Rotation3(z), So3Params{hat(a), hat(b), k}, dw).matrix();
        },
        py::arg("z"), py::arg("a"), py::arg("b"), py::arg("k"), py::arg("dw"));
    m.def(
        "averaged_llg_ode",
        [](const Vector3& z0, const Vector3& h, const Vector3& h_perp, double t_end, double dt) {
            return averaged_llg_ode(UnitVector3(z0), llg_params(h, h_perp, 0.5), t_end, dt);
        },
        py::arg("z0"), py::arg("h"), py::arg("h_perp"), py::arg("t_end"), py::arg("dt"));

    py::class_<GeodesicState>(m, "GeodesicState")
        .def_readonly("n", &GeodesicState::n)
        .def_readonly("u", &GeodesicState::u)
        .def_readonly("u_prev", &GeodesicState::u_prev)
        .def_readonly("v", &GeodesicState::v)
        .def_readonly("multiplier", &GeodesicState::lambda);
    m.def(
        "geodesic_start",
        [](const Vector3& u0, const Vector3& v0, double D, double k, double eps) {
            return geodesic_start({u0, v0}, geodesic_params(D, k, eps));
        },
        py::arg("u0"), py::arg("v0"), py::arg("D") = 1.0, py::arg("k") = 0.001, py::arg("eps") = 0.25);
    m.def(
        "geodesic_step",
        [](const GeodesicState& s, double dw, double D, double k, double eps) {
            return geodesic_step(s, geodesic_params(D, k, eps), dw);
        },
        py::arg("state"), py::arg("dw"), py::arg("D") = 1.0, py::arg("k") = 0.001, py::arg("eps") = 0.25);
    m.def(
        "averaged_geodesic_ode",
        [](double v0_sq, const Vector3& u0, const Vector3& v0, double k, std::size_t n_steps) {
            std::vector<std::pair<Vector3, Vector3>> out;
            for (const auto& s : averaged_geodesic_ode(v0_sq, UnitVector3(u0), v0, k, n_steps)) {
                out.emplace_back(s.u, s.v);
            }
            return out;
        },
        py::arg("v0_sq"), py::arg("u0"), py::arg("v0"), py::arg("k"), py::arg("n_steps"));

    // moment flow
    py::class_<GeneratorMatrix>(m, "GeneratorMatrix")
        .def_property_readonly("exponents", [](const GeneratorMatrix& g) { return g.basis.exponents; })
        .def_readonly("entries", &GeneratorMatrix::entries)
        .def("propagator", [](const GeneratorMatrix& g, double t) { return propagator(g, t); }, py::arg("t"))
        .def(
            "evolve", [](const GeneratorMatrix& g, const Eigen::VectorXd& x, double t) {
                return evolve_moments(g, x, t);
            },
            py::arg("initial"), py::arg("t"))
        .def("limit", [](const GeneratorMatrix& g, const Eigen::VectorXd& x) { return limiting_moments(g, x); },
             py::arg("initial"))
        .def("propagator_norms", [](const GeneratorMatrix& g) { return propagator_norms(g); })
        .def("eigenvalues", [](const GeneratorMatrix& g) { return check_spectrum(g).eigenvalues; })
        .def("monomials", [](const GeneratorMatrix& g, const Eigen::VectorXd& x) { return g.basis.evaluate(x); },
             py::arg("x"), "Basis monomials evaluated at a point of the ambient space.")
        .def("uniform_sphere_moments", [](const GeneratorMatrix& g) { return uniform_sphere_moments(g.basis); });
    m.def(
        "generator_matrix",
        [](const Vector3& drift, const std::vector<Vector3>& noises, int degree, int ambient_dim) {
            return generator_matrix(hat(drift), hats(noises), degree, ambient_dim);
        },
        py::arg("drift"), py::arg("noises"), py::arg("degree"), py::arg("ambient_dim") = 3,
        "Generator of dZ = hat(drift) Z dt + sum hat(noise_j) Z o dW_j on polynomials of the given degree.");

    // measures
    m.def(
        "sphere_cell",
        [](const Vector3& x) {
            const SphereCell c = SpherePartition::standard().segment_of(x);
            return std::make_pair(c.i, c.j);
        },
        py::arg("x"));
    m.def("sphere_cell_areas", [] { return SpherePartition::standard().areas(); });
    m.def(
        "empirical_density_json",
        [](const std::vector<Vector3>& pts) {
            return empirical_density(pts, SpherePartition::standard()).to_json().dump();
        },
        py::arg("points"), "DensityGrid of the points on the standard partition, as a JSON string.");
    m.def(
        "e_max",
        [](const std::vector<Vector3>& pts) { return e_max(empirical_density(pts, SpherePartition::standard())); },
        py::arg("points"));
    m.def(
        "bundle_cell",
        [](const Vector3& p, const Vector3& xi) {
            const BundleCell c = bundle_segment_of({p, xi});
            return std::make_pair(c.i, c.j);
        },
        py::arg("p"), py::arg("xi"));

    // harness
    m.def("preset_names", &preset_names);
    m.def("preset_json", [](const std::string& name) { return preset(name).to_json().dump(); }, py::arg("name"));
    m.def(
        "run_ensemble_json",
        [](const std::string& config) {
            EnsembleConfig c = EnsembleConfig::from_json(nlohmann::json::parse(config));
            py::gil_scoped_release release;
            return run_ensemble(c).to_json().dump();
        },
        py::arg("config"), "Runs an ensemble from a JSON config and returns the result as JSON.");
}
