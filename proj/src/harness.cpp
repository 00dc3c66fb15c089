#include "sphsde/harness.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include "sphsde/error.hpp"
#include "sphsde/lie.hpp"
#include "sphsde/moment_flow.hpp"
#include "sphsde/rng.hpp"
#include "sphsde/stats.hpp"
#include "sphsde/version.hpp"

namespace sphsde {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Names
// ---------------------------------------------------------------------------

namespace {

template <class E>
struct NameTable {
    E value;
    const char* name;
};

constexpr NameTable<SystemKind> kSystems[] = {{SystemKind::llg, "llg"},
                                              {SystemKind::so3, "so3"},
                                              {SystemKind::geodesic, "geodesic"},
                                              {SystemKind::commuting_exact, "commuting_exact"}};
constexpr NameTable<OutputKind> kOutputs[] = {{OutputKind::mean_trajectory, "mean_trajectory"},
                                              {OutputKind::density, "density"},
                                              {OutputKind::bundle_density, "bundle_density"},
                                              {OutputKind::e_max_series, "e_max_series"},
                                              {OutputKind::moments, "moments"},
                                              {OutputKind::time_average, "time_average"},
                                              {OutputKind::final_states, "final_states"}};
constexpr NameTable<NoiseLaw> kNoise[] = {{NoiseLaw::gaussian, "gaussian"}, {NoiseLaw::two_point, "two_point"}};
constexpr NameTable<InitialLaw> kInitial[] = {
    {InitialLaw::fixed, "fixed"}, {InitialLaw::uniform, "uniform"}, {InitialLaw::mu_r, "mu_r"}};

template <class E, std::size_t N>
std::string name_of(const NameTable<E> (&table)[N], E v) {
    for (const auto& e : table) {
        if (e.value == v) {
            return e.name;
        }
    }
    throw std::logic_error("unnamed enum value");
}

template <class E, std::size_t N>
E parse_name(const NameTable<E> (&table)[N], const std::string& s, const char* what) {
    for (const auto& e : table) {
        if (s == e.name) {
            return e.value;
        }
    }
    throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}

json vec_json(const Vector3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vector3 vec_from(const json& j, const char* key) {
    if (!j.is_array() || j.size() != 3) {
        throw ConfigError(std::string(key) + ": expected an array of 3 numbers");
    }
    return Vector3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

std::string to_string(SystemKind s) { return name_of(kSystems, s); }
std::string to_string(OutputKind o) { return name_of(kOutputs, o); }
SystemKind parse_system(const std::string& s) { return parse_name(kSystems, s, "system"); }
OutputKind parse_output(const std::string& s) { return parse_name(kOutputs, s, "output"); }

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

bool EnsembleConfig::wants(OutputKind o) const { return std::find(outputs.begin(), outputs.end(), o) != outputs.end(); }

void EnsembleConfig::set_record_interval(double dt) {
    if (!(dt > 0.0) || !(k > 0.0)) {
        throw ConfigError("record interval and k must be > 0");
    }
    const auto m = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(dt / k)));
    record_times.clear();
    for (std::size_t n = 0; n <= n_steps; n += m) {
        record_times.push_back(n);
    }
    if (record_times.back() != n_steps) {
        record_times.push_back(n_steps);
    }
}

void EnsembleConfig::finalize() {
    if (n_paths < 1) {
        throw ConfigError("n_paths must be >= 1");
    }
    if (!(k > 0.0) || !std::isfinite(k)) {
        throw ConfigError("k must be > 0");
    }
    if (antithetic && n_paths % 2 != 0) {
        throw ConfigError("antithetic pairing needs an even n_paths");
    }
    std::sort(record_times.begin(), record_times.end());
    record_times.erase(std::unique(record_times.begin(), record_times.end()), record_times.end());
    if (!record_times.empty() && record_times.back() > n_steps) {
        throw ConfigError("record_times must lie in [0, n_steps]");
    }
    if (outputs.empty()) {
        throw ConfigError("no outputs requested");
    }
    if (wants(OutputKind::time_average) && (average_window < 1 || average_window > n_steps + 1)) {
        throw ConfigError("average_window must lie in [1, n_steps + 1]");
    }
    if (wants(OutputKind::bundle_density) && system != SystemKind::geodesic) {
        throw ConfigError("bundle_density is only defined for the geodesic system");
    }
    if (system == SystemKind::geodesic ? initial == InitialLaw::uniform : initial == InitialLaw::mu_r) {
        throw ConfigError("initial law does not match the system");
    }
    switch (system) {
        case SystemKind::llg:
            llg.k = k;
            llg.validate();
            break;
        case SystemKind::so3:
        case SystemKind::commuting_exact:
            so3.k = k;
            if (system == SystemKind::commuting_exact) {
                const double scale = std::max(1.0, rho(so3.a) * rho(so3.b));
                if (rho(commutator(so3.a, so3.b)) > 1e-10 * scale) {
                    throw ConfigError("commuting_exact requires [A, B] = 0");
                }
            }
            break;
        case SystemKind::geodesic:
            geodesic.k = k;
            geodesic.validate();
            if (!geodesic_step_admissible(k, v0.norm())) {
                throw ConfigError("step size violates k (|v0| + 1) <= 1/8");
            }
            break;
    }
    if (system != SystemKind::geodesic || initial == InitialLaw::fixed) {
        if (std::abs(z0.norm() - 1.0) > tol::kNormalizeBand) {
            throw ConfigError("initial point must have unit norm");
        }
    }
    if (system == SystemKind::geodesic && initial == InitialLaw::fixed && std::abs(z0.dot(v0)) > tol::kTangent) {
        throw ConfigError("initial velocity must be tangent to the sphere at u0");
    }
}

json EnsembleConfig::to_json() const {
    json j;
    j["schema_version"] = 1;
    j["system"] = to_string(system);
    j["k"] = k;
    j["n_paths"] = n_paths;
    j["n_steps"] = n_steps;
    j["seed"] = seed;
    j["record_times"] = record_times;
    std::vector<std::string> outs;
    for (auto o : outputs) {
        outs.push_back(to_string(o));
    }
    j["outputs"] = outs;
    j["average_window"] = average_window;
    j["noise"] = name_of(kNoise, noise);
    j["initial"] = name_of(kInitial, initial);
    j["antithetic"] = antithetic;
    switch (system) {
        case SystemKind::llg:
            j["llg"] = {{"h", vec_json(llg.h.vec())}, {"h_perp", vec_json(llg.h_perp)}, {"z0", vec_json(z0)}};
            break;
        case SystemKind::so3:
        case SystemKind::commuting_exact:
            j["so3"] = {{"a", vec_json(so3.a.axis())}, {"b", vec_json(so3.b.axis())}, {"z0", vec_json(z0)}};
            break;
        case SystemKind::geodesic:
            j["geodesic"] = {{"D", geodesic.D}, {"eps", geodesic.eps}, {"u0", vec_json(z0)}, {"v0", vec_json(v0)}};
            break;
    }
    return j;
}

EnsembleConfig EnsembleConfig::from_json(const json& j) {
    static const std::set<std::string> known{"schema_version", "system",  "k",          "n_paths",    "n_steps",
                                             "t_end",          "seed",    "record_times", "record_dt", "outputs",
                                             "average_window", "noise",   "initial",    "antithetic", "workers",
                                             "llg",            "so3",     "geodesic"};
    if (!j.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    try {
        if (j.value("schema_version", 0) != 1) {
            throw ConfigError("config schema_version must be 1");
        }
        EnsembleConfig c;
        c.system = parse_system(j.at("system").get<std::string>());
        c.k = j.at("k").get<double>();
        c.n_paths = j.at("n_paths").get<std::size_t>();
        if (j.contains("n_steps")) {
            c.n_steps = j["n_steps"].get<std::size_t>();
        } else {
            c.set_horizon(j.at("t_end").get<double>());
        }
        c.seed = j.value("seed", std::uint64_t{0});
        if (j.contains("record_times")) {
            c.record_times = j["record_times"].get<std::vector<std::size_t>>();
        } else if (j.contains("record_dt")) {
            c.set_record_interval(j["record_dt"].get<double>());
        } else {
            c.record_times = {0, c.n_steps};
        }
        if (j.contains("outputs")) {
            c.outputs.clear();
            for (const auto& o : j["outputs"]) {
                c.outputs.push_back(parse_output(o.get<std::string>()));
            }
        }
        c.average_window = j.value("average_window", std::size_t{100});
        c.noise = parse_name(kNoise, j.value("noise", std::string("gaussian")), "noise law");
        c.initial = parse_name(kInitial, j.value("initial", std::string("fixed")), "initial law");
        c.antithetic = j.value("antithetic", false);
        c.workers = j.value("workers", 0u);
        switch (c.system) {
            case SystemKind::llg: {
                const json& p = j.at("llg");
                c.llg.h = UnitVector3(vec_from(p.at("h"), "h"));
                c.llg.h_perp = p.contains("h_perp") ? vec_from(p["h_perp"], "h_perp") : Vector3::Zero();
                c.z0 = vec_from(p.at("z0"), "z0");
                break;
            }
            case SystemKind::so3:
            case SystemKind::commuting_exact: {
                const json& p = j.at("so3");
                c.so3.a = hat(vec_from(p.at("a"), "a"));
                c.so3.b = hat(vec_from(p.at("b"), "b"));
                c.z0 = vec_from(p.at("z0"), "z0");
                break;
            }
            case SystemKind::geodesic: {
                const json& p = j.at("geodesic");
                c.geodesic.D = p.value("D", 1.0);
                c.geodesic.eps = p.value("eps", 0.25);
                c.z0 = vec_from(p.at("u0"), "u0");
                c.v0 = vec_from(p.at("v0"), "v0");
                break;
            }
        }
        c.finalize();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    } catch (const DomainError& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
}

std::string EnsembleConfig::hash() const {
    const std::string text = to_json().dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string>& geodesic_d_values() {
    static const std::vector<std::string> d{"0.01", "0.1", "1", "10", "100"};
    return d;
}

EnsembleConfig llg_preset(bool noncommuting, std::size_t n_paths, double t_end) {
    EnsembleConfig c;
    c.system = SystemKind::llg;
    c.llg.h = UnitVector3(Vector3(0, 0, 1));
    c.llg.h_perp = noncommuting ? Vector3(0, 1, 0) : Vector3::Zero();
    c.z0 = Vector3(0, 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0));
    c.k = 0.01;
    c.n_paths = n_paths;
    c.seed = noncommuting ? 2 : 1;
    c.set_horizon(t_end);
    c.set_record_interval(0.5);
    c.outputs = {OutputKind::mean_trajectory, OutputKind::density, OutputKind::e_max_series, OutputKind::moments};
    if (noncommuting) {
        c.outputs.push_back(OutputKind::time_average);
    }
    return c;
}

EnsembleConfig geodesic_preset(double d, std::size_t n_paths) {
    EnsembleConfig c;
    c.system = SystemKind::geodesic;
    c.geodesic.D = d;
    c.z0 = Vector3(0, 1, 0);
    c.v0 = Vector3(1, 0, 0);
    c.k = 0.001;
    c.n_paths = n_paths;
    c.seed = 3;
    c.set_horizon(60.0);
    c.set_record_interval(1.0);
    c.outputs = {OutputKind::mean_trajectory, OutputKind::density,  OutputKind::bundle_density,
                 OutputKind::e_max_series,    OutputKind::moments, OutputKind::time_average};
    return c;
}

}  // namespace

std::vector<std::string> preset_names() {
    std::vector<std::string> names{"paper-fig-commuting", "paper-fig-noncommuting", "desk-commuting",
                                   "desk-noncommuting"};
    for (const auto& d : geodesic_d_values()) {
        names.push_back("paper-geodesic-D" + d);
    }
    names.push_back("desk-geodesic-D1");
    return names;
}

EnsembleConfig preset(const std::string& name) {
    EnsembleConfig c;
    if (name == "paper-fig-commuting") {
        c = llg_preset(false, 20000, 20.0);
    } else if (name == "paper-fig-noncommuting") {
        c = llg_preset(true, 20000, 60.0);
    } else if (name == "desk-commuting") {
        c = llg_preset(false, 2000, 20.0);
    } else if (name == "desk-noncommuting") {
        c = llg_preset(true, 5000, 60.0);
    } else if (name == "desk-geodesic-D1") {
        c = geodesic_preset(1.0, 2000);
    } else if (name.rfind("paper-geodesic-D", 0) == 0) {
        const std::string d = name.substr(16);
        const auto& ds = geodesic_d_values();
        if (std::find(ds.begin(), ds.end(), d) == ds.end()) {
            throw ConfigError("unknown preset '" + name + "'");
        }
        c = geodesic_preset(std::stod(d), 20000);
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    c.finalize();
    return c;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

void Diagnostics::merge(const Diagnostics& o) {
    max_norm_defect = std::max(max_norm_defect, o.max_norm_defect);
    max_energy_drift = std::max(max_energy_drift, o.max_energy_drift);
    max_energy_drift_after_first = std::max(max_energy_drift_after_first, o.max_energy_drift_after_first);
    max_tangency_defect = std::max(max_tangency_defect, o.max_tangency_defect);
    max_orthogonality_defect = std::max(max_orthogonality_defect, o.max_orthogonality_defect);
    max_residual = std::max(max_residual, o.max_residual);
    max_sweeps = std::max(max_sweeps, o.max_sweeps);
}

json Diagnostics::to_json() const {
    return {{"max_norm_defect", max_norm_defect},
            {"max_energy_drift", max_energy_drift},
            {"max_energy_drift_after_first", max_energy_drift_after_first},
            {"max_tangency_defect", max_tangency_defect},
            {"max_orthogonality_defect", max_orthogonality_defect},
            {"max_residual", max_residual},
            {"max_sweeps", max_sweeps}};
}

Diagnostics Diagnostics::from_json(const json& j) {
    Diagnostics d;
    d.max_norm_defect = j.at("max_norm_defect").get<double>();
    d.max_energy_drift = j.at("max_energy_drift").get<double>();
    d.max_energy_drift_after_first = j.at("max_energy_drift_after_first").get<double>();
    d.max_tangency_defect = j.at("max_tangency_defect").get<double>();
    d.max_orthogonality_defect = j.at("max_orthogonality_defect").get<double>();
    d.max_residual = j.at("max_residual").get<double>();
    d.max_sweeps = j.at("max_sweeps").get<std::size_t>();
    return d;
}

// ---------------------------------------------------------------------------
// Ensemble execution
// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kChunk = 64;
constexpr std::size_t kMomentCount = 10;  // degree <= 2 in 3 variables
constexpr std::size_t kBundleCells = 48;
constexpr std::size_t kFaces = 6;

// Degree <= 2 monomials of x in MonomialBasis order.
std::array<double, kMomentCount> moment_values(const Vector3& x) {
    return {1.0,         x.x(),       x.y(),       x.z(),       x.x() * x.x(),
            x.x() * x.y(), x.x() * x.z(), x.y() * x.y(), x.y() * x.z(), x.z() * x.z()};
}

std::size_t bundle_index(const Vector3& u, const Vector3& v) {
    // The cell depends only on the point and the direction of the tangent part.
    const Vector3 p = u.normalized();
    Vector3 xi = v - v.dot(p) * p;
    xi.normalize();
    const BundleCell c = bundle_segment_of({p, xi});
    return static_cast<std::size_t>(c.i * 8 + c.j);
}

struct RecordPartial {
    std::array<ExactSum, 3> mean;
    std::array<ExactSum, 3> mean_v;
    std::array<ExactSum, kMomentCount> moments;
    std::vector<std::uint64_t> sphere;
    std::vector<std::uint64_t> bundle;
    std::vector<std::uint64_t> faces;
};

struct Partial {
    std::vector<RecordPartial> records;
    std::vector<std::vector<std::uint64_t>> avg_sphere;  // per level in the window
    std::vector<std::vector<std::uint64_t>> avg_bundle;
    std::vector<std::pair<std::size_t, std::array<Vector3, 2>>> finals;
    Diagnostics diag;

    void merge(const Partial& o) {
        for (std::size_t r = 0; r < records.size(); ++r) {
            auto& a = records[r];
            const auto& b = o.records[r];
            for (std::size_t d = 0; d < 3; ++d) {
                a.mean[d].merge(b.mean[d]);
                a.mean_v[d].merge(b.mean_v[d]);
            }
            for (std::size_t m = 0; m < kMomentCount; ++m) {
                a.moments[m].merge(b.moments[m]);
            }
            add_counts(a.sphere, b.sphere);
            add_counts(a.bundle, b.bundle);
            add_counts(a.faces, b.faces);
        }
        for (std::size_t l = 0; l < avg_sphere.size(); ++l) {
            add_counts(avg_sphere[l], o.avg_sphere[l]);
        }
        for (std::size_t l = 0; l < avg_bundle.size(); ++l) {
            add_counts(avg_bundle[l], o.avg_bundle[l]);
        }
        finals.insert(finals.end(), o.finals.begin(), o.finals.end());
        diag.merge(o.diag);
    }

    static void add_counts(std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] += b[i];
        }
    }
};

class Runner {
  public:
    explicit Runner(const EnsembleConfig& c)
        : c_(c),
          partition_(SpherePartition::standard()),
          want_mean_(c.wants(OutputKind::mean_trajectory)),
          want_moments_(c.wants(OutputKind::moments)),
          want_sphere_(c.wants(OutputKind::density) || c.wants(OutputKind::e_max_series)),
          want_bundle_(c.wants(OutputKind::bundle_density)),
          want_avg_(c.wants(OutputKind::time_average)),
          want_final_(c.wants(OutputKind::final_states)),
          sqrt_k_(std::sqrt(c.k)) {
        record_at_.assign(c.n_steps + 1, -1);
        for (std::size_t r = 0; r < c.record_times.size(); ++r) {
            record_at_[c.record_times[r]] = static_cast<int>(r);
        }
        avg_first_ = want_avg_ ? c.n_steps + 1 - c.average_window : c.n_steps + 1;
    }

    Partial make_partial() const {
        Partial p;
        p.records.resize(c_.record_times.size());
        for (auto& r : p.records) {
            if (want_sphere_) {
                r.sphere.assign(SpherePartition::kCells, 0);
            }
            if (want_bundle_) {
                r.bundle.assign(kBundleCells, 0);
                r.faces.assign(kFaces, 0);
            }
        }
        if (want_avg_) {
            p.avg_sphere.assign(c_.average_window, std::vector<std::uint64_t>(SpherePartition::kCells, 0));
            if (c_.system == SystemKind::geodesic) {
                p.avg_bundle.assign(c_.average_window, std::vector<std::uint64_t>(kBundleCells, 0));
            }
        }
        return p;
    }

    // Runs path `path` into `acc`. `step` tracks progress for error reports.
    void run_path(std::size_t path, Partial& acc, std::size_t& step) const {
        const std::uint64_t stream = c_.antithetic ? path / 2 : path;
        const double sign = (c_.antithetic && (path & 1u)) ? -1.0 : 1.0;
        const CounterRng noise(c_.seed, stream);
        CounterRng init(c_.seed ^ EnsembleConfig::kInitialStreamTag, stream);
        const auto dw = [&](std::size_t n) {
            if (c_.noise == NoiseLaw::two_point) {
                return sign * ((noise.bits_at(n) >> 63) != 0 ? sqrt_k_ : -sqrt_k_);
            }
            return sign * sqrt_k_ * noise.normal_at(n);
        };
        Diagnostics& d = acc.diag;
        const auto solver = [&d](const SolveStats& st) {
            d.max_residual = std::max(d.max_residual, st.residual);
            d.max_sweeps = std::max(d.max_sweeps, st.sweeps);
        };
        step = 0;

        switch (c_.system) {
            case SystemKind::llg: {
                Vector3 z = c_.initial == InitialLaw::uniform ? sample_uniform_sphere(init) : c_.z0;
                const Vector3 h = c_.llg.h.vec();
                const double e0 = z.dot(h);
                observe(acc, 0, z, nullptr);
                for (std::size_t n = 0; n < c_.n_steps; ++n) {
                    step = n + 1;
                    SolveStats st;
                    z = llg_step(z, c_.llg, dw(n), &st);
                    solver(st);
                    d.max_norm_defect = std::max(d.max_norm_defect, std::abs(z.norm() - 1.0));
                    d.max_energy_drift = std::max(d.max_energy_drift, std::abs(z.dot(h) - e0));
                    observe(acc, n + 1, z, nullptr);
                }
                keep_final(acc, path, z, Vector3::Zero());
                break;
            }
            case SystemKind::so3: {
                const Vector3 x0 = c_.initial == InitialLaw::uniform ? sample_uniform_sphere(init) : c_.z0;
                Rotation3 r;
                observe(acc, 0, x0, nullptr);
                for (std::size_t n = 0; n < c_.n_steps; ++n) {
                    step = n + 1;
                    r = so3_step(r, c_.so3, dw(n));
                    d.max_orthogonality_defect = std::max(d.max_orthogonality_defect, r.orthogonality_defect());
                    const Vector3 x = r * x0;
                    d.max_norm_defect = std::max(d.max_norm_defect, std::abs(x.norm() - 1.0));
                    observe(acc, n + 1, x, nullptr);
                }
                keep_final(acc, path, r * x0, Vector3::Zero());
                break;
            }
            case SystemKind::commuting_exact: {
                Vector3 z = c_.initial == InitialLaw::uniform ? sample_uniform_sphere(init) : c_.z0;
                observe(acc, 0, z, nullptr);
                for (std::size_t n = 0; n < c_.n_steps; ++n) {
                    step = n + 1;
                    z = exact_commuting_step(z, c_.so3.a, c_.so3.b, c_.k, dw(n));
                    d.max_norm_defect = std::max(d.max_norm_defect, std::abs(z.norm() - 1.0));
                    observe(acc, n + 1, z, nullptr);
                }
                keep_final(acc, path, z, Vector3::Zero());
                break;
            }
            case SystemKind::geodesic: {
                TangentState s0{c_.z0, c_.v0};
                if (c_.initial == InitialLaw::mu_r) {
                    s0 = sample_mu_r(c_.v0.norm(), init);
                }
                GeodesicState s = geodesic_start(s0, c_.geodesic);
                const double e0 = kinetic_energy(s.v);
                double e1 = e0;
                observe(acc, 0, s.u, &s.v);
                for (std::size_t n = 0; n < c_.n_steps; ++n) {
                    step = n + 1;
                    SolveStats st;
                    s = geodesic_step(s, c_.geodesic, dw(n), &st);
                    solver(st);
                    const double e = kinetic_energy(s.v);
                    if (n == 0) {
                        e1 = e;
                    }
                    d.max_norm_defect = std::max(d.max_norm_defect, std::abs(s.u.norm() - 1.0));
                    d.max_energy_drift = std::max(d.max_energy_drift, std::abs(e - e0));
                    d.max_energy_drift_after_first = std::max(d.max_energy_drift_after_first, std::abs(e - e1));
                    d.max_tangency_defect = std::max(d.max_tangency_defect, std::abs(s.u.dot(s.v)));
                    observe(acc, n + 1, s.u, &s.v);
                }
                keep_final(acc, path, s.u, s.v);
                break;
            }
        }
    }

    EnsembleResult finish(Partial total) const {
        EnsembleResult res;
        res.config = c_;
        res.version = kVersion;
        res.diagnostics = total.diag;
        const double n = static_cast<double>(c_.n_paths);
        res.envelope_first_moment = 4.0 / std::sqrt(n);
        res.envelope_with_bias = 5.0 / std::sqrt(n);
        for (std::size_t r = 0; r < c_.record_times.size(); ++r) {
            const RecordPartial& p = total.records[r];
            RecordAggregate a;
            a.step = c_.record_times[r];
            a.t = static_cast<double>(a.step) * c_.k;
            if (want_mean_) {
                a.mean = Vector3(p.mean[0].value() / n, p.mean[1].value() / n, p.mean[2].value() / n);
                if (c_.system == SystemKind::geodesic) {
                    a.mean_v = Vector3(p.mean_v[0].value() / n, p.mean_v[1].value() / n, p.mean_v[2].value() / n);
                }
            }
            if (want_moments_) {
                std::vector<double> m(kMomentCount);
                for (std::size_t i = 0; i < kMomentCount; ++i) {
                    m[i] = p.moments[i].value() / n;
                }
                a.moments = m;
            }
            if (want_sphere_) {
                DensityGrid g = make_density_grid(partition_.id(), "per_steradian", SpherePartition::kRows,
                                                  SpherePartition::kCols, p.sphere, partition_.areas(), a.t);
                if (c_.wants(OutputKind::e_max_series)) {
                    a.e_max = e_max(g);
                }
                if (c_.wants(OutputKind::density)) {
                    a.density = std::move(g);
                }
            }
            if (want_bundle_) {
                a.bundle = make_density_grid("bundle-6x8", "per_unit_volume", 6, 8, p.bundle,
                                             std::vector<double>(kBundleCells, 1.0 / 48.0), a.t);
                a.faces = make_density_grid("sphere-6", "per_steradian", 6, 1, p.faces,
                                            std::vector<double>(kFaces, 4.0 * std::numbers::pi / 6.0), a.t);
            }
            res.records.push_back(std::move(a));
        }
        if (want_avg_) {
            const double t = static_cast<double>(c_.n_steps) * c_.k;
            std::vector<DensityGrid> levels;
            for (std::size_t l = 0; l < c_.average_window; ++l) {
                const double tl = static_cast<double>(avg_first_ + l) * c_.k;
                levels.push_back(make_density_grid(partition_.id(), "per_steradian", SpherePartition::kRows,
                                                   SpherePartition::kCols, total.avg_sphere[l],
                                                   partition_.areas(), tl));
            }
            TimeAverage avg;
            avg.window = c_.average_window;
            avg.density = time_averaged_density(levels);
            avg.density.t = t;
            avg.lag1_autocorrelation = count_lag1_autocorrelation(levels);
            if (!total.avg_bundle.empty()) {
                std::vector<std::uint64_t> counts(kBundleCells, 0);
                for (const auto& lv : total.avg_bundle) {
                    Partial::add_counts(counts, lv);
                }
                avg.bundle = make_density_grid("bundle-6x8", "per_unit_volume", 6, 8, std::move(counts),
                                               std::vector<double>(kBundleCells, 1.0 / 48.0), t,
                                               c_.average_window);
            }
            res.time_average = std::move(avg);
        }
        if (want_final_) {
            std::sort(total.finals.begin(), total.finals.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
            for (const auto& f : total.finals) {
                res.final_points.push_back(f.second[0]);
                if (c_.system == SystemKind::geodesic) {
                    res.final_velocities.push_back(f.second[1]);
                }
            }
        }
        return res;
    }

  private:
    void keep_final(Partial& acc, std::size_t path, const Vector3& x, const Vector3& v) const {
        if (want_final_) {
            acc.finals.push_back({path, {x, v}});
        }
    }

    void observe(Partial& acc, std::size_t n, const Vector3& x, const Vector3* v) const {
        const int r = record_at_[n];
        if (r >= 0) {
            RecordPartial& p = acc.records[static_cast<std::size_t>(r)];
            if (want_mean_) {
                for (int i = 0; i < 3; ++i) {
                    p.mean[static_cast<std::size_t>(i)].add(x[i]);
                    if (v != nullptr) {
                        p.mean_v[static_cast<std::size_t>(i)].add((*v)[i]);
                    }
                }
            }
            if (want_moments_) {
                const auto m = moment_values(x);
                for (std::size_t i = 0; i < kMomentCount; ++i) {
                    p.moments[i].add(m[i]);
                }
            }
            if (want_sphere_) {
                const SphereCell c = partition_.segment_of(x);
                ++p.sphere[static_cast<std::size_t>(SpherePartition::flat(c.i, c.j))];
            }
            if (want_bundle_) {
                ++p.bundle[bundle_index(x, *v)];
                ++p.faces[static_cast<std::size_t>(sphere_face_of(x))];
            }
        }
        if (n >= avg_first_) {
            const std::size_t l = n - avg_first_;
            const SphereCell c = partition_.segment_of(x);
            ++acc.avg_sphere[l][static_cast<std::size_t>(SpherePartition::flat(c.i, c.j))];
            if (v != nullptr) {
                ++acc.avg_bundle[l][bundle_index(x, *v)];
            }
        }
    }

    const EnsembleConfig& c_;
    const SpherePartition& partition_;
    bool want_mean_;
    bool want_moments_;
    bool want_sphere_;
    bool want_bundle_;
    bool want_avg_;
    bool want_final_;
    double sqrt_k_;
    std::vector<int> record_at_;
    std::size_t avg_first_;
};

unsigned worker_count(const EnsembleConfig& c) {
    if (const char* env = std::getenv("SPHSDE_WORKERS")) {
        const long w = std::strtol(env, nullptr, 10);
        if (w > 0) {
            return static_cast<unsigned>(w);
        }
    }
    if (c.workers > 0) {
        return c.workers;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace

EnsembleResult run_ensemble(EnsembleConfig config) {
    config.finalize();
    const auto start = std::chrono::steady_clock::now();
    const Runner runner(config);
    const std::size_t n_chunks = (config.n_paths + kChunk - 1) / kChunk;
    const unsigned workers =
        static_cast<unsigned>(std::min<std::size_t>(worker_count(config), std::max<std::size_t>(n_chunks, 1)));

    std::atomic<std::size_t> next_chunk{0};
    // Lowest failing path; paths above it are skipped, paths below always run,
    // so the reported failure does not depend on scheduling.
    std::atomic<std::size_t> first_failure{SIZE_MAX};
    std::mutex failure_mutex;
    std::string failure_what;
    std::size_t failure_step = 0;

    std::vector<Partial> partials;
    partials.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        partials.push_back(runner.make_partial());
    }

    const auto work = [&](unsigned w) {
        for (;;) {
            const std::size_t chunk = next_chunk.fetch_add(1);
            if (chunk >= n_chunks) {
                return;
            }
            const std::size_t end = std::min(config.n_paths, (chunk + 1) * kChunk);
            for (std::size_t p = chunk * kChunk; p < end; ++p) {
                if (p > first_failure.load()) {
                    return;
                }
                std::size_t step = 0;
                try {
                    runner.run_path(p, partials[w], step);
                } catch (const std::exception& e) {
                    std::lock_guard lock(failure_mutex);
                    if (p < first_failure.load()) {
                        first_failure.store(p);
                        failure_what = e.what();
                        failure_step = step;
                    }
                    return;
                }
            }
        }
    };

    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::thread> threads;
        for (unsigned w = 0; w < workers; ++w) {
            threads.emplace_back(work, w);
        }
        for (auto& t : threads) {
            t.join();
        }
    }
    if (first_failure.load() != SIZE_MAX) {
        std::ostringstream msg;
        msg << "path " << first_failure.load() << " failed at step " << failure_step << ": " << failure_what;
        throw PathError(msg.str(), first_failure.load(), failure_step);
    }

    Partial total = std::move(partials.front());
    for (std::size_t w = 1; w < partials.size(); ++w) {
        total.merge(partials[w]);
    }
    EnsembleResult res = runner.finish(std::move(total));
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

json EnsembleResult::to_json() const {
    json j;
    j["schema_version"] = 1;
    j["library_version"] = version;
    j["config_hash"] = config.hash();
    j["config"] = config.to_json();
    j["envelope_first_moment"] = envelope_first_moment;
    j["envelope_with_bias"] = envelope_with_bias;
    j["diagnostics"] = diagnostics.to_json();
    json recs = json::array();
    for (const auto& r : records) {
        json jr{{"step", r.step}, {"t", r.t}};
        if (r.mean) {
            jr["mean"] = vec_json(*r.mean);
        }
        if (r.mean_v) {
            jr["mean_v"] = vec_json(*r.mean_v);
        }
        if (r.moments) {
            jr["moments"] = *r.moments;
        }
        if (r.density) {
            jr["density"] = r.density->to_json();
        }
        if (r.bundle) {
            jr["bundle_density"] = r.bundle->to_json();
        }
        if (r.faces) {
            jr["face_density"] = r.faces->to_json();
        }
        if (r.e_max) {
            jr["e_max"] = *r.e_max;
        }
        recs.push_back(std::move(jr));
    }
    j["records"] = std::move(recs);
    if (time_average) {
        json ta{{"window", time_average->window},
                {"lag1_autocorrelation", time_average->lag1_autocorrelation},
                {"density", time_average->density.to_json()}};
        if (time_average->bundle) {
            ta["bundle_density"] = time_average->bundle->to_json();
        }
        j["time_average"] = std::move(ta);
    }
    if (config.wants(OutputKind::final_states)) {
        json pts = json::array();
        for (const auto& x : final_points) {
            pts.push_back(vec_json(x));
        }
        j["final_points"] = std::move(pts);
        if (!final_velocities.empty()) {
            json vs = json::array();
            for (const auto& v : final_velocities) {
                vs.push_back(vec_json(v));
            }
            j["final_velocities"] = std::move(vs);
        }
    }
    return j;
}

EnsembleResult EnsembleResult::from_json(const json& j) {
    try {
        EnsembleResult r;
        r.config = EnsembleConfig::from_json(j.at("config"));
        r.version = j.at("library_version").get<std::string>();
        r.envelope_first_moment = j.at("envelope_first_moment").get<double>();
        r.envelope_with_bias = j.at("envelope_with_bias").get<double>();
        r.diagnostics = Diagnostics::from_json(j.at("diagnostics"));
        for (const auto& jr : j.at("records")) {
            RecordAggregate a;
            a.step = jr.at("step").get<std::size_t>();
            a.t = jr.at("t").get<double>();
            if (jr.contains("mean")) {
                a.mean = vec_from(jr["mean"], "mean");
            }
            if (jr.contains("mean_v")) {
                a.mean_v = vec_from(jr["mean_v"], "mean_v");
            }
            if (jr.contains("moments")) {
                a.moments = jr["moments"].get<std::vector<double>>();
            }
            if (jr.contains("density")) {
                a.density = DensityGrid::from_json(jr["density"]);
            }
            if (jr.contains("bundle_density")) {
                a.bundle = DensityGrid::from_json(jr["bundle_density"]);
            }
            if (jr.contains("face_density")) {
                a.faces = DensityGrid::from_json(jr["face_density"]);
            }
            if (jr.contains("e_max")) {
                a.e_max = jr["e_max"].get<double>();
            }
            r.records.push_back(std::move(a));
        }
        if (j.contains("time_average")) {
            const json& ta = j["time_average"];
            TimeAverage avg;
            avg.window = ta.at("window").get<std::size_t>();
            avg.lag1_autocorrelation = ta.at("lag1_autocorrelation").get<double>();
            avg.density = DensityGrid::from_json(ta.at("density"));
            if (ta.contains("bundle_density")) {
                avg.bundle = DensityGrid::from_json(ta["bundle_density"]);
            }
            r.time_average = std::move(avg);
        }
        if (j.contains("final_points")) {
            for (const auto& x : j["final_points"]) {
                r.final_points.push_back(vec_from(x, "final_points"));
            }
        }
        if (j.contains("final_velocities")) {
            for (const auto& v : j["final_velocities"]) {
                r.final_velocities.push_back(vec_from(v, "final_velocities"));
            }
        }
        return r;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed result file: ") + e.what());
    }
}

std::vector<TrajectoryPoint> mean_trajectory(const EnsembleResult& result) {
    if (!result.config.wants(OutputKind::mean_trajectory)) {
        throw AbsentOutputError("mean_trajectory was not recorded");
    }
    std::vector<TrajectoryPoint> out;
    for (const auto& r : result.records) {
        out.push_back({r.t, *r.mean});
    }
    return out;
}

namespace {

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    out << text;
    out.close();
    if (!out) {
        throw std::runtime_error("write to '" + path + "' failed");
    }
}

std::string sibling(const std::string& path, const std::string& suffix) {
    const auto dot = path.rfind('.');
    const auto slash = path.find_last_of('/');
    const std::string stem = (dot != std::string::npos && (slash == std::string::npos || dot > slash))
                                 ? path.substr(0, dot)
                                 : path;
    return stem + "." + suffix + ".csv";
}

}  // namespace

void emit(const EnsembleResult& result, EmitFormat format, const std::string& path) {
    if (format == EmitFormat::json) {
        write_file(path, result.to_json().dump(1) + "\n");
        return;
    }
    std::ostringstream out;
    out.precision(17);
    if (result.config.wants(OutputKind::mean_trajectory)) {
        out << "t,mean_x,mean_y,mean_z\n";
        for (const auto& p : mean_trajectory(result)) {
            out << p.t << ',' << p.mean.x() << ',' << p.mean.y() << ',' << p.mean.z() << '\n';
        }
    } else {
        out << "t\n";
        for (const auto& r : result.records) {
            out << r.t << '\n';
        }
    }
    write_file(path, out.str());
    for (const auto& r : result.records) {
        if (r.density) {
            write_file(sibling(path, "density." + std::to_string(r.step)), r.density->to_csv());
        }
        if (r.bundle) {
            write_file(sibling(path, "bundle." + std::to_string(r.step)), r.bundle->to_csv());
        }
    }
    if (result.config.wants(OutputKind::e_max_series)) {
        std::ostringstream em;
        em.precision(17);
        em << "t,e_max\n";
        for (const auto& r : result.records) {
            em << r.t << ',' << *r.e_max << '\n';
        }
        write_file(sibling(path, "e_max"), em.str());
    }
    if (result.time_average) {
        write_file(sibling(path, "time_average"), result.time_average->density.to_csv());
        if (result.time_average->bundle) {
            write_file(sibling(path, "time_average_bundle"), result.time_average->bundle->to_csv());
        }
    }
    if (result.config.wants(OutputKind::final_states)) {
        const bool with_v = !result.final_velocities.empty();
        std::ostringstream fs;
        fs.precision(17);
        fs << "path,x,y,z" << (with_v ? ",vx,vy,vz" : "") << '\n';
        for (std::size_t p = 0; p < result.final_points.size(); ++p) {
            const Vector3& x = result.final_points[p];
            fs << p << ',' << x.x() << ',' << x.y() << ',' << x.z();
            if (with_v) {
                const Vector3& v = result.final_velocities[p];
                fs << ',' << v.x() << ',' << v.y() << ',' << v.z();
            }
            fs << '\n';
        }
        write_file(sibling(path, "final"), fs.str());
    }
}

}  // namespace sphsde
