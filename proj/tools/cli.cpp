#include "cli.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sphsde/error.hpp"
#include "sphsde/harness.hpp"
#include "sphsde/lie.hpp"
#include "sphsde/measures.hpp"
#include "sphsde/moment_flow.hpp"
#include "sphsde/version.hpp"

namespace sphsde {

namespace {

using nlohmann::json;

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

Vector3 parse_vec(const std::string& s, const char* flag) {
    std::vector<double> v;
    std::stringstream in(s);
    std::string part;
    while (std::getline(in, part, ',')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stod(part, &used));
            if (used != part.size()) {
                throw std::invalid_argument(part);
            }
        } catch (const std::exception&) {
            throw ConfigError(std::string(flag) + ": cannot parse '" + s + "' as x,y,z");
        }
    }
    if (v.size() != 3) {
        throw ConfigError(std::string(flag) + ": expected three comma-separated numbers");
    }
    return Vector3(v[0], v[1], v[2]);
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read '" + path + "'");
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
    }
}

struct RunOptions {
    std::string config;
    std::string preset;
    std::optional<double> k;
    std::optional<std::size_t> n_paths;
    std::optional<std::uint64_t> seed;
    std::optional<double> t_end;
    std::optional<double> d;
    std::optional<unsigned> workers;
    std::string out;
    std::string format;  // empty: from the extension of `out`
    bool print_config = false;
};

void add_run_flags(CLI::App* cmd, RunOptions& o, bool with_d) {
    cmd->add_option("--config", o.config, "JSON config file");
    cmd->add_option("--preset", o.preset, "named preset (see `sphsde presets`)");
    cmd->add_option("--k", o.k, "time step");
    cmd->add_option("--n-paths", o.n_paths, "number of sample paths");
    cmd->add_option("--seed", o.seed, "64-bit seed");
    cmd->add_option("--t-end", o.t_end, "final time");
    if (with_d) {
        cmd->add_option("--d", o.d, "noise intensity D");
    }
    cmd->add_option("--workers", o.workers, "worker threads (0 = all cores)");
    cmd->add_option("--out", o.out, "output path");
    cmd->add_option("--format", o.format, "csv or json (default: csv for a .csv path, else json)")
        ->check(CLI::IsMember({"csv", "json"}));
    cmd->add_flag("--print-config", o.print_config, "print the resolved config and exit");
}

EnsembleConfig resolve_config(const RunOptions& o, const std::vector<SystemKind>& allowed) {
    if (o.config.empty() == o.preset.empty()) {
        throw ConfigError("give exactly one of --config and --preset");
    }
    EnsembleConfig c = o.preset.empty() ? EnsembleConfig::from_json(read_json(o.config)) : preset(o.preset);
    if (std::find(allowed.begin(), allowed.end(), c.system) == allowed.end()) {
        throw ConfigError("config describes system '" + to_string(c.system) + "', not this subcommand's");
    }
    // Keep record spacing and horizon in time units when k or t_end change.
    const double old_k = c.k;
    const double t_end = o.t_end.value_or(static_cast<double>(c.n_steps) * old_k);
    const double record_dt = c.record_times.size() >= 2
                                 ? static_cast<double>(c.record_times[1] - c.record_times[0]) * old_k
                                 : t_end;
    if (o.k) {
        c.k = *o.k;
    }
    if (o.k || o.t_end) {
        if (!(c.k > 0.0) || !(t_end >= 0.0)) {
            throw ConfigError("--k must be > 0 and --t-end >= 0");
        }
        c.set_horizon(t_end);
        if (record_dt > 0.0) {
            c.set_record_interval(record_dt);
        } else {
            c.record_times = {0, c.n_steps};
        }
        c.average_window = std::min(c.average_window, c.n_steps + 1);
    }
    if (o.n_paths) {
        c.n_paths = *o.n_paths;
    }
    if (o.seed) {
        c.seed = *o.seed;
    }
    if (o.d) {
        c.geodesic.D = *o.d;
    }
    if (o.workers) {
        c.workers = *o.workers;
    }
    c.finalize();
    return c;
}

void print_summary(const EnsembleResult& r, std::ostream& out) {
    out << std::setprecision(6);
    out << "system " << to_string(r.config.system) << ", N = " << r.config.n_paths << ", k = " << r.config.k
        << ", steps = " << r.config.n_steps << ", seed = " << r.config.seed << "\n";
    out << "config hash " << r.config.hash() << ", version " << r.version << "\n";
    const RecordAggregate& last = r.records.back();
    if (last.mean) {
        out << "E[x](" << last.t << ") = (" << last.mean->x() << ", " << last.mean->y() << ", " << last.mean->z()
            << "), |E[x]| = " << last.mean->norm() << "\n";
    }
    out << "envelopes: 4/sqrt(N) = " << r.envelope_first_moment << ", 5/sqrt(N) = " << r.envelope_with_bias << "\n";
    if (last.e_max) {
        out << "E_max(" << last.t << ") = " << *last.e_max << "\n";
    }
    if (r.time_average) {
        out << "time average over " << r.time_average->window << " levels: E_max = " << e_max(r.time_average->density)
            << ", lag-1 count autocorrelation = " << r.time_average->lag1_autocorrelation << "\n";
    }
    const Diagnostics& d = r.diagnostics;
    out << "max | |x| - 1 | = " << d.max_norm_defect << ", max energy drift = " << d.max_energy_drift;
    if (r.config.system == SystemKind::geodesic) {
        out << " (after first step " << d.max_energy_drift_after_first << ")";
    }
    out << ", max sweeps = " << d.max_sweeps << "\n";
}

int run_system(const RunOptions& o, const std::vector<SystemKind>& allowed, std::ostream& out) {
    const EnsembleConfig c = resolve_config(o, allowed);
    if (o.print_config) {
        out << c.to_json().dump(2) << "\n";
        return 0;
    }
    const EnsembleResult r = run_ensemble(c);
    print_summary(r, out);
    if (!o.out.empty()) {
        const bool csv = o.format.empty() ? o.out.ends_with(".csv") : o.format == "csv";
        emit(r, csv ? EmitFormat::csv : EmitFormat::json, o.out);
        out << "wrote " << o.out << "\n";
    }
    return 0;
}

struct MomentOptions {
    RunOptions run;
    int degree = 2;
    std::string compare;
};

// Generator of the sphere observable x = Z z0 for the configured system.
GeneratorMatrix config_generator(const EnsembleConfig& c, int degree) {
    switch (c.system) {
        case SystemKind::llg:
            return generator_matrix(hat(c.llg.h.vec()), {hat(c.llg.noise_axis())}, degree);
        case SystemKind::so3:
        case SystemKind::commuting_exact:
            return generator_matrix(c.so3.a, {c.so3.b}, degree);
        case SystemKind::geodesic:
            break;
    }
    throw ConfigError("the moment oracle covers the linear sphere systems (llg, so3, commuting_exact)");
}

int run_moments(const MomentOptions& o, std::ostream& out) {
    RunOptions ro = o.run;
    EnsembleConfig c;
    std::optional<EnsembleResult> ensemble;
    if (!o.compare.empty()) {
        ensemble = EnsembleResult::from_json(read_json(o.compare));
        c = ensemble->config;
    } else {
        c = resolve_config(ro, {SystemKind::llg, SystemKind::so3, SystemKind::commuting_exact, SystemKind::geodesic});
    }
    if (o.degree < 1) {
        throw ConfigError("--degree must be >= 1");
    }
    const GeneratorMatrix g = config_generator(c, o.degree);
    const Eigen::VectorXd m0 = g.basis.evaluate(c.z0);
    const double t_end = o.run.t_end.value_or(static_cast<double>(c.n_steps) * c.k);
    out << std::setprecision(10);
    out << "generator on " << g.basis.size() << " monomials of degree <= " << o.degree << "\n";
    const auto norms = propagator_norms(g);
    out << "||exp(Gt)|| at t = 1, 10, 100, 1000:";
    for (double n : norms) {
        out << " " << n;
    }
    out << "\n";
    const Eigen::VectorXd mt = evolve_moments(g, m0, t_end);
    out << "E[x](" << t_end << ") = (" << mt[1] << ", " << mt[2] << ", " << mt[3] << ")\n";
    json report{{"schema_version", 1},
                {"library_version", kVersion},
                {"config_hash", c.hash()},
                {"generator", to_json(g)},
                {"t", t_end},
                {"moments", std::vector<double>(mt.data(), mt.data() + mt.size())},
                {"propagator_norms", norms}};
    try {
        const SpectrumReport s = check_spectrum(g);
        const Eigen::VectorXd lim = limiting_moments(g, m0);
        out << "spectrum: max Re = " << s.max_real_part << ", kernel dimension " << s.kernel_dimension << "\n";
        out << "limit E[x] = (" << lim[1] << ", " << lim[2] << ", " << lim[3] << ")\n";
        report["limit"] = std::vector<double>(lim.data(), lim.data() + lim.size());
    } catch (const SpectralAnomalyError& e) {
        out << "no limit: " << e.what() << "\n";
    }
    if (ensemble) {
        if (!c.wants(OutputKind::moments) && !c.wants(OutputKind::mean_trajectory)) {
            throw AbsentOutputError("ensemble file has neither moments nor a mean trajectory");
        }
        const GeneratorMatrix g2 = o.degree == 2 ? g : config_generator(c, 2);
        const Eigen::VectorXd b0 = g2.basis.evaluate(c.z0);
        double worst = 0.0;
        for (const auto& r : ensemble->records) {
            const Eigen::VectorXd pred = evolve_moments(g2, b0, r.t);
            for (int i = 1; i < 4; ++i) {
                if (r.mean) {
                    worst = std::max(worst, std::abs((*r.mean)[i - 1] - pred[i]));
                }
            }
            if (r.moments) {
                for (std::size_t i = 1; i < r.moments->size(); ++i) {
                    worst = std::max(worst, std::abs((*r.moments)[i] - pred[static_cast<Eigen::Index>(i)]));
                }
            }
        }
        const double bound = ensemble->envelope_with_bias + c.k;
        out << "max |ensemble - oracle| over recorded moments = " << worst << " (5/sqrt(N) + k = " << bound << ") "
            << (worst <= bound ? "within envelope" : "OUTSIDE envelope") << "\n";
        report["ensemble_deviation"] = worst;
        report["ensemble_bound"] = bound;
    }
    if (!o.run.out.empty()) {
        std::ofstream f(o.run.out);
        if (!f || !(f << report.dump(1) << "\n")) {
            throw ConfigError("cannot write '" + o.run.out + "'");
        }
        out << "wrote " << o.run.out << "\n";
    }
    return 0;
}

int run_density_report(const std::string& in, const std::string& out_path, const std::string& format,
                       std::ostream& out) {
    const EnsembleResult r = EnsembleResult::from_json(read_json(in));
    out << std::setprecision(6);
    out << "t,e_max,max_relative_deviation\n";
    const DensityGrid* latest = nullptr;
    for (const auto& rec : r.records) {
        if (rec.density) {
            const double em = e_max(*rec.density);
            out << rec.t << ',' << em << ',' << em / kUniformSphereDensity << "\n";
            latest = &*rec.density;
        }
    }
    if (r.time_average) {
        const double em = e_max(r.time_average->density);
        out << "time average (" << r.time_average->window << " levels): E_max = " << em
            << ", max relative deviation = " << em / kUniformSphereDensity
            << ", lag-1 count autocorrelation = " << r.time_average->lag1_autocorrelation << "\n";
        latest = &r.time_average->density;
    }
    if (latest == nullptr) {
        throw AbsentOutputError("result file has no sphere density");
    }
    if (!out_path.empty()) {
        std::ofstream f(out_path);
        const std::string text = format == "csv" ? latest->to_csv() : latest->to_json().dump(1) + "\n";
        if (!f || !(f << text)) {
            throw ConfigError("cannot write '" + out_path + "'");
        }
        out << "wrote " << out_path << "\n";
    }
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Structure-preserving SDE integrators on S^2, SO(3) and TS^2"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);

    RunOptions llg_o, so3_o, geo_o;
    add_run_flags(app.add_subcommand("llg", "stochastic LLG ensemble (implicit midpoint)"), llg_o, false);
    add_run_flags(app.add_subcommand("so3", "SO(3) ensemble (Cayley midpoint or exact commuting flow)"), so3_o,
                  false);
    add_run_flags(app.add_subcommand("geodesic", "stochastic geodesic ensemble on TS^2"), geo_o, true);

    MomentOptions mom_o;
    CLI::App* moments = app.add_subcommand("moments", "generator-matrix moment oracle");
    add_run_flags(moments, mom_o.run, false);
    moments->add_option("--degree", mom_o.degree, "maximal monomial degree");
    moments->add_option("--compare", mom_o.compare, "ensemble result JSON to compare against");

    std::string a_str, b_str;
    CLI::App* hormander = app.add_subcommand("hormander", "bracket-closure rank of (A, B)");
    hormander->add_option("--a", a_str, "drift axis x,y,z")->required();
    hormander->add_option("--b", b_str, "noise axis x,y,z")->required();

    std::string report_in, report_out, report_format = "csv";
    CLI::App* report = app.add_subcommand("density-report", "E_max and density tables from a result file");
    report->add_option("--in", report_in, "ensemble result JSON")->required();
    report->add_option("--out", report_out, "write the latest (or time-averaged) density here");
    report->add_option("--format", report_format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

    std::uint64_t cal_samples = 100000000, cal_seed = 20240611;
    std::string cal_out = "data/sphere_partition_areas.json";
    CLI::App* calibrate = app.add_subcommand("calibrate-partition", "Monte Carlo areas of the sphere partition");
    calibrate->add_option("--samples", cal_samples, "uniform samples");
    calibrate->add_option("--seed", cal_seed, "calibration seed");
    calibrate->add_option("--out", cal_out, "output JSON");

    app.add_subcommand("presets", "list preset names");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitConfig;
    }

    try {
        if (app.got_subcommand("llg")) {
            return run_system(llg_o, {SystemKind::llg}, out);
        }
        if (app.got_subcommand("so3")) {
            return run_system(so3_o, {SystemKind::so3, SystemKind::commuting_exact}, out);
        }
        if (app.got_subcommand("geodesic")) {
            return run_system(geo_o, {SystemKind::geodesic}, out);
        }
        if (app.got_subcommand("moments")) {
            return run_moments(mom_o, out);
        }
        if (app.got_subcommand("hormander")) {
            const AntisymMatrix3 a = hat(parse_vec(a_str, "--a"));
            const AntisymMatrix3 b = hat(parse_vec(b_str, "--b"));
            const int rank = hormander_rank(a, {b});
            out << "rank " << rank << "\n";
            out << (rank == 3 ? "(H) holds" : "(H) fails; commuting case") << "\n";
            return 0;
        }
        if (app.got_subcommand("density-report")) {
            return run_density_report(report_in, report_out, report_format, out);
        }
        if (app.got_subcommand("calibrate-partition")) {
            const SpherePartition p = SpherePartition::calibrate(cal_samples, cal_seed);
            std::ofstream f(cal_out);
            if (!f || !(f << p.to_json().dump(1) << "\n")) {
                throw ConfigError("cannot write '" + cal_out + "'");
            }
            out << "wrote " << cal_out << " (" << cal_samples << " samples, seed " << cal_seed << ")\n";
            return 0;
        }
        if (app.got_subcommand("presets")) {
            for (const auto& n : preset_names()) {
                out << n << "\n";
            }
            return 0;
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DomainError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const AbsentOutputError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const NotImplementedError& e) {
        err << "not supported: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}

}  // namespace sphsde
