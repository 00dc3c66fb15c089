#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sphsde/error.hpp"
#include "sphsde/harness.hpp"
#include "sphsde/moment_flow.hpp"

using namespace sphsde;

namespace {

EnsembleConfig small_llg() {
    EnsembleConfig c = preset("desk-noncommuting");
    c.n_paths = 300;
    c.set_horizon(2.0);
    c.set_record_interval(0.5);
    c.average_window = 10;
    return c;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("zero steps: the mean is the initial state") {
    EnsembleConfig c;
    c.system = SystemKind::llg;
    c.z0 = Vector3(0, 0.6, 0.8);
    c.n_paths = 1;
    c.n_steps = 0;
    const EnsembleResult r = run_ensemble(c);
    REQUIRE(r.records.size() == 1);
    CHECK((*r.records[0].mean - c.z0).norm() == 0.0);
    const auto traj = mean_trajectory(r);
    CHECK(traj.size() == 1);
    CHECK(traj[0].t == 0.0);
}

TEST_CASE("results do not depend on the worker count") {
    EnsembleConfig c = small_llg();
    c.workers = 1;
    const std::string one = run_ensemble(c).to_json().dump();
    c.workers = 3;
    const std::string three = run_ensemble(c).to_json().dump();
    c.workers = 8;
    const std::string eight = run_ensemble(c).to_json().dump();
    CHECK(one == three);
    CHECK(one == eight);
    c.seed += 1;
    CHECK(run_ensemble(c).to_json().dump() != one);
}

TEST_CASE("geodesic ensemble determinism and outputs") {
    EnsembleConfig c = preset("desk-geodesic-D1");
    c.n_paths = 70;
    c.set_horizon(0.5);
    c.set_record_interval(0.25);
    c.average_window = 20;
    c.workers = 1;
    const EnsembleResult a = run_ensemble(c);
    c.workers = 4;
    const EnsembleResult b = run_ensemble(c);
    CHECK(a.to_json().dump() == b.to_json().dump());
    const RecordAggregate& last = a.records.back();
    REQUIRE(last.bundle);
    REQUIRE(last.faces);
    CHECK(last.bundle->n_samples == 70);
    CHECK(std::abs(last.bundle->mass() - 1.0) < 1e-9);
    REQUIRE(a.time_average);
    CHECK(a.time_average->density.n_samples == 70u * 20u);
    REQUIRE(a.time_average->bundle);
    CHECK(a.diagnostics.max_norm_defect < 1e-12);
    CHECK(a.diagnostics.max_energy_drift_after_first < 1e-12);
}

TEST_CASE("mean vectors stay in the unit ball and moments match the basis order") {
    const EnsembleResult r = run_ensemble(small_llg());
    const MonomialBasis basis = MonomialBasis::make(3, 2);
    for (const auto& rec : r.records) {
        CHECK(rec.mean->norm() <= 1.0);
        REQUIRE(rec.moments);
        CHECK((*rec.moments)[0] == 1.0);
        for (int d = 0; d < 3; ++d) {
            CHECK((*rec.moments)[static_cast<std::size_t>(d) + 1] == doctest::Approx((*rec.mean)[d]).epsilon(1e-12));
        }
        // trace of second moments = E|x|^2 = 1
        const double tr = (*rec.moments)[basis.index_of({2, 0, 0})] + (*rec.moments)[basis.index_of({0, 2, 0})] +
                          (*rec.moments)[basis.index_of({0, 0, 2})];
        CHECK(tr == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("antithetic pairs and the two-point law") {
    EnsembleConfig c = small_llg();
    c.antithetic = true;
    c.noise = NoiseLaw::two_point;
    const EnsembleResult r = run_ensemble(c);
    CHECK(r.records.back().mean->norm() <= 1.0);
    c.n_paths = 301;
    CHECK_THROWS_AS(run_ensemble(c), ConfigError);
}

TEST_CASE("so3 and exact commuting systems") {
    EnsembleConfig c;
    c.system = SystemKind::commuting_exact;
    c.so3 = So3Params{hat(Vector3(0, 0, 1)), hat(Vector3(0, 0, 1)), 0.01};
    c.z0 = Vector3(0, 1 / std::sqrt(2.0), 1 / std::sqrt(2.0));
    c.n_paths = 200;
    c.set_horizon(1.0);
    c.set_record_interval(0.5);
    c.outputs = {OutputKind::mean_trajectory, OutputKind::density};
    const EnsembleResult r = run_ensemble(c);
    for (const auto& rec : r.records) {
        CHECK(std::abs(rec.mean->z() - c.z0.z()) < 1e-14);
    }
    c.system = SystemKind::so3;
    c.so3.b = hat(Vector3(0, 1, 1));
    const EnsembleResult s = run_ensemble(c);
    CHECK(s.diagnostics.max_orthogonality_defect < 1e-12);
    c.system = SystemKind::commuting_exact;
    CHECK_THROWS_AS(run_ensemble(c), ConfigError);
}

TEST_CASE("config validation") {
    EnsembleConfig c = small_llg();
    c.n_paths = 0;
    CHECK_THROWS_AS(c.finalize(), ConfigError);
    c = small_llg();
    c.record_times = {c.n_steps + 1};
    CHECK_THROWS_AS(c.finalize(), ConfigError);
    c = small_llg();
    c.outputs = {OutputKind::bundle_density};
    CHECK_THROWS_AS(c.finalize(), ConfigError);
    c = preset("desk-geodesic-D1");
    c.k = 0.1;
    CHECK_THROWS_AS(c.finalize(), ConfigError);
    CHECK_THROWS_AS(preset("no-such-preset"), ConfigError);
    CHECK_THROWS_AS(EnsembleConfig::from_json(nlohmann::json{{"schema_version", 1}, {"bogus", 1}}), ConfigError);
    for (const auto& name : preset_names()) {
        const EnsembleConfig p = preset(name);
        CHECK(EnsembleConfig::from_json(p.to_json()).to_json() == p.to_json());
        CHECK(p.hash().size() == 16);
    }
}

TEST_CASE("presets reproduce the published experiment settings") {
    const EnsembleConfig nc = preset("paper-fig-noncommuting");
    CHECK(nc.system == SystemKind::llg);
    CHECK(nc.llg.h.vec() == Vector3(0, 0, 1));
    CHECK(nc.llg.h_perp == Vector3(0, 1, 0));
    CHECK((nc.z0 - Vector3(0, 1 / std::sqrt(2.0), 1 / std::sqrt(2.0))).norm() == 0.0);
    CHECK(nc.k == 0.01);
    CHECK(nc.n_paths == 20000);
    const EnsembleConfig g = preset("paper-geodesic-D1");
    CHECK(g.k == 0.001);
    CHECK(g.n_steps == 60000);
    CHECK(g.z0 == Vector3(0, 1, 0));
    CHECK(g.v0 == Vector3(1, 0, 0));
}

TEST_CASE("emit: JSON round trip and CSV schema") {
    const EnsembleResult r = run_ensemble(small_llg());
    const auto dir = std::filesystem::temp_directory_path() / "sphsde_emit_test";
    std::filesystem::create_directories(dir);
    const std::string json_path = (dir / "run.json").string();
    emit(r, EmitFormat::json, json_path);
    const EnsembleResult back = EnsembleResult::from_json(nlohmann::json::parse(slurp(json_path)));
    CHECK(back.to_json() == r.to_json());
    emit(back, EmitFormat::json, (dir / "again.json").string());
    CHECK(slurp(json_path) == slurp((dir / "again.json").string()));
    const nlohmann::json j = nlohmann::json::parse(slurp(json_path));
    CHECK(j.contains("config_hash"));
    CHECK(j.contains("library_version"));
    CHECK(j["config"]["seed"] == r.config.seed);
    CHECK_FALSE(j.contains("wall_seconds"));

    const std::string csv_path = (dir / "run.csv").string();
    emit(r, EmitFormat::csv, csv_path);
    const std::string csv = slurp(csv_path);
    CHECK(csv.rfind("t,mean_x,mean_y,mean_z\n", 0) == 0);
    const std::string dens = slurp((dir / ("run.density." + std::to_string(r.config.n_steps) + ".csv")).string());
    CHECK(dens == r.records.back().density->to_csv());
    CHECK(std::filesystem::exists(dir / "run.time_average.csv"));
    CHECK_THROWS_AS(emit(r, EmitFormat::json, "/nonexistent-dir/x.json"), std::runtime_error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("absent outputs") {
    EnsembleConfig c = small_llg();
    c.outputs = {OutputKind::density};
    const EnsembleResult r = run_ensemble(c);
    CHECK_THROWS_AS(mean_trajectory(r), AbsentOutputError);
}

TEST_CASE("integrator failures abort the run with path and step") {
    EnsembleConfig c = preset("desk-geodesic-D1");
    c.n_paths = 10;
    c.set_horizon(0.1);
    c.record_times = {0};
    c.geodesic.D = 1e12;  // Picard on V cannot converge
    try {
        (void)run_ensemble(c);
        FAIL("expected a PathError");
    } catch (const PathError& e) {
        CHECK(e.path() == 0);
        CHECK(e.step() == 1);
    }
}

TEST_CASE("final states are kept in path order") {
    EnsembleConfig c = preset("desk-geodesic-D1");
    c.n_paths = 130;
    c.set_horizon(0.2);
    c.set_record_interval(0.2);
    c.outputs = {OutputKind::mean_trajectory, OutputKind::final_states};
    c.workers = 3;
    const EnsembleResult r = run_ensemble(c);
    REQUIRE(r.final_points.size() == 130);
    REQUIRE(r.final_velocities.size() == 130);
    Vector3 sum = Vector3::Zero();
    for (const auto& x : r.final_points) {
        sum += x;
    }
    CHECK((sum / 130.0 - *r.records.back().mean).norm() < 1e-13);

    // path 7 alone reproduces entry 7
    EnsembleConfig one = c;
    one.n_paths = 8;
    one.workers = 1;
    const EnsembleResult r8 = run_ensemble(one);
    CHECK((r8.final_points[7] - r.final_points[7]).norm() == 0.0);
    CHECK((r8.final_velocities[7] - r.final_velocities[7]).norm() == 0.0);

    const EnsembleResult back = EnsembleResult::from_json(r.to_json());
    CHECK(back.final_points.size() == 130);
    CHECK((back.final_points[129] - r.final_points[129]).norm() == 0.0);
}
