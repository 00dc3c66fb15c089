#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sphsde/geometry.hpp"
#include "sphsde/integrators.hpp"
#include "sphsde/measures.hpp"

namespace sphsde {

enum class SystemKind { llg, so3, geodesic, commuting_exact };
enum class OutputKind { mean_trajectory, density, bundle_density, e_max_series, moments, time_average, final_states };
enum class NoiseLaw { gaussian, two_point };
/// fixed: every path starts at the configured state. uniform: sphere systems
/// start from the uniform law on S^2. mu_r: geodesic paths start from mu_r
/// with r = |v0|.
enum class InitialLaw { fixed, uniform, mu_r };

/*!
 * One Monte Carlo experiment.
 *
 * Path p draws its increments from CounterRng(seed, p) with counter = step
 * index (dW_{n+1} = sqrt(k) * normal_at(n), or sqrt(k) * sign for the two-point
 * law) and its random initial state from CounterRng(seed ^ kInitialStreamTag, p).
 * With antithetic pairing, paths 2q and 2q+1 share stream q with opposite
 * increments.
 *
 * so3 and commuting_exact evolve Z in SO(3) (resp. the vector Z z0 directly);
 * sphere statistics are taken of the observed point Z z0.
 */
struct EnsembleConfig {
    static constexpr std::uint64_t kInitialStreamTag = 0x5eed1u;

    SystemKind system = SystemKind::llg;
    LlgParams llg{UnitVector3(Vector3(0, 0, 1)), Vector3::Zero(), 0.01};
    So3Params so3{hat(Vector3(0, 0, 1)), hat(Vector3(0, 0, 1)), 0.01};
    GeodesicParams geodesic;
    Vector3 z0 = Vector3(0, 0, 1);  // sphere start (u0 for geodesic)
    Vector3 v0 = Vector3(1, 0, 0);  // geodesic start velocity
    InitialLaw initial = InitialLaw::fixed;
    NoiseLaw noise = NoiseLaw::gaussian;
    bool antithetic = false;

    std::size_t n_paths = 1;
    std::size_t n_steps = 0;
    double k = 0.01;
    std::uint64_t seed = 0;
    std::vector<std::size_t> record_times{0};
    std::vector<OutputKind> outputs{OutputKind::mean_trajectory};
    /// Levels n_steps - average_window + 1 .. n_steps enter the time average.
    std::size_t average_window = 100;
    /// Worker threads; 0 = hardware concurrency. SPHSDE_WORKERS overrides.
    unsigned workers = 0;

    /// Copies k into the system parameters, sorts record_times and checks
    /// every invariant. Throws ConfigError.
    void finalize();
    bool wants(OutputKind o) const;
    /// record_times = {0, m, 2m, ...} plus n_steps, m = round(dt / k).
    void set_record_interval(double dt);
    void set_horizon(double t_end) { n_steps = static_cast<std::size_t>(std::llround(t_end / k)); }

    nlohmann::json to_json() const;
    static EnsembleConfig from_json(const nlohmann::json& j);
    /// FNV-1a of the canonical JSON echo, as 16 hex digits.
    std::string hash() const;
};

/// Names accepted by preset().
std::vector<std::string> preset_names();
/// Throws ConfigError for an unknown name.
EnsembleConfig preset(const std::string& name);

/// Pathwise invariant diagnostics; maxima over all paths and steps.
struct Diagnostics {
    double max_norm_defect = 0.0;          // | |Z| - 1 | or | |U| - 1 |
    double max_energy_drift = 0.0;         // llg: |<Z, h> - <z0, h>|; geodesic: |E(V^n) - E(V^0)|
    double max_energy_drift_after_first = 0.0;  // geodesic: |E(V^n) - E(V^1)|
    double max_tangency_defect = 0.0;      // geodesic: |<U^n, V^n>|
    double max_orthogonality_defect = 0.0; // so3: ||R^T R - I||
    double max_residual = 0.0;
    std::size_t max_sweeps = 0;

    void merge(const Diagnostics& o);
    nlohmann::json to_json() const;
    static Diagnostics from_json(const nlohmann::json& j);
    bool operator==(const Diagnostics&) const = default;
};

struct RecordAggregate {
    std::size_t step = 0;
    double t = 0.0;
    std::optional<Vector3> mean;       // observed point / U
    std::optional<Vector3> mean_v;     // geodesic V
    std::optional<std::vector<double>> moments;  // degree <= 2 basis of MonomialBasis::make(3, 2)
    std::optional<DensityGrid> density;
    std::optional<DensityGrid> bundle;
    std::optional<DensityGrid> faces;
    std::optional<double> e_max;
};

struct TimeAverage {
    DensityGrid density;
    std::optional<DensityGrid> bundle;
    double lag1_autocorrelation = 0.0;
    std::size_t window = 0;
};

struct EnsembleResult {
    EnsembleConfig config;
    std::string version;
    std::vector<RecordAggregate> records;
    std::optional<TimeAverage> time_average;
    Diagnostics diagnostics;
    /// final_states: terminal point (U for geodesic) and velocity of each path, in path order.
    std::vector<Vector3> final_points;
    std::vector<Vector3> final_velocities;
    double envelope_first_moment = 0.0;  // 4 / sqrt(N)
    double envelope_with_bias = 0.0;     // 5 / sqrt(N)
    double wall_seconds = 0.0;           // not serialized

    nlohmann::json to_json() const;
    static EnsembleResult from_json(const nlohmann::json& j);
};

/// Deterministic for a given config: identical for any worker count.
/// Throws PathError (path index, step) when an integrator fails.
EnsembleResult run_ensemble(EnsembleConfig config);

struct TrajectoryPoint {
    double t;
    Vector3 mean;
};
/// Throws AbsentOutputError unless mean_trajectory was recorded.
std::vector<TrajectoryPoint> mean_trajectory(const EnsembleResult& result);

enum class EmitFormat { csv, json };
/// json: the full result at `path`. csv: the mean trajectory
/// (t, mean_x, mean_y, mean_z) at `path` plus one density CSV per recorded
/// grid next to it (<stem>.<kind>.<step>.csv). Throws std::runtime_error
/// with the path on I/O failure.
void emit(const EnsembleResult& result, EmitFormat format, const std::string& path);

std::string to_string(SystemKind s);
std::string to_string(OutputKind o);
SystemKind parse_system(const std::string& s);
OutputKind parse_output(const std::string& s);

}  // namespace sphsde
