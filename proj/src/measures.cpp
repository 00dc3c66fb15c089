#include "sphsde/measures.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "sphsde/error.hpp"
#include "sphsde/lie.hpp"
#include "sphsde/stats.hpp"

namespace sphsde {

// Defined in the generated partition_data.cpp.
extern const char* const kSpherePartitionJson;

namespace {

constexpr double kTieMargin = 1e-14;
constexpr double kAzimuthStep = std::numbers::pi / 16.0;
constexpr const char* kSphereId = "sphere-16x32";

int wrap_col(int j) { return ((j % SpherePartition::kCols) + SpherePartition::kCols) % SpherePartition::kCols; }

}  // namespace

SpherePartition::SpherePartition()
    : id_(kSphereId), points_(kCells), areas_(kCells, 0.0) {
    for (int i = 0; i < kRows; ++i) {
        for (int j = 0; j < kCols; ++j) {
            Vector3 x;
            if (i == 0) {
                x = Vector3(0.0, 0.0, 1.0);
            } else if (i == kRows - 1) {
                x = Vector3(0.0, 0.0, -1.0);
            } else {
                const double th = i * kAzimuthStep;
                const double ph = j * kAzimuthStep;
                x = Vector3(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th));
            }
            points_[static_cast<std::size_t>(flat(i, j))] = x;
        }
    }
}

const SpherePartition& SpherePartition::standard() {
    static const SpherePartition p = from_json(nlohmann::json::parse(kSpherePartitionJson));
    return p;
}

SpherePartition SpherePartition::from_json(const nlohmann::json& j) {
    if (j.at("schema_version").get<int>() != 1) {
        throw ConfigError("SpherePartition: unsupported schema_version");
    }
    if (j.at("partition").get<std::string>() != kSphereId) {
        throw ConfigError("SpherePartition: unexpected partition id");
    }
    SpherePartition p;
    const auto rows = j.at("areas").get<std::vector<std::vector<double>>>();
    if (rows.size() != static_cast<std::size_t>(kRows)) {
        throw ConfigError("SpherePartition: expected 17 rows of areas");
    }
    for (int i = 0; i < kRows; ++i) {
        if (rows[static_cast<std::size_t>(i)].size() != static_cast<std::size_t>(kCols)) {
            throw ConfigError("SpherePartition: expected 32 areas per row");
        }
        for (int c = 0; c < kCols; ++c) {
            p.areas_[static_cast<std::size_t>(flat(i, c))] = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
        }
    }
    const auto& cal = j.at("calibration");
    p.calibration_samples_ = cal.at("samples").get<std::uint64_t>();
    p.calibration_seed_ = cal.at("seed").get<std::uint64_t>();
    return p;
}

SpherePartition SpherePartition::calibrate(std::uint64_t samples, std::uint64_t seed) {
    if (samples == 0) {
        throw DomainError("SpherePartition::calibrate: need at least one sample");
    }
    SpherePartition p;
    std::vector<std::uint64_t> counts(kCells, 0);
    CounterRng rng(seed, 0);
    for (std::uint64_t s = 0; s < samples; ++s) {
        const SphereCell c = p.segment_of(sample_uniform_sphere(rng));
        ++counts[static_cast<std::size_t>(flat(c.i, c.j))];
    }
    const double scale = 4.0 * std::numbers::pi / static_cast<double>(samples);
    for (std::size_t k = 0; k < counts.size(); ++k) {
        p.areas_[k] = scale * static_cast<double>(counts[k]);
    }
    p.calibration_samples_ = samples;
    p.calibration_seed_ = seed;
    return p;
}

nlohmann::json SpherePartition::to_json() const {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["partition"] = id_;
    j["units"] = "steradian";
    j["calibration"] = {{"samples", calibration_samples_},
                        {"seed", calibration_seed_},
                        {"sampler", "CounterRng(seed, stream 0), normalized Gaussian triples"}};
    std::vector<std::vector<double>> rows(kRows, std::vector<double>(kCols));
    for (int i = 0; i < kRows; ++i) {
        for (int c = 0; c < kCols; ++c) {
            rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] = area(i, c);
        }
    }
    j["areas"] = rows;
    return j;
}

SphereCell SpherePartition::segment_of(const Vector3& x) const {
    // Within a non-polar row the nearest point is the one closest in azimuth,
    // so three columns per row cover the argmin and any tie with a neighbour.
    const double phi = std::atan2(x.y(), x.x());
    const int j0 = wrap_col(static_cast<int>(std::floor(phi / kAzimuthStep + 0.5)));
    std::array<int, 3> cols{wrap_col(j0 - 1), j0, wrap_col(j0 + 1)};
    std::sort(cols.begin(), cols.end());

    SphereCell best{0, 0};
    double best_dot = -HUGE_VAL;
    const auto visit = [&](int i, int j) {
        const double d = x.dot(point(i, j));
        if (d > best_dot + kTieMargin) {
            best_dot = d;
            best = {i, j};
        }
    };
    visit(0, 0);
    for (int i = 1; i < kRows - 1; ++i) {
        for (int j : cols) {
            visit(i, j);
        }
    }
    visit(kRows - 1, 0);
    return best;
}

double DensityGrid::mass() const {
    double m = 0.0;
    for (std::size_t k = 0; k < density.size(); ++k) {
        m += density[k] * areas[k];
    }
    return m;
}

nlohmann::json DensityGrid::to_json() const {
    return {{"partition", partition_id}, {"normalization", normalization}, {"rows", rows},
            {"cols", cols},              {"t", t},                        {"n_samples", n_samples},
            {"levels", levels},          {"counts", counts},              {"areas", areas},
            {"density", density}};
}

DensityGrid DensityGrid::from_json(const nlohmann::json& j) {
    return make_density_grid(j.at("partition").get<std::string>(), j.at("normalization").get<std::string>(),
                             j.at("rows").get<int>(), j.at("cols").get<int>(),
                             j.at("counts").get<std::vector<std::uint64_t>>(),
                             j.at("areas").get<std::vector<double>>(), j.at("t").get<double>(),
                             j.at("levels").get<std::uint64_t>());
}

std::string DensityGrid::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "i,j,count,area,density\n";
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            const auto k = static_cast<std::size_t>(i * cols + j);
            out << i << ',' << j << ',' << counts[k] << ',' << areas[k] << ',' << density[k] << '\n';
        }
    }
    return out.str();
}

DensityGrid make_density_grid(std::string partition_id, std::string normalization, int rows, int cols,
                              std::vector<std::uint64_t> counts, std::vector<double> areas, double t,
                              std::uint64_t levels) {
    const auto cells = static_cast<std::size_t>(rows * cols);
    if (counts.size() != cells || areas.size() != cells) {
        throw DomainError("make_density_grid: counts/areas do not match the grid shape");
    }
    DensityGrid g;
    g.partition_id = std::move(partition_id);
    g.normalization = std::move(normalization);
    g.rows = rows;
    g.cols = cols;
    g.counts = std::move(counts);
    g.areas = std::move(areas);
    g.t = t;
    g.levels = levels;
    for (auto c : g.counts) {
        g.n_samples += c;
    }
    g.density.assign(cells, 0.0);
    if (g.n_samples == 0) {
        throw DomainError("make_density_grid: need at least one sample");
    }
    const double n = static_cast<double>(g.n_samples);
    for (std::size_t k = 0; k < cells; ++k) {
        if (g.areas[k] > 0.0) {
            g.density[k] = static_cast<double>(g.counts[k]) / (g.areas[k] * n);
        } else if (g.counts[k] != 0) {
            throw DomainError("make_density_grid: samples in a cell of zero area");
        }
    }
    return g;
}

std::vector<std::uint64_t> sphere_counts(std::span<const Vector3> samples, const SpherePartition& partition) {
    std::vector<std::uint64_t> counts(SpherePartition::kCells, 0);
    for (const auto& x : samples) {
        const SphereCell c = partition.segment_of(x);
        ++counts[static_cast<std::size_t>(SpherePartition::flat(c.i, c.j))];
    }
    return counts;
}

DensityGrid empirical_density(std::span<const Vector3> samples, const SpherePartition& partition, double t) {
    if (samples.empty()) {
        throw DomainError("empirical_density: need at least one sample");
    }
    return make_density_grid(partition.id(), "per_steradian", SpherePartition::kRows, SpherePartition::kCols,
                             sphere_counts(samples, partition), partition.areas(), t);
}

DensityGrid time_averaged_density(std::span<const DensityGrid> grids) {
    if (grids.empty()) {
        throw DomainError("time_averaged_density: no grids");
    }
    const DensityGrid& first = grids.front();
    std::vector<std::uint64_t> counts(first.counts.size(), 0);
    std::uint64_t levels = 0;
    for (const auto& g : grids) {
        if (g.partition_id != first.partition_id || g.areas != first.areas ||
            g.n_samples / g.levels != first.n_samples / first.levels) {
            throw DomainError("time_averaged_density: grids do not share a partition and sample count");
        }
        for (std::size_t k = 0; k < counts.size(); ++k) {
            counts[k] += g.counts[k];
        }
        levels += g.levels;
    }
    return make_density_grid(first.partition_id, first.normalization, first.rows, first.cols, std::move(counts),
                             first.areas, grids.back().t, levels);
}

double e_max(const DensityGrid& grid) {
    double m = 0.0;
    for (std::size_t k = 0; k < grid.density.size(); ++k) {
        if (grid.areas[k] > 0.0) {
            m = std::max(m, std::abs(grid.density[k] - kUniformSphereDensity));
        }
    }
    return m;
}

double count_lag1_autocorrelation(std::span<const DensityGrid> levels) {
    if (levels.size() < 2) {
        return 0.0;
    }
    const std::size_t cells = levels.front().counts.size();
    double sum = 0.0;
    std::size_t used = 0;
    std::vector<double> series(levels.size());
    for (std::size_t k = 0; k < cells; ++k) {
        bool any = false;
        for (std::size_t l = 0; l < levels.size(); ++l) {
            series[l] = static_cast<double>(levels[l].counts[k]);
            any = any || series[l] != series[0];
        }
        if (any) {
            sum += lag1_autocorrelation(series);
            ++used;
        }
    }
    return used > 0 ? sum / static_cast<double>(used) : 0.0;
}

const std::array<Vector3, 6>& bundle_axes() {
    static const std::array<Vector3, 6> axes{Vector3(1, 0, 0),  Vector3(-1, 0, 0), Vector3(0, 1, 0),
                                             Vector3(0, -1, 0), Vector3(0, 0, 1),  Vector3(0, 0, -1)};
    return axes;
}

int sphere_face_of(const Vector3& p) {
    int best = 0;
    double best_dot = -HUGE_VAL;
    for (int i = 0; i < 6; ++i) {
        const double d = p.dot(bundle_axes()[static_cast<std::size_t>(i)]);
        if (d > best_dot + kTieMargin) {
            best_dot = d;
            best = i;
        }
    }
    return best;
}

Vector3 bundle_sector_reference(int face) {
    const Vector3& n = bundle_axes().at(static_cast<std::size_t>(face));
    for (const auto& a : bundle_axes()) {
        if (std::abs(a.dot(n)) < 0.5) {
            return a;
        }
    }
    throw DomainError("bundle_sector_reference: no reference axis");  // unreachable
}

BundleCell bundle_segment_of(const TangentState& s) {
    if (std::abs(s.xi.norm() - 1.0) > 1e-9 || std::abs(s.p.dot(s.xi)) > 1e-9) {
        throw DomainError("bundle_segment_of: state is not on M_1");
    }
    const int face = sphere_face_of(s.p);
    const Vector3& n = bundle_axes()[static_cast<std::size_t>(face)];
    const Vector3 ref = bundle_sector_reference(face);
    const Vector3 second = n.cross(ref);
    const Vector3 q = s.xi - s.xi.dot(n) * n;
    if (q.norm() < 1e-12) {
        throw DegenerateProjectionError("bundle_segment_of: velocity is normal to the face tangent plane");
    }
    double angle = std::atan2(q.dot(second), q.dot(ref));
    if (angle < 0.0) {
        angle += 2.0 * std::numbers::pi;
    }
    const double sector = angle / (std::numbers::pi / 4.0);
    const double nearest = std::round(sector);
    int j;
    if (std::abs(sector - nearest) < 1e-12) {
        // On a boundary: the lower-indexed neighbour, with the 7|0 seam going to 0.
        const int m = static_cast<int>(nearest);
        j = (m == 0 || m == 8) ? 0 : m - 1;
    } else {
        j = std::clamp(static_cast<int>(std::floor(sector)), 0, 7);
    }
    return {face, j};
}

DensityGrid bundle_density(std::span<const TangentState> samples, double t) {
    std::vector<std::uint64_t> counts(48, 0);
    for (const auto& s : samples) {
        const BundleCell c = bundle_segment_of(s);
        ++counts[static_cast<std::size_t>(c.i * 8 + c.j)];
    }
    return make_density_grid("bundle-6x8", "per_unit_volume", 6, 8, std::move(counts),
                             std::vector<double>(48, 1.0 / 48.0), t);
}

DensityGrid face_density(std::span<const Vector3> samples, double t) {
    std::vector<std::uint64_t> counts(6, 0);
    for (const auto& p : samples) {
        ++counts[static_cast<std::size_t>(sphere_face_of(p))];
    }
    return make_density_grid("sphere-6", "per_steradian", 6, 1, std::move(counts),
                             std::vector<double>(6, 4.0 * std::numbers::pi / 6.0), t);
}

Vector3 sample_uniform_sphere(CounterRng& rng) {
    for (;;) {
        const Vector3 g(rng.normal(), rng.normal(), rng.normal());
        const double n = g.norm();
        if (n > 1e-12) {
            return g / n;
        }
    }
}

Vector3 sample_mu_X(const Vector3& representative, const AntisymMatrix3& b, CounterRng& rng) {
    return orbit_sample(representative, b, 2.0 * std::numbers::pi * rng.uniform());
}

Rotation3 sample_mu_X(const Rotation3& representative, const AntisymMatrix3& b, CounterRng& rng) {
    return orbit_sample(representative, b, 2.0 * std::numbers::pi * rng.uniform());
}

Vector3 sample_bar_nu(const std::function<Vector3(CounterRng&)>& initial, const AntisymMatrix3& b, CounterRng& rng) {
    const Vector3 z = initial(rng);
    return sample_mu_X(z, b, rng);
}

Rotation3 sample_bar_nu(const std::function<Rotation3(CounterRng&)>& initial, const AntisymMatrix3& b,
                        CounterRng& rng) {
    const Rotation3 z = initial(rng);
    return sample_mu_X(z, b, rng);
}

TangentState sample_mu_r(double r, CounterRng& rng) {
    if (!(r > 0.0)) {
        throw DomainError("sample_mu_r: r must be > 0");
    }
    const Vector3 p = sample_uniform_sphere(rng);
    for (;;) {
        const Vector3 g(rng.normal(), rng.normal(), rng.normal());
        const Vector3 q = g - g.dot(p) * p;
        const double n = q.norm();
        if (n > 1e-12) {
            Vector3 xi = (r / n) * q;
            xi -= xi.dot(p) * p;
            return {p, xi};
        }
    }
}

}  // namespace sphsde
