#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sphsde/geometry.hpp"
#include "sphsde/rng.hpp"

namespace sphsde {

inline constexpr double kUniformSphereDensity = 0.079577471545947667884;  // 1 / (4 pi)

struct SphereCell {
    int i = 0;
    int j = 0;
    friend bool operator==(const SphereCell&, const SphereCell&) = default;
};

/*!
 * Voronoi partition of S^2 around the latitude-longitude grid
 *
 *     x_ij = (sin(i pi/16) cos(j pi/16), sin(i pi/16) sin(j pi/16), cos(i pi/16)),
 *     i = 0..16, j = 0..31.
 *
 * Rows 0 and 16 collapse onto the poles (stored as exact (0, 0, +-1)), so
 * only cell j = 0 of those rows is ever occupied: 2 + 15 * 32 = 482 cells.
 * Cell areas are in steradians and come from a Monte Carlo calibration
 * shipped with the library (data/sphere_partition_areas.json).
 */
class SpherePartition {
  public:
    static constexpr int kRows = 17;
    static constexpr int kCols = 32;
    static constexpr int kCells = kRows * kCols;

    /// Partition with the shipped calibrated areas.
    static const SpherePartition& standard();
    static SpherePartition from_json(const nlohmann::json& j);
    /// Monte Carlo area calibration: areas = 4 pi * count / samples.
    static SpherePartition calibrate(std::uint64_t samples, std::uint64_t seed);

    nlohmann::json to_json() const;

    const std::string& id() const { return id_; }
    const Vector3& point(int i, int j) const { return points_[static_cast<std::size_t>(flat(i, j))]; }
    double area(int i, int j) const { return areas_[static_cast<std::size_t>(flat(i, j))]; }
    const std::vector<double>& areas() const { return areas_; }
    static bool degenerate(int i, int j) { return (i == 0 || i == kRows - 1) && j != 0; }
    static int flat(int i, int j) { return i * kCols + j; }

    /// Nearest grid point; ties (within 1e-14 in <x, x_ij>) go to the
    /// lexicographically smallest (i, j).
    SphereCell segment_of(const Vector3& x) const;

    std::uint64_t calibration_samples() const { return calibration_samples_; }
    std::uint64_t calibration_seed() const { return calibration_seed_; }

  private:
    SpherePartition();

    std::string id_;
    std::vector<Vector3> points_;
    std::vector<double> areas_;
    std::uint64_t calibration_samples_ = 0;
    std::uint64_t calibration_seed_ = 0;
};

/// Piecewise-constant empirical density on a partition.
///
/// counts are cumulative over `levels` time levels, so a time average of L
/// grids with N samples each is stored exactly with n_samples = L * N.
/// density = counts / (area * n_samples) per unit of `area`.
struct DensityGrid {
    std::string partition_id;
    std::string normalization;  // "per_steradian" or "per_unit_volume"
    int rows = 0;
    int cols = 0;
    std::vector<std::uint64_t> counts;
    std::vector<double> areas;
    std::vector<double> density;
    std::uint64_t n_samples = 0;
    std::uint64_t levels = 1;
    double t = 0.0;

    double mass() const;  // sum density * area

    nlohmann::json to_json() const;
    static DensityGrid from_json(const nlohmann::json& j);
    /// Columns: i, j, count, area, density.
    std::string to_csv() const;
};

/// Builds a grid from raw counts (fills density).
DensityGrid make_density_grid(std::string partition_id, std::string normalization, int rows, int cols,
                              std::vector<std::uint64_t> counts, std::vector<double> areas, double t,
                              std::uint64_t levels = 1);

/// Counts per cell of the standard sphere partition.
std::vector<std::uint64_t> sphere_counts(std::span<const Vector3> samples, const SpherePartition& partition);

DensityGrid empirical_density(std::span<const Vector3> samples, const SpherePartition& partition, double t = 0.0);

/// Cellwise mean. Throws DomainError on mismatched partitions or sample counts.
DensityGrid time_averaged_density(std::span<const DensityGrid> grids);

/// max over non-degenerate cells of |density - 1/(4 pi)|.
double e_max(const DensityGrid& grid);

/// Mean over occupied cells of the lag-1 autocorrelation of per-level counts.
double count_lag1_autocorrelation(std::span<const DensityGrid> levels);

// ---------------------------------------------------------------------------
// Partition of M_1 = {(p, xi) : |xi| = 1} into 6 x 8 cells
// ---------------------------------------------------------------------------

struct BundleCell {
    int i = 0;  // face, 0..5
    int j = 0;  // tangent sector, 0..7
    friend bool operator==(const BundleCell&, const BundleCell&) = default;
};

/// Face centres in the order (+x, -x, +y, -y, +z, -z).
const std::array<Vector3, 6>& bundle_axes();

/// Nearest face centre, ties to the lowest index.
int sphere_face_of(const Vector3& p);

/// Sector reference direction on face i: the first axis (in bundle_axes
/// order) not parallel to face centre i. Sectors are pi/4 wide and counted
/// counterclockwise about the outward face normal.
Vector3 bundle_sector_reference(int face);

/// Throws DegenerateProjectionError when xi has no component in the face's
/// tangent plane and DomainError when |xi| != 1 or <p, xi> != 0 (1e-9).
BundleCell bundle_segment_of(const TangentState& s);

DensityGrid bundle_density(std::span<const TangentState> samples, double t = 0.0);
DensityGrid face_density(std::span<const Vector3> samples, double t = 0.0);

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

Vector3 sample_uniform_sphere(CounterRng& rng);

/// Uniform point of the orbit through the representative.
Vector3 sample_mu_X(const Vector3& representative, const AntisymMatrix3& b, CounterRng& rng);
Rotation3 sample_mu_X(const Rotation3& representative, const AntisymMatrix3& b, CounterRng& rng);

/// Z ~ nu followed by a uniform orbit shift.
Vector3 sample_bar_nu(const std::function<Vector3(CounterRng&)>& initial, const AntisymMatrix3& b, CounterRng& rng);
Rotation3 sample_bar_nu(const std::function<Rotation3(CounterRng&)>& initial, const AntisymMatrix3& b,
                        CounterRng& rng);

/// Normalized volume on M_r: p uniform on S^2, xi of length r uniform in T_p S^2.
TangentState sample_mu_r(double r, CounterRng& rng);

}  // namespace sphsde
