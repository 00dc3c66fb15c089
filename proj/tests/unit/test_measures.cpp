#include <doctest.h>

#include <algorithm>
#include <numbers>

#include "helpers.hpp"
#include "sphsde/error.hpp"
#include "sphsde/lie.hpp"
#include "sphsde/measures.hpp"
#include "sphsde/stats.hpp"

using namespace sphsde;

namespace {

const SpherePartition& part() { return SpherePartition::standard(); }

// Oracle: exhaustive argmin over all 17 x 32 grid points, lexicographic order,
// replacing the incumbent only on a strict improvement beyond 1e-14.
SphereCell brute_force(const Vector3& x) {
    SphereCell best{0, 0};
    double best_dot = -2.0;
    for (int i = 0; i < SpherePartition::kRows; ++i) {
        for (int j = 0; j < SpherePartition::kCols; ++j) {
            const double d = x.dot(part().point(i, j));
            if (d > best_dot + 1e-14) {
                best_dot = d;
                best = {i, j};
            }
        }
    }
    return best;
}

double azimuth(const Vector3& x) {
    double a = std::atan2(x.y(), x.x());
    return a < 0 ? a + 2 * std::numbers::pi : a;
}

std::vector<double> angle_histogram(const std::vector<Vector3>& xs, int bins = 32) {
    std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
    for (const auto& x : xs) {
        const int b = std::min(bins - 1, static_cast<int>(azimuth(x) / (2 * std::numbers::pi) * bins));
        h[static_cast<std::size_t>(b)] += 1;
    }
    return h;
}

std::vector<double> z_histogram(const std::vector<Vector3>& xs, int bins = 32) {
    std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
    for (const auto& x : xs) {
        const int b = std::clamp(static_cast<int>((x.z() + 1.0) / 2.0 * bins), 0, bins - 1);
        h[static_cast<std::size_t>(b)] += 1;
    }
    return h;
}

}  // namespace

TEST_CASE("segment_of examples") {
    CHECK(part().segment_of(Vector3(0, 0, 1)) == SphereCell{0, 0});
    CHECK(part().segment_of(Vector3(0, 0, -1)) == SphereCell{16, 0});
    CHECK(part().segment_of(Vector3(1, 0, 0)) == SphereCell{8, 0});
    const Vector3 mid = (part().point(8, 0) + part().point(8, 1)).normalized();
    CHECK(part().segment_of(mid) == SphereCell{8, 0});
    // seam between j = 31 and j = 0
    const Vector3 seam = (part().point(5, 31) + part().point(5, 0)).normalized();
    CHECK(part().segment_of(seam) == brute_force(seam));
}

TEST_CASE("segment_of reproduces every non-degenerate grid point") {
    for (int i = 0; i < SpherePartition::kRows; ++i) {
        for (int j = 0; j < SpherePartition::kCols; ++j) {
            const SphereCell c = part().segment_of(part().point(i, j));
            if (SpherePartition::degenerate(i, j)) {
                CHECK(c == SphereCell{i, 0});
            } else {
                CHECK(c == SphereCell{i, j});
            }
        }
    }
}

TEST_CASE("segment_of agrees with the exhaustive search") {
    for (int t = 0; t < 100000; ++t) {
        const Vector3 x = testutil::random_unit();
        const SphereCell fast = part().segment_of(x);
        const SphereCell slow = brute_force(x);
        CHECK(fast == slow);
    }
    // Near-ties: midpoints between all neighbouring grid points.
    for (int i = 0; i < SpherePartition::kRows - 1; ++i) {
        for (int j = 0; j < SpherePartition::kCols; ++j) {
            for (const auto& x : {(part().point(i, j) + part().point(i, (j + 1) % 32)).normalized(),
                                  (part().point(i, j) + part().point(i + 1, j)).normalized()}) {
                if (x.norm() > 0.5) {
                    CHECK(part().segment_of(x) == brute_force(x));
                }
            }
        }
    }
}

TEST_CASE("calibrated areas") {
    double sum = 0.0;
    int occupied = 0;
    for (int i = 0; i < SpherePartition::kRows; ++i) {
        for (int j = 0; j < SpherePartition::kCols; ++j) {
            sum += part().area(i, j);
            if (SpherePartition::degenerate(i, j)) {
                CHECK(part().area(i, j) == 0.0);
            } else {
                CHECK(part().area(i, j) > 0.0);
                ++occupied;
            }
        }
    }
    CHECK(occupied == 482);
    CHECK(std::abs(sum - 4 * std::numbers::pi) < 1e-6);
    CHECK(part().calibration_samples() == 100000000u);
    // Rotational and north-south symmetry, within 5 sigma of the calibration noise.
    const double n = static_cast<double>(part().calibration_samples());
    for (int i = 1; i < SpherePartition::kRows - 1; ++i) {
        for (int j = 0; j < SpherePartition::kCols; ++j) {
            const double a = part().area(i, j), b = part().area(i, 0), c = part().area(16 - i, j);
            const double sigma = 4 * std::numbers::pi * std::sqrt(a / (4 * std::numbers::pi) / n);
            CHECK(std::abs(a - b) < 5 * std::sqrt(2.0) * sigma);
            CHECK(std::abs(a - c) < 5 * std::sqrt(2.0) * sigma);
        }
    }
    // Pole cell: bounded by the bisectors with the 32 points of row 1; its
    // area lies between the inscribed and circumscribed caps.
    const double half = std::numbers::pi / 32;
    const double inner = 2 * std::numbers::pi * (1 - std::cos(half));
    const double outer_angle = std::atan(std::tan(half) / std::cos(std::numbers::pi / 32));
    const double outer = 2 * std::numbers::pi * (1 - std::cos(outer_angle));
    CHECK(part().area(0, 0) > inner);
    CHECK(part().area(0, 0) < outer);
}

TEST_CASE("partition JSON round trip") {
    const SpherePartition back = SpherePartition::from_json(part().to_json());
    CHECK(back.areas() == part().areas());
    nlohmann::json bad = part().to_json();
    bad["schema_version"] = 2;
    CHECK_THROWS_AS(SpherePartition::from_json(bad), ConfigError);
}

TEST_CASE("empirical density") {
    const std::vector<Vector3> pole(100, Vector3(0, 0, 1));
    const DensityGrid g = empirical_density(pole, part());
    CHECK(g.counts[0] == 100);
    CHECK(g.n_samples == 100);
    CHECK(std::abs(g.mass() - 1.0) < 1e-9);
    CHECK(e_max(g) == doctest::Approx(1.0 / part().area(0, 0) - kUniformSphereDensity));
    CHECK_THROWS_AS(empirical_density(std::vector<Vector3>{}, part()), DomainError);
    CHECK(kUniformSphereDensity == doctest::Approx(0.0796).epsilon(1e-3));

    // Uniform samples: every cell within a 4 sigma multinomial envelope, and
    // shuffling the samples does not change the counts.
    CounterRng rng(77, 0);
    std::vector<Vector3> xs(20000);
    for (auto& x : xs) {
        x = sample_uniform_sphere(rng);
    }
    const DensityGrid u = empirical_density(xs, part());
    CHECK(std::abs(u.mass() - 1.0) < 1e-9);
    for (std::size_t c = 0; c < u.counts.size(); ++c) {
        const double p = u.areas[c] / (4 * std::numbers::pi);
        const double mean = 20000 * p, sd = std::sqrt(20000 * p * (1 - p));
        CHECK(std::abs(static_cast<double>(u.counts[c]) - mean) <= 4 * sd + 1e-12);
    }
    std::reverse(xs.begin(), xs.end());
    CHECK(empirical_density(xs, part()).counts == u.counts);
}

TEST_CASE("density grid serialization") {
    const std::vector<Vector3> xs{Vector3(0, 0, 1), Vector3(1, 0, 0), Vector3(0, -1, 0)};
    const DensityGrid g = empirical_density(xs, part(), 2.5);
    const DensityGrid back = DensityGrid::from_json(g.to_json());
    CHECK(back.counts == g.counts);
    CHECK(back.density == g.density);
    CHECK(back.t == 2.5);
    const std::string csv = g.to_csv();
    CHECK(csv.rfind("i,j,count,area,density\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + SpherePartition::kCells);
}

TEST_CASE("time averaged density") {
    const std::vector<double> areas(4, std::numbers::pi);
    const DensityGrid a = make_density_grid("quad", "per_steradian", 1, 4, {3, 1, 2, 2}, areas, 0.0);
    const DensityGrid b = make_density_grid("quad", "per_steradian", 1, 4, {1, 3, 2, 2}, areas, 1.0);
    const std::vector<DensityGrid> one{a};
    CHECK(time_averaged_density(one).density == a.density);
    const std::vector<DensityGrid> two{a, b};
    const DensityGrid avg = time_averaged_density(two);
    for (double d : avg.density) {
        CHECK(d == doctest::Approx(kUniformSphereDensity).epsilon(1e-15));
    }
    CHECK(e_max(avg) < 1e-16);
    const DensityGrid other = make_density_grid("other", "per_steradian", 1, 4, {1, 3, 2, 2}, areas, 1.0);
    const std::vector<DensityGrid> mixed{a, other};
    CHECK_THROWS_AS(time_averaged_density(mixed), DomainError);
    CHECK_THROWS_AS(time_averaged_density(std::vector<DensityGrid>{}), DomainError);
}

TEST_CASE("averaging independent levels divides the variance by the number of levels") {
    CounterRng rng(5, 0);
    const int levels = 100, n = 2000;
    std::vector<DensityGrid> grids;
    for (int l = 0; l < levels; ++l) {
        std::vector<Vector3> xs(n);
        for (auto& x : xs) {
            x = sample_uniform_sphere(rng);
        }
        grids.push_back(empirical_density(xs, part()));
    }
    const DensityGrid avg = time_averaged_density(grids);
    double z2 = 0.0;
    int cells = 0;
    for (std::size_t c = 0; c < avg.density.size(); ++c) {
        if (avg.areas[c] > 0) {
            const double p = avg.areas[c] / (4 * std::numbers::pi);
            const double var = n * p * (1 - p) / (levels * std::pow(avg.areas[c] * n, 2));
            z2 += std::pow(avg.density[c] - kUniformSphereDensity, 2) / var;
            ++cells;
        }
    }
    z2 /= cells;
    CHECK(z2 > 0.75);
    CHECK(z2 < 1.25);
    CHECK(std::abs(count_lag1_autocorrelation(grids)) < 0.05);
}

TEST_CASE("bundle partition") {
    // p near +z tilted toward +x, xi = e_x. Face 4 = +z; reference axis +x,
    // so e_x sits at angle 0: sector 0.
    const Vector3 p = Vector3(0.01, 0, 1).normalized();
    const Vector3 xi = (Vector3(1, 0, 0) - p.x() * p).normalized();
    CHECK(bundle_segment_of({p, xi}) == BundleCell{4, 0});
    // counterclockwise about +z: e_y is at angle pi/2, a boundary -> lower j = 1
    CHECK(bundle_segment_of({Vector3(0, 0, 1), Vector3(0, 1, 0)}) == BundleCell{4, 1});
    CHECK(bundle_segment_of({Vector3(0, 0, 1), Vector3(1, 1, 0).normalized()}) == BundleCell{4, 0});
    CHECK(bundle_segment_of({Vector3(0, 0, 1), Vector3(1, -0.01, 0).normalized()}) == BundleCell{4, 7});
    CHECK(bundle_segment_of({Vector3(0, 0, 1), Vector3(-1, 0.01, 0).normalized()}) == BundleCell{4, 3});
    // face ties go to the lowest index
    CHECK(sphere_face_of(Vector3(1, 1, 0).normalized()) == 0);
    CHECK(sphere_face_of(Vector3(-1, 1, 0).normalized()) == 1);
    CHECK(sphere_face_of(Vector3(0, 0, -1)) == 5);
    for (int f = 0; f < 6; ++f) {
        CHECK(std::abs(bundle_sector_reference(f).dot(bundle_axes()[static_cast<std::size_t>(f)])) == 0.0);
    }
    CHECK_THROWS_AS(bundle_segment_of({Vector3(0, 0, 1), Vector3(0, 0, 1)}), DomainError);
    CHECK_THROWS_AS(bundle_segment_of({Vector3(0, 0, 1), Vector3(2, 0, 0)}), DomainError);
    // Face tie on the x/z edge resolves to +x; the velocity's projection on
    // that face's plane is -e_z, at angle 3 pi / 2 from the reference +y.
    const Vector3 pe = Vector3(1, 0, 1).normalized();
    const Vector3 xe = Vector3(1, 0, -1).normalized();
    CHECK(bundle_segment_of({pe, xe}) == BundleCell{0, 5});
}

TEST_CASE("mu_r sampler") {
    CounterRng rng(31, 0);
    CHECK_THROWS_AS(sample_mu_r(0.0, rng), DomainError);
    std::vector<double> cells(48, 0.0), faces(6, 0.0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const TangentState s = sample_mu_r(1.0, rng);
        CHECK(std::abs(s.p.dot(s.xi)) < 1e-15);
        CHECK(std::abs(s.xi.norm() - 1.0) < 1e-15);
        const BundleCell c = bundle_segment_of(s);
        cells[static_cast<std::size_t>(c.i * 8 + c.j)] += 1;
        faces[static_cast<std::size_t>(c.i)] += 1;
    }
    CHECK(chi_square_statistic(cells, std::vector<double>(48, n / 48.0)) <= chi_square_critical(47, 0.99));
    for (double f : faces) {
        CHECK(std::abs(f - n / 6.0) <= 4 * std::sqrt(n * (1.0 / 6) * (5.0 / 6)));
    }
    const TangentState s3 = sample_mu_r(3.0, rng);
    CHECK(s3.xi.norm() == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("orbit measures") {
    const AntisymMatrix3 ez = hat(Vector3(0, 0, 1));
    CounterRng rng(41, 0);
    CHECK_THROWS_AS(sample_mu_X(Vector3(1, 0, 0), AntisymMatrix3(), rng), DomainError);
    // Fixed point of the action: Dirac measure.
    CHECK((sample_mu_X(Vector3(0, 0, 1), ez, rng) - Vector3(0, 0, 1)).norm() < 1e-15);

    const int n = 10000;
    std::vector<Vector3> a(n), b(n);
    double zmean = 0.0;
    const Vector3 r1(1, 0, 0), r2 = orbit_sample(r1, ez, 2.0);
    for (int i = 0; i < n; ++i) {
        a[static_cast<std::size_t>(i)] = sample_mu_X(r1, ez, rng);
        b[static_cast<std::size_t>(i)] = sample_mu_X(r2, ez, rng);
        zmean += a[static_cast<std::size_t>(i)].z();
    }
    CHECK(std::abs(zmean / n) < 4.0 / std::sqrt(n));
    CHECK(two_sample_chi_square(angle_histogram(a), angle_histogram(b)) <= chi_square_critical(31, 0.99));

    // bar nu of a Dirac mass: uniform on the latitude circle z = 1/sqrt 2.
    const double s = 1 / std::sqrt(2.0);
    std::vector<Vector3> c(n);
    for (auto& x : c) {
        x = sample_bar_nu([&](CounterRng&) { return Vector3(0, s, s); }, ez, rng);
        CHECK(std::abs(x.z() - s) < 1e-15);
    }
    CHECK(chi_square_statistic(angle_histogram(c), std::vector<double>(32, n / 32.0)) <=
          chi_square_critical(31, 0.99));

    // An S^1-invariant nu is a fixed point, and bar nu is idempotent.
    const AntisymMatrix3 b2 = hat(Vector3(1, 2, 2));
    const auto uniform = [](CounterRng& r) { return sample_uniform_sphere(r); };
    const auto dirac = [](CounterRng&) { return Vector3(1, 0, 0); };
    std::vector<Vector3> nu(n), nubar(n), once(n), twice(n);
    for (int i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        nu[k] = uniform(rng);
        nubar[k] = sample_bar_nu(uniform, b2, rng);
        once[k] = sample_bar_nu(dirac, b2, rng);
        twice[k] = sample_bar_nu([&](CounterRng& r) { return sample_bar_nu(dirac, b2, r); }, b2, rng);
    }
    CHECK(two_sample_chi_square(z_histogram(nu), z_histogram(nubar)) <= chi_square_critical(31, 0.99));
    CHECK(two_sample_chi_square(angle_histogram(nu), angle_histogram(nubar)) <= chi_square_critical(31, 0.99));
    CHECK(two_sample_chi_square(angle_histogram(once), angle_histogram(twice)) <= chi_square_critical(31, 0.99));
}

TEST_CASE("orbit samplers on SO(3)") {
    CounterRng rng(43, 0);
    const AntisymMatrix3 b = hat(Vector3(0, 1, 0));
    const Rotation3 r = rodrigues_exp(hat(Vector3(1, 0, 0)), 0.3);
    for (int i = 0; i < 100; ++i) {
        const Rotation3 s = sample_mu_X(r, b, rng);
        CHECK(s.orthogonality_defect() < 1e-14);
        // left multiplication by rotations about e_y keeps e_y^T Z fixed
        CHECK((s.matrix().row(1) - r.matrix().row(1)).norm() < 1e-14);
    }
}
