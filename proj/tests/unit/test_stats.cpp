#include <doctest.h>

#include <algorithm>
#include <random>

#include "helpers.hpp"
#include "sphsde/stats.hpp"

using namespace sphsde;

TEST_CASE("exact sums are independent of order and grouping") {
    std::vector<double> xs(10000);
    for (auto& x : xs) {
        x = testutil::uniform(-1, 1) * std::pow(10.0, testutil::uniform(-8, 3));
    }
    ExactSum a;
    for (double x : xs) {
        a.add(x);
    }
    std::shuffle(xs.begin(), xs.end(), testutil::engine());
    ExactSum b, c;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        (i % 3 == 0 ? b : c).add(xs[i]);
    }
    c.merge(b);
    CHECK(a.value() == c.value());
    // Agrees with a long double reference to within the 2^-60 quantum per term.
    long double ref = 0;
    for (double x : xs) {
        ref += x;
    }
    CHECK(std::abs(a.value() - static_cast<double>(ref)) < 1e-12);
}

TEST_CASE("chi-square helpers") {
    CHECK(chi_square_critical(31, 0.99) == doctest::Approx(52.191).epsilon(1e-4));
    CHECK(chi_square_critical(47, 0.99) == doctest::Approx(72.4433).epsilon(1e-4));
    const std::vector<double> o{10, 20, 30}, e{20, 20, 20};
    CHECK(chi_square_statistic(o, e) == doctest::Approx(10.0));
    CHECK(two_sample_chi_square(o, o) == 0.0);
    CHECK(two_sample_chi_square(std::vector<double>{4, 0}, std::vector<double>{0, 4}) == doctest::Approx(8.0));
}

TEST_CASE("lag-1 autocorrelation") {
    const std::vector<double> flat(10, 3.0);
    CHECK(lag1_autocorrelation(flat) == 0.0);
    std::normal_distribution<double> n;
    std::vector<double> ar(100000);
    double x = 0;
    for (auto& v : ar) {
        x = 0.8 * x + n(testutil::engine());
        v = x;
    }
    CHECK(lag1_autocorrelation(ar) == doctest::Approx(0.8).epsilon(0.02));
}
