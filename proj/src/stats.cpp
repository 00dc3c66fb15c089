#include "sphsde/stats.hpp"

#include <cmath>
#include <numeric>

#include <boost/math/distributions/chi_squared.hpp>

#include "sphsde/error.hpp"

namespace sphsde {

namespace {
constexpr double kFixedScale = 0x1.0p60;
}

void ExactSum::add(double x) {
    if (!std::isfinite(x) || std::abs(x) >= 0x1.0p60) {
        throw DomainError("ExactSum: term out of range");
    }
    acc_ += static_cast<Int128>(std::nearbyint(x * kFixedScale));
}

double ExactSum::value() const { return static_cast<double>(acc_) / kFixedScale; }

double chi_square_statistic(std::span<const double> observed, std::span<const double> expected) {
    if (observed.size() != expected.size()) {
        throw DomainError("chi_square_statistic: size mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        if (expected[i] > 0.0) {
            const double d = observed[i] - expected[i];
            s += d * d / expected[i];
        }
    }
    return s;
}

double two_sample_chi_square(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DomainError("two_sample_chi_square: size mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double n = a[i] + b[i];
        if (n > 0.0) {
            const double d = a[i] - b[i];
            s += d * d / n;
        }
    }
    return s;
}

double chi_square_critical(double dof, double level) {
    return boost::math::quantile(boost::math::chi_squared(dof), level);
}

double lag1_autocorrelation(std::span<const double> series) {
    const std::size_t n = series.size();
    if (n < 2) {
        return 0.0;
    }
    const double mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(n);
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = series[i] - mean;
        den += d * d;
        if (i + 1 < n) {
            num += d * (series[i + 1] - mean);
        }
    }
    return den > 0.0 ? num / den : 0.0;
}

}  // namespace sphsde
