#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace sphsde {

__extension__ using Int128 = __int128;

/// Order-independent sum of doubles: each term is rounded to a multiple of
/// 2^-60 and accumulated in a 128-bit integer, so merging partial sums in any
/// order gives bit-identical totals. Terms must satisfy |x| < 2^60.
class ExactSum {
  public:
    void add(double x);
    void merge(const ExactSum& other) { acc_ += other.acc_; }
    double value() const;

  private:
    Int128 acc_ = 0;
};

/// sum (o - e)^2 / e over cells with e > 0.
double chi_square_statistic(std::span<const double> observed, std::span<const double> expected);

/// Two-sample statistic for equal-size samples: sum (a - b)^2 / (a + b) over nonempty cells.
double two_sample_chi_square(std::span<const double> a, std::span<const double> b);

/// Upper quantile of the chi-square distribution: P(X > x) = 1 - level.
double chi_square_critical(double dof, double level);

/// Lag-1 autocorrelation of a series; 0 for constant series.
double lag1_autocorrelation(std::span<const double> series);

}  // namespace sphsde
