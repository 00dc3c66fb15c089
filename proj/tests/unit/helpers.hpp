#pragma once

#include <cmath>
#include <random>

#include "sphsde/geometry.hpp"

namespace testutil {

inline std::mt19937_64& engine() {
    static std::mt19937_64 e(12345);
    return e;
}

inline double uniform(double a = -1.0, double b = 1.0) { return std::uniform_real_distribution<double>(a, b)(engine()); }

inline sphsde::Vector3 random_vector(double scale = 1.0) {
    return sphsde::Vector3(uniform(), uniform(), uniform()) * scale;
}

inline sphsde::Vector3 random_unit() {
    std::normal_distribution<double> n;
    sphsde::Vector3 v;
    do {
        v = sphsde::Vector3(n(engine()), n(engine()), n(engine()));
    } while (v.norm() < 1e-6);
    return v.normalized();
}

inline double max_abs_diff(const sphsde::Matrix3& a, const sphsde::Matrix3& b) {
    return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace testutil
