#include "sphsde/geometry.hpp"

#include <cmath>
#include <sstream>

#include "sphsde/error.hpp"

namespace sphsde {

UnitVector3::UnitVector3(const Vector3& v) {
    const double n = v.norm();
    if (!(std::abs(n - 1.0) <= tol::kNormalizeBand)) {
        std::ostringstream msg;
        msg << "UnitVector3: input norm " << n << " is outside [1-1e-9, 1+1e-9]";
        throw DomainError(msg.str());
    }
    v_ = v / n;
}

UnitVector3 UnitVector3::normalized(const Vector3& v) {
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw DomainError("UnitVector3::normalized: zero or non-finite vector");
    }
    return UnitVector3(Vector3(v / n));
}

AntisymMatrix3 AntisymMatrix3::from_matrix(const Matrix3& m) {
    const double scale = std::max(1.0, m.norm());
    if ((m + m.transpose()).norm() > 1e-12 * scale) {
        throw DomainError("AntisymMatrix3::from_matrix: matrix is not antisymmetric");
    }
    return AntisymMatrix3(m(2, 1), m(0, 2), m(1, 0));
}

Matrix3 AntisymMatrix3::matrix() const {
    Matrix3 m;
    // clang-format off
    m <<        0.0, -axis_.z(),  axis_.y(),
          axis_.z(),        0.0, -axis_.x(),
         -axis_.y(),  axis_.x(),        0.0;
    // clang-format on
    return m;
}

Rotation3::Rotation3(const Matrix3& m) : m_(m) {
    if (orthogonality_defect() > tol::kOrthogonal || determinant_defect() > tol::kOrthogonal) {
        std::ostringstream msg;
        msg << "Rotation3: not in SO(3) (|R^T R - I| = " << orthogonality_defect()
            << ", |det R - 1| = " << determinant_defect() << ")";
        throw DomainError(msg.str());
    }
}

Vector3 cross(const Vector3& a, const Vector3& b) { return a.cross(b); }

AntisymMatrix3 hat(const Vector3& v) { return AntisymMatrix3(v); }

Vector3 unhat(const AntisymMatrix3& m) { return m.axis(); }

double rho(const AntisymMatrix3& b) { return std::sqrt(0.5 * b.matrix().squaredNorm()); }

TangentState project_tangent(const TangentState& s) {
    const double n = s.p.norm();
    if (!(n > 0.0)) {
        throw DomainError("project_tangent: zero-length base point");
    }
    const Vector3 p = s.p / n;
    Vector3 xi = s.xi - p.dot(s.xi) * p;
    // One correction sweep brings <p, xi> down to rounding level.
    xi -= p.dot(xi) * p;
    return {p, xi};
}

}  // namespace sphsde
