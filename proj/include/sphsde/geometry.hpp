#pragma once

#include <Eigen/Dense>

namespace sphsde {

using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;

namespace tol {
// Fixed library tolerances; invariant tests compare against these directly.
inline constexpr double kUnitNorm = 1e-12;
inline constexpr double kNormalizeBand = 1e-9;
inline constexpr double kOrthogonal = 1e-10;
inline constexpr double kTangent = 1e-10;
}  // namespace tol

/// Point on S^2.
///
/// Construction normalizes inputs whose norm lies within 1e-9 of one and
/// rejects anything else, so grossly wrong vectors never get silently
/// projected back onto the sphere.
class UnitVector3 {
  public:
    UnitVector3() : v_(0.0, 0.0, 1.0) {}
    UnitVector3(double x, double y, double z) : UnitVector3(Vector3(x, y, z)) {}
    explicit UnitVector3(const Vector3& v);

    /// Normalizes any nonzero vector. Throws DomainError on zero input.
    static UnitVector3 normalized(const Vector3& v);

    double x() const { return v_.x(); }
    double y() const { return v_.y(); }
    double z() const { return v_.z(); }
    const Vector3& vec() const { return v_; }
    operator const Vector3&() const { return v_; }

  private:
    Vector3 v_;
};

/// Element of so(3), stored by its axis vector (a, b, c):
///
///     [[ 0, -c,  b],
///      [ c,  0, -a],
///      [-b,  a,  0]]
class AntisymMatrix3 {
  public:
    AntisymMatrix3() : axis_(Vector3::Zero()) {}
    AntisymMatrix3(double a, double b, double c) : axis_(a, b, c) {}
    explicit AntisymMatrix3(const Vector3& axis) : axis_(axis) {}

    /// Reads the three independent entries of m. Throws DomainError if
    /// m + m^T exceeds 1e-12 * max(1, |m|).
    static AntisymMatrix3 from_matrix(const Matrix3& m);

    const Vector3& axis() const { return axis_; }
    Matrix3 matrix() const;
    bool is_zero() const { return axis_.isZero(0.0); }

    Vector3 operator*(const Vector3& w) const { return axis_.cross(w); }
    AntisymMatrix3 operator+(const AntisymMatrix3& o) const { return AntisymMatrix3(axis_ + o.axis_); }
    AntisymMatrix3 operator-(const AntisymMatrix3& o) const { return AntisymMatrix3(axis_ - o.axis_); }
    AntisymMatrix3 operator-() const { return AntisymMatrix3(-axis_); }
    friend AntisymMatrix3 operator*(double s, const AntisymMatrix3& m) { return AntisymMatrix3(s * m.axis_); }

  private:
    Vector3 axis_;
};

/// Element of SO(3). Construction checks R^T R = I and det R = 1 within 1e-10;
/// the stored entries are never re-orthonormalized.
class Rotation3 {
  public:
    Rotation3() : m_(Matrix3::Identity()) {}
    explicit Rotation3(const Matrix3& m);

    static Rotation3 identity() { return Rotation3(); }

    const Matrix3& matrix() const { return m_; }
    double orthogonality_defect() const { return (m_.transpose() * m_ - Matrix3::Identity()).norm(); }
    double determinant_defect() const { return std::abs(m_.determinant() - 1.0); }

    Rotation3 operator*(const Rotation3& o) const { return Rotation3(m_ * o.m_, Unchecked{}); }
    Vector3 operator*(const Vector3& v) const { return m_ * v; }
    Rotation3 transpose() const { return Rotation3(m_.transpose(), Unchecked{}); }

  private:
    struct Unchecked {};
    Rotation3(const Matrix3& m, Unchecked) : m_(m) {}

    Matrix3 m_;
};

/// Point (p, xi) of the tangent bundle TS^2.
struct TangentState {
    Vector3 p;
    Vector3 xi;

    double speed() const { return xi.norm(); }
};

Vector3 cross(const Vector3& a, const Vector3& b);

AntisymMatrix3 hat(const Vector3& v);
Vector3 unhat(const AntisymMatrix3& m);

/// (|B|_F^2 / 2)^{1/2}, i.e. the norm of the axis vector.
double rho(const AntisymMatrix3& b);

/// Normalizes p and removes the p-component of xi.
TangentState project_tangent(const TangentState& s);

}  // namespace sphsde
