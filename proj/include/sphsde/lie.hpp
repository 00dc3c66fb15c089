#pragma once

#include <vector>

#include "sphsde/geometry.hpp"

namespace sphsde {

/// Smallest bracket-closed subspace of so(3) containing a set of generators.
struct BracketClosure {
    std::vector<AntisymMatrix3> generators;
    std::vector<AntisymMatrix3> basis;  // orthonormal in the axis inner product
    int rank = 0;

    /// Least-squares residual of x against span(basis).
    double residual(const AntisymMatrix3& x) const;
};

/// XY - YX.
AntisymMatrix3 commutator(const AntisymMatrix3& x, const AntisymMatrix3& y);

/// Numerical rank of a set of so(3) elements: singular values of the stacked
/// axis vectors above 1e-9 * max(sigma_max, 1).
int so3_rank(const std::vector<AntisymMatrix3>& elements);

BracketClosure bracket_closure(const std::vector<AntisymMatrix3>& generators);

/// Rank of the Lie algebra generated by the drift and noise matrices. On S^2
/// and SO(3) rank 3 certifies the Hoermander condition and rank < 3 refutes it.
int hormander_rank(const AntisymMatrix3& drift, const std::vector<AntisymMatrix3>& noises);

/// exp(sB) by the Rodrigues closed form; identity for B = 0.
Rotation3 rodrigues_exp(const AntisymMatrix3& b, double s);

/// The circle action p -> s(p) generated by a nonzero B:
///
///     s(x, y) = (1 - x) / rho^2 B^2 + y / rho B + I,   (x, y) on S^1.
///
/// s is a group homomorphism from S^1 (complex multiplication) into SO(3).
class CircleAction {
  public:
    /// Throws DomainError for B = 0.
    explicit CircleAction(const AntisymMatrix3& b);

    const AntisymMatrix3& generator() const { return b_; }
    double rho() const { return rho_; }

    /// Throws DomainError unless x^2 + y^2 = 1 within 1e-10.
    Rotation3 operator()(double x, double y) const;
    Rotation3 at_angle(double theta) const;

  private:
    AntisymMatrix3 b_;
    double rho_;
};

Rotation3 s_map(double x, double y, const AntisymMatrix3& b);

/// Moves z along its orbit under the circle action by the angle theta.
/// With theta uniform on [0, 2pi) the result is distributed as the orbit
/// measure through z.
Vector3 orbit_sample(const Vector3& z, const AntisymMatrix3& b, double theta);
Rotation3 orbit_sample(const Rotation3& z, const AntisymMatrix3& b, double theta);

}  // namespace sphsde
