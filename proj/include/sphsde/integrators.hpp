#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "sphsde/geometry.hpp"

namespace sphsde {

/// Outcome of a fixed-point solve.
struct SolveStats {
    double residual = 0.0;
    std::size_t sweeps = 0;
};

// ---------------------------------------------------------------------------
// Algorithm A: stochastic LLG on S^2
//
//     dz = -z x h dt - z x (h + h_perp) o dW
//
// discretized by the implicit midpoint rule
//
//     Z^{n+1} - Z^n = -k Z^{n+1/2} x h - Z^{n+1/2} x (h + h_perp) dW_{n+1}.
// ---------------------------------------------------------------------------

struct LlgParams {
    UnitVector3 h;
    Vector3 h_perp = Vector3::Zero();
    double k = 0.01;

    /// Throws ConfigError unless <h, h_perp> = 0 (1e-12) and 0 < k < 1.
    void validate() const;
    Vector3 noise_axis() const { return h.vec() + h_perp; }
};

/// Solves Z1 - z = omega x (z + Z1)/2 for Z1 by Picard iteration on the
/// midpoint with the given damping factor. Iterates to machine precision;
/// throws NonconvergenceError if the residual is still above 1e-12 after 200
/// sweeps. The update is a rotation, so |Z1| = |z| up to rounding.
Vector3 midpoint_rotation_step(const Vector3& z, const Vector3& omega, double damping,
                               SolveStats* stats = nullptr);

/// One step of Algorithm A. Requires |z| = 1 within 1e-9 and returns the raw
/// iterate (never renormalized). Damping is 1 when k + |dW| |h + h_perp| < 1
/// and 1/2 otherwise.
Vector3 llg_step(const Vector3& z, const LlgParams& params, double dw, SolveStats* stats = nullptr);

/// Folds llg_step over the increments; result has increments.size() + 1
/// entries. Step failures are rethrown as PathError carrying the step index.
std::vector<Vector3> llg_path(const UnitVector3& z0, const LlgParams& params, std::span<const double> increments);

// ---------------------------------------------------------------------------
// dZ = A Z dt + B Z o dW on SO(3), midpoint (Cayley) rule.
// ---------------------------------------------------------------------------

struct So3Params {
    AntisymMatrix3 a;
    AntisymMatrix3 b;
    double k = 0.01;
};

/// (I - M/2)^{-1} (I + M/2).
Matrix3 cayley(const Matrix3& m);

/// Z^{n+1} = cayley(kA + dW B) Z^n. Throws StepRejection if I - M/2 is singular.
Rotation3 so3_step(const Rotation3& z, const So3Params& params, double dw);

/// Exact solution for commuting A = kappa B:  Z(t) = exp((kappa t + W_t) B) Z(0).
/// Throws DomainError if [A, B] != 0; for B = 0 applies exp(tA).
Rotation3 exact_commuting_step(const Rotation3& z, const AntisymMatrix3& a, const AntisymMatrix3& b, double t,
                               double w_t);
Vector3 exact_commuting_step(const Vector3& z, const AntisymMatrix3& a, const AntisymMatrix3& b, double t,
                             double w_t);

/// Least-squares coefficient of A on B.
double commuting_ratio(const AntisymMatrix3& a, const AntisymMatrix3& b);

// ---------------------------------------------------------------------------
// Algorithm B: stochastic geodesic flow on TS^2
//
//     d(u') = -|u'|^2 u dt + sqrt(D) (u x u') o dW
// ---------------------------------------------------------------------------

struct GeodesicParams {
    double D = 1.0;
    double k = 0.001;
    double eps = 0.25;

    /// Throws ConfigError unless D >= 0, k > 0 and 0 <= eps <= 1/4.
    void validate() const;
};

/// Iterate (U^n, U^{n-1}, V^n) of Algorithm B.
struct GeodesicState {
    std::size_t n = 0;
    Vector3 u;
    Vector3 u_prev;
    Vector3 v;
    double lambda = 0.0;  // multiplier of the last step
};

inline double kinetic_energy(const Vector3& v) { return 0.5 * v.squaredNorm(); }

/// Smallness requirement on the step, k (|V^0| + 1) <= 1/8.
bool geodesic_step_admissible(double k, double speed);

/// Sets U^{-1} = U^0 - k V^0. Throws ConfigError when the step-size bound
/// fails and DomainError when (u0, v0) is not a tangent pair.
GeodesicState geodesic_start(const TangentState& s0, const GeodesicParams& params);

/// One step of Algorithm B. The multiplier is chosen so that |U^{n+1}| = 1
/// exactly in terms of the stored U^{n-1}:
///
///     k lambda |W|^2 = -(V^n, U^{n+1} + U^{n-1}) + (1 - |U^{n-1}|^2) / (2k),
///     W = (U^{n+1} + U^{n-1}) / 2,
///
/// with |W|^2 replaced by max(|W|^2, eps) inside the solve.
GeodesicState geodesic_step(const GeodesicState& s, const GeodesicParams& params, double dw,
                            SolveStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Mean-field (averaged) dynamics
// ---------------------------------------------------------------------------

/// RK4 for  Z' = -Z x h - |h + h_perp|^2 / 2 (Z - <Z, hb> hb),  hb = (h + h_perp)/|h + h_perp|.
/// Returns the values at t = 0, dt, ..., round(t_end/dt) dt.
std::vector<Vector3> averaged_llg_ode(const UnitVector3& z0, const LlgParams& params, double t_end, double dt);

struct MeanGeodesicState {
    Vector3 u;
    Vector3 v;
};

/// Recursion for the ensemble means (U, V) of Algorithm B with constant speed:
///
///     V^{n+1} - V^n = -k (|V^0|^2 U^{n+1} + V^{n+1} / 2),   U^{n+1} = U^n + k V^{n+1}.
///
/// Returns n_steps + 1 states.
std::vector<MeanGeodesicState> averaged_geodesic_ode(double v0_sq, const UnitVector3& u0, const Vector3& v0,
                                                     double k, std::size_t n_steps);

}  // namespace sphsde
