#include "sphsde/integrators.hpp"

#include <cmath>
#include <sstream>

#include "sphsde/error.hpp"
#include "sphsde/lie.hpp"

namespace sphsde {

namespace {

constexpr double kSolveTolerance = 1e-12;
constexpr std::size_t kMaxSweeps = 200;
// Sweeps allowed past kSolveTolerance while the residual keeps shrinking.
constexpr std::size_t kPolishSweeps = 4;

// Damped Picard iteration x <- x + damping (T(x) - x). Once the residual is
// below tolerance * scale, keeps sweeping while it still decreases so the
// result sits at rounding level.
template <class Map>
Vector3 picard(Vector3 x, Map&& map, double damping, double scale, const char* who, SolveStats* stats) {
    const double tolerance = kSolveTolerance * scale;
    double residual = 0.0;
    double previous = HUGE_VAL;
    std::size_t polish = 0;
    std::size_t sweep = 0;
    bool converged = false;
    while (sweep < kMaxSweeps) {
        ++sweep;
        const Vector3 tx = map(x);
        residual = (tx - x).norm();
        if (converged && residual >= previous) {
            break;
        }
        x += damping * (tx - x);
        if (residual <= tolerance) {
            converged = true;
            if (residual == 0.0 || ++polish > kPolishSweeps) {
                break;
            }
        }
        previous = residual;
    }
    if (stats != nullptr) {
        stats->residual = residual;
        stats->sweeps = sweep;
    }
    if (!converged) {
        std::ostringstream msg;
        msg << who << ": fixed-point iteration did not converge (residual " << residual << " after " << sweep
            << " sweeps)";
        throw NonconvergenceError(msg.str(), residual, sweep);
    }
    return x;
}

void require_unit(const Vector3& z, double band, const char* who) {
    if (std::abs(z.norm() - 1.0) > band) {
        std::ostringstream msg;
        msg << who << ": state norm " << z.norm() << " is off the unit sphere";
        throw DomainError(msg.str());
    }
}

}  // namespace

void LlgParams::validate() const {
    if (std::abs(h.vec().dot(h_perp)) > tol::kUnitNorm) {
        throw ConfigError("LlgParams: h_perp must be orthogonal to h");
    }
    if (!(k > 0.0 && k < 1.0)) {
        throw ConfigError("LlgParams: step size k must satisfy 0 < k < 1");
    }
}

Vector3 midpoint_rotation_step(const Vector3& z, const Vector3& omega, double damping, SolveStats* stats) {
    const Vector3 half = 0.5 * omega;
    const Vector3 mid =
        picard(z, [&](const Vector3& m) -> Vector3 { return z + half.cross(m); }, damping,
               std::max(1.0, z.norm()), "midpoint_rotation_step", stats);
    return z + omega.cross(mid);
}

Vector3 llg_step(const Vector3& z, const LlgParams& params, double dw, SolveStats* stats) {
    require_unit(z, tol::kNormalizeBand, "llg_step");
    const Vector3 b = params.noise_axis();
    // -k m x h - m x b dW = (k h + dW b) x m
    const Vector3 omega = params.k * params.h.vec() + dw * b;
    const double size = params.k + std::abs(dw) * b.norm();
    return midpoint_rotation_step(z, omega, size < 1.0 ? 1.0 : 0.5, stats);
}

std::vector<Vector3> llg_path(const UnitVector3& z0, const LlgParams& params, std::span<const double> increments) {
    params.validate();
    std::vector<Vector3> path;
    path.reserve(increments.size() + 1);
    path.push_back(z0.vec());
    for (std::size_t n = 0; n < increments.size(); ++n) {
        try {
            path.push_back(llg_step(path.back(), params, increments[n]));
        } catch (const std::exception& e) {
            throw PathError(std::string("llg_path: step failed: ") + e.what(), 0, n);
        }
    }
    return path;
}

Matrix3 cayley(const Matrix3& m) {
    const Matrix3 lhs = Matrix3::Identity() - 0.5 * m;
    const double det = lhs.determinant();
    if (!(std::abs(det) > 1e-14)) {
        throw StepRejection("cayley: I - M/2 is singular");
    }
    return lhs.partialPivLu().solve(Matrix3::Identity() + 0.5 * m);
}

Rotation3 so3_step(const Rotation3& z, const So3Params& params, double dw) {
    const Matrix3 m = params.k * params.a.matrix() + dw * params.b.matrix();
    return Rotation3(cayley(m) * z.matrix());
}

double commuting_ratio(const AntisymMatrix3& a, const AntisymMatrix3& b) {
    const double bb = b.axis().squaredNorm();
    return bb > 0.0 ? a.axis().dot(b.axis()) / bb : 0.0;
}

namespace {

Rotation3 commuting_flow(const AntisymMatrix3& a, const AntisymMatrix3& b, double t, double w_t) {
    const double scale = std::max(1.0, a.axis().norm() * b.axis().norm());
    if (commutator(a, b).axis().norm() > 1e-10 * scale) {
        throw DomainError("exact_commuting_step: [A, B] != 0");
    }
    if (b.is_zero()) {
        return rodrigues_exp(a, t);
    }
    return rodrigues_exp(b, commuting_ratio(a, b) * t + w_t);
}

}  // namespace

Rotation3 exact_commuting_step(const Rotation3& z, const AntisymMatrix3& a, const AntisymMatrix3& b, double t,
                               double w_t) {
    return commuting_flow(a, b, t, w_t) * z;
}

Vector3 exact_commuting_step(const Vector3& z, const AntisymMatrix3& a, const AntisymMatrix3& b, double t,
                             double w_t) {
    return commuting_flow(a, b, t, w_t) * z;
}

void GeodesicParams::validate() const {
    if (!(D >= 0.0)) {
        throw ConfigError("GeodesicParams: noise intensity D must be >= 0");
    }
    if (!(k > 0.0)) {
        throw ConfigError("GeodesicParams: step size k must be > 0");
    }
    if (!(eps >= 0.0 && eps <= 0.25)) {
        throw ConfigError("GeodesicParams: eps must lie in [0, 1/4]");
    }
}

bool geodesic_step_admissible(double k, double speed) { return k * (speed + 1.0) <= 0.125; }

GeodesicState geodesic_start(const TangentState& s0, const GeodesicParams& params) {
    params.validate();
    require_unit(s0.p, tol::kTangent, "geodesic_start");
    if (std::abs(s0.p.dot(s0.xi)) > tol::kTangent) {
        throw DomainError("geodesic_start: initial velocity is not tangent");
    }
    if (!geodesic_step_admissible(params.k, s0.xi.norm())) {
        std::ostringstream msg;
        msg << "geodesic_start: step size k = " << params.k << " violates k (|V0| + 1) <= 1/8 for |V0| = "
            << s0.xi.norm();
        throw ConfigError(msg.str());
    }
    GeodesicState s;
    s.n = 0;
    s.u = s0.p;
    s.v = s0.xi;
    s.u_prev = s0.p - params.k * s0.xi;
    return s;
}

GeodesicState geodesic_step(const GeodesicState& s, const GeodesicParams& params, double dw, SolveStats* stats) {
    require_unit(s.u, tol::kTangent, "geodesic_step");
    const double k = params.k;
    const double sigma = std::sqrt(params.D) * dw;
    const Vector3 base = 0.5 * (s.u + s.u_prev);
    const double constraint = (1.0 - s.u_prev.squaredNorm()) / (2.0 * k);

    // k * lambda for a given midpoint W.
    const auto scaled_multiplier = [&](const Vector3& w) {
        const double denom = std::max(w.squaredNorm(), params.eps);
        return denom > 0.0 ? (-2.0 * s.v.dot(w) + constraint) / denom : 0.0;
    };
    const auto map = [&](const Vector3& v_next) -> Vector3 {
        const Vector3 w = base + 0.5 * k * v_next;
        return s.v + scaled_multiplier(w) * w + (0.5 * sigma) * w.cross(v_next + s.v);
    };

    const Vector3 v_next = picard(s.v, map, 1.0, std::max(1.0, s.v.norm()), "geodesic_step", stats);
    const Vector3 w = base + 0.5 * k * v_next;
    if (w.norm() <= params.eps) {
        std::ostringstream msg;
        msg << "geodesic_step: degenerate midpoint |W| = " << w.norm() << " (step size too large)";
        throw DegenerateMidpointError(msg.str(), w.norm());
    }

    GeodesicState next;
    next.n = s.n + 1;
    next.u_prev = s.u;
    next.u = s.u + k * v_next;
    next.v = v_next;
    next.lambda = scaled_multiplier(w) / k;
    return next;
}

std::vector<Vector3> averaged_llg_ode(const UnitVector3& z0, const LlgParams& params, double t_end, double dt) {
    if (!(dt > 0.0) || !(t_end >= 0.0)) {
        throw DomainError("averaged_llg_ode: need dt > 0 and t_end >= 0");
    }
    const Vector3 b = params.noise_axis();
    const double bb = b.squaredNorm();
    if (!(bb > 0.0)) {
        throw DomainError("averaged_llg_ode: h + h_perp must be nonzero");
    }
    const Vector3 hb = b / std::sqrt(bb);
    const Vector3& h = params.h.vec();
    const auto rhs = [&](const Vector3& z) -> Vector3 {
        return h.cross(z) - 0.5 * bb * (z - z.dot(hb) * hb);
    };

    const auto steps = static_cast<std::size_t>(std::llround(t_end / dt));
    std::vector<Vector3> out;
    out.reserve(steps + 1);
    Vector3 z = z0.vec();
    out.push_back(z);
    for (std::size_t n = 0; n < steps; ++n) {
        const Vector3 k1 = rhs(z);
        const Vector3 k2 = rhs(z + 0.5 * dt * k1);
        const Vector3 k3 = rhs(z + 0.5 * dt * k2);
        const Vector3 k4 = rhs(z + dt * k3);
        z += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push_back(z);
    }
    return out;
}

std::vector<MeanGeodesicState> averaged_geodesic_ode(double v0_sq, const UnitVector3& u0, const Vector3& v0,
                                                     double k, std::size_t n_steps) {
    if (!(k > 0.0)) {
        throw DomainError("averaged_geodesic_ode: k must be > 0");
    }
    std::vector<MeanGeodesicState> out;
    out.reserve(n_steps + 1);
    MeanGeodesicState s{u0.vec(), v0};
    out.push_back(s);
    // (1 + k/2 + k^2 c) V^{n+1} = V^n - k c U^n after eliminating U^{n+1}.
    const double denom = 1.0 + 0.5 * k + k * k * v0_sq;
    for (std::size_t n = 0; n < n_steps; ++n) {
        const Vector3 v = (s.v - k * v0_sq * s.u) / denom;
        s.u += k * v;
        s.v = v;
        out.push_back(s);
    }
    return out;
}

}  // namespace sphsde
