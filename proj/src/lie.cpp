#include "sphsde/lie.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sphsde/error.hpp"

namespace sphsde {

namespace {

constexpr double kRankThreshold = 1e-9;
constexpr int kMaxClosureRounds = 3;

// Orthonormal basis (as rows of V^T) of the span of the given axis vectors.
std::vector<AntisymMatrix3> orthonormal_span(const std::vector<AntisymMatrix3>& elements) {
    std::vector<AntisymMatrix3> basis;
    if (elements.empty()) {
        return basis;
    }
    Eigen::MatrixXd stacked(static_cast<Eigen::Index>(elements.size()), 3);
    for (std::size_t i = 0; i < elements.size(); ++i) {
        stacked.row(static_cast<Eigen::Index>(i)) = elements[i].axis().transpose();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(stacked, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const double cutoff = kRankThreshold * std::max(sv.size() > 0 ? sv(0) : 0.0, 1.0);
    for (Eigen::Index i = 0; i < sv.size(); ++i) {
        if (sv(i) > cutoff) {
            basis.emplace_back(Vector3(svd.matrixV().col(i)));
        }
    }
    return basis;
}

}  // namespace

double BracketClosure::residual(const AntisymMatrix3& x) const {
    Vector3 r = x.axis();
    for (const auto& e : basis) {
        r -= e.axis().dot(r) * e.axis();
    }
    return r.norm();
}

AntisymMatrix3 commutator(const AntisymMatrix3& x, const AntisymMatrix3& y) {
    const Matrix3 mx = x.matrix();
    const Matrix3 my = y.matrix();
    return AntisymMatrix3::from_matrix(mx * my - my * mx);
}

int so3_rank(const std::vector<AntisymMatrix3>& elements) {
    return static_cast<int>(orthonormal_span(elements).size());
}

BracketClosure bracket_closure(const std::vector<AntisymMatrix3>& generators) {
    BracketClosure out;
    out.generators = generators;
    out.basis = orthonormal_span(generators);

    // L_{n+1} = span(L_n and all brackets of L_n). The rank is nondecreasing and
    // bounded by dim so(3) = 3, so three rounds always suffice.
    for (int round = 0; round < kMaxClosureRounds; ++round) {
        std::vector<AntisymMatrix3> grown = out.basis;
        for (std::size_t i = 0; i < out.basis.size(); ++i) {
            for (std::size_t j = i + 1; j < out.basis.size(); ++j) {
                grown.push_back(commutator(out.basis[i], out.basis[j]));
            }
        }
        auto next = orthonormal_span(grown);
        const bool stable = next.size() == out.basis.size();
        out.basis = std::move(next);
        if (stable) {
            break;
        }
    }
    out.rank = static_cast<int>(out.basis.size());
    return out;
}

int hormander_rank(const AntisymMatrix3& drift, const std::vector<AntisymMatrix3>& noises) {
    std::vector<AntisymMatrix3> all;
    all.reserve(noises.size() + 1);
    all.push_back(drift);
    all.insert(all.end(), noises.begin(), noises.end());
    return bracket_closure(all).rank;
}

Rotation3 rodrigues_exp(const AntisymMatrix3& b, double s) {
    const double r = b.axis().norm();
    if (r == 0.0) {
        return Rotation3::identity();
    }
    const Matrix3 m = b.matrix();
    const double rs = r * s;
    // (1 - cos x) written as 2 sin^2(x/2) keeps small angles accurate.
    const double half = std::sin(0.5 * rs);
    const Matrix3 e = (2.0 * half * half / (r * r)) * (m * m) + (std::sin(rs) / r) * m + Matrix3::Identity();
    return Rotation3(e);
}

CircleAction::CircleAction(const AntisymMatrix3& b) : b_(b), rho_(sphsde::rho(b)) {
    if (!(rho_ > 0.0)) {
        throw DomainError("CircleAction: generator B must be nonzero");
    }
}

Rotation3 CircleAction::operator()(double x, double y) const {
    if (std::abs(x * x + y * y - 1.0) > 1e-10) {
        std::ostringstream msg;
        msg << "CircleAction: (" << x << ", " << y << ") is not on S^1";
        throw DomainError(msg.str());
    }
    const Matrix3 m = b_.matrix();
    return Rotation3(((1.0 - x) / (rho_ * rho_)) * (m * m) + (y / rho_) * m + Matrix3::Identity());
}

Rotation3 CircleAction::at_angle(double theta) const { return (*this)(std::cos(theta), std::sin(theta)); }

Rotation3 s_map(double x, double y, const AntisymMatrix3& b) { return CircleAction(b)(x, y); }

Vector3 orbit_sample(const Vector3& z, const AntisymMatrix3& b, double theta) {
    return CircleAction(b).at_angle(theta) * z;
}

Rotation3 orbit_sample(const Rotation3& z, const AntisymMatrix3& b, double theta) {
    return CircleAction(b).at_angle(theta) * z;
}

}  // namespace sphsde
