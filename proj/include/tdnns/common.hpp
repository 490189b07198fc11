#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tdnns {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat36 = Eigen::Matrix<double, 3, 6>;
using Mat23 = Eigen::Matrix<double, 2, 3>;

struct material_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct mesh_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct fe_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct solver_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Relative Frobenius distance with a floor for comparing against zero matrices.
template <typename A, typename B>
double rel_frobenius(const A& a, const B& b)
{
    const double scale = std::max(a.norm(), b.norm());
    if (scale == 0.0)
        return 0.0;
    return (a - b).norm() / scale;
}

} // namespace tdnns
