#pragma once

#include "tdnns/common.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace tdnns {

/// CODATA value; material cards carry relative permittivities.
inline constexpr double vacuum_permittivity = 8.8541878128e-12; // F/m

// Voigt ordering is (11, 22, 33, 23, 13, 12) in 3D and (11, 33, 13) in 2D,
// with engineering shear strains. Compliance maps stress Voigt vectors to
// engineering strain Voigt vectors.

namespace detail {

inline void require_spd(const Eigen::MatrixXd& m, const std::string& name)
{
    if (rel_frobenius(m, m.transpose().eval()) > 1e-10)
        throw material_error(name + " is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    if (es.eigenvalues().minCoeff() <= 0.0)
        throw material_error(name + " is not positive definite (min eigenvalue " +
                             std::to_string(es.eigenvalues().minCoeff()) + ")");
}

} // namespace detail

/// All three constitutive parameter sets of linear piezoelasticity for one
/// material, 3D Voigt form. Immutable after construction.
struct MaterialForms {
    Mat6 C_E;        // elasticity at constant E [N/m^2]
    Mat6 S_E;        // compliance at constant E [m^2/N]
    Mat6 S_D;        // compliance at constant D [m^2/N]
    Mat36 e;         // stress coupling [C/m^2]
    Mat36 d;         // strain coupling [m/V]
    Mat36 g;         // voltage coupling [m^2/C]
    Mat3 eps_eps;    // permittivity at constant strain [F/m]
    Mat3 eps_sigma;  // permittivity at constant stress [F/m]
};

/// Plane-reduced constitutive data on Voigt components (xx, zz, xz) with
/// in-plane field components (E_x, E_z).
struct Material2D {
    Eigen::Matrix3d C_E2, S_E2, S_D2;
    Mat23 e2, d2, g2;
    Mat2 eps_eps2, eps_sigma2;
};

inline MaterialForms from_e_form(const Mat6& C_E, const Mat36& e, const Mat3& eps_eps)
{
    detail::require_spd(C_E, "C_E");
    detail::require_spd(eps_eps, "eps_eps");
    MaterialForms m;
    m.C_E = C_E;
    m.e = e;
    m.eps_eps = eps_eps;
    m.S_E = C_E.inverse();
    m.d = e * m.S_E;
    m.eps_sigma = eps_eps + m.d * e.transpose();
    m.g = m.eps_sigma.inverse() * m.d;
    m.S_D = m.S_E - m.d.transpose() * m.g;
    return m;
}

inline MaterialForms from_d_form(const Mat6& S_E, const Mat36& d, const Mat3& eps_sigma)
{
    detail::require_spd(S_E, "S_E");
    detail::require_spd(eps_sigma, "eps_sigma");
    const Mat6 C_E = S_E.inverse();
    const Mat36 e = d * C_E;
    const Mat3 eps_eps = eps_sigma - d * e.transpose();
    // eps_sigma - d C_E d^T must stay positive definite for a physical card
    detail::require_spd(eps_eps, "eps_eps (= eps_sigma - d C_E d^T)");
    return from_e_form(C_E, e, eps_eps);
}

inline MaterialForms isotropic(double Y, double nu, double eps_rel)
{
    if (!(Y > 0.0))
        throw material_error("isotropic: Young modulus must be positive");
    if (!(nu > -1.0 && nu < 0.5))
        throw material_error("isotropic: Poisson ratio must lie in (-1, 0.5)");
    if (!(eps_rel > 0.0))
        throw material_error("isotropic: relative permittivity must be positive");
    const double lam = Y * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    const double mu = Y / (2.0 * (1.0 + nu));
    Mat6 C = Mat6::Zero();
    C.topLeftCorner<3, 3>().setConstant(lam);
    for (int i = 0; i < 3; ++i) {
        C(i, i) = lam + 2.0 * mu;
        C(3 + i, 3 + i) = mu;
    }
    return from_e_form(C, Mat36::Zero(), eps_rel * vacuum_permittivity * Mat3::Identity());
}

enum class PlaneReduction { strain, stress };
enum class PolingAxis { x3 };

/// Plane reduction in the x1-x3 plane with poling along x3. Plane strain
/// deletes strain/field components in the e-form, plane stress deletes stress
/// components in the d-form; all remaining forms are regenerated in reduced
/// dimension.
inline Material2D reduce_to_plane(const MaterialForms& m, PolingAxis /*axis*/ = PolingAxis::x3,
                                  PlaneReduction mode = PlaneReduction::strain)
{
    const int keep_voigt[3] = {0, 2, 4}; // 11, 33, 13
    const int keep_field[2] = {0, 2};    // E_x, E_z
    Material2D r;
    if (mode == PlaneReduction::strain) {
        Eigen::Matrix3d C2;
        Mat23 e2;
        Mat2 epse2;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                C2(i, j) = m.C_E(keep_voigt[i], keep_voigt[j]);
        for (int a = 0; a < 2; ++a)
            for (int j = 0; j < 3; ++j)
                e2(a, j) = m.e(keep_field[a], keep_voigt[j]);
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
                epse2(a, b) = m.eps_eps(keep_field[a], keep_field[b]);
        r.C_E2 = C2;
        r.e2 = e2;
        r.eps_eps2 = epse2;
        r.S_E2 = C2.inverse();
        r.d2 = e2 * r.S_E2;
        r.eps_sigma2 = epse2 + r.d2 * e2.transpose();
    } else {
        Eigen::Matrix3d S2;
        Mat23 d2;
        Mat2 epss2;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                S2(i, j) = m.S_E(keep_voigt[i], keep_voigt[j]);
        for (int a = 0; a < 2; ++a)
            for (int j = 0; j < 3; ++j)
                d2(a, j) = m.d(keep_field[a], keep_voigt[j]);
        for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b)
                epss2(a, b) = m.eps_sigma(keep_field[a], keep_field[b]);
        r.S_E2 = S2;
        r.d2 = d2;
        r.eps_sigma2 = epss2;
        r.C_E2 = S2.inverse();
        r.e2 = d2 * r.C_E2;
        r.eps_eps2 = epss2 - d2 * r.e2.transpose();
    }
    r.g2 = r.eps_sigma2.inverse() * r.d2;
    r.S_D2 = r.S_E2 - r.d2.transpose() * r.g2;
    return r;
}

/// Maximum relative residual over the connecting relations; used by tests and
/// by card loading as a construction audit.
inline double consistency_residual(const MaterialForms& m)
{
    double res = 0.0;
    res = std::max(res, rel_frobenius((m.S_E * m.C_E).eval(), Mat6::Identity().eval()));
    res = std::max(res, rel_frobenius(m.d, (m.e * m.S_E).eval()));
    res = std::max(res, rel_frobenius(m.eps_sigma, (m.eps_eps + m.d * m.e.transpose()).eval()));
    res = std::max(res, rel_frobenius(m.g, (m.eps_sigma.inverse() * m.d).eval()));
    res = std::max(res, rel_frobenius(m.S_D, (m.S_E - m.d.transpose() * m.g).eval()));
    return res;
}

inline double consistency_residual(const Material2D& m)
{
    double res = 0.0;
    res = std::max(res, rel_frobenius((m.S_E2 * m.C_E2).eval(), Eigen::Matrix3d::Identity().eval()));
    res = std::max(res, rel_frobenius(m.d2, (m.e2 * m.S_E2).eval()));
    res = std::max(res, rel_frobenius(m.eps_sigma2, (m.eps_eps2 + m.d2 * m.e2.transpose()).eval()));
    res = std::max(res, rel_frobenius(m.g2, (m.eps_sigma2.inverse() * m.d2).eval()));
    res = std::max(res, rel_frobenius(m.S_D2, (m.S_E2 - m.d2.transpose() * m.g2).eval()));
    return res;
}

// ---------------------------------------------------------------------------
// Material cards: UTF-8 text, one `key = value` per line, SI units, relative
// permittivities. `form` selects the parameter set; unknown keys are rejected.
// ---------------------------------------------------------------------------

namespace detail {

inline Mat6 transversely_isotropic_66(double m11, double m33, double m12, double m13, double m44,
                                      double m66)
{
    Mat6 m = Mat6::Zero();
    m(0, 0) = m(1, 1) = m11;
    m(2, 2) = m33;
    m(0, 1) = m(1, 0) = m12;
    m(0, 2) = m(2, 0) = m(1, 2) = m(2, 1) = m13;
    m(3, 3) = m(4, 4) = m44;
    m(5, 5) = m66;
    return m;
}

inline Mat36 coupling_36(double k31, double k33, double k15)
{
    Mat36 m = Mat36::Zero();
    m(0, 4) = k15;
    m(1, 3) = k15;
    m(2, 0) = m(2, 1) = k31;
    m(2, 2) = k33;
    return m;
}

} // namespace detail

inline MaterialForms parse_material_card(std::istream& in, const std::string& origin = "card")
{
    std::map<std::string, double> num;
    std::string form;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        const auto notspace = line.find_first_not_of(" \t\r\n");
        if (notspace == std::string::npos)
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw material_error(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r\n");
            const auto e = s.find_last_not_of(" \t\r\n");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "form") {
            form = val;
            continue;
        }
        try {
            std::size_t pos = 0;
            const double x = std::stod(val, &pos);
            if (pos != val.size())
                throw std::invalid_argument(val);
            if (num.count(key))
                throw material_error(origin + ":" + std::to_string(lineno) + ": duplicate key `" + key + "`");
            num[key] = x;
        } catch (const std::invalid_argument&) {
            throw material_error(origin + ":" + std::to_string(lineno) + ": bad numeric value `" + val + "`");
        }
    }

    auto take = [&](const char* key) {
        auto it = num.find(key);
        if (it == num.end())
            throw material_error(origin + ": missing key `" + std::string(key) + "`");
        const double v = it->second;
        num.erase(it);
        return v;
    };

    MaterialForms m;
    if (form == "e") {
        const Mat6 C = detail::transversely_isotropic_66(take("C11"), take("C33"), take("C12"),
                                                         take("C13"), take("C44"), take("C66"));
        const Mat36 e = detail::coupling_36(take("e31"), take("e33"), take("e15"));
        Mat3 epse = Mat3::Zero();
        const double e11 = take("eps11_rel") * vacuum_permittivity;
        const double e33 = take("eps33_rel") * vacuum_permittivity;
        epse.diagonal() << e11, e11, e33;
        m = from_e_form(C, e, epse);
    } else if (form == "d") {
        const Mat6 S = detail::transversely_isotropic_66(take("S11"), take("S33"), take("S12"),
                                                         take("S13"), take("S44"), take("S66"));
        const Mat36 d = detail::coupling_36(take("d31"), take("d33"), take("d15"));
        Mat3 epss = Mat3::Zero();
        const double e11 = take("eps11_rel") * vacuum_permittivity;
        const double e33 = take("eps33_rel") * vacuum_permittivity;
        epss.diagonal() << e11, e11, e33;
        m = from_d_form(S, d, epss);
    } else if (form == "isotropic") {
        m = isotropic(take("Y"), take("nu"), take("eps_rel"));
    } else if (form.empty()) {
        throw material_error(origin + ": missing `form = e|d|isotropic`");
    } else {
        throw material_error(origin + ": unknown form `" + form + "`");
    }
    if (!num.empty())
        throw material_error(origin + ": unknown key `" + num.begin()->first + "`");
    return m;
}

inline MaterialForms load_material_card(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw material_error("cannot open material card `" + path + "`");
    return parse_material_card(in, path);
}

} // namespace tdnns
