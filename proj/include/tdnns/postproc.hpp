#pragma once

#include "tdnns/forms.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <vector>

namespace tdnns {

// ---------------------------------------------------------------------------
// FieldView
// ---------------------------------------------------------------------------

/// A finite element field: dof map(s) plus coefficients, evaluable per element
/// at reference points and at physical points. Region-split fields (the V2
/// dielectric displacement) carry one part per group; a nodal scalar pair
/// represents a vector field with stacked components.
class FieldView {
public:
    struct Part {
        const DofMap* dm = nullptr;
        Eigen::VectorXd coeffs;
    };

    const Mesh2D* mesh = nullptr;
    std::vector<Part> parts;
    bool scalar_pair = false;

    static FieldView native(const Mesh2D& mesh, const DofMap& dm, Eigen::VectorXd coeffs)
    {
        if (coeffs.size() != dm.ndof)
            throw fe_error("FieldView: coefficient length does not match dof count");
        FieldView f;
        f.mesh = &mesh;
        f.parts.push_back({&dm, std::move(coeffs)});
        return f;
    }
    static FieldView vector_pair(const Mesh2D& mesh, const DofMap& scalar_dm,
                                 Eigen::VectorXd stacked)
    {
        if (stacked.size() != 2 * scalar_dm.ndof)
            throw fe_error("FieldView: stacked coefficient length mismatch");
        FieldView f;
        f.mesh = &mesh;
        f.parts.push_back({&scalar_dm, std::move(stacked)});
        f.scalar_pair = true;
        return f;
    }
    static FieldView grouped(const Mesh2D& mesh, const std::vector<const DofMap*>& dms,
                             const std::vector<Eigen::VectorXd>& coeffs)
    {
        FieldView f;
        f.mesh = &mesh;
        for (std::size_t i = 0; i < dms.size(); ++i) {
            if (coeffs[i].size() != dms[i]->ndof)
                throw fe_error("FieldView: coefficient length mismatch in group");
            f.parts.push_back({dms[i], coeffs[i]});
        }
        return f;
    }

    int components() const
    {
        if (scalar_pair)
            return 2;
        return value_components(parts.front().dm->kind.family);
    }
    int order() const { return parts.front().dm->kind.order; }

    const Part& part_for(int t) const
    {
        for (const auto& p : parts)
            if (p.dm->element_active(t))
                return p;
        throw fe_error("FieldView: element " + std::to_string(t) + " not covered by any part");
    }

    /// Values at reference points of element t; rows = components.
    Eigen::MatrixXd evaluate(int t, const std::vector<Vec2>& pts) const
    {
        const Part& p = part_for(t);
        const ElementGeometry g = element_geometry(*mesh, t);
        BasisEval be = map_to_physical(p.dm->kind, g, eval_basis(p.dm->kind, pts));
        p.dm->transform_element_basis(t, be);
        const int np = static_cast<int>(pts.size());
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(components(), np);
        if (scalar_pair) {
            const int n = p.dm->ndof;
            for (int i = 0; i < be.ndof; ++i) {
                const int gdof = p.dm->global_dof(t, i);
                out.row(0) += p.coeffs[gdof] * be.value[0].row(i);
                out.row(1) += p.coeffs[n + gdof] * be.value[0].row(i);
            }
        } else {
            for (int i = 0; i < be.ndof; ++i) {
                const double c = p.coeffs[p.dm->global_dof(t, i)];
                for (int cmp = 0; cmp < components(); ++cmp)
                    out.row(cmp) += c * be.value[cmp].row(i);
            }
        }
        return out;
    }

    /// Gradient rows for scalar / scalar-pair fields: (d/dx, d/dz) per component.
    Eigen::MatrixXd evaluate_gradient(int t, const std::vector<Vec2>& pts) const
    {
        const Part& p = part_for(t);
        if (value_components(p.dm->kind.family) != 1)
            throw fe_error("FieldView: gradients only available for scalar-backed fields");
        const ElementGeometry g = element_geometry(*mesh, t);
        BasisEval be = map_to_physical(p.dm->kind, g, eval_basis(p.dm->kind, pts));
        p.dm->transform_element_basis(t, be);
        const int np = static_cast<int>(pts.size());
        const int nc = scalar_pair ? 2 : 1;
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(2 * nc, np);
        for (int i = 0; i < be.ndof; ++i) {
            const int gdof = p.dm->global_dof(t, i);
            for (int cmp = 0; cmp < nc; ++cmp) {
                const double c = p.coeffs[cmp * p.dm->ndof + gdof];
                out.row(2 * cmp + 0) += c * be.deriv[0].row(i);
                out.row(2 * cmp + 1) += c * be.deriv[1].row(i);
            }
        }
        return out;
    }

    /// Element-wise divergence for NormalContinuous-backed fields.
    Eigen::VectorXd evaluate_divergence(int t, const std::vector<Vec2>& pts) const
    {
        const Part& p = part_for(t);
        if (p.dm->kind.family != SpaceFamily::NormalContinuous)
            throw fe_error("FieldView: divergence only available for NormalContinuous fields");
        const ElementGeometry g = element_geometry(*mesh, t);
        BasisEval be = map_to_physical(p.dm->kind, g, eval_basis(p.dm->kind, pts));
        p.dm->transform_element_basis(t, be);
        Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pts.size()));
        for (int i = 0; i < be.ndof; ++i)
            out += p.coeffs[p.dm->global_dof(t, i)] * be.deriv[0].row(i).transpose();
        return out;
    }

    /// Physical-point evaluation via point location.
    Eigen::VectorXd at(const Vec2& x) const
    {
        Vec2 ref;
        const int t = locate_point(*mesh, x, &ref);
        if (t < 0)
            throw fe_error("FieldView: point outside the mesh");
        return evaluate(t, {ref}).col(0);
    }
};

// ---------------------------------------------------------------------------
// Solution bundles and constitutive evaluation
// ---------------------------------------------------------------------------

enum class Formulation { primal, v1, v2, v2_divfree };

inline const char* to_string(Formulation f)
{
    switch (f) {
    case Formulation::primal:
        return "primal";
    case Formulation::v1:
        return "v1";
    case Formulation::v2:
        return "v2";
    case Formulation::v2_divfree:
        return "v2_divfree";
    }
    return "?";
}

/// Post-solve fields of one run, with the material map needed to evaluate the
/// constitutive companions (strain, electric field, dielectric displacement).
struct SolutionFields {
    Formulation form = Formulation::primal;
    const Mesh2D* mesh = nullptr;
    std::map<int, Material2D> materials;
    FieldView u;
    FieldView sigma; // v1/v2 only
    FieldView phi;
    FieldView D; // v2 only

    const Material2D& material(int t) const
    {
        auto it = materials.find(mesh->region[t]);
        if (it == materials.end())
            throw fe_error("no material for region " + std::to_string(mesh->region[t]));
        return it->second;
    }

    /// Engineering strain rows (e_xx, e_zz, g_xz) via the constitutive law of
    /// the formulation (mixed methods evaluate strain from the dual fields).
    Eigen::MatrixXd strain(int t, const std::vector<Vec2>& pts) const
    {
        const Material2D& m = material(t);
        if (form == Formulation::primal) {
            const Eigen::MatrixXd gu = u.evaluate_gradient(t, pts);
            Eigen::MatrixXd eps(3, gu.cols());
            eps.row(0) = gu.row(0);
            eps.row(1) = gu.row(3);
            eps.row(2) = gu.row(1) + gu.row(2);
            return eps;
        }
        const Eigen::MatrixXd sv = sigma.evaluate(t, pts);
        if (form == Formulation::v1) {
            const Eigen::MatrixXd E = electric_field(t, pts);
            return m.S_E2 * sv + m.d2.transpose() * E;
        }
        const Eigen::MatrixXd Dv = D.evaluate(t, pts);
        return m.S_D2 * sv + m.g2.transpose() * Dv;
    }

    Eigen::MatrixXd stress(int t, const std::vector<Vec2>& pts) const
    {
        if (form == Formulation::primal) {
            const Material2D& m = material(t);
            const Eigen::MatrixXd eps = strain(t, pts);
            const Eigen::MatrixXd E = electric_field(t, pts);
            return m.C_E2 * eps - m.e2.transpose() * E;
        }
        return sigma.evaluate(t, pts);
    }

    Eigen::MatrixXd electric_field(int t, const std::vector<Vec2>& pts) const
    {
        const Material2D& m = material(t);
        switch (form) {
        case Formulation::primal:
        case Formulation::v1: {
            const Eigen::MatrixXd gp = phi.evaluate_gradient(t, pts);
            return -gp.topRows(2);
        }
        default: {
            // E = -g sigma + (eps^sigma)^{-1} D
            const Eigen::MatrixXd sv = sigma.evaluate(t, pts);
            const Eigen::MatrixXd Dv = D.evaluate(t, pts);
            return -m.g2 * sv + m.eps_sigma2.inverse() * Dv;
        }
        }
    }

    Eigen::MatrixXd dielectric_displacement(int t, const std::vector<Vec2>& pts) const
    {
        const Material2D& m = material(t);
        switch (form) {
        case Formulation::primal: {
            const Eigen::MatrixXd eps = strain(t, pts);
            const Eigen::MatrixXd E = electric_field(t, pts);
            return m.e2 * eps + m.eps_eps2 * E;
        }
        case Formulation::v1: {
            const Eigen::MatrixXd sv = sigma.evaluate(t, pts);
            const Eigen::MatrixXd E = electric_field(t, pts);
            return m.d2 * sv + m.eps_sigma2 * E;
        }
        default:
            return D.evaluate(t, pts);
        }
    }
};

/// Element-wise E-field recovery from (sigma, D) through the voltage-form law
/// E = -g sigma + (eps^sigma)^{-1} D; the evaluation path when the potential
/// is only piecewise constant.
struct RecoveredEField {
    const FieldView* sigma;
    const FieldView* D;
    const std::map<int, Material2D>* materials;

    Eigen::MatrixXd evaluate(int t, const std::vector<Vec2>& pts) const
    {
        const Material2D& m = materials->at(sigma->mesh->region[t]);
        return -m.g2 * sigma->evaluate(t, pts) + m.eps_sigma2.inverse() * D->evaluate(t, pts);
    }
};

inline RecoveredEField recover_e_field(const FieldView& sigma, const FieldView& D,
                                       const std::map<int, Material2D>& materials)
{
    return RecoveredEField{&sigma, &D, &materials};
}

// ---------------------------------------------------------------------------
// Norms, errors, tip deflection
// ---------------------------------------------------------------------------

namespace detail {

inline void require_same_mesh(const FieldView& a, const FieldView& b)
{
    if (a.mesh != b.mesh)
        throw fe_error("fields live on different meshes");
    if (a.components() != b.components())
        throw fe_error("fields have different component counts");
}

} // namespace detail

/// L2 norm of (a - b), quadrature degree >= 2k+4.
inline double l2_error(const FieldView& a, const FieldView& b)
{
    detail::require_same_mesh(a, b);
    const int k = std::max(a.order(), b.order());
    const TriangleRule& rule = cached_triangle_rule(2 * k + 4);
    double acc = 0.0;
    for (int t = 0; t < a.mesh->n_triangles(); ++t) {
        const ElementGeometry g = element_geometry(*a.mesh, t);
        const Eigen::MatrixXd va = a.evaluate(t, rule.points);
        const Eigen::MatrixXd vb = b.evaluate(t, rule.points);
        for (std::size_t q = 0; q < rule.points.size(); ++q)
            acc += rule.weights[q] * g.detF * (va.col(q) - vb.col(q)).squaredNorm();
    }
    return std::sqrt(acc);
}

/// L2 distance to an analytic field (rows = components at the given points).
inline double
l2_error(const FieldView& a,
         const std::function<Eigen::MatrixXd(int, const std::vector<Vec2>&)>& analytic,
         int quad_degree = -1)
{
    const int qd = quad_degree > 0 ? quad_degree : 2 * a.order() + 4;
    const TriangleRule& rule = cached_triangle_rule(qd);
    double acc = 0.0;
    for (int t = 0; t < a.mesh->n_triangles(); ++t) {
        const ElementGeometry g = element_geometry(*a.mesh, t);
        const Eigen::MatrixXd va = a.evaluate(t, rule.points);
        const Eigen::MatrixXd vb = analytic(t, rule.points);
        for (std::size_t q = 0; q < rule.points.size(); ++q)
            acc += rule.weights[q] * g.detF * (va.col(q) - vb.col(q)).squaredNorm();
    }
    return std::sqrt(acc);
}

inline double l2_norm(const FieldView& a)
{
    return l2_error(a, [&](int, const std::vector<Vec2>& pts) {
        return Eigen::MatrixXd::Zero(a.components(), static_cast<Eigen::Index>(pts.size()));
    });
}

/// Mean transverse displacement over the marked boundary:
/// int_marker u_z ds / |marker|.
inline double average_tip_deflection(const FieldView& u, const Mesh2D& mesh, int marker)
{
    const int ngauss = u.order() + 3;
    const GaussRule& g = cached_gauss_rule(ngauss);
    double integral = 0.0, length = 0.0;
    bool found = false;
    for (int t = 0; t < mesh.n_triangles(); ++t) {
        for (int le = 0; le < 3; ++le) {
            const int e = mesh.tri_edges[t][le];
            if (mesh.edge_marker[e] != marker || !mesh.is_boundary_edge(e))
                continue;
            found = true;
            const double jac = 0.5 * mesh.frame(t, le).length;
            std::vector<Vec2> pts;
            for (double s : g.points)
                pts.push_back(ReferenceElement::edge_point(le, s));
            const Eigen::MatrixXd uv = u.evaluate(t, pts);
            for (std::size_t q = 0; q < g.points.size(); ++q) {
                integral += g.weights[q] * jac * uv(1, q);
                length += g.weights[q] * jac;
            }
        }
    }
    if (!found)
        throw fe_error("average_tip_deflection: no boundary edge carries marker " +
                       std::to_string(marker));
    return integral / length;
}

// ---------------------------------------------------------------------------
// Zienkiewicz-Zhu indicator
// ---------------------------------------------------------------------------

struct ZzEstimate {
    Eigen::VectorXd eta;  // per element
    std::set<int> marked; // eta > 0.5 max eta
};

/// Arithmetic nodal averaging of the stress components onto a continuous
/// Lagrange space of the same order; eta_T = || sigma* - sigma ||_{L2(T)}.
inline ZzEstimate zz_estimate(const FieldView& sigma)
{
    if (sigma.parts.front().dm->kind.family != SpaceFamily::NormalNormalContinuous)
        throw fe_error("zz_estimate expects a stress field");
    const Mesh2D& mesh = *sigma.mesh;
    const int k = sigma.order();
    const DofMap rec_dm = build_space(mesh, nodal(k), {});
    const ReferenceElement& re = reference_element(nodal(k));

    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(3, rec_dm.ndof);
    Eigen::VectorXd count = Eigen::VectorXd::Zero(rec_dm.ndof);
    for (int t = 0; t < mesh.n_triangles(); ++t) {
        const Eigen::MatrixXd sv = sigma.evaluate(t, re.dof_points);
        for (int i = 0; i < re.ndof; ++i) {
            const int g = rec_dm.global_dof(t, i);
            acc.col(g) += sv.col(i);
            count[g] += 1.0;
        }
    }
    for (int g = 0; g < rec_dm.ndof; ++g)
        acc.col(g) /= count[g];

    // recovered field as three stacked nodal scalars; reuse FieldView parts
    // through a scalar pair is 2-component only, so hold coefficients locally
    const TriangleRule& rule = cached_triangle_rule(2 * k + 2);
    ZzEstimate out;
    out.eta.resize(mesh.n_triangles());
    const BasisEval ref_nodal = eval_basis(nodal(k), rule.points);
    double field_sq = 0.0;
    for (int t = 0; t < mesh.n_triangles(); ++t) {
        const ElementGeometry g = element_geometry(mesh, t);
        const Eigen::MatrixXd sv = sigma.evaluate(t, rule.points);
        Eigen::MatrixXd rec =
            Eigen::MatrixXd::Zero(3, static_cast<Eigen::Index>(rule.points.size()));
        for (int i = 0; i < re.ndof; ++i)
            rec += acc.col(rec_dm.global_dof(t, i)) * ref_nodal.value[0].row(i);
        double s = 0.0;
        for (std::size_t q = 0; q < rule.points.size(); ++q) {
            const Vec3 d = rec.col(q) - sv.col(q);
            // Frobenius norm of the symmetric tensor difference
            s += rule.weights[q] * g.detF * (d[0] * d[0] + d[1] * d[1] + 2.0 * d[2] * d[2]);
            field_sq += rule.weights[q] * g.detF *
                        (sv(0, q) * sv(0, q) + sv(1, q) * sv(1, q) + 2.0 * sv(2, q) * sv(2, q));
        }
        out.eta[t] = std::sqrt(s);
    }
    // a recovery that is exact up to roundoff marks nothing
    const double floor = 1e-13 * std::sqrt(field_sq);
    if (out.eta.maxCoeff() > floor) {
        const double cutoff = 0.5 * out.eta.maxCoeff();
        for (int t = 0; t < mesh.n_triangles(); ++t)
            if (out.eta[t] > cutoff)
                out.marked.insert(t);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Homogenization averages and effective constants
// ---------------------------------------------------------------------------

struct VolumeAverages {
    double gamma5 = 0.0; // (2/|O|) int eps_13 = mean engineering shear
    double sigma5 = 0.0; // mean sigma_13
    double E1 = 0.0;     // mean E_x
    double D1 = 0.0;     // mean D_x
    double area = 0.0;
};

inline VolumeAverages volume_averages(const SolutionFields& sol)
{
    const Mesh2D& mesh = *sol.mesh;
    int k = 1;
    for (const auto& p : sol.u.parts)
        k = std::max(k, p.dm->kind.order);
    const TriangleRule& rule = cached_triangle_rule(2 * k + 2);
    VolumeAverages av;
    for (int t = 0; t < mesh.n_triangles(); ++t) {
        const ElementGeometry g = element_geometry(mesh, t);
        const Eigen::MatrixXd eps = sol.strain(t, rule.points);
        const Eigen::MatrixXd sv = sol.stress(t, rule.points);
        const Eigen::MatrixXd E = sol.electric_field(t, rule.points);
        const Eigen::MatrixXd D = sol.dielectric_displacement(t, rule.points);
        for (std::size_t q = 0; q < rule.points.size(); ++q) {
            const double w = rule.weights[q] * g.detF;
            av.gamma5 += w * eps(2, q);
            av.sigma5 += w * sv(2, q);
            av.E1 += w * E(0, q);
            av.D1 += w * D(0, q);
            av.area += w;
        }
    }
    av.gamma5 /= av.area;
    av.sigma5 /= av.area;
    av.E1 /= av.area;
    av.D1 /= av.area;
    return av;
}

struct EffectiveConstants {
    double G13 = 0.0;       // [N/m^2]
    double d15 = 0.0;       // [m/V]
    double eps11_sigma = 0; // [F/m]
    VolumeAverages case_a, case_b;
};

/// G13 from the shear load case, d15 and eps11 from the electrode load case.
inline EffectiveConstants homogenized_constants(const SolutionFields& case_a,
                                                const SolutionFields& case_b)
{
    EffectiveConstants out;
    out.case_a = volume_averages(case_a);
    out.case_b = volume_averages(case_b);
    if (std::abs(out.case_a.gamma5) < 1e-300 || std::abs(out.case_b.E1) < 1e-300)
        throw fe_error("homogenized_constants: vanishing denominator average");
    out.G13 = out.case_a.sigma5 / out.case_a.gamma5;
    out.d15 = out.case_b.gamma5 / out.case_b.E1;
    out.eps11_sigma = out.case_b.D1 / out.case_b.E1;
    return out;
}

} // namespace tdnns
