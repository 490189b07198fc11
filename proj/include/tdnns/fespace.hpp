#pragma once

#include "tdnns/mesh.hpp"
#include "tdnns/quadrature.hpp"

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <tuple>
#include <vector>

namespace tdnns {

// ---------------------------------------------------------------------------
// Space kinds
// ---------------------------------------------------------------------------

enum class SpaceFamily {
    NodalContinuous,        // scalar, continuous Lagrange
    Discontinuous,          // scalar, element-wise polynomials
    TangentialContinuous,   // vector, full [P^k]^2, v_t continuous (displacements)
    NormalNormalContinuous, // symmetric tensor, sigma_nn continuous (stresses)
    NormalContinuous        // vector, full [P^k]^2, D_n continuous (dielectric)
};

struct SpaceKind {
    SpaceFamily family = SpaceFamily::NodalContinuous;
    int order = 1;
    bool divfree = false; // only NormalContinuous: restrict to div in P^0 per element

    bool operator<(const SpaceKind& o) const
    {
        return std::tie(family, order, divfree) < std::tie(o.family, o.order, o.divfree);
    }
    bool operator==(const SpaceKind& o) const
    {
        return family == o.family && order == o.order && divfree == o.divfree;
    }
};

inline SpaceKind nodal(int k) { return {SpaceFamily::NodalContinuous, k, false}; }
inline SpaceKind discontinuous(int k) { return {SpaceFamily::Discontinuous, k, false}; }
inline SpaceKind tangential(int k) { return {SpaceFamily::TangentialContinuous, k, false}; }
inline SpaceKind normal_normal(int k) { return {SpaceFamily::NormalNormalContinuous, k, false}; }
inline SpaceKind normal_continuous(int k, bool divfree = false)
{
    return {SpaceFamily::NormalContinuous, k, divfree};
}

inline int value_components(SpaceFamily f)
{
    switch (f) {
    case SpaceFamily::NodalContinuous:
    case SpaceFamily::Discontinuous:
        return 1;
    case SpaceFamily::TangentialContinuous:
    case SpaceFamily::NormalContinuous:
        return 2;
    case SpaceFamily::NormalNormalContinuous:
        return 3; // (xx, zz, xz)
    }
    return 0;
}

inline void validate_kind(SpaceKind kind)
{
    const int k = kind.order;
    if (kind.family == SpaceFamily::Discontinuous) {
        if (k < 0 || k > 3)
            throw fe_error("Discontinuous supports orders 0..3, got " + std::to_string(k));
    } else if (k < 1 || k > 3) {
        throw fe_error("order out of the supported range 1..3: " + std::to_string(k));
    }
    if (kind.divfree && kind.family != SpaceFamily::NormalContinuous)
        throw fe_error("divfree flag is only meaningful for NormalContinuous spaces");
}

// ---------------------------------------------------------------------------
// Bivariate polynomials and frames
// ---------------------------------------------------------------------------

struct Poly2 {
    struct Term {
        int a, b;
        double c;
    };
    std::vector<Term> terms;

    double eval(const Vec2& p) const
    {
        double s = 0.0;
        for (const auto& t : terms)
            s += t.c * std::pow(p.x(), t.a) * std::pow(p.y(), t.b);
        return s;
    }
    Poly2 dx() const
    {
        Poly2 r;
        for (const auto& t : terms)
            if (t.a > 0)
                r.terms.push_back({t.a - 1, t.b, t.c * t.a});
        return r;
    }
    Poly2 dy() const
    {
        Poly2 r;
        for (const auto& t : terms)
            if (t.b > 0)
                r.terms.push_back({t.a, t.b - 1, t.c * t.b});
        return r;
    }
};

namespace detail {

// one frame function: up to three polynomial components
struct FrameFn {
    std::array<Poly2, 3> comp;
};

inline FrameFn make_frame(Poly2 c0, Poly2 c1 = {}, Poly2 c2 = {})
{
    FrameFn f;
    f.comp[0] = std::move(c0);
    f.comp[1] = std::move(c1);
    f.comp[2] = std::move(c2);
    return f;
}

inline std::vector<Poly2> scalar_monomials(int k)
{
    std::vector<Poly2> out;
    for (int deg = 0; deg <= k; ++deg)
        for (int a = deg; a >= 0; --a)
            out.push_back({{{a, deg - a, 1.0}}});
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Reference element: dual basis to trace-moment / interior-moment functionals
// ---------------------------------------------------------------------------

enum class DofEntity : std::int8_t { vertex, edge, interior };

struct DofDescriptor {
    DofEntity entity;
    int sub;   // vertex id or local edge id; -1 for interior
    int index; // moment degree / lattice slot along the local direction / interior ordinal
};

struct ReferenceElement {
    SpaceKind kind;
    int ndof = 0;
    int ncomp = 1;
    std::vector<detail::FrameFn> frame;
    Eigen::MatrixXd dual; // basis_j = sum_f dual(f, j) frame_f
    std::vector<DofDescriptor> dofs;
    std::vector<Vec2> dof_points; // lattice positions (nodal family only)
    double condition_number = 0.0;
    int n_interior = 0; // interior dofs form the tail of the local ordering

    static std::array<Vec2, 3> vertices() { return {Vec2(0, 0), Vec2(1, 0), Vec2(0, 1)}; }

    // local edge le joins vertices (le+1)%3 -> (le+2)%3
    static void edge_endpoints(int le, Vec2& a, Vec2& b)
    {
        const auto v = vertices();
        a = v[(le + 1) % 3];
        b = v[(le + 2) % 3];
    }
    static Vec2 edge_point(int le, double s) // s in [-1, 1], local direction
    {
        Vec2 a, b;
        edge_endpoints(le, a, b);
        return 0.5 * (a + b) + 0.5 * s * (b - a);
    }
    static Vec2 edge_tangent(int le)
    {
        Vec2 a, b;
        edge_endpoints(le, a, b);
        return (b - a).normalized();
    }
    static Vec2 edge_outward_normal(int le)
    {
        const Vec2 t = edge_tangent(le);
        return {t.y(), -t.x()};
    }
};

namespace detail {

// trace of a frame function on a local edge, per family
inline double frame_trace(const ReferenceElement& re, const FrameFn& f, int le, const Vec2& p)
{
    switch (re.kind.family) {
    case SpaceFamily::NodalContinuous:
    case SpaceFamily::Discontinuous:
        return f.comp[0].eval(p);
    case SpaceFamily::TangentialContinuous: {
        const Vec2 t = ReferenceElement::edge_tangent(le);
        return f.comp[0].eval(p) * t.x() + f.comp[1].eval(p) * t.y();
    }
    case SpaceFamily::NormalContinuous: {
        const Vec2 n = ReferenceElement::edge_outward_normal(le);
        return f.comp[0].eval(p) * n.x() + f.comp[1].eval(p) * n.y();
    }
    case SpaceFamily::NormalNormalContinuous: {
        const Vec2 n = ReferenceElement::edge_outward_normal(le);
        const double sxx = f.comp[0].eval(p), syy = f.comp[1].eval(p), sxy = f.comp[2].eval(p);
        return n.x() * n.x() * sxx + n.y() * n.y() * syy + 2.0 * n.x() * n.y() * sxy;
    }
    }
    return 0.0;
}

inline ReferenceElement build_reference_element(SpaceKind kind)
{
    validate_kind(kind);
    const int k = kind.order;
    ReferenceElement re;
    re.kind = kind;
    re.ncomp = value_components(kind.family);

    // --- frame ---
    const auto mono = scalar_monomials(k);
    switch (kind.family) {
    case SpaceFamily::NodalContinuous:
    case SpaceFamily::Discontinuous:
        for (const auto& m : mono)
            re.frame.push_back(make_frame(m));
        break;
    case SpaceFamily::TangentialContinuous:
        for (const auto& m : mono) {
            re.frame.push_back(make_frame(m));
            re.frame.push_back(make_frame({}, m));
        }
        break;
    case SpaceFamily::NormalNormalContinuous:
        for (const auto& m : mono) {
            re.frame.push_back(make_frame(m));
            re.frame.push_back(make_frame({}, m));
            re.frame.push_back(make_frame({}, {}, m));
        }
        break;
    case SpaceFamily::NormalContinuous:
        if (!kind.divfree) {
            for (const auto& m : mono) {
                re.frame.push_back(make_frame(m));
                re.frame.push_back(make_frame({}, m));
            }
        } else {
            // curls of scalar monomials of degree 1..k+1 plus one constant-divergence field
            const auto hi = scalar_monomials(k + 1);
            for (const auto& m : hi) {
                if (m.terms[0].a + m.terms[0].b == 0)
                    continue;
                re.frame.push_back(make_frame(m.dy(), Poly2{{{m.terms[0].a, m.terms[0].b, -1.0}}}.dx()));
                // note: curl psi = (d psi/dy, -d psi/dx)
            }
            re.frame.push_back(make_frame(Poly2{{{1, 0, 1.0}}}, Poly2{{{0, 1, 1.0}}}));
        }
        break;
    }
    const int n = static_cast<int>(re.frame.size());
    re.ndof = n;

    // --- dof descriptors and functional matrix ---
    Eigen::MatrixXd V = Eigen::MatrixXd::Zero(n, n);
    const GaussRule& eg = cached_gauss_rule(k + 3);
    const TriangleRule& tr = cached_triangle_rule(2 * (k + 2) + 2);

    if (kind.family == SpaceFamily::NodalContinuous) {
        // lattice-point evaluations
        auto add_point = [&](DofEntity ent, int sub, int index, const Vec2& p) {
            const int i = static_cast<int>(re.dofs.size());
            re.dofs.push_back({ent, sub, index});
            re.dof_points.push_back(p);
            for (int f = 0; f < n; ++f)
                V(i, f) = re.frame[f].comp[0].eval(p);
        };
        const auto verts = ReferenceElement::vertices();
        for (int v = 0; v < 3; ++v)
            add_point(DofEntity::vertex, v, 0, verts[v]);
        for (int le = 0; le < 3; ++le) {
            Vec2 a, b;
            ReferenceElement::edge_endpoints(le, a, b);
            for (int i = 1; i < k; ++i)
                add_point(DofEntity::edge, le, i - 1, a + (b - a) * (double(i) / k));
        }
        int ordinal = 0;
        for (int i = 1; i < k; ++i)
            for (int j = 1; i + j <= k - 1; ++j)
                add_point(DofEntity::interior, -1, ordinal++, Vec2(double(i) / k, double(j) / k));
        re.n_interior = ordinal;
    } else if (kind.family == SpaceFamily::Discontinuous) {
        // plain monomial coefficients; no dualization needed
        for (int f = 0; f < n; ++f)
            re.dofs.push_back({DofEntity::interior, -1, f});
        V.setIdentity();
        re.n_interior = n;
    } else {
        // edge trace moments against Legendre polynomials
        for (int le = 0; le < 3; ++le) {
            for (int m = 0; m <= k; ++m) {
                const int i = static_cast<int>(re.dofs.size());
                re.dofs.push_back({DofEntity::edge, le, m});
                for (int f = 0; f < n; ++f) {
                    double s = 0.0;
                    for (std::size_t q = 0; q < eg.points.size(); ++q) {
                        const Vec2 p = ReferenceElement::edge_point(le, eg.points[q]);
                        s += 0.5 * eg.weights[q] * frame_trace(re, re.frame[f], le, p) *
                             legendre(m, eg.points[q]);
                    }
                    V(i, f) = s;
                }
            }
        }
        // interior moments against a family-specific polynomial set
        std::vector<FrameFn> weights;
        if (kind.family == SpaceFamily::TangentialContinuous && k >= 2) {
            // Raviart-Thomas set of order k-2
            for (const auto& m : scalar_monomials(k - 2)) {
                weights.push_back(make_frame(m));
                weights.push_back(make_frame({}, m));
            }
            for (int a = k - 2; a >= 0; --a) { // x * homogeneous degree k-2
                const int b = k - 2 - a;
                weights.push_back(make_frame(Poly2{{{a + 1, b, 1.0}}}, Poly2{{{a, b + 1, 1.0}}}));
            }
        } else if (kind.family == SpaceFamily::NormalContinuous && !kind.divfree && k >= 2) {
            // first-kind Nedelec set of order k-2
            for (const auto& m : scalar_monomials(k - 2)) {
                weights.push_back(make_frame(m));
                weights.push_back(make_frame({}, m));
            }
            for (int a = k - 2; a >= 0; --a) { // (-y, x) * homogeneous degree k-2
                const int b = k - 2 - a;
                weights.push_back(make_frame(Poly2{{{a, b + 1, -1.0}}}, Poly2{{{a + 1, b, 1.0}}}));
            }
        } else if (kind.family == SpaceFamily::NormalContinuous && kind.divfree && k >= 2) {
            // curls of bubble * {1, x, y}
            const Poly2 bubble{{{1, 1, 1.0}, {2, 1, -1.0}, {1, 2, -1.0}}}; // x y (1-x-y)
            std::vector<Poly2> mults = {{{{0, 0, 1.0}}}};
            if (k >= 3) {
                mults.push_back({{{1, 0, 1.0}}});
                mults.push_back({{{0, 1, 1.0}}});
            }
            for (const auto& mu : mults) {
                Poly2 psi;
                for (const auto& tb : bubble.terms)
                    for (const auto& tm : mu.terms)
                        psi.terms.push_back({tb.a + tm.a, tb.b + tm.b, tb.c * tm.c});
                FrameFn w = make_frame(psi.dy(), psi.dx());
                for (auto& t : w.comp[1].terms)
                    t.c = -t.c;
                weights.push_back(w);
            }
        } else if (kind.family == SpaceFamily::NormalNormalContinuous && k >= 1) {
            // symmetric tensor monomials of degree <= k-1
            for (const auto& m : scalar_monomials(k - 1)) {
                weights.push_back(make_frame(m));
                weights.push_back(make_frame({}, m));
                weights.push_back(make_frame({}, {}, m));
            }
        }
        int ordinal = 0;
        for (const auto& w : weights) {
            const int i = static_cast<int>(re.dofs.size());
            re.dofs.push_back({DofEntity::interior, -1, ordinal++});
            for (int f = 0; f < n; ++f) {
                double s = 0.0;
                for (std::size_t q = 0; q < tr.points.size(); ++q) {
                    const Vec2 p = tr.points[q];
                    double dot = 0.0;
                    for (int c = 0; c < re.ncomp; ++c) {
                        double fac = (re.ncomp == 3 && c == 2) ? 2.0 : 1.0; // symmetric off-diagonal
                        dot += fac * re.frame[f].comp[c].eval(p) * w.comp[c].eval(p);
                    }
                    s += tr.weights[q] * dot;
                }
                V(i, f) = 2.0 * s; // 1/|T_ref|
            }
        }
        re.n_interior = ordinal;
    }

    if (static_cast<int>(re.dofs.size()) != n)
        throw fe_error("reference element: dof count " + std::to_string(re.dofs.size()) +
                       " does not match frame dimension " + std::to_string(n));

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(V);
    const double smin = svd.singularValues().minCoeff();
    const double smax = svd.singularValues().maxCoeff();
    if (!(smin > 0.0) || smax / smin > 1e12)
        throw fe_error("reference element functionals are not unisolvent");
    re.condition_number = smax / smin;
    re.dual = V.inverse();

    // rebuild the interior dual functions inside the exact trace-free subspace:
    // taking them from V^{-1} leaves trace residues of order eps * cond(V),
    // which the per-element orthonormalization would amplify
    if (re.n_interior > 0 && kind.family != SpaceFamily::NodalContinuous &&
        kind.family != SpaceFamily::Discontinuous) {
        const int ni = re.n_interior;
        const int ne = n - ni; // edge functionals come first
        Eigen::JacobiSVD<Eigen::MatrixXd> esvd(V.topRows(ne),
                                               Eigen::ComputeFullV | Eigen::ComputeThinU);
        const Eigen::MatrixXd N = esvd.matrixV().rightCols(ni); // orthonormal nullspace frame
        const Eigen::MatrixXd W = V.bottomRows(ni) * N;
        Eigen::FullPivLU<Eigen::MatrixXd> wlu(W);
        if (!wlu.isInvertible())
            throw fe_error("interior functionals are not unisolvent on the trace-free space");
        re.dual.rightCols(ni) = N * wlu.inverse();
    }
    return re;
}

} // namespace detail

inline const ReferenceElement& reference_element(SpaceKind kind)
{
    static std::map<SpaceKind, ReferenceElement> cache;
    auto it = cache.find(kind);
    if (it == cache.end())
        it = cache.emplace(kind, detail::build_reference_element(kind)).first;
    return it->second;
}

// ---------------------------------------------------------------------------
// Basis evaluation tables
// ---------------------------------------------------------------------------

/// Values and derivative payloads of all basis functions of one kind at a
/// point set. Payload layout:
///   scalar families:      deriv = {d/dx, d/dy}
///   TangentialContinuous: deriv = {dv0/dx, dv0/dy, dv1/dx, dv1/dy}
///   NormalContinuous:     deriv = {div}
///   NormalNormalContinuous: deriv = {(div)_x, (div)_y}
struct BasisEval {
    SpaceKind kind;
    int ndof = 0;
    int npts = 0;
    int ncomp = 1;
    std::vector<Eigen::MatrixXd> value; // ncomp matrices, ndof x npts
    std::vector<Eigen::MatrixXd> deriv;
};

inline BasisEval eval_basis(SpaceKind kind, const std::vector<Vec2>& pts)
{
    const ReferenceElement& re = reference_element(kind);
    const int n = re.ndof, np = static_cast<int>(pts.size());
    BasisEval be;
    be.kind = kind;
    be.ndof = n;
    be.npts = np;
    be.ncomp = re.ncomp;

    // evaluate the frame, then contract with the dual coefficients
    const int nderiv = (re.ncomp == 1) ? 2 : (kind.family == SpaceFamily::TangentialContinuous ? 4
                                              : kind.family == SpaceFamily::NormalContinuous ? 1
                                                                                             : 2);
    std::vector<Eigen::MatrixXd> fval(re.ncomp, Eigen::MatrixXd(n, np));
    std::vector<Eigen::MatrixXd> fder(nderiv, Eigen::MatrixXd(n, np));
    for (int f = 0; f < n; ++f) {
        const auto& fn = re.frame[f];
        for (int q = 0; q < np; ++q) {
            for (int c = 0; c < re.ncomp; ++c)
                fval[c](f, q) = fn.comp[c].eval(pts[q]);
            switch (kind.family) {
            case SpaceFamily::NodalContinuous:
            case SpaceFamily::Discontinuous:
                fder[0](f, q) = fn.comp[0].dx().eval(pts[q]);
                fder[1](f, q) = fn.comp[0].dy().eval(pts[q]);
                break;
            case SpaceFamily::TangentialContinuous:
                fder[0](f, q) = fn.comp[0].dx().eval(pts[q]);
                fder[1](f, q) = fn.comp[0].dy().eval(pts[q]);
                fder[2](f, q) = fn.comp[1].dx().eval(pts[q]);
                fder[3](f, q) = fn.comp[1].dy().eval(pts[q]);
                break;
            case SpaceFamily::NormalContinuous:
                fder[0](f, q) = fn.comp[0].dx().eval(pts[q]) + fn.comp[1].dy().eval(pts[q]);
                break;
            case SpaceFamily::NormalNormalContinuous:
                fder[0](f, q) = fn.comp[0].dx().eval(pts[q]) + fn.comp[2].dy().eval(pts[q]);
                fder[1](f, q) = fn.comp[2].dx().eval(pts[q]) + fn.comp[1].dy().eval(pts[q]);
                break;
            }
        }
    }
    be.value.resize(re.ncomp);
    for (int c = 0; c < re.ncomp; ++c)
        be.value[c] = re.dual.transpose() * fval[c];
    be.deriv.resize(nderiv);
    for (int d = 0; d < nderiv; ++d)
        be.deriv[d] = re.dual.transpose() * fder[d];
    return be;
}

/// Affine element geometry x = F xref + shift.
struct ElementGeometry {
    Mat2 F;
    Vec2 shift;
    double detF = 0.0;
    Mat2 Finv;
};

inline ElementGeometry element_geometry(const Mesh2D& mesh, int t)
{
    const Vec2 a = mesh.vertices[mesh.tris[t][0]];
    const Vec2 b = mesh.vertices[mesh.tris[t][1]];
    const Vec2 c = mesh.vertices[mesh.tris[t][2]];
    ElementGeometry g;
    g.F.col(0) = b - a;
    g.F.col(1) = c - a;
    g.shift = a;
    g.detF = g.F.determinant();
    if (!(g.detF > 0.0))
        throw fe_error("degenerate or inverted triangle " + std::to_string(t));
    g.Finv = g.F.inverse();
    return g;
}

/// Kind-dependent push-forward: composition for scalars, covariant for
/// tangential-continuous, contravariant Piola for normal-continuous, and the
/// nn-trace-preserving double transform for stresses. Derivative payloads are
/// transformed consistently.
inline BasisEval map_to_physical(SpaceKind kind, const ElementGeometry& g, const BasisEval& ref)
{
    BasisEval out = ref;
    const Mat2& Fi = g.Finv; // (F^{-T})_{ij} = Fi(j, i)
    switch (kind.family) {
    case SpaceFamily::NodalContinuous:
    case SpaceFamily::Discontinuous: {
        out.deriv[0] = Fi(0, 0) * ref.deriv[0] + Fi(1, 0) * ref.deriv[1];
        out.deriv[1] = Fi(0, 1) * ref.deriv[0] + Fi(1, 1) * ref.deriv[1];
        break;
    }
    case SpaceFamily::TangentialContinuous: {
        // v = F^{-T} vref
        out.value[0] = Fi(0, 0) * ref.value[0] + Fi(1, 0) * ref.value[1];
        out.value[1] = Fi(0, 1) * ref.value[0] + Fi(1, 1) * ref.value[1];
        // grad v = F^{-T} gradref F^{-1}, payload order (c, j) -> 2c + j
        for (int c = 0; c < 2; ++c)
            for (int j = 0; j < 2; ++j) {
                Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(ref.ndof, ref.npts);
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        acc += Fi(a, c) * Fi(b, j) * ref.deriv[2 * a + b];
                out.deriv[2 * c + j] = acc;
            }
        break;
    }
    case SpaceFamily::NormalContinuous: {
        const Mat2& F = g.F;
        out.value[0] = (F(0, 0) * ref.value[0] + F(0, 1) * ref.value[1]) / g.detF;
        out.value[1] = (F(1, 0) * ref.value[0] + F(1, 1) * ref.value[1]) / g.detF;
        out.deriv[0] = ref.deriv[0] / g.detF;
        break;
    }
    case SpaceFamily::NormalNormalContinuous: {
        // sigma = F sigmaref F^T / det F
        const Mat2& F = g.F;
        const auto& sxx = ref.value[0];
        const auto& syy = ref.value[1];
        const auto& sxy = ref.value[2];
        out.value[0] = (F(0, 0) * F(0, 0) * sxx + F(0, 1) * F(0, 1) * syy +
                        2.0 * F(0, 0) * F(0, 1) * sxy) /
                       g.detF;
        out.value[1] = (F(1, 0) * F(1, 0) * sxx + F(1, 1) * F(1, 1) * syy +
                        2.0 * F(1, 0) * F(1, 1) * sxy) /
                       g.detF;
        out.value[2] = (F(0, 0) * F(1, 0) * sxx + F(0, 1) * F(1, 1) * syy +
                        (F(0, 0) * F(1, 1) + F(0, 1) * F(1, 0)) * sxy) /
                       g.detF;
        out.deriv[0] = (F(0, 0) * ref.deriv[0] + F(0, 1) * ref.deriv[1]) / g.detF;
        out.deriv[1] = (F(1, 0) * ref.deriv[0] + F(1, 1) * ref.deriv[1]) / g.detF;
        break;
    }
    }
    return out;
}

// ---------------------------------------------------------------------------
// DofMap
// ---------------------------------------------------------------------------

struct GlobalDofInfo {
    DofEntity entity;
    int id;    // vertex / edge / triangle id
    int index; // moment degree or lattice slot in global orientation
};

/// Mapping from mesh entities to global degrees of freedom with orientation
/// coefficients, essential masks and optional region restriction. Safe for
/// concurrent readers once built.
///
/// Edge dofs carry a scalar coefficient that makes the element basis dual to
/// the trace moments of the physical edge in global orientation. Interior
/// basis functions of the Piola-mapped families are L2-orthonormalized per
/// element: on flat elements the raw mapped functions become numerically
/// dependent (their Gram condition grows with the squared aspect ratio).
struct DofMap {
    SpaceKind kind;
    const Mesh2D* mesh = nullptr;
    int ndof = 0;
    int local_ndof = 0;
    int n_interior_local = 0; // tail of the local ordering
    std::vector<char> active; // per triangle
    std::vector<int> elem_global;
    std::vector<double> elem_coeff;
    std::vector<double> interior_transform; // per element, n_int x n_int col-major
    std::vector<GlobalDofInfo> info;
    std::vector<char> essential;
    std::vector<std::array<int, 2>> periodic_pairs; // (slave raw id, master raw id), informative

    bool element_active(int t) const { return active.empty() || active[t]; }
    int global_dof(int t, int i) const { return elem_global[t * local_ndof + i]; }
    double coeff(int t, int i) const { return elem_coeff[t * local_ndof + i]; }

    bool has_interior_transform() const { return !interior_transform.empty(); }
    Eigen::Map<const Eigen::MatrixXd> interior_R(int t) const
    {
        const int ni = n_interior_local;
        return {interior_transform.data() + static_cast<std::size_t>(t) * ni * ni, ni, ni};
    }

    /// Rewrites a physically mapped BasisEval into the element basis this map
    /// scatters against: edge rows scaled by their orientation coefficient,
    /// interior rows replaced by their orthonormalized combinations.
    void transform_element_basis(int t, BasisEval& be) const
    {
        const int ni = n_interior_local;
        const int off = local_ndof - ni;
        auto apply = [&](Eigen::MatrixXd& m) {
            for (int i = 0; i < local_ndof; ++i)
                m.row(i) *= coeff(t, i);
            if (has_interior_transform() && ni > 0)
                m.middleRows(off, ni) = interior_R(t).transpose() * m.middleRows(off, ni);
        };
        for (auto& v : be.value)
            apply(v);
        for (auto& d : be.deriv)
            apply(d);
    }

    int essential_count() const
    {
        int n = 0;
        for (char c : essential)
            n += (c != 0);
        return n;
    }
};

namespace detail {

// Gauss points of an edge in global orientation, expressed per element side:
// with dir=+1 the local parametrization matches the global one, with dir=-1
// the symmetric Gauss point set is traversed in reverse.
inline int edge_gauss_count(int order) { return order + 3; }

inline std::vector<Vec2> edge_ref_points(int le, int ngauss)
{
    const GaussRule& g = cached_gauss_rule(ngauss);
    std::vector<Vec2> pts;
    pts.reserve(g.points.size());
    for (double s : g.points)
        pts.push_back(ReferenceElement::edge_point(le, s));
    return pts;
}

} // namespace detail

/// Reference-basis tables at the volume rule and at per-edge Gauss points,
/// computed once per (kind, quadrature) pair and shared across elements.
struct ReferenceTables {
    SpaceKind kind;
    std::vector<Vec2> volume_points;
    std::vector<double> volume_weights;
    BasisEval volume;
    int edge_ngauss = 0;
    std::array<BasisEval, 3> edge; // per local edge, points in local direction
};

inline const ReferenceTables& reference_tables(SpaceKind kind, int quad_degree)
{
    static std::map<std::pair<SpaceKind, int>, std::unique_ptr<ReferenceTables>> cache;
    const auto key = std::make_pair(kind, quad_degree);
    auto it = cache.find(key);
    if (it == cache.end()) {
        auto rt = std::make_unique<ReferenceTables>();
        rt->kind = kind;
        const TriangleRule& rule = cached_triangle_rule(quad_degree);
        rt->volume_points = rule.points;
        rt->volume_weights = rule.weights;
        rt->volume = eval_basis(kind, rule.points);
        // shared across all kinds at one quadrature degree so mixed-space edge
        // integrals see matching point sets
        rt->edge_ngauss = (quad_degree + 2) / 2 + 1;
        for (int le = 0; le < 3; ++le)
            rt->edge[le] = eval_basis(kind, detail::edge_ref_points(le, rt->edge_ngauss));
        it = cache.emplace(key, std::move(rt)).first;
    }
    return *it->second;
}

namespace detail {

// physical trace of basis function i at edge-quadrature slot q, against the
// global tangent/normal of the given edge
inline double physical_trace(const BasisEval& phys_edge, SpaceFamily family, int i, int q,
                             const Vec2& t_glob)
{
    switch (family) {
    case SpaceFamily::NodalContinuous:
    case SpaceFamily::Discontinuous:
        return phys_edge.value[0](i, q);
    case SpaceFamily::TangentialContinuous:
        return phys_edge.value[0](i, q) * t_glob.x() + phys_edge.value[1](i, q) * t_glob.y();
    case SpaceFamily::NormalContinuous: {
        const Vec2 n(t_glob.y(), -t_glob.x());
        return phys_edge.value[0](i, q) * n.x() + phys_edge.value[1](i, q) * n.y();
    }
    case SpaceFamily::NormalNormalContinuous: {
        const Vec2 n(t_glob.y(), -t_glob.x());
        return n.x() * n.x() * phys_edge.value[0](i, q) + n.y() * n.y() * phys_edge.value[1](i, q) +
               2.0 * n.x() * n.y() * phys_edge.value[2](i, q);
    }
    }
    return 0.0;
}

} // namespace detail

inline DofMap build_space(const Mesh2D& mesh, SpaceKind kind, const std::set<int>& essential_regions,
                          const std::set<int>& region_restriction = {})
{
    validate_kind(kind);
    if (!region_restriction.empty() && kind.family != SpaceFamily::NormalContinuous)
        throw fe_error("region restriction is only supported for NormalContinuous spaces");

    const ReferenceElement& re = reference_element(kind);
    const int k = kind.order;
    DofMap dm;
    dm.kind = kind;
    dm.mesh = &mesh;
    dm.local_ndof = re.ndof;
    dm.n_interior_local = re.n_interior;

    dm.active.assign(mesh.n_triangles(), 1);
    if (!region_restriction.empty())
        for (int t = 0; t < mesh.n_triangles(); ++t)
            dm.active[t] = region_restriction.count(mesh.region[t]) ? 1 : 0;

    std::vector<char> edge_active(mesh.n_edges(), 0), vertex_active(mesh.n_vertices(), 0);
    for (int t = 0; t < mesh.n_triangles(); ++t) {
        if (!dm.active[t])
            continue;
        for (int le = 0; le < 3; ++le)
            edge_active[mesh.tri_edges[t][le]] = 1;
        for (int v : mesh.tris[t])
            vertex_active[v] = 1;
    }

    const bool has_vertex_dofs = kind.family == SpaceFamily::NodalContinuous;
    int n_edge_dofs = 0;
    switch (kind.family) {
    case SpaceFamily::NodalContinuous:
        n_edge_dofs = k - 1;
        break;
    case SpaceFamily::Discontinuous:
        n_edge_dofs = 0;
        break;
    default:
        n_edge_dofs = k + 1;
        break;
    }

    std::vector<int> vertex_dof(mesh.n_vertices(), -1), edge_dof0(mesh.n_edges(), -1),
        tri_dof0(mesh.n_triangles(), -1);
    int next = 0;
    if (has_vertex_dofs)
        for (int v = 0; v < mesh.n_vertices(); ++v)
            if (vertex_active[v]) {
                vertex_dof[v] = next++;
                dm.info.push_back({DofEntity::vertex, v, 0});
            }
    if (n_edge_dofs > 0)
        for (int e = 0; e < mesh.n_edges(); ++e)
            if (edge_active[e]) {
                edge_dof0[e] = next;
                for (int m = 0; m < n_edge_dofs; ++m)
                    dm.info.push_back({DofEntity::edge, e, m});
                next += n_edge_dofs;
            }
    if (re.n_interior > 0)
        for (int t = 0; t < mesh.n_triangles(); ++t)
            if (dm.active[t]) {
                tri_dof0[t] = next;
                for (int i = 0; i < re.n_interior; ++i)
                    dm.info.push_back({DofEntity::interior, t, i});
                next += re.n_interior;
            }
    dm.ndof = next;

    dm.elem_global.assign(static_cast<std::size_t>(mesh.n_triangles()) * re.ndof, -1);
    dm.elem_coeff.assign(dm.elem_global.size(), 0.0);

    const bool moment_edges = n_edge_dofs > 0 && kind.family != SpaceFamily::NodalContinuous;
    const int ngauss = detail::edge_gauss_count(k);
    std::array<BasisEval, 3> ref_edge;
    if (moment_edges)
        for (int le = 0; le < 3; ++le)
            ref_edge[le] = eval_basis(kind, detail::edge_ref_points(le, ngauss));
    const GaussRule& gauss = cached_gauss_rule(ngauss);

    // interior basis functions of the Piola-mapped families are orthonormalized
    // per element; on flat elements their raw Gram matrix degenerates with the
    // squared aspect ratio, which wrecks interior blocks and condensation
    const bool normalize_interior =
        re.n_interior > 0 && kind.family != SpaceFamily::NodalContinuous &&
        kind.family != SpaceFamily::Discontinuous;
    const TriangleRule& nrule = cached_triangle_rule(2 * k);
    BasisEval ref_volume;
    if (normalize_interior) {
        ref_volume = eval_basis(kind, nrule.points);
        dm.interior_transform.assign(
            static_cast<std::size_t>(mesh.n_triangles()) * re.n_interior * re.n_interior, 0.0);
    }

    for (int t = 0; t < mesh.n_triangles(); ++t) {
        if (!dm.active[t])
            continue;
        const ElementGeometry geom = element_geometry(mesh, t);
        std::array<BasisEval, 3> phys_edge;
        if (moment_edges)
            for (int le = 0; le < 3; ++le)
                phys_edge[le] = map_to_physical(kind, geom, ref_edge[le]);
        if (normalize_interior) {
            const BasisEval vol = map_to_physical(kind, geom, ref_volume);
            const int ni = re.n_interior, off = re.ndof - ni;
            Eigen::MatrixXd G = Eigen::MatrixXd::Zero(ni, ni);
            for (std::size_t q = 0; q < nrule.weights.size(); ++q)
                for (int cc = 0; cc < vol.ncomp; ++cc)
                    for (int a = 0; a < ni; ++a)
                        for (int b = 0; b < ni; ++b)
                            G(a, b) += nrule.weights[q] * vol.value[cc](off + a, q) *
                                       vol.value[cc](off + b, q);
            Eigen::VectorXd dsc = G.diagonal().cwiseSqrt().cwiseInverse();
            const Eigen::MatrixXd Gn = dsc.asDiagonal() * G * dsc.asDiagonal();
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Gn);
            const double lmax = eig.eigenvalues().maxCoeff();
            if (!(eig.eigenvalues().minCoeff() > 1e-14 * lmax))
                throw fe_error("interior basis functions degenerate on triangle " +
                               std::to_string(t));
            const Eigen::MatrixXd R = dsc.asDiagonal() * eig.eigenvectors() *
                                      eig.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal();
            Eigen::Map<Eigen::MatrixXd>(
                dm.interior_transform.data() + static_cast<std::size_t>(t) * ni * ni, ni, ni) = R;
        }

        for (int i = 0; i < re.ndof; ++i) {
            const DofDescriptor& dd = re.dofs[i];
            int g = -1;
            double c = 1.0;
            if (dd.entity == DofEntity::vertex) {
                g = vertex_dof[mesh.tris[t][dd.sub]];
            } else if (dd.entity == DofEntity::interior) {
                g = tri_dof0[t] + dd.index;
            } else {
                const int e = mesh.tri_edges[t][dd.sub];
                const int dir = mesh.tri_edge_dir[t][dd.sub];
                if (kind.family == SpaceFamily::NodalContinuous) {
                    const int slot = (dir > 0) ? dd.index : (k - 2 - dd.index);
                    g = edge_dof0[e] + slot;
                } else {
                    const int m = dd.index;
                    g = edge_dof0[e] + m;
                    // duality against the moment on the physical edge in the
                    // global orientation fixes both sign and scale
                    const Vec2 tg = (mesh.vertices[mesh.edges[e][1]] - mesh.vertices[mesh.edges[e][0]])
                                        .normalized();
                    double G = 0.0;
                    for (int q = 0; q < ngauss; ++q) {
                        const int ql = (dir > 0) ? q : (ngauss - 1 - q);
                        G += 0.5 * gauss.weights[q] *
                             detail::physical_trace(phys_edge[dd.sub], kind.family, i, ql, tg) *
                             legendre(m, gauss.points[q]);
                    }
                    if (std::abs(G) < 1e-14)
                        throw fe_error("vanishing trace moment while orienting dofs");
                    c = 1.0 / G;
                }
            }
            dm.elem_global[static_cast<std::size_t>(t) * re.ndof + i] = g;
            dm.elem_coeff[static_cast<std::size_t>(t) * re.ndof + i] = c;
        }
    }

    // essential masks: every dof whose trace lives on a marked edge
    dm.essential.assign(dm.ndof, 0);
    for (int e = 0; e < mesh.n_edges(); ++e) {
        if (!edge_active[e] || !essential_regions.count(mesh.edge_marker[e]))
            continue;
        if (edge_dof0[e] >= 0)
            for (int m = 0; m < n_edge_dofs; ++m)
                dm.essential[edge_dof0[e] + m] = 1;
        if (has_vertex_dofs)
            for (int v : mesh.edges[e])
                if (vertex_dof[v] >= 0)
                    dm.essential[vertex_dof[v]] = 1;
    }
    return dm;
}

/// Alias the dofs of each slave edge onto its master under a pure translation.
/// Orientation parity is carried into the dof coefficients; the reduced dof
/// set is renumbered compactly.
inline DofMap identify_periodic(const DofMap& dm,
                                const std::vector<std::array<int, 2>>& edge_pairing)
{
    const Mesh2D& mesh = *dm.mesh;
    const int k = dm.kind.order;

    std::vector<int> parent(dm.ndof);
    std::vector<double> sign_to_parent(dm.ndof, 1.0);
    for (int i = 0; i < dm.ndof; ++i)
        parent[i] = i;
    std::function<std::pair<int, double>(int)> find = [&](int i) -> std::pair<int, double> {
        if (parent[i] == i)
            return {i, 1.0};
        auto [root, s] = find(parent[i]);
        parent[i] = root;
        sign_to_parent[i] *= s;
        return {root, sign_to_parent[i]};
    };

    // locate global edge dof slots through the per-element tables
    std::vector<int> edge_dof0(mesh.n_edges(), -1);
    std::vector<int> vertex_dof(mesh.n_vertices(), -1);
    int n_edge_dofs = 0;
    for (std::size_t pos = 0; pos < dm.info.size(); ++pos) {
        const auto& gi = dm.info[pos];
        if (gi.entity == DofEntity::edge) {
            if (gi.index == 0)
                edge_dof0[gi.id] = static_cast<int>(pos);
            n_edge_dofs = std::max(n_edge_dofs, gi.index + 1);
        } else if (gi.entity == DofEntity::vertex) {
            vertex_dof[gi.id] = static_cast<int>(pos);
        }
    }

    DofMap out = dm;
    auto vpos = [&](int v) { return mesh.vertices[v]; };
    for (const auto& pr : edge_pairing) {
        const int es = pr[0], em = pr[1];
        if (es < 0 || es >= mesh.n_edges() || em < 0 || em >= mesh.n_edges())
            throw fe_error("identify_periodic: edge id out of range");
        if (!mesh.is_boundary_edge(es) || !mesh.is_boundary_edge(em))
            throw fe_error("identify_periodic: both edges must be boundary edges");
        const Vec2 slo = vpos(mesh.edges[es][0]), shi = vpos(mesh.edges[es][1]);
        const Vec2 mlo = vpos(mesh.edges[em][0]), mhi = vpos(mesh.edges[em][1]);
        const double scale = std::max({1.0, slo.norm(), shi.norm()});
        int dir = 0;
        if ((shi - slo - (mhi - mlo)).norm() < 1e-10 * scale &&
            ((slo - mlo) - (shi - mhi)).norm() < 1e-10 * scale)
            dir = +1;
        else if ((shi - slo + (mhi - mlo)).norm() < 1e-10 * scale &&
                 ((slo - mhi) - (shi - mlo)).norm() < 1e-10 * scale)
            dir = -1;
        else
            throw fe_error("identify_periodic: paired edges are not congruent under translation");

        auto alias = [&](int slave, int master, double sign) {
            auto [rs, ss] = find(slave);
            auto [rm, sm] = find(master);
            if (rs == rm)
                return;
            parent[rs] = rm;
            sign_to_parent[rs] = sign * ss * sm; // slave_root = sign_total * master_root
            out.periodic_pairs.push_back({slave, master});
        };
        if (dm.kind.family == SpaceFamily::NodalContinuous) {
            const int a_s = mesh.edges[es][0], b_s = mesh.edges[es][1];
            const int a_m = (dir > 0) ? mesh.edges[em][0] : mesh.edges[em][1];
            const int b_m = (dir > 0) ? mesh.edges[em][1] : mesh.edges[em][0];
            if (vertex_dof[a_s] >= 0 && vertex_dof[a_m] >= 0)
                alias(vertex_dof[a_s], vertex_dof[a_m], 1.0);
            if (vertex_dof[b_s] >= 0 && vertex_dof[b_m] >= 0)
                alias(vertex_dof[b_s], vertex_dof[b_m], 1.0);
            for (int s = 0; s < n_edge_dofs; ++s) {
                const int t = (dir > 0) ? s : (k - 2 - s);
                alias(edge_dof0[es] + s, edge_dof0[em] + t, 1.0);
            }
        } else {
            const bool vector_trace = dm.kind.family == SpaceFamily::TangentialContinuous ||
                                      dm.kind.family == SpaceFamily::NormalContinuous;
            for (int m = 0; m < n_edge_dofs; ++m) {
                double sign = (m % 2 == 0) ? 1.0 : dir;
                if (vector_trace)
                    sign *= dir;
                alias(edge_dof0[es] + m, edge_dof0[em] + m, sign);
            }
        }
    }

    // compress to a dense numbering of representatives
    std::vector<int> newid(dm.ndof, -1);
    int next = 0;
    for (int i = 0; i < dm.ndof; ++i)
        if (find(i).first == i)
            newid[i] = next++;
    out.ndof = next;
    out.info.clear();
    out.essential.assign(next, 0);
    for (int i = 0; i < dm.ndof; ++i) {
        auto [root, s] = find(i);
        if (root == i) {
            out.info.push_back(dm.info[i]);
        }
    }
    for (int i = 0; i < dm.ndof; ++i) {
        auto [root, s] = find(i);
        if (dm.essential[i])
            out.essential[newid[root]] = 1;
    }
    for (std::size_t pos = 0; pos < dm.elem_global.size(); ++pos) {
        const int g = dm.elem_global[pos];
        if (g < 0)
            continue;
        auto [root, s] = find(g);
        out.elem_global[pos] = newid[root];
        out.elem_coeff[pos] = dm.elem_coeff[pos] * s;
    }
    return out;
}

} // namespace tdnns
