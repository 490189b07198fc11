#pragma once

#include "tdnns/fespace.hpp"
#include "tdnns/material.hpp"
#include "tdnns/solver.hpp"

#include <Eigen/Sparse>

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace tdnns {

// ---------------------------------------------------------------------------
// Loads and boundary data
// ---------------------------------------------------------------------------

/// Body force, marker-wise boundary data and the electrode/clamp layout.
/// Free charge density is identically zero (non-conducting solid). The
/// mechanical split is Gamma_1 = clamped markers (u_t essential), Gamma_2 =
/// remaining boundary (sigma_nn essential); the electric split is Gamma_3 =
/// electrode markers (phi prescribed), Gamma_4 = remaining boundary (D_n
/// prescribed).
struct LoadSpec {
    Vec2 body_force = Vec2::Zero();      // [N/m^3]
    std::set<int> clamped;               // Gamma_1 markers
    std::map<int, double> electrode_phi; // Gamma_3 markers -> phi_0 [V]
    std::map<int, double> t_nn;          // [N/m^2] per Gamma_2 marker
    std::map<int, double> t_nt;          // [N/m^2] per Gamma_2 marker, along global tangent
    std::map<int, double> q0;            // [C/m^2] per Gamma_4 marker, along outward normal
    /// Optional prescribed boundary displacement on the clamped markers:
    /// supplies inhomogeneous essential u_t values and the natural u_n data.
    std::function<Vec2(const Vec2&)> clamp_displacement;

    double phi0(int marker) const
    {
        auto it = electrode_phi.find(marker);
        return it == electrode_phi.end() ? 0.0 : it->second;
    }
    static double lookup(const std::map<int, double>& m, int marker)
    {
        auto it = m.find(marker);
        return it == m.end() ? 0.0 : it->second;
    }
};

inline std::set<int> boundary_markers(const Mesh2D& mesh)
{
    std::set<int> out;
    for (int e = 0; e < mesh.n_edges(); ++e)
        if (mesh.is_boundary_edge(e))
            out.insert(mesh.edge_marker[e]);
    return out;
}

// ---------------------------------------------------------------------------
// Block system
// ---------------------------------------------------------------------------

struct FieldBlock {
    std::string name;
    const DofMap* dm = nullptr; // null for multiplier blocks
    int offset = 0;
    int size = 0;
};

/// Assembled sparse symmetric system with named blocks. Triplets are kept
/// until finalize() so essential elimination can run as a filter pass.
struct BlockSystem {
    std::vector<FieldBlock> blocks;
    int n = 0;
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd rhs;
    std::vector<char> constrained; // essential mask per system dof
    std::vector<int> eliminated;   // filled by apply_essential
    Eigen::VectorXd eliminated_values;
    Eigen::SparseMatrix<double> A;
    bool finalized = false;

    int add_block(const std::string& name, const DofMap* dm, int size)
    {
        FieldBlock b{name, dm, n, size};
        blocks.push_back(b);
        n += size;
        return static_cast<int>(blocks.size()) - 1;
    }
    void start()
    {
        rhs = Eigen::VectorXd::Zero(n);
        constrained.assign(n, 0);
        for (const auto& b : blocks)
            if (b.dm)
                for (int i = 0; i < b.dm->ndof; ++i)
                    if (b.dm->essential[i])
                        constrained[b.offset + i] = 1;
    }
    const FieldBlock& block(const std::string& name) const
    {
        for (const auto& b : blocks)
            if (b.name == name)
                return b;
        throw fe_error("no block named `" + name + "`");
    }
    void add(int i, int j, double v)
    {
        if (v != 0.0)
            trip.emplace_back(i, j, v);
    }
    void finalize()
    {
        A.resize(n, n);
        A.setFromTriplets(trip.begin(), trip.end());
        A.makeCompressed();
        finalized = true;
    }
    Eigen::VectorXd block_slice(const Eigen::VectorXd& x, const std::string& name) const
    {
        const FieldBlock& b = block(name);
        return x.segment(b.offset, b.size);
    }
    double symmetry_error() const
    {
        if (!finalized)
            throw fe_error("symmetry_error: finalize first");
        const Eigen::SparseMatrix<double> At = A.transpose();
        const double denom = A.norm();
        return denom == 0.0 ? 0.0 : (A - At).norm() / denom;
    }
};

/// Symmetric elimination: constrained columns move to the right-hand side,
/// constrained rows become identity rows carrying the prescribed value.
/// Values for unmasked dofs are rejected.
inline void apply_essential(BlockSystem& sys, const std::map<int, double>& values)
{
    for (const auto& [dof, val] : values) {
        (void)val;
        if (dof < 0 || dof >= sys.n || !sys.constrained[dof])
            throw fe_error("apply_essential: value prescribed for unmasked dof " +
                           std::to_string(dof));
    }
    std::vector<double> value_of(sys.n, 0.0);
    for (const auto& [dof, val] : values)
        value_of[dof] = val;

    std::vector<Eigen::Triplet<double>> kept;
    kept.reserve(sys.trip.size());
    for (const auto& t : sys.trip) {
        const bool ri = sys.constrained[t.row()];
        const bool ci = sys.constrained[t.col()];
        if (ri)
            continue; // row replaced by identity below
        if (ci) {
            sys.rhs[t.row()] -= t.value() * value_of[t.col()];
            continue;
        }
        kept.push_back(t);
    }
    sys.eliminated.clear();
    for (int i = 0; i < sys.n; ++i)
        if (sys.constrained[i]) {
            kept.emplace_back(i, i, 1.0);
            sys.rhs[i] = value_of[i];
            sys.eliminated.push_back(i);
        }
    sys.eliminated_values.resize(static_cast<Eigen::Index>(sys.eliminated.size()));
    for (std::size_t i = 0; i < sys.eliminated.size(); ++i)
        sys.eliminated_values[static_cast<Eigen::Index>(i)] = value_of[sys.eliminated[i]];
    sys.trip = std::move(kept);
}

// ---------------------------------------------------------------------------
// Static condensation
// ---------------------------------------------------------------------------

/// Per-element Schur complements onto the interface dofs plus the data needed
/// to recover interior dofs after the global solve. The recovery data stores
/// the solved products Kii^{-1} Kib and Kii^{-1} fi.
struct CondensationData {
    struct ElementRec {
        std::vector<int> interface_dofs; // system ids
        std::vector<int> interior_dofs;  // system ids
        Eigen::MatrixXd SK;              // Kii^{-1} Kib
        Eigen::VectorXd sf;              // Kii^{-1} fi
    };
    std::vector<ElementRec> recs;
    int n_condensed = 0;

    void recover(Eigen::VectorXd& x) const
    {
        for (const auto& r : recs) {
            Eigen::VectorXd xb(r.interface_dofs.size());
            for (std::size_t i = 0; i < r.interface_dofs.size(); ++i)
                xb[static_cast<Eigen::Index>(i)] = x[r.interface_dofs[i]];
            const Eigen::VectorXd xi = r.sf - r.SK * xb;
            for (std::size_t i = 0; i < r.interior_dofs.size(); ++i)
                x[r.interior_dofs[i]] = xi[static_cast<Eigen::Index>(i)];
        }
    }
};

/// One element's fully scattered contribution (system dof ids, condensable
/// mask, stiffness and load).
struct ElementContribution {
    std::vector<int> dofs;
    std::vector<char> interior;
    Eigen::MatrixXd K;
    Eigen::VectorXd f;
};

/// Schur-eliminates the masked interior dofs of one element block. Throws if
/// the interior block is singular.
inline ElementContribution static_condense(const ElementContribution& c, int element_id,
                                           CondensationData& data)
{
    std::vector<int> bi, ii;
    for (std::size_t i = 0; i < c.dofs.size(); ++i)
        (c.interior[i] ? ii : bi).push_back(static_cast<int>(i));
    if (ii.empty())
        return c;

    Eigen::MatrixXd Kbb(bi.size(), bi.size()), Kbi(bi.size(), ii.size()),
        Kib(ii.size(), bi.size()), Kii(ii.size(), ii.size());
    Eigen::VectorXd fb(bi.size()), fi(ii.size());
    for (std::size_t a = 0; a < bi.size(); ++a) {
        fb[static_cast<Eigen::Index>(a)] = c.f[bi[a]];
        for (std::size_t b = 0; b < bi.size(); ++b)
            Kbb(a, b) = c.K(bi[a], bi[b]);
        for (std::size_t b = 0; b < ii.size(); ++b)
            Kbi(a, b) = c.K(bi[a], ii[b]);
    }
    for (std::size_t a = 0; a < ii.size(); ++a) {
        fi[static_cast<Eigen::Index>(a)] = c.f[ii[a]];
        for (std::size_t b = 0; b < bi.size(); ++b)
            Kib(a, b) = c.K(ii[a], bi[b]);
        for (std::size_t b = 0; b < ii.size(); ++b)
            Kii(a, b) = c.K(ii[a], ii[b]);
    }
    // symmetric equilibration: interior blocks mix compliance and duality
    // scales separated by many orders of magnitude
    Eigen::VectorXd scale(Kii.rows());
    for (Eigen::Index r = 0; r < Kii.rows(); ++r) {
        const double m = Kii.row(r).cwiseAbs().maxCoeff();
        scale[r] = m > 0.0 ? 1.0 / std::sqrt(m) : 1.0;
    }
    const Eigen::MatrixXd Kii_eq = scale.asDiagonal() * Kii * scale.asDiagonal();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(Kii_eq);
    if (!lu.isInvertible())
        throw solver_error("static condensation: singular interior block on element " +
                           std::to_string(element_id));

    // refined column solves of Kii [SK | sf] = [Kib | fi]
    Eigen::MatrixXd rhs(ii.size(), bi.size() + 1);
    rhs.leftCols(bi.size()) = Kib;
    rhs.col(bi.size()) = fi;
    Eigen::MatrixXd sol = scale.asDiagonal() * lu.solve((scale.asDiagonal() * rhs).eval());
    for (int pass = 0; pass < 2; ++pass) {
        const Eigen::MatrixXd resid = rhs - Kii * sol;
        sol += scale.asDiagonal() * lu.solve((scale.asDiagonal() * resid).eval());
    }

    CondensationData::ElementRec rec;
    for (int a : bi)
        rec.interface_dofs.push_back(c.dofs[a]);
    for (int a : ii)
        rec.interior_dofs.push_back(c.dofs[a]);
    rec.SK = sol.leftCols(bi.size());
    rec.sf = sol.col(bi.size());

    ElementContribution out;
    out.dofs = rec.interface_dofs;
    out.interior.assign(out.dofs.size(), 0);
    out.K = Kbb - Kbi * rec.SK;
    out.f = fb - Kbi * rec.sf;
    data.recs.push_back(std::move(rec));
    data.n_condensed += static_cast<int>(ii.size());
    return out;
}

// ---------------------------------------------------------------------------
// Element bases and kernels
// ---------------------------------------------------------------------------

/// Element basis tables in the dof-map's basis (orientation coefficients and
/// interior orthonormalization folded in): scatter plainly against global dofs.
struct ElementBasisSet {
    BasisEval volume;
    std::array<BasisEval, 3> edge;
};

inline ElementBasisSet element_basis(const DofMap& dm, const ReferenceTables& rt, int t,
                                     const ElementGeometry& g)
{
    ElementBasisSet set;
    set.volume = map_to_physical(dm.kind, g, rt.volume);
    dm.transform_element_basis(t, set.volume);
    for (int le = 0; le < 3; ++le) {
        set.edge[le] = map_to_physical(dm.kind, g, rt.edge[le]);
        dm.transform_element_basis(t, set.edge[le]);
    }
    return set;
}

namespace detail {

/// Engineering-strain rows (e_xx, e_zz, 2 e_xz) of a tangential-continuous
/// basis at the volume points, from the physical gradient payload.
inline std::array<Eigen::MatrixXd, 3> strain_rows(const BasisEval& u)
{
    return {u.deriv[0], u.deriv[3], u.deriv[1] + u.deriv[2]};
}

struct EdgeQuad {
    int le;
    double jac; // |e|/2
    Vec2 n_out, t_glob;
    int marker;
    bool boundary;
};

inline EdgeQuad edge_quad(const Mesh2D& mesh, int t, int le)
{
    EdgeQuad eq;
    eq.le = le;
    const EdgeFrame f = mesh.frame(t, le);
    eq.jac = 0.5 * f.length;
    eq.n_out = f.n;
    eq.t_glob = f.t;
    const int e = mesh.tri_edges[t][le];
    eq.marker = mesh.edge_marker[e];
    eq.boundary = mesh.is_boundary_edge(e);
    return eq;
}

/// Physical coordinates of the element-local edge quadrature points.
inline std::vector<Vec2> edge_phys_points(const ElementGeometry& g, int le, int ngauss)
{
    const auto ref = edge_ref_points(le, ngauss);
    std::vector<Vec2> out(ref.size());
    for (std::size_t q = 0; q < ref.size(); ++q)
        out[q] = g.F * ref[q] + g.shift;
    return out;
}

/// K(i,j) += sum_q w_q rowsA[i](q) . M . rowsB[j](q) for generic row tables.
template <int NA, int NB>
inline void accumulate(Eigen::MatrixXd& K, int row0, int col0,
                       const std::array<const Eigen::MatrixXd*, NA>& A,
                       const std::array<const Eigen::MatrixXd*, NB>& B,
                       const Eigen::Matrix<double, NA, NB>& M, const std::vector<double>& w,
                       double jac)
{
    const int na = static_cast<int>(A[0]->rows()), nb = static_cast<int>(B[0]->rows());
    const int nq = static_cast<int>(w.size());
    for (int q = 0; q < nq; ++q) {
        const double wq = w[q] * jac;
        for (int i = 0; i < na; ++i)
            for (int j = 0; j < nb; ++j) {
                double s = 0.0;
                for (int a = 0; a < NA; ++a)
                    for (int b = 0; b < NB; ++b)
                        s += (*A[a])(i, q) * M(a, b) * (*B[b])(j, q);
                K(row0 + i, col0 + j) += wq * s;
            }
    }
}

inline const Material2D& material_of(const std::map<int, Material2D>& materials,
                                     const Mesh2D& mesh, int t)
{
    auto it = materials.find(mesh.region[t]);
    if (it == materials.end())
        throw fe_error("no material for region " + std::to_string(mesh.region[t]));
    return it->second;
}

} // namespace detail

enum class DualityMode { volume_surface, divergence_surface };

/// Element block of the distributional pairing <eps(u), sigma>:
/// volume_surface computes  int_T sigma : eps(u) - int_dT sigma_nn u_n,
/// divergence_surface computes -int_T div sigma . u + int_dT sigma_nt . u_t.
/// Rows index the stress basis, columns the displacement basis.
inline Eigen::MatrixXd duality_pairing(const Mesh2D& mesh, int t, const ElementBasisSet& sig,
                                       const ElementBasisSet& u, const ReferenceTables& rt,
                                       DualityMode mode)
{
    const ElementGeometry g = element_geometry(mesh, t);
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(sig.volume.ndof, u.volume.ndof);

    const int nq = static_cast<int>(rt.volume_weights.size());
    if (mode == DualityMode::volume_surface) {
        const auto eps = detail::strain_rows(u.volume);
        for (int q = 0; q < nq; ++q) {
            const double w = rt.volume_weights[q] * g.detF;
            for (int i = 0; i < sig.volume.ndof; ++i)
                for (int j = 0; j < u.volume.ndof; ++j)
                    B(i, j) += w * (sig.volume.value[0](i, q) * eps[0](j, q) +
                                    sig.volume.value[1](i, q) * eps[1](j, q) +
                                    sig.volume.value[2](i, q) * eps[2](j, q));
        }
    } else {
        for (int q = 0; q < nq; ++q) {
            const double w = rt.volume_weights[q] * g.detF;
            for (int i = 0; i < sig.volume.ndof; ++i)
                for (int j = 0; j < u.volume.ndof; ++j)
                    B(i, j) -= w * (sig.volume.deriv[0](i, q) * u.volume.value[0](j, q) +
                                    sig.volume.deriv[1](i, q) * u.volume.value[1](j, q));
        }
    }

    const GaussRule& eg = cached_gauss_rule(rt.edge_ngauss);
    for (int le = 0; le < 3; ++le) {
        const auto eq = detail::edge_quad(mesh, t, le);
        const BasisEval& sig_e = sig.edge[le];
        const BasisEval& u_e = u.edge[le];
        for (std::size_t q = 0; q < eg.points.size(); ++q) {
            const double w = eg.weights[q] * eq.jac;
            for (int i = 0; i < sig_e.ndof; ++i) {
                const double sn_x =
                    sig_e.value[0](i, q) * eq.n_out.x() + sig_e.value[2](i, q) * eq.n_out.y();
                const double sn_z =
                    sig_e.value[2](i, q) * eq.n_out.x() + sig_e.value[1](i, q) * eq.n_out.y();
                const double snn = sn_x * eq.n_out.x() + sn_z * eq.n_out.y();
                for (int j = 0; j < u_e.ndof; ++j) {
                    const double un = u_e.value[0](j, q) * eq.n_out.x() +
                                      u_e.value[1](j, q) * eq.n_out.y();
                    if (mode == DualityMode::volume_surface) {
                        B(i, j) -= w * snn * un;
                    } else {
                        const double snt_x = sn_x - snn * eq.n_out.x();
                        const double snt_z = sn_z - snn * eq.n_out.y();
                        const double ut_x = u_e.value[0](j, q) - un * eq.n_out.x();
                        const double ut_z = u_e.value[1](j, q) - un * eq.n_out.y();
                        B(i, j) += w * (snt_x * ut_x + snt_z * ut_z);
                    }
                }
            }
        }
    }
    return B;
}

// ---------------------------------------------------------------------------
// Essential boundary values
// ---------------------------------------------------------------------------

namespace detail {

/// Trace-moment values of prescribed data on marked edges (global orientation).
/// `trace` receives the physical point, the global tangent and the outward
/// normal of the incident triangle.
inline void edge_moment_values(
    const DofMap& dm, const std::set<int>& markers,
    const std::function<double(const Vec2&, const Vec2&, const Vec2&)>& trace, int block_offset,
    std::map<int, double>& out)
{
    const Mesh2D& mesh = *dm.mesh;
    const int k = dm.kind.order;
    const int nmom = k + 1;
    const int ngauss = edge_gauss_count(k) + 2;
    const GaussRule& g = cached_gauss_rule(ngauss);

    std::vector<int> edge_dof0(mesh.n_edges(), -1);
    for (std::size_t pos = 0; pos < dm.info.size(); ++pos)
        if (dm.info[pos].entity == DofEntity::edge && dm.info[pos].index == 0)
            edge_dof0[dm.info[pos].id] = static_cast<int>(pos);

    for (int e = 0; e < mesh.n_edges(); ++e) {
        if (!markers.count(mesh.edge_marker[e]) || edge_dof0[e] < 0)
            continue;
        if (!dm.essential[edge_dof0[e]])
            continue;
        const Vec2 lo = mesh.vertices[mesh.edges[e][0]];
        const Vec2 hi = mesh.vertices[mesh.edges[e][1]];
        const Vec2 tg = (hi - lo).normalized();
        // outward normal of the (first) incident triangle
        const int t = mesh.edge_tris[e][0];
        int le = 0;
        for (int i = 0; i < 3; ++i)
            if (mesh.tri_edges[t][i] == e)
                le = i;
        const Vec2 n_out = mesh.frame(t, le).n;
        for (int m = 0; m < nmom; ++m) {
            double v = 0.0;
            for (std::size_t q = 0; q < g.points.size(); ++q) {
                const Vec2 x = 0.5 * (lo + hi) + 0.5 * g.points[q] * (hi - lo);
                v += 0.5 * g.weights[q] * trace(x, tg, n_out) * legendre(m, g.points[q]);
            }
            out[block_offset + edge_dof0[e] + m] = v;
        }
    }
}

/// Point values of prescribed data at the lattice dofs of a nodal space.
/// Vertex dofs are set only when the vertex touches an edge carrying one of
/// the markers, so stacked calls for different markers do not clobber each
/// other.
inline void nodal_point_values(const DofMap& dm, const std::set<int>& markers,
                               const std::function<double(const Vec2&)>& data, int block_offset,
                               std::map<int, double>& out)
{
    const Mesh2D& mesh = *dm.mesh;
    const int k = dm.kind.order;
    std::vector<char> vertex_on_marker(mesh.n_vertices(), 0);
    for (int e = 0; e < mesh.n_edges(); ++e)
        if (markers.count(mesh.edge_marker[e]))
            for (int v : mesh.edges[e])
                vertex_on_marker[v] = 1;
    for (std::size_t pos = 0; pos < dm.info.size(); ++pos) {
        const auto& gi = dm.info[pos];
        if (!dm.essential[pos])
            continue;
        Vec2 x;
        if (gi.entity == DofEntity::vertex) {
            if (!vertex_on_marker[gi.id])
                continue;
            x = mesh.vertices[gi.id];
        } else if (gi.entity == DofEntity::edge) {
            if (!markers.count(mesh.edge_marker[gi.id]))
                continue;
            const Vec2 lo = mesh.vertices[mesh.edges[gi.id][0]];
            const Vec2 hi = mesh.vertices[mesh.edges[gi.id][1]];
            x = lo + (hi - lo) * (double(gi.index + 1) / k);
        } else {
            continue;
        }
        out[block_offset + static_cast<int>(pos)] = data(x);
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Assemblers
// ---------------------------------------------------------------------------

struct AssemblyOptions {
    bool condense = false;
    bool pin_rigid_modes = false; // append mean-value multipliers on u
    int quad_degree = -1;         // default 2k+2
};

/// Scatter target shared by the assemblers. Condensed interior dofs keep
/// identity placeholder rows; recovery fills their values after the solve.
class Assembler {
public:
    Assembler(BlockSystem& sys, const AssemblyOptions& opt, CondensationData* cond)
        : sys_(sys), opt_(opt), cond_(cond)
    {
    }
    void element(int t, ElementContribution&& c)
    {
        ElementContribution use = std::move(c);
        if (opt_.condense && cond_) {
            const std::size_t nrec = cond_->recs.size();
            use = static_condense(use, t, *cond_);
            if (cond_->recs.size() > nrec)
                for (int d : cond_->recs.back().interior_dofs)
                    sys_.add(d, d, 1.0);
        }
        const int n = static_cast<int>(use.dofs.size());
        for (int i = 0; i < n; ++i) {
            sys_.rhs[use.dofs[i]] += use.f[i];
            for (int j = 0; j < n; ++j)
                sys_.add(use.dofs[i], use.dofs[j], use.K(i, j));
        }
    }

private:
    BlockSystem& sys_;
    const AssemblyOptions& opt_;
    CondensationData* cond_;
};

namespace detail {

inline void append_space_dofs(const DofMap& dm, int t, int offset, bool condensable,
                              ElementContribution& c)
{
    for (int i = 0; i < dm.local_ndof; ++i) {
        c.dofs.push_back(offset + dm.global_dof(t, i));
        const bool interior = condensable && i >= dm.local_ndof - dm.n_interior_local;
        c.interior.push_back(interior ? 1 : 0);
    }
}

/// Appends the three mean-value multiplier rows int u . rho dx, rho in
/// {e_x, e_z, (-z, x)}, used to pin rigid modes on traction-free problems.
inline void append_rigid_rows(ElementContribution& c, int lm_offset, const Mesh2D& mesh, int t,
                              const ReferenceTables& rt, const BasisEval& u_vol, int u_start)
{
    const ElementGeometry g = element_geometry(mesh, t);
    const int lm0 = static_cast<int>(c.dofs.size());
    for (int r = 0; r < 3; ++r) {
        c.dofs.push_back(lm_offset + r);
        c.interior.push_back(0);
    }
    Eigen::MatrixXd K2 = Eigen::MatrixXd::Zero(lm0 + 3, lm0 + 3);
    K2.topLeftCorner(lm0, lm0) = c.K;
    Eigen::VectorXd f2 = Eigen::VectorXd::Zero(lm0 + 3);
    f2.head(lm0) = c.f;
    for (std::size_t q = 0; q < rt.volume_weights.size(); ++q) {
        const double w = rt.volume_weights[q] * g.detF;
        const Vec2 x = g.F * rt.volume_points[q] + g.shift;
        const Vec2 rho[3] = {Vec2(1, 0), Vec2(0, 1), Vec2(-x.y(), x.x())};
        for (int j = 0; j < u_vol.ndof; ++j)
            for (int r = 0; r < 3; ++r) {
                const double v = w * (u_vol.value[0](j, q) * rho[r].x() +
                                      u_vol.value[1](j, q) * rho[r].y());
                K2(lm0 + r, u_start + j) += v;
                K2(u_start + j, lm0 + r) += v;
            }
    }
    c.K = std::move(K2);
    c.f = std::move(f2);
}

/// Surface loads shared by the mixed formulations: tangential traction on
/// Gamma_2 and the natural normal-displacement datum on Gamma_1.
inline void mixed_surface_loads(const Mesh2D& mesh, int t, const ElementGeometry& g,
                                const LoadSpec& loads, const ReferenceTables& rt,
                                const ElementBasisSet& sig, const ElementBasisSet& u,
                                int sig_start, int u_start, ElementContribution& c)
{
    const GaussRule& eg = cached_gauss_rule(rt.edge_ngauss);
    for (int le = 0; le < 3; ++le) {
        const auto eq = edge_quad(mesh, t, le);
        if (!eq.boundary)
            continue;
        const bool on_clamp = loads.clamped.count(eq.marker) > 0;
        const double tnt = LoadSpec::lookup(loads.t_nt, eq.marker);
        if (!on_clamp && tnt != 0.0) {
            for (std::size_t q = 0; q < eg.points.size(); ++q) {
                const double w = eg.weights[q] * eq.jac;
                for (int j = 0; j < u.edge[le].ndof; ++j)
                    c.f[u_start + j] += w * tnt *
                                        (u.edge[le].value[0](j, q) * eq.t_glob.x() +
                                         u.edge[le].value[1](j, q) * eq.t_glob.y());
            }
        }
        if (on_clamp && loads.clamp_displacement) {
            const auto xs = edge_phys_points(g, le, rt.edge_ngauss);
            for (std::size_t q = 0; q < eg.points.size(); ++q) {
                const double w = eg.weights[q] * eq.jac;
                const double gn = loads.clamp_displacement(xs[q]).dot(eq.n_out);
                if (gn == 0.0)
                    continue;
                for (int i = 0; i < sig.edge[le].ndof; ++i) {
                    const double snn =
                        eq.n_out.x() * eq.n_out.x() * sig.edge[le].value[0](i, q) +
                        eq.n_out.y() * eq.n_out.y() * sig.edge[le].value[1](i, q) +
                        2.0 * eq.n_out.x() * eq.n_out.y() * sig.edge[le].value[2](i, q);
                    c.f[sig_start + i] -= w * gn * snn;
                }
            }
        }
    }
}

/// Essential values of the mechanical fields shared by the mixed assemblers.
inline void mixed_essential_values(const Mesh2D& mesh, const DofMap& sigma_dm, const DofMap& u_dm,
                                   const LoadSpec& loads, int sig_offset, int u_offset,
                                   std::map<int, double>& values)
{
    const std::set<int> bnd = boundary_markers(mesh);
    for (int mk : bnd) {
        if (loads.clamped.count(mk))
            continue;
        const double tnn = LoadSpec::lookup(loads.t_nn, mk);
        edge_moment_values(
            sigma_dm, {mk}, [tnn](const Vec2&, const Vec2&, const Vec2&) { return tnn; },
            sig_offset, values);
    }
    for (int mk : loads.clamped) {
        auto disp = loads.clamp_displacement;
        edge_moment_values(
            u_dm, {mk},
            [&disp](const Vec2& x, const Vec2& tg, const Vec2&) {
                return disp ? disp(x).dot(tg) : 0.0;
            },
            u_offset, values);
    }
}

} // namespace detail

/// Elastic TDNNS: find (sigma, u) with
///   -int S^E sigma : dsigma + <eps(u), dsigma>  = -int_G1 u_n dsigma_nn
///    <eps(du), sigma>                            = int f.du + int_G2 t_nt.du_t
/// Essential: sigma_nn = t_nn on Gamma_2, u_t = clamp data on Gamma_1.
inline BlockSystem assemble_tdnns_elastic(const Mesh2D& mesh, const DofMap& sigma_dm,
                                          const DofMap& u_dm,
                                          const std::map<int, Material2D>& materials,
                                          const LoadSpec& loads, AssemblyOptions opt = {},
                                          CondensationData* cond = nullptr)
{
    if (sigma_dm.kind.order != u_dm.kind.order)
        throw fe_error("TDNNS requires equal orders for the stress and displacement spaces");
    const int k = sigma_dm.kind.order;
    const int qd = opt.quad_degree > 0 ? opt.quad_degree : 2 * k + 2;

    BlockSystem sys;
    const int bs = sys.add_block("sigma", &sigma_dm, sigma_dm.ndof);
    const int bu = sys.add_block("u", &u_dm, u_dm.ndof);
    int blm = -1;
    if (opt.pin_rigid_modes)
        blm = sys.add_block("lm", nullptr, 3);
    sys.start();
    Assembler out(sys, opt, cond);

    const ReferenceTables& sig_rt = reference_tables(sigma_dm.kind, qd);
    const ReferenceTables& u_rt = reference_tables(u_dm.kind, qd);

    for (int t = 0; t < mesh.n_triangles(); ++t) {
        const ElementGeometry g = element_geometry(mesh, t);
        const Material2D& mat = detail::material_of(materials, mesh, t);
        const ElementBasisSet sig = element_basis(sigma_dm, sig_rt, t, g);
        const ElementBasisSet u = element_basis(u_dm, u_rt, t, g);
        const int ns = sig.volume.ndof, nu = u.volume.ndof;

        ElementContribution c;
        detail::append_space_dofs(sigma_dm, t, sys.blocks[bs].offset, true, c);
        detail::append_space_dofs(u_dm, t, sys.blocks[bu].offset, true, c);
        c.K = Eigen::MatrixXd::Zero(ns + nu, ns + nu);
        c.f = Eigen::VectorXd::Zero(ns + nu);

        detail::accumulate<3, 3>(
            c.K, 0, 0, {&sig.volume.value[0], &sig.volume.value[1], &sig.volume.value[2]},
            {&sig.volume.value[0], &sig.volume.value[1], &sig.volume.value[2]},
            (-mat.S_E2).eval(), sig_rt.volume_weights, g.detF);
        const Eigen::MatrixXd B =
            duality_pairing(mesh, t, sig, u, sig_rt, DualityMode::volume_surface);
        c.K.block(0, ns, ns, nu) += B;
        c.K.block(ns, 0, nu, ns) += B.transpose();

        for (std::size_t q = 0; q < sig_rt.volume_weights.size(); ++q) {
            const double w = sig_rt.volume_weights[q] * g.detF;
            for (int j = 0; j < nu; ++j)
                c.f[ns + j] += w * (loads.body_force.x() * u.volume.value[0](j, q) +
                                    loads.body_force.y() * u.volume.value[1](j, q));
        }
        detail::mixed_surface_loads(mesh, t, g, loads, sig_rt, sig, u, 0, ns, c);
        if (opt.pin_rigid_modes)
            detail::append_rigid_rows(c, sys.blocks[blm].offset, mesh, t, sig_rt, u.volume, ns);
        out.element(t, std::move(c));
    }

    std::map<int, double> values;
    detail::mixed_essential_values(mesh, sigma_dm, u_dm, loads, sys.blocks[bs].offset,
                                   sys.blocks[bu].offset, values);
    apply_essential(sys, values);
    sys.finalize();
    return sys;
}

/// First piezoelectric variant: unknowns (sigma, u, phi), d-form material law,
/// continuous nodal potential. Electrode potentials are imposed by symmetric
/// elimination (the lifting phi = phi~ + phi_0 in matrix form).
inline BlockSystem assemble_v1(const Mesh2D& mesh, const DofMap& sigma_dm, const DofMap& u_dm,
                               const DofMap& phi_dm, const std::map<int, Material2D>& materials,
                               const LoadSpec& loads, AssemblyOptions opt = {},
                               CondensationData* cond = nullptr)
{
    if (sigma_dm.kind.order != u_dm.kind.order)
        throw fe_error("TDNNS requires equal orders for the stress and displacement spaces");
    if (phi_dm.kind.family != SpaceFamily::NodalContinuous || phi_dm.kind.order < 1)
        throw fe_error("V1 requires a continuous potential space of order >= 1");
    const int k = std::max(sigma_dm.kind.order, phi_dm.kind.order);
    const int qd = opt.quad_degree > 0 ? opt.quad_degree : 2 * k + 2;

    BlockSystem sys;
    const int bs = sys.add_block("sigma", &sigma_dm, sigma_dm.ndof);
    const int bu = sys.add_block("u", &u_dm, u_dm.ndof);
    const int bp = sys.add_block("phi", &phi_dm, phi_dm.ndof);
    int blm = -1;
    if (opt.pin_rigid_modes)
        blm = sys.add_block("lm", nullptr, 3);
    sys.start();
    Assembler out(sys, opt, cond);

    const ReferenceTables& sig_rt = reference_tables(sigma_dm.kind, qd);
    const ReferenceTables& u_rt = reference_tables(u_dm.kind, qd);
    const ReferenceTables& phi_rt = reference_tables(phi_dm.kind, qd);
    const GaussRule& eg = cached_gauss_rule(sig_rt.edge_ngauss);

    for (int t = 0; t < mesh.n_triangles(); ++t) {
        const ElementGeometry g = element_geometry(mesh, t);
        const Material2D& mat = detail::material_of(materials, mesh, t);
        const ElementBasisSet sig = element_basis(sigma_dm, sig_rt, t, g);
        const ElementBasisSet u = element_basis(u_dm, u_rt, t, g);
        const ElementBasisSet phi = element_basis(phi_dm, phi_rt, t, g);
        const int ns = sig.volume.ndof, nu = u.volume.ndof, np = phi.volume.ndof;

        ElementContribution c;
        detail::append_space_dofs(sigma_dm, t, sys.blocks[bs].offset, true, c);
        detail::append_space_dofs(u_dm, t, sys.blocks[bu].offset, true, c);
        detail::append_space_dofs(phi_dm, t, sys.blocks[bp].offset, true, c);
        c.K = Eigen::MatrixXd::Zero(ns + nu + np, ns + nu + np);
        c.f = Eigen::VectorXd::Zero(ns + nu + np);

        detail::accumulate<3, 3>(
            c.K, 0, 0, {&sig.volume.value[0], &sig.volume.value[1], &sig.volume.value[2]},
            {&sig.volume.value[0], &sig.volume.value[1], &sig.volume.value[2]},
            (-mat.S_E2).eval(), sig_rt.volume_weights, g.detF);
        const Eigen::MatrixXd B =
            duality_pairing(mesh, t, sig, u, sig_rt, DualityMode::volume_surface);
        c.K.block(0, ns, ns, nu) += B;
        c.K.block(ns, 0, nu, ns) += B.transpose();
        // +int (d^T grad phi) : dsigma and transpose
        const Eigen::Matrix<double, 3, 2> dT = mat.d2.transpose();
        detail::accumulate<3, 2>(c.K, 0, ns + nu,
                                 {&sig.volume.value[0], &sig.volume.value[1], &sig.volume.value[2]},
                                 {&phi.volume.deriv[0], &phi.volume.deriv[1]}, dT,
                                 sig_rt.volume_weights, g.detF);
        detail::accumulate<2, 3>(c.K, ns + nu, 0, {&phi.volume.deriv[0], &phi.volume.deriv[1]},
                                 {&sig.volume.value[0], &sig.volume.value[1], &sig.volume.value[2]},
                                 dT.transpose().eval(), sig_rt.volume_weights, g.detF);
        // -int eps^sigma grad phi . grad dphi
        detail::accumulate<2, 2>(c.K, ns + nu, ns + nu,
                                 {&phi.volume.deriv[0], &phi.volume.deriv[1]},
                                 {&phi.volume.deriv[0], &phi.volume.deriv[1]},
                                 (-mat.eps_sigma2).eval(), sig_rt.volume_weights, g.detF);

        for (std::size_t q = 0; q < sig_rt.volume_weights.size(); ++q) {
            const double w = sig_rt.volume_weights[q] * g.detF;
            for (int j = 0; j < nu; ++j)
                c.f[ns + j] += w * (loads.body_force.x() * u.volume.value[0](j, q) +
                                    loads.body_force.y() * u.volume.value[1](j, q));
        }
        // surface charge q0 on the insulated boundary
        for (int le = 0; le < 3; ++le) {
            const auto eq = detail::edge_quad(mesh, t, le);
            if (!eq.boundary || loads.electrode_phi.count(eq.marker))
                continue;
            const double q0 = LoadSpec::lookup(loads.q0, eq.marker);
            if (q0 == 0.0)
                continue;
            for (std::size_t q = 0; q < eg.points.size(); ++q) {
                const double w = eg.weights[q] * eq.jac;
                for (int j = 0; j < np; ++j)
                    c.f[ns + nu + j] += w * q0 * phi.edge[le].value[0](j, q);
            }
        }
        detail::mixed_surface_loads(mesh, t, g, loads, sig_rt, sig, u, 0, ns, c);
        if (opt.pin_rigid_modes)
            detail::append_rigid_rows(c, sys.blocks[blm].offset, mesh, t, sig_rt, u.volume, ns);
        out.element(t, std::move(c));
    }

    std::map<int, double> values;
    detail::mixed_essential_values(mesh, sigma_dm, u_dm, loads, sys.blocks[bs].offset,
                                   sys.blocks[bu].offset, values);
    for (const auto& [mk, phi0] : loads.electrode_phi) {
        const double v = phi0;
        detail::nodal_point_values(phi_dm, {mk}, [v](const Vec2&) { return v; },
                                   sys.blocks[bp].offset, values);
    }
    apply_essential(sys, values);
    sys.finalize();
    return sys;
}

/// Standard primal formulation (nodal u and phi) used as the verification
/// oracle. Blocks (C^E eps, e^T grad phi; e eps, -eps^eps grad phi).
inline BlockSystem assemble_primal(const Mesh2D& mesh, const DofMap& u_scalar_dm,
                                   const DofMap& phi_dm,
                                   const std::map<int, Material2D>& materials,
                                   const LoadSpec& loads, AssemblyOptions opt = {},
                                   CondensationData* cond = nullptr)
{
    if (u_scalar_dm.kind.family != SpaceFamily::NodalContinuous ||
        phi_dm.kind.family != SpaceFamily::NodalContinuous)
        throw fe_error("primal formulation requires nodal spaces");
    const int k = std::max(u_scalar_dm.kind.order, phi_dm.kind.order);
    const int qd = opt.quad_degree > 0 ? opt.quad_degree : 2 * k + 2;
    const int nsc = u_scalar_dm.ndof;

    BlockSystem sys;
    const int bu = sys.add_block("u", &u_scalar_dm, 2 * nsc);
    const int bp = sys.add_block("phi", &phi_dm, phi_dm.ndof);
    int blm = -1;
    if (opt.pin_rigid_modes)
        blm = sys.add_block("lm", nullptr, 3);
    // the u block stacks the two displacement components on one scalar dofmap
    sys.rhs = Eigen::VectorXd::Zero(sys.n);
    sys.constrained.assign(sys.n, 0);
    for (int i = 0; i < nsc; ++i)
        if (u_scalar_dm.essential[i]) {
            sys.constrained[sys.blocks[bu].offset + i] = 1;
            sys.constrained[sys.blocks[bu].offset + nsc + i] = 1;
        }
    for (int i = 0; i < phi_dm.ndof; ++i)
        if (phi_dm.essential[i])
            sys.constrained[sys.blocks[bp].offset + i] = 1;
    Assembler out(sys, opt, cond);

    const ReferenceTables& u_rt = reference_tables(u_scalar_dm.kind, qd);
    const ReferenceTables& phi_rt = reference_tables(phi_dm.kind, qd);
    const GaussRule& eg = cached_gauss_rule(u_rt.edge_ngauss);

    for (int t = 0; t < mesh.n_triangles(); ++t) {
        const ElementGeometry g = element_geometry(mesh, t);
        const Material2D& mat = detail::material_of(materials, mesh, t);
        const ElementBasisSet us = element_basis(u_scalar_dm, u_rt, t, g);
        const ElementBasisSet phi = element_basis(phi_dm, phi_rt, t, g);
        const int nu1 = us.volume.ndof, np = phi.volume.ndof;
        const int nu = 2 * nu1;

        ElementContribution c;
        for (int comp = 0; comp < 2; ++comp)
            for (int i = 0; i < nu1; ++i) {
                c.dofs.push_back(sys.blocks[bu].offset + comp * nsc +
                                 u_scalar_dm.global_dof(t, i));
                c.interior.push_back(i >= u_scalar_dm.local_ndof - u_scalar_dm.n_interior_local);
            }
        detail::append_space_dofs(phi_dm, t, sys.blocks[bp].offset, true, c);
        c.K = Eigen::MatrixXd::Zero(nu + np, nu + np);
        c.f = Eigen::VectorXd::Zero(nu + np);

        // engineering strain rows of the stacked components:
        //   comp 0 basis i -> (gx_i, 0, gy_i); comp 1 basis i -> (0, gy_i, gx_i)
        const int nq = static_cast<int>(u_rt.volume_weights.size());
        for (int q = 0; q < nq; ++q) {
            const double w = u_rt.volume_weights[q] * g.detF;
            for (int i = 0; i < nu; ++i) {
                const int ci = i / nu1, bi = i % nu1;
                Vec3 epsi;
                if (ci == 0)
                    epsi << us.volume.deriv[0](bi, q), 0.0, us.volume.deriv[1](bi, q);
                else
                    epsi << 0.0, us.volume.deriv[1](bi, q), us.volume.deriv[0](bi, q);
                for (int j = 0; j < nu; ++j) {
                    const int cj = j / nu1, bj = j % nu1;
                    Vec3 epsj;
                    if (cj == 0)
                        epsj << us.volume.deriv[0](bj, q), 0.0, us.volume.deriv[1](bj, q);
                    else
                        epsj << 0.0, us.volume.deriv[1](bj, q), us.volume.deriv[0](bj, q);
                    c.K(i, j) += w * epsi.dot(mat.C_E2 * epsj);
                }
                for (int j = 0; j < np; ++j) {
                    const Vec2 gp(phi.volume.deriv[0](j, q), phi.volume.deriv[1](j, q));
                    const double v = w * epsi.dot(mat.e2.transpose() * gp);
                    c.K(i, nu + j) += v;
                    c.K(nu + j, i) += v;
                }
                c.f[i] += w * (ci == 0 ? loads.body_force.x() : loads.body_force.y()) *
                          us.volume.value[0](bi, q);
            }
            for (int i = 0; i < np; ++i)
                for (int j = 0; j < np; ++j) {
                    const Vec2 gi(phi.volume.deriv[0](i, q), phi.volume.deriv[1](i, q));
                    const Vec2 gj(phi.volume.deriv[0](j, q), phi.volume.deriv[1](j, q));
                    c.K(nu + i, nu + j) -= w * gi.dot(mat.eps_eps2 * gj);
                }
        }
        for (int le = 0; le < 3; ++le) {
            const auto eq = detail::edge_quad(mesh, t, le);
            if (!eq.boundary)
                continue;
            const bool on_clamp = loads.clamped.count(eq.marker) > 0;
            const bool on_electrode = loads.electrode_phi.count(eq.marker) > 0;
            const double tnn = LoadSpec::lookup(loads.t_nn, eq.marker);
            const double tnt = LoadSpec::lookup(loads.t_nt, eq.marker);
            const double q0 = LoadSpec::lookup(loads.q0, eq.marker);
            if (!on_clamp && (tnn != 0.0 || tnt != 0.0)) {
                const Vec2 tr = tnn * eq.n_out + tnt * eq.t_glob;
                for (std::size_t q = 0; q < eg.points.size(); ++q) {
                    const double w = eg.weights[q] * eq.jac;
                    for (int i = 0; i < nu1; ++i) {
                        c.f[i] += w * tr.x() * us.edge[le].value[0](i, q);
                        c.f[nu1 + i] += w * tr.y() * us.edge[le].value[0](i, q);
                    }
                }
            }
            if (!on_electrode && q0 != 0.0) {
                for (std::size_t q = 0; q < eg.points.size(); ++q) {
                    const double w = eg.weights[q] * eq.jac;
                    for (int j = 0; j < np; ++j)
                        c.f[nu + j] += w * q0 * phi.edge[le].value[0](j, q);
                }
            }
        }
        if (opt.pin_rigid_modes) {
            // stacked-component variant of the mean-value rows
            const int lm0 = static_cast<int>(c.dofs.size());
            for (int r = 0; r < 3; ++r) {
                c.dofs.push_back(sys.blocks[blm].offset + r);
                c.interior.push_back(0);
            }
            Eigen::MatrixXd K2 = Eigen::MatrixXd::Zero(lm0 + 3, lm0 + 3);
            K2.topLeftCorner(lm0, lm0) = c.K;
            Eigen::VectorXd f2 = Eigen::VectorXd::Zero(lm0 + 3);
            f2.head(lm0) = c.f;
            for (int q = 0; q < nq; ++q) {
                const double w = u_rt.volume_weights[q] * g.detF;
                const Vec2 x = g.F * u_rt.volume_points[q] + g.shift;
                const Vec2 rho[3] = {Vec2(1, 0), Vec2(0, 1), Vec2(-x.y(), x.x())};
                for (int i = 0; i < nu; ++i) {
                    const int ci = i / nu1, bi = i % nu1;
                    const double val = us.volume.value[0](bi, q);
                    for (int r = 0; r < 3; ++r) {
                        const double v = w * val * (ci == 0 ? rho[r].x() : rho[r].y());
                        K2(lm0 + r, i) += v;
                        K2(i, lm0 + r) += v;
                    }
                }
            }
            c.K = std::move(K2);
            c.f = std::move(f2);
        }
        out.element(t, std::move(c));
    }

    std::map<int, double> values;
    for (int mk : loads.clamped) {
        auto disp = loads.clamp_displacement;
        std::map<int, double> vx, vz;
        detail::nodal_point_values(
            u_scalar_dm, {mk}, [&disp](const Vec2& x) { return disp ? disp(x).x() : 0.0; }, 0, vx);
        detail::nodal_point_values(
            u_scalar_dm, {mk}, [&disp](const Vec2& x) { return disp ? disp(x).y() : 0.0; }, 0, vz);
        for (const auto& [dof, v] : vx)
            values[sys.blocks[bu].offset + dof] = v;
        for (const auto& [dof, v] : vz)
            values[sys.blocks[bu].offset + nsc + dof] = v;
    }
    for (const auto& [mk, phi0] : loads.electrode_phi) {
        const double v = phi0;
        detail::nodal_point_values(phi_dm, {mk}, [v](const Vec2&) { return v; },
                                   sys.blocks[bp].offset, values);
    }
    apply_essential(sys, values);
    sys.finalize();
    return sys;
}

/// Second piezoelectric variant: unknowns (sigma, u, phi, D) with the g-form
/// law, discontinuous potential and normal-continuous dielectric displacement
/// split into region groups so D_n may jump across internal electrodes.
/// Electrode potentials enter the right-hand side through -int phi_0 dD_n.
inline BlockSystem assemble_v2(const Mesh2D& mesh, const DofMap& sigma_dm, const DofMap& u_dm,
                               const DofMap& phi_dm, const std::vector<const DofMap*>& d_groups,
                               const std::map<int, Material2D>& materials, const LoadSpec& loads,
                               AssemblyOptions opt = {}, CondensationData* cond = nullptr)
{
    if (sigma_dm.kind.order != u_dm.kind.order)
        throw fe_error("TDNNS requires equal orders for the stress and displacement spaces");
    if (phi_dm.kind.family != SpaceFamily::Discontinuous)
        throw fe_error("V2 requires a discontinuous potential space");
    if (d_groups.empty())
        throw fe_error("V2 requires at least one dielectric displacement space");
    const bool divfree = d_groups.front()->kind.divfree;
    for (const DofMap* d : d_groups)
        if (d->kind.family != SpaceFamily::NormalContinuous || d->kind.divfree != divfree)
            throw fe_error("V2 dielectric spaces must be NormalContinuous with a common divfree flag");
    if (divfree && phi_dm.kind.order != 0)
        throw fe_error("divergence-free reduction requires potential order 0");
    const int kd = d_groups.front()->kind.order;
    if (!divfree && phi_dm.kind.order != kd - 1)
        throw fe_error("full V2 requires potential order k-1 to keep the divergence pairing "
                       "nonsingular");

    const int k = std::max({sigma_dm.kind.order, kd, phi_dm.kind.order});
    const int qd = opt.quad_degree > 0 ? opt.quad_degree : 2 * k + 2;

    BlockSystem sys;
    const int bs = sys.add_block("sigma", &sigma_dm, sigma_dm.ndof);
    const int bu = sys.add_block("u", &u_dm, u_dm.ndof);
    const int bp = sys.add_block("phi", &phi_dm, phi_dm.ndof);
    std::vector<int> bd(d_groups.size());
    for (std::size_t gidx = 0; gidx < d_groups.size(); ++gidx)
        bd[gidx] =
            sys.add_block("D" + std::to_string(gidx + 1), d_groups[gidx], d_groups[gidx]->ndof);
    int blm = -1;
    if (opt.pin_rigid_modes)
        blm = sys.add_block("lm", nullptr, 3);
    sys.start();
    Assembler out(sys, opt, cond);

    const ReferenceTables& sig_rt = reference_tables(sigma_dm.kind, qd);
    const ReferenceTables& u_rt = reference_tables(u_dm.kind, qd);
    const ReferenceTables& phi_rt = reference_tables(phi_dm.kind, qd);
    const ReferenceTables& d_rt = reference_tables(d_groups.front()->kind, qd);
    const GaussRule& eg = cached_gauss_rule(sig_rt.edge_ngauss);

    for (int t = 0; t < mesh.n_triangles(); ++t) {
        const ElementGeometry g = element_geometry(mesh, t);
        const Material2D& mat = detail::material_of(materials, mesh, t);
        const Mat2 eps_inv = mat.eps_sigma2.inverse();

        int gidx = -1;
        for (std::size_t gi = 0; gi < d_groups.size(); ++gi)
            if (d_groups[gi]->element_active(t))
                gidx = static_cast<int>(gi);
        if (gidx < 0)
            throw fe_error("triangle " + std::to_string(t) +
                           " is not covered by any dielectric group");
        const DofMap& d_dm = *d_groups[gidx];

        const ElementBasisSet sig = element_basis(sigma_dm, sig_rt, t, g);
        const ElementBasisSet u = element_basis(u_dm, u_rt, t, g);
        const ElementBasisSet phi = element_basis(phi_dm, phi_rt, t, g);
        const ElementBasisSet D = element_basis(d_dm, d_rt, t, g);
        const int ns = sig.volume.ndof, nu = u.volume.ndof, np = phi.volume.ndof,
                  nd = D.volume.ndof;

        ElementContribution c;
        detail::append_space_dofs(sigma_dm, t, sys.blocks[bs].offset, true, c);
        detail::append_space_dofs(u_dm, t, sys.blocks[bu].offset, true, c);
        detail::append_space_dofs(phi_dm, t, sys.blocks[bp].offset, false, c);
        detail::append_space_dofs(d_dm, t, sys.blocks[bd[gidx]].offset, true, c);
        const int o_phi = ns + nu, o_d = ns + nu + np;
        c.K = Eigen::MatrixXd::Zero(o_d + nd, o_d + nd);
        c.f = Eigen::VectorXd::Zero(o_d + nd);

        detail::accumulate<3, 3>(
            c.K, 0, 0, {&sig.volume.value[0], &sig.volume.value[1], &sig.volume.value[2]},
            {&sig.volume.value[0], &sig.volume.value[1], &sig.volume.value[2]},
            (-mat.S_D2).eval(), sig_rt.volume_weights, g.detF);
        const Eigen::MatrixXd B =
            duality_pairing(mesh, t, sig, u, sig_rt, DualityMode::volume_surface);
        c.K.block(0, ns, ns, nu) += B;
        c.K.block(ns, 0, nu, ns) += B.transpose();
        // -int (g^T D) : dsigma and transpose
        const Eigen::Matrix<double, 3, 2> gT = mat.g2.transpose();
        detail::accumulate<3, 2>(c.K, 0, o_d,
                                 {&sig.volume.value[0], &sig.volume.value[1], &sig.volume.value[2]},
                                 {&D.volume.value[0], &D.volume.value[1]}, (-gT).eval(),
                                 sig_rt.volume_weights, g.detF);
        detail::accumulate<2, 3>(c.K, o_d, 0, {&D.volume.value[0], &D.volume.value[1]},
                                 {&sig.volume.value[0], &sig.volume.value[1], &sig.volume.value[2]},
                                 (-gT.transpose()).eval(), sig_rt.volume_weights, g.detF);
        // +int (eps^sigma)^{-1} D . dD
        detail::accumulate<2, 2>(c.K, o_d, o_d, {&D.volume.value[0], &D.volume.value[1]},
                                 {&D.volume.value[0], &D.volume.value[1]}, eps_inv,
                                 sig_rt.volume_weights, g.detF);
        // -int phi div dD and transpose (Gauss row), plus the body force
        for (std::size_t q = 0; q < sig_rt.volume_weights.size(); ++q) {
            const double w = sig_rt.volume_weights[q] * g.detF;
            for (int i = 0; i < nd; ++i)
                for (int j = 0; j < np; ++j) {
                    const double v = w * D.volume.deriv[0](i, q) * phi.volume.value[0](j, q);
                    c.K(o_d + i, o_phi + j) -= v;
                    c.K(o_phi + j, o_d + i) -= v;
                }
            for (int j = 0; j < nu; ++j)
                c.f[ns + j] += w * (loads.body_force.x() * u.volume.value[0](j, q) +
                                    loads.body_force.y() * u.volume.value[1](j, q));
        }

        // -int_G3 phi_0 dD_n : boundary electrodes and both sides of internal
        // electrode interfaces
        for (int le = 0; le < 3; ++le) {
            const auto eq = detail::edge_quad(mesh, t, le);
            if (!loads.electrode_phi.count(eq.marker))
                continue;
            const double phi0 = loads.phi0(eq.marker);
            if (phi0 == 0.0)
                continue;
            for (std::size_t q = 0; q < eg.points.size(); ++q) {
                const double w = eg.weights[q] * eq.jac;
                for (int j = 0; j < nd; ++j) {
                    const double dn = D.edge[le].value[0](j, q) * eq.n_out.x() +
                                      D.edge[le].value[1](j, q) * eq.n_out.y();
                    c.f[o_d + j] -= w * phi0 * dn;
                }
            }
        }
        detail::mixed_surface_loads(mesh, t, g, loads, sig_rt, sig, u, 0, ns, c);
        if (opt.pin_rigid_modes)
            detail::append_rigid_rows(c, sys.blocks[blm].offset, mesh, t, sig_rt, u.volume, ns);
        out.element(t, std::move(c));
    }

    std::map<int, double> values;
    detail::mixed_essential_values(mesh, sigma_dm, u_dm, loads, sys.blocks[bs].offset,
                                   sys.blocks[bu].offset, values);
    // D_n = q0 on the insulated boundary markers (everything not electroded)
    for (int mk : boundary_markers(mesh)) {
        if (loads.electrode_phi.count(mk))
            continue;
        const double q0 = LoadSpec::lookup(loads.q0, mk);
        for (std::size_t gi = 0; gi < d_groups.size(); ++gi)
            detail::edge_moment_values(
                *d_groups[gi], {mk},
                [q0](const Vec2&, const Vec2& tg, const Vec2& n_out) {
                    // dof trace is w.r.t. the global normal; the datum is w.r.t.
                    // the outward normal
                    const Vec2 n_glob(tg.y(), -tg.x());
                    return q0 * n_glob.dot(n_out);
                },
                sys.blocks[bd[gi]].offset, values);
    }
    apply_essential(sys, values);
    sys.finalize();
    return sys;
}

/// Factor + solve + optional condensation recovery; residual always checked.
inline Eigen::VectorXd solve_system(const BlockSystem& sys, const CondensationData* cond = nullptr)
{
    if (!sys.finalized)
        throw fe_error("solve_system: finalize first");
    const Factorization f = factor(sys.A);
    Eigen::VectorXd x = f.solve(sys.rhs);
    if (cond)
        cond->recover(x);
    return x;
}

} // namespace tdnns
