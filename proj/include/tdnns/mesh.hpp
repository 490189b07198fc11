#pragma once

#include "tdnns/common.hpp"

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace tdnns {

/// Geometric frame of one element edge: outward normal of the requesting
/// triangle, tangent aligned with the global (low index -> high index) edge
/// orientation, and physical length.
struct EdgeFrame {
    Vec2 n;
    Vec2 t;
    double length = 0.0;
};

/// Conforming triangulation with oriented edges, boundary markers and
/// material regions. Immutable after construction; refinement returns a new
/// mesh. Local edge i of a triangle is the edge opposite local vertex i,
/// traversed counterclockwise.
class Mesh2D {
public:
    std::vector<Vec2> vertices;
    std::vector<std::array<int, 3>> tris;
    std::vector<int> region;          // material id per triangle
    std::vector<int> refinement_edge; // local edge index used by bisection

    // Derived connectivity, rebuilt deterministically from tris.
    std::vector<std::array<int, 2>> edges; // global orientation low -> high
    std::vector<int> edge_marker;          // 0 = unmarked
    std::vector<std::array<int, 3>> tri_edges;
    std::vector<std::array<int, 3>> tri_edge_dir; // +1: local dir == global dir
    std::vector<std::array<int, 2>> edge_tris;    // second = -1 on boundary

    static std::array<int, 2> local_edge_vertices(const std::array<int, 3>& t, int le)
    {
        return {t[(le + 1) % 3], t[(le + 2) % 3]};
    }

    int n_vertices() const { return static_cast<int>(vertices.size()); }
    int n_triangles() const { return static_cast<int>(tris.size()); }
    int n_edges() const { return static_cast<int>(edges.size()); }

    double signed_area(int t) const
    {
        const auto& tri = tris[t];
        const Vec2 a = vertices[tri[0]], b = vertices[tri[1]], c = vertices[tri[2]];
        return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x()));
    }

    double area(int t) const { return signed_area(t); }

    double total_area() const
    {
        double s = 0.0;
        for (int t = 0; t < n_triangles(); ++t)
            s += signed_area(t);
        return s;
    }

    double diameter(int t) const
    {
        double h = 0.0;
        for (int le = 0; le < 3; ++le) {
            const auto ev = local_edge_vertices(tris[t], le);
            h = std::max(h, (vertices[ev[0]] - vertices[ev[1]]).norm());
        }
        return h;
    }

    double max_diameter() const
    {
        double h = 0.0;
        for (int t = 0; t < n_triangles(); ++t)
            h = std::max(h, diameter(t));
        return h;
    }

    bool is_boundary_edge(int e) const { return edge_tris[e][1] < 0; }

    EdgeFrame frame(int t, int le) const
    {
        const auto ev = local_edge_vertices(tris[t], le);
        const Vec2 a = vertices[ev[0]], b = vertices[ev[1]];
        Vec2 tloc = b - a;
        const double len = tloc.norm();
        tloc /= len;
        EdgeFrame f;
        f.length = len;
        // outward normal of a CCW triangle: tangent rotated by -90 degrees
        f.n = Vec2(tloc.y(), -tloc.x());
        f.t = (edges[tri_edges[t][le]][0] == ev[0]) ? tloc : Vec2(-tloc);
        return f;
    }

    /// Rebuild edge connectivity from tris; markers given by sorted vertex pair.
    void finalize(const std::map<std::array<int, 2>, int>& markers, bool init_refinement_edges)
    {
        edges.clear();
        tri_edges.assign(tris.size(), {-1, -1, -1});
        tri_edge_dir.assign(tris.size(), {0, 0, 0});
        std::map<std::array<int, 2>, int> index;
        for (std::size_t t = 0; t < tris.size(); ++t) {
            for (int le = 0; le < 3; ++le) {
                auto ev = local_edge_vertices(tris[t], le);
                std::array<int, 2> key{std::min(ev[0], ev[1]), std::max(ev[0], ev[1])};
                auto it = index.find(key);
                if (it == index.end()) {
                    it = index.emplace(key, static_cast<int>(edges.size())).first;
                    edges.push_back(key);
                }
                tri_edges[t][le] = it->second;
                tri_edge_dir[t][le] = (ev[0] == key[0]) ? +1 : -1;
            }
        }
        edge_tris.assign(edges.size(), {-1, -1});
        for (std::size_t t = 0; t < tris.size(); ++t)
            for (int le = 0; le < 3; ++le) {
                auto& inc = edge_tris[tri_edges[t][le]];
                if (inc[0] < 0)
                    inc[0] = static_cast<int>(t);
                else if (inc[1] < 0)
                    inc[1] = static_cast<int>(t);
                else
                    throw mesh_error("edge " + std::to_string(tri_edges[t][le]) +
                                     " shared by more than two triangles");
            }
        edge_marker.assign(edges.size(), 0);
        for (const auto& [key, m] : markers) {
            auto it = index.find(key);
            if (it == index.end())
                throw mesh_error("marker references nonexistent edge (" + std::to_string(key[0]) +
                                 ", " + std::to_string(key[1]) + ")");
            edge_marker[it->second] = m;
        }
        if (init_refinement_edges || refinement_edge.size() != tris.size()) {
            refinement_edge.assign(tris.size(), 0);
            for (std::size_t t = 0; t < tris.size(); ++t) {
                double best = -1.0;
                for (int le = 0; le < 3; ++le) {
                    auto ev = local_edge_vertices(tris[t], le);
                    const double len = (vertices[ev[0]] - vertices[ev[1]]).norm();
                    if (len > best + 1e-14 * (len + best)) {
                        best = len;
                        refinement_edge[t] = le;
                    }
                }
            }
        }
    }

    std::map<std::array<int, 2>, int> marker_pair_map() const
    {
        std::map<std::array<int, 2>, int> m;
        for (int e = 0; e < n_edges(); ++e)
            if (edge_marker[e] != 0)
                m[edges[e]] = edge_marker[e];
        return m;
    }

    /// Full invariant pass: conformity, orientation, Euler relation, marker
    /// partition. Throws mesh_error naming the offending entity.
    void validate() const
    {
        for (std::size_t t = 0; t < tris.size(); ++t) {
            for (int v : tris[t])
                if (v < 0 || v >= n_vertices())
                    throw mesh_error("triangle " + std::to_string(t) + " has invalid vertex index");
            if (signed_area(static_cast<int>(t)) <= 0.0)
                throw mesh_error("triangle " + std::to_string(t) +
                                 " has non-positive signed area");
        }
        const int V = n_vertices(), E = n_edges(), T = n_triangles();
        if (V - E + T != 1)
            throw mesh_error("Euler relation violated: V - E + T = " +
                             std::to_string(V - E + T));
        for (int e = 0; e < E; ++e) {
            if (edge_tris[e][0] < 0)
                throw mesh_error("edge " + std::to_string(e) + " has no incident triangle");
            if (is_boundary_edge(e)) {
                if (edge_marker[e] == 0)
                    throw mesh_error("boundary edge " + std::to_string(e) + " carries no marker");
            } else if (edge_marker[e] != 0 && edge_marker[e] != 4) {
                throw mesh_error("interior edge " + std::to_string(e) +
                                 " carries non-electrode marker " + std::to_string(edge_marker[e]));
            }
            if (edge_marker[e] < 0 || edge_marker[e] > 7)
                throw mesh_error("edge " + std::to_string(e) + " marker out of range");
        }
        if (region.size() != tris.size())
            throw mesh_error("region table size mismatch");
        if (refinement_edge.size() != tris.size())
            throw mesh_error("refinement edge table size mismatch");
    }
};

/// Tensor-grid cantilever mesh: `nx` cells along the length, `nz_per_ply`
/// cells through each ply, every rectangle split along its low-left/up-right
/// diagonal. The stack is centered vertically so a symmetric two-ply beam has
/// its interface at z = 0. Markers: 1 clamped end (x=0), 2 top, 3 bottom,
/// 4 internal ply interfaces, 6 tip (x=length).
inline Mesh2D structured_beam_mesh(double length, const std::vector<double>& ply_thicknesses,
                                   int nx, int nz_per_ply)
{
    if (ply_thicknesses.empty())
        throw mesh_error("structured_beam_mesh: at least one ply required");
    if (nx < 1 || nz_per_ply < 1)
        throw mesh_error("structured_beam_mesh: nx and nz_per_ply must be >= 1");
    for (double t : ply_thicknesses)
        if (!(t > 0.0))
            throw mesh_error("structured_beam_mesh: ply thicknesses must be positive");

    const int plies = static_cast<int>(ply_thicknesses.size());
    const int nz = plies * nz_per_ply;
    double total = 0.0;
    for (double t : ply_thicknesses)
        total += t;

    std::vector<double> zs;
    zs.reserve(nz + 1);
    double z = -0.5 * total;
    zs.push_back(z);
    for (int p = 0; p < plies; ++p) {
        const double dz = ply_thicknesses[p] / nz_per_ply;
        for (int j = 0; j < nz_per_ply; ++j)
            zs.push_back(z + (j + 1) * dz);
        z += ply_thicknesses[p];
    }
    zs[nz] = 0.5 * total; // guard against accumulation drift

    Mesh2D m;
    auto vid = [&](int i, int j) { return j * (nx + 1) + i; };
    for (int j = 0; j <= nz; ++j)
        for (int i = 0; i <= nx; ++i)
            m.vertices.emplace_back(length * i / nx, zs[j]);

    std::map<std::array<int, 2>, int> markers;
    auto mark = [&](int a, int b, int mk) {
        markers[{std::min(a, b), std::max(a, b)}] = mk;
    };
    for (int j = 0; j < nz; ++j) {
        const int ply = j / nz_per_ply;
        for (int i = 0; i < nx; ++i) {
            const int ll = vid(i, j), lr = vid(i + 1, j), ur = vid(i + 1, j + 1), ul = vid(i, j + 1);
            m.tris.push_back({ll, lr, ur});
            m.tris.push_back({ll, ur, ul});
            m.region.push_back(ply + 1);
            m.region.push_back(ply + 1);
        }
        mark(vid(0, j), vid(0, j + 1), 1);
        mark(vid(nx, j), vid(nx, j + 1), 6);
    }
    for (int i = 0; i < nx; ++i) {
        mark(vid(i, 0), vid(i + 1, 0), 3);
        mark(vid(i, nz), vid(i + 1, nz), 2);
        for (int p = 1; p < plies; ++p)
            mark(vid(i, p * nz_per_ply), vid(i + 1, p * nz_per_ply), 4);
    }
    m.finalize(markers, true);
    m.validate();
    return m;
}

/// Red refinement: each triangle split into 4 similar children through the
/// edge midpoints. Markers and regions are inherited.
inline Mesh2D refine_uniform(const Mesh2D& in)
{
    Mesh2D out;
    out.vertices = in.vertices;
    std::vector<int> mid(in.n_edges());
    for (int e = 0; e < in.n_edges(); ++e) {
        mid[e] = out.n_vertices();
        out.vertices.push_back(0.5 * (in.vertices[in.edges[e][0]] + in.vertices[in.edges[e][1]]));
    }
    for (int t = 0; t < in.n_triangles(); ++t) {
        const auto& tri = in.tris[t];
        const int m0 = mid[in.tri_edges[t][0]];
        const int m1 = mid[in.tri_edges[t][1]];
        const int m2 = mid[in.tri_edges[t][2]];
        out.tris.push_back({tri[0], m2, m1});
        out.tris.push_back({tri[1], m0, m2});
        out.tris.push_back({tri[2], m1, m0});
        out.tris.push_back({m0, m1, m2});
        for (int c = 0; c < 4; ++c)
            out.region.push_back(in.region[t]);
    }
    std::map<std::array<int, 2>, int> markers;
    for (int e = 0; e < in.n_edges(); ++e) {
        if (in.edge_marker[e] == 0)
            continue;
        const int a = in.edges[e][0], b = in.edges[e][1], m = mid[e];
        markers[{std::min(a, m), std::max(a, m)}] = in.edge_marker[e];
        markers[{std::min(m, b), std::max(m, b)}] = in.edge_marker[e];
    }
    out.finalize(markers, true);
    out.validate();
    return out;
}

/// Newest-vertex bisection of the marked triangles with conformity closure.
/// Unmarked triangles are bisected only as far as closure requires.
inline Mesh2D refine_marked(const Mesh2D& in, const std::set<int>& marked)
{
    for (int t : marked)
        if (t < 0 || t >= in.n_triangles())
            throw mesh_error("refine_marked: triangle id out of range");

    std::vector<char> split(in.n_edges(), 0);
    for (int t : marked)
        split[in.tri_edges[t][in.refinement_edge[t]]] = 1;
    // closure: a triangle touched by any split edge must split its refinement edge
    bool changed = true;
    while (changed) {
        changed = false;
        for (int t = 0; t < in.n_triangles(); ++t) {
            const int re = in.tri_edges[t][in.refinement_edge[t]];
            if (split[re])
                continue;
            for (int le = 0; le < 3; ++le)
                if (split[in.tri_edges[t][le]]) {
                    split[re] = 1;
                    changed = true;
                    break;
                }
        }
    }

    Mesh2D out;
    out.vertices = in.vertices;
    std::map<std::array<int, 2>, int> mid; // sorted original edge -> midpoint vertex
    std::map<std::array<int, 2>, int> markers;
    for (int e = 0; e < in.n_edges(); ++e) {
        const int a = in.edges[e][0], b = in.edges[e][1];
        if (split[e]) {
            const int m = out.n_vertices();
            out.vertices.push_back(0.5 * (in.vertices[a] + in.vertices[b]));
            mid[{a, b}] = m;
            if (in.edge_marker[e] != 0) {
                markers[{std::min(a, m), std::max(a, m)}] = in.edge_marker[e];
                markers[{std::min(m, b), std::max(m, b)}] = in.edge_marker[e];
            }
        } else if (in.edge_marker[e] != 0) {
            markers[{a, b}] = in.edge_marker[e];
        }
    }
    out.refinement_edge.clear();

    struct Work {
        std::array<int, 3> v;
        int refedge;
        int region;
    };
    auto midpoint_of = [&](int a, int b) -> int {
        auto it = mid.find({std::min(a, b), std::max(a, b)});
        return it == mid.end() ? -1 : it->second;
    };
    std::vector<Work> stack;
    for (int t = 0; t < in.n_triangles(); ++t)
        stack.push_back({in.tris[t], in.refinement_edge[t], in.region[t]});
    // depth-bounded: each original edge is split at most once per call
    std::vector<Work> todo;
    for (const auto& w0 : stack) {
        todo.assign(1, w0);
        while (!todo.empty()) {
            const Work w = todo.back();
            todo.pop_back();
            const int peak = w.v[w.refedge];
            const int a = w.v[(w.refedge + 1) % 3];
            const int b = w.v[(w.refedge + 2) % 3];
            const int mv = midpoint_of(a, b);
            if (mv < 0) {
                out.tris.push_back(w.v);
                out.region.push_back(w.region);
                out.refinement_edge.push_back(w.refedge);
            } else {
                // children keep CCW orientation; their refinement edges are the
                // parent edges opposite the new vertex
                todo.push_back({{a, mv, peak}, 1, w.region});
                todo.push_back({{mv, b, peak}, 0, w.region});
            }
        }
    }
    out.finalize(markers, false);
    out.validate();
    return out;
}

/// Brute-force point location with barycentric tolerance; returns -1 if the
/// point lies outside the mesh.
inline int locate_point(const Mesh2D& m, const Vec2& x, Vec2* ref_coords = nullptr,
                        double tol = 1e-10)
{
    int best = -1;
    double best_violation = tol;
    Vec2 best_ref;
    for (int t = 0; t < m.n_triangles(); ++t) {
        const Vec2 a = m.vertices[m.tris[t][0]];
        const Vec2 b = m.vertices[m.tris[t][1]];
        const Vec2 c = m.vertices[m.tris[t][2]];
        Mat2 F;
        F.col(0) = b - a;
        F.col(1) = c - a;
        const Vec2 xi = F.inverse() * (x - a);
        const double viol = std::max({-xi.x(), -xi.y(), xi.x() + xi.y() - 1.0});
        if (viol < best_violation) {
            best_violation = viol;
            best = t;
            best_ref = xi;
            if (viol <= 0.0)
                break;
        }
    }
    if (best >= 0 && ref_coords)
        *ref_coords = best_ref;
    return best;
}

} // namespace tdnns
