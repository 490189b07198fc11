#pragma once

#include "tdnns/postproc.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace tdnns {

// ---------------------------------------------------------------------------
// Legacy ASCII VTK (unstructured grid, sub-triangulated cells)
// ---------------------------------------------------------------------------

struct VtkField {
    std::string name;
    int components; // 1, 2 or 3
    std::function<Eigen::MatrixXd(int, const std::vector<Vec2>&)> eval;
};

inline VtkField vtk_field(const std::string& name, const FieldView& f)
{
    return {name, f.components(),
            [&f](int t, const std::vector<Vec2>& pts) { return f.evaluate(t, pts); }};
}

/// Each triangle is sub-triangulated `subdivision`^2 times; points are
/// duplicated per triangle so discontinuous fields render faithfully.
inline void write_vtk(const Mesh2D& mesh, const std::vector<VtkField>& fields,
                      const std::string& path, int subdivision = 1)
{
    if (subdivision < 1)
        throw io_error("write_vtk: subdivision must be >= 1");
    std::ofstream out(path);
    if (!out)
        throw io_error("cannot open `" + path + "` for writing");
    out << std::setprecision(12);

    const int s = subdivision;
    std::vector<Vec2> lattice;
    auto lidx = [&](int i, int j) { // index in the barycentric lattice
        return j * (s + 1) - j * (j - 1) / 2 + i;
    };
    for (int j = 0; j <= s; ++j)
        for (int i = 0; i + j <= s; ++i)
            lattice.emplace_back(double(i) / s, double(j) / s);

    const int ppt = static_cast<int>(lattice.size());
    const int cpt = s * s;
    const int T = mesh.n_triangles();

    out << "# vtk DataFile Version 3.0\n";
    out << "tdnns2d fields\n";
    out << "ASCII\n";
    out << "DATASET UNSTRUCTURED_GRID\n";
    out << "POINTS " << T * ppt << " double\n";
    for (int t = 0; t < T; ++t) {
        const ElementGeometry g = element_geometry(mesh, t);
        for (const auto& p : lattice) {
            const Vec2 x = g.F * p + g.shift;
            out << x.x() << " " << x.y() << " 0\n";
        }
    }
    out << "CELLS " << T * cpt << " " << 4 * T * cpt << "\n";
    for (int t = 0; t < T; ++t) {
        const int base = t * ppt;
        for (int j = 0; j < s; ++j)
            for (int i = 0; i + j < s; ++i) {
                out << "3 " << base + lidx(i, j) << " " << base + lidx(i + 1, j) << " "
                    << base + lidx(i, j + 1) << "\n";
                if (i + j < s - 1)
                    out << "3 " << base + lidx(i + 1, j) << " " << base + lidx(i + 1, j + 1)
                        << " " << base + lidx(i, j + 1) << "\n";
            }
    }
    out << "CELL_TYPES " << T * cpt << "\n";
    for (int c = 0; c < T * cpt; ++c)
        out << "5\n";

    out << "POINT_DATA " << T * ppt << "\n";
    for (const auto& f : fields) {
        std::vector<Eigen::MatrixXd> vals(T);
        for (int t = 0; t < T; ++t)
            vals[t] = f.eval(t, lattice);
        if (f.components == 1) {
            out << "SCALARS " << f.name << " double 1\nLOOKUP_TABLE default\n";
            for (int t = 0; t < T; ++t)
                for (int p = 0; p < ppt; ++p)
                    out << vals[t](0, p) << "\n";
        } else if (f.components == 2) {
            out << "VECTORS " << f.name << " double\n";
            for (int t = 0; t < T; ++t)
                for (int p = 0; p < ppt; ++p)
                    out << vals[t](0, p) << " " << vals[t](1, p) << " 0\n";
        } else {
            // symmetric tensor written component-wise
            const char* suffix[3] = {"_xx", "_zz", "_xz"};
            for (int c = 0; c < 3; ++c) {
                out << "SCALARS " << f.name << suffix[c] << " double 1\nLOOKUP_TABLE default\n";
                for (int t = 0; t < T; ++t)
                    for (int p = 0; p < ppt; ++p)
                        out << vals[t](c, p) << "\n";
            }
        }
    }
    // region id as cell data for inspection
    out << "CELL_DATA " << T * cpt << "\n";
    out << "SCALARS region int 1\nLOOKUP_TABLE default\n";
    for (int t = 0; t < T; ++t)
        for (int c = 0; c < cpt; ++c)
            out << mesh.region[t] << "\n";
}

// ---------------------------------------------------------------------------
// Convergence records and CSV
// ---------------------------------------------------------------------------

struct ConvergenceRecord {
    struct Row {
        int level = 0;
        int dofs = 0;
        double h = 0.0;
        double l2_error_u = 0.0;
        double rel_tip_error = 0.0;
        double rate = 0.0; // log2(e_{l-1}/e_l), 0 on the first row
    };
    std::vector<Row> rows;

    void push(int level, int dofs, double h, double l2, double tip)
    {
        Row r{level, dofs, h, l2, tip, 0.0};
        if (!rows.empty() && rows.back().l2_error_u > 0.0 && l2 > 0.0)
            r.rate = std::log2(rows.back().l2_error_u / l2);
        rows.push_back(r);
    }

    /// Observed rate over the last two refinements (single log ratio).
    double tail_rate() const
    {
        if (rows.size() < 3)
            throw fe_error("tail_rate needs at least three levels");
        const double e0 = rows[rows.size() - 3].l2_error_u;
        const double e2 = rows[rows.size() - 1].l2_error_u;
        return 0.5 * std::log2(e0 / e2);
    }
};

inline void write_csv(const ConvergenceRecord& rec, const std::string& path)
{
    std::ofstream out(path);
    if (!out)
        throw io_error("cannot open `" + path + "` for writing");
    out << "level,dofs,h,l2_error_u,rel_tip_error,rate\n";
    char buf[256];
    for (const auto& r : rec.rows) {
        std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%.17g\n", r.level, r.dofs, r.h,
                      r.l2_error_u, r.rel_tip_error, r.rate);
        out << buf;
    }
}

inline ConvergenceRecord read_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw io_error("cannot open `" + path + "`");
    ConvergenceRecord rec;
    std::string line;
    std::getline(in, line); // header
    if (line != "level,dofs,h,l2_error_u,rel_tip_error,rate")
        throw io_error("unexpected CSV header in `" + path + "`");
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        ConvergenceRecord::Row r;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        if (!(ss >> r.level >> r.dofs >> r.h >> r.l2_error_u >> r.rel_tip_error >> r.rate))
            throw io_error("malformed CSV row in `" + path + "`");
        rec.rows.push_back(r);
    }
    return rec;
}

} // namespace tdnns
