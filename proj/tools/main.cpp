#include "tdnns/mesh_io.hpp"

#include <CLI11.hpp>

#include <cstdio>

int main(int argc, char** argv)
{
    CLI::App app{"2D mixed finite elements for linear piezoelasticity"};
    app.require_subcommand(1);

    // mesh emitter; the study runner is wired up in driver.hpp
    auto* mesh_cmd = app.add_subcommand("mesh", "emit a structured beam mesh as JSON");
    double length = 0.1;
    std::vector<double> plies{0.0005, 0.0005};
    int nx = 10, nz = 1;
    std::string out = "beam.json";
    mesh_cmd->add_option("--length", length, "beam length [m]");
    mesh_cmd->add_option("--plies", plies, "ply thicknesses bottom to top [m]");
    mesh_cmd->add_option("--nx", nx, "cells along the length");
    mesh_cmd->add_option("--nz", nz, "cells per ply through the thickness");
    mesh_cmd->add_option("--out", out, "output path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (mesh_cmd->parsed()) {
            const tdnns::Mesh2D m = tdnns::structured_beam_mesh(length, plies, nx, nz);
            tdnns::save_mesh(m, out);
            std::printf("wrote %s: %d vertices, %d triangles\n", out.c_str(), m.n_vertices(),
                        m.n_triangles());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
