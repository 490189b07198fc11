#pragma once

#include "tdnns/mesh.hpp"

#include <json.hpp>

#include <fstream>

namespace tdnns {

inline constexpr const char* mesh_format_id = "tdnns-mesh-v1";

inline nlohmann::json to_json(const Mesh2D& m)
{
    nlohmann::json j;
    j["format"] = mesh_format_id;
    auto& verts = j["vertices"] = nlohmann::json::array();
    for (const auto& v : m.vertices)
        verts.push_back({v.x(), v.y()});
    auto& tris = j["triangles"] = nlohmann::json::array();
    for (const auto& t : m.tris)
        tris.push_back({t[0], t[1], t[2]});
    j["regions"] = m.region;
    j["refinement_edges"] = m.refinement_edge;
    auto& marks = j["edge_markers"] = nlohmann::json::array();
    for (int e = 0; e < m.n_edges(); ++e)
        if (m.edge_marker[e] != 0)
            marks.push_back({m.edges[e][0], m.edges[e][1], m.edge_marker[e]});
    return j;
}

inline Mesh2D mesh_from_json(const nlohmann::json& j)
{
    if (!j.contains("format") || j["format"] != mesh_format_id)
        throw mesh_error("mesh file: missing or unsupported format id");
    Mesh2D m;
    for (const auto& v : j.at("vertices")) {
        if (v.size() != 2)
            throw mesh_error("mesh file: vertex entry must have two coordinates");
        m.vertices.emplace_back(v[0].get<double>(), v[1].get<double>());
    }
    for (const auto& t : j.at("triangles")) {
        if (t.size() != 3)
            throw mesh_error("mesh file: triangle entry must have three vertex indices");
        m.tris.push_back({t[0].get<int>(), t[1].get<int>(), t[2].get<int>()});
    }
    m.region = j.at("regions").get<std::vector<int>>();
    if (j.contains("refinement_edges"))
        m.refinement_edge = j["refinement_edges"].get<std::vector<int>>();
    if (m.region.size() != m.tris.size())
        throw mesh_error("mesh file: regions array length mismatch");
    std::map<std::array<int, 2>, int> markers;
    for (const auto& e : j.at("edge_markers")) {
        if (e.size() != 3)
            throw mesh_error("mesh file: edge marker entry must be [v0, v1, marker]");
        const int a = e[0].get<int>(), b = e[1].get<int>();
        markers[{std::min(a, b), std::max(a, b)}] = e[2].get<int>();
    }
    const bool init_ref = m.refinement_edge.size() != m.tris.size();
    m.finalize(markers, init_ref);
    m.validate();
    return m;
}

inline void save_mesh(const Mesh2D& m, const std::string& path)
{
    std::ofstream out(path);
    if (!out)
        throw io_error("cannot open `" + path + "` for writing");
    out << to_json(m).dump(1) << "\n";
}

inline Mesh2D load_mesh(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw io_error("cannot open mesh file `" + path + "`");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw mesh_error("mesh file `" + path + "`: " + e.what());
    }
    return mesh_from_json(j);
}

} // namespace tdnns
