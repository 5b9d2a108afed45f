#include "smoe/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <unordered_map>

#include "smoe/errors.hpp"

namespace smoe {

namespace {

Vec3 normalized(const Vec3& v) {
    double n = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
    return {v.x / n, v.y / n, v.z / n};
}

MeshLevel base_icosahedron() {
    MeshLevel m;
    m.level = 0;
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    const double raw[12][3] = {
        {-1, phi, 0}, {1, phi, 0},   {-1, -phi, 0}, {1, -phi, 0},
        {0, -1, phi}, {0, 1, phi},   {0, -1, -phi}, {0, 1, -phi},
        {phi, 0, -1}, {phi, 0, 1},   {-phi, 0, -1}, {-phi, 0, 1},
    };
    m.positions.reserve(12);
    for (const auto& p : raw) m.positions.push_back(normalized({p[0], p[1], p[2]}));
    // CCW viewed from outside.
    const VertexId f[20][3] = {
        {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
        {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
        {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1},
    };
    m.faces.reserve(20);
    for (const auto& t : f) m.faces.push_back({t[0], t[1], t[2]});
    m.parent_of.resize(12);
    for (VertexId v = 0; v < 12; ++v) m.parent_of[v] = {v, v};
    return m;
}

// Neighbor table in canonical order: walk the CCW successor cycle induced by
// the face windings, starting at the smallest-index neighbor.
void build_neighbors(MeshLevel& m) {
    const std::size_t n = m.vertex_count();
    std::vector<std::unordered_map<VertexId, VertexId>> succ(n);
    for (const auto& f : m.faces) {
        for (int i = 0; i < 3; ++i) {
            VertexId v = f[i], a = f[(i + 1) % 3], b = f[(i + 2) % 3];
            succ[v][a] = b;
        }
    }
    m.neighbors.assign(n, {kNoNeighbor, kNoNeighbor, kNoNeighbor, kNoNeighbor, kNoNeighbor, kNoNeighbor});
    for (VertexId v = 0; v < n; ++v) {
        const auto& s = succ[v];
        if (s.empty()) throw ContractError("mesh: isolated vertex " + std::to_string(v));
        VertexId start = kNoNeighbor;
        for (const auto& [from, to] : s) start = std::min(start, from);
        VertexId cur = start;
        std::size_t slot = 0;
        do {
            if (slot >= 6) throw ContractError("mesh: ring of vertex " + std::to_string(v) + " exceeds 6");
            m.neighbors[v][slot++] = cur;
            cur = s.at(cur);
        } while (cur != start);
        if (slot != s.size())
            throw ContractError("mesh: ring of vertex " + std::to_string(v) + " is not a single cycle");
    }
}

MeshLevel subdivide(const MeshLevel& parent) {
    MeshLevel m;
    m.level = parent.level + 1;
    m.positions = parent.positions;  // index-stable prefix, bit-identical
    m.parent_of.resize(parent.vertex_count());
    for (VertexId v = 0; v < parent.vertex_count(); ++v) m.parent_of[v] = {v, v};

    // Edge children in lexicographic edge order so construction is canonical.
    std::map<std::pair<VertexId, VertexId>, VertexId> midpoint;
    for (const auto& f : parent.faces) {
        for (int i = 0; i < 3; ++i) {
            VertexId a = f[i], b = f[(i + 1) % 3];
            if (a > b) std::swap(a, b);
            midpoint.emplace(std::make_pair(a, b), 0);
        }
    }
    for (auto& [edge, id] : midpoint) {
        id = static_cast<VertexId>(m.positions.size());
        const Vec3& pa = parent.positions[edge.first];
        const Vec3& pb = parent.positions[edge.second];
        m.positions.push_back(normalized({pa.x + pb.x, pa.y + pb.y, pa.z + pb.z}));
        m.parent_of.push_back(edge);
    }

    m.faces.reserve(parent.faces.size() * 4);
    auto mid = [&](VertexId a, VertexId b) {
        if (a > b) std::swap(a, b);
        return midpoint.at({a, b});
    };
    for (const auto& f : parent.faces) {
        VertexId a = f[0], b = f[1], c = f[2];
        VertexId ab = mid(a, b), bc = mid(b, c), ca = mid(c, a);
        m.faces.push_back({a, ab, ca});
        m.faces.push_back({b, bc, ab});
        m.faces.push_back({c, ca, bc});
        m.faces.push_back({ab, bc, ca});
    }
    return m;
}

}  // namespace

MeshHierarchy build_hierarchy(int max_level) {
    if (max_level < 0 || max_level > 6)
        throw ConfigError("build_hierarchy: max_level must be in 0..6, got " + std::to_string(max_level));
    MeshHierarchy h;
    h.levels.push_back(base_icosahedron());
    build_neighbors(h.levels[0]);
    for (int l = 1; l <= max_level; ++l) {
        h.levels.push_back(subdivide(h.levels[static_cast<std::size_t>(l - 1)]));
        build_neighbors(h.levels[static_cast<std::size_t>(l)]);
    }
    // Pooling supports: coarse vertex + its fine-level ring (the ring of a
    // retained vertex at level L consists exactly of the children of its
    // incident coarse edges).
    h.down_maps.resize(h.levels.size());
    for (int l = 1; l <= max_level; ++l) {
        const MeshLevel& fine = h.levels[static_cast<std::size_t>(l)];
        const std::size_t n_coarse = h.levels[static_cast<std::size_t>(l - 1)].vertex_count();
        auto& maps = h.down_maps[static_cast<std::size_t>(l - 1)];
        maps.resize(n_coarse);
        for (VertexId c = 0; c < n_coarse; ++c) {
            maps[c].push_back(c);
            for (VertexId nb : one_ring(fine, c)) maps[c].push_back(nb);
        }
    }
    return h;
}

std::vector<VertexId> one_ring(const MeshLevel& mesh, VertexId v) {
    if (v >= mesh.vertex_count())
        throw RangeError("one_ring: vertex " + std::to_string(v) + " out of range");
    std::vector<VertexId> ring;
    ring.reserve(6);
    for (VertexId nb : mesh.neighbors[v])
        if (nb != kNoNeighbor) ring.push_back(nb);
    return ring;
}

LevelReport verify_level(const MeshLevel& mesh, const MeshLevel* previous) {
    LevelReport report;
    auto add = [&](std::string name, bool pass, std::string detail) {
        report.checks.push_back({std::move(name), pass, std::move(detail)});
    };
    char buf[160];

    const std::size_t expect_v = icosphere_vertex_count(mesh.level);
    const std::size_t expect_f = 20u * (std::size_t{1} << (2 * mesh.level));
    const std::size_t expect_e = 30u * (std::size_t{1} << (2 * mesh.level));
    std::snprintf(buf, sizeof buf, "V=%zu E=%zu F=%zu", mesh.vertex_count(), mesh.edge_count(),
                  mesh.face_count());
    add("counts",
        mesh.vertex_count() == expect_v && mesh.face_count() == expect_f && mesh.edge_count() == expect_e,
        buf);

    // Euler characteristic from the actual distinct-edge set, so a deleted
    // face is caught even though edge_count() is derived from F.
    std::map<std::pair<VertexId, VertexId>, int> edges;
    for (const auto& f : mesh.faces) {
        for (int i = 0; i < 3; ++i) {
            VertexId a = f[i], b = f[(i + 1) % 3];
            if (a > b) std::swap(a, b);
            edges[{a, b}]++;
        }
    }
    const long long euler = static_cast<long long>(mesh.vertex_count()) -
                            static_cast<long long>(edges.size()) +
                            static_cast<long long>(mesh.face_count());
    std::snprintf(buf, sizeof buf, "V-E+F=%lld (E_distinct=%zu)", euler, edges.size());
    add("euler", euler == 2, buf);

    std::size_t pentagons = 0;
    for (VertexId v = 0; v < mesh.vertex_count(); ++v)
        if (mesh.ring_size(v) == 5) ++pentagons;
    std::snprintf(buf, sizeof buf, "%zu pentagon vertices", pentagons);
    add("pentagon_census", pentagons == 12, buf);

    double worst = 0.0;
    for (const auto& p : mesh.positions)
        worst = std::max(worst, std::abs(std::sqrt(dot(p, p)) - 1.0));
    std::snprintf(buf, sizeof buf, "max |norm-1| = %.3e", worst);
    add("unit_norms", worst <= 1e-12, buf);

    bool symmetric = true;
    for (VertexId v = 0; v < mesh.vertex_count() && symmetric; ++v) {
        for (VertexId nb : mesh.neighbors[v]) {
            if (nb == kNoNeighbor) continue;
            const auto& back = mesh.neighbors[nb];
            if (std::find(back.begin(), back.end(), v) == back.end()) {
                symmetric = false;
                break;
            }
        }
    }
    add("neighbor_symmetry", symmetric, symmetric ? "u in ring(v) iff v in ring(u)" : "asymmetric ring found");

    if (previous) {
        bool stable = previous->vertex_count() <= mesh.vertex_count();
        if (stable) {
            for (VertexId v = 0; v < previous->vertex_count(); ++v) {
                const Vec3& a = previous->positions[v];
                const Vec3& b = mesh.positions[v];
                if (a.x != b.x || a.y != b.y || a.z != b.z) {
                    stable = false;
                    break;
                }
            }
        }
        std::snprintf(buf, sizeof buf, "prefix of %zu vertices", previous->vertex_count());
        add("index_stability", stable, buf);
    }
    return report;
}

}  // namespace smoe
