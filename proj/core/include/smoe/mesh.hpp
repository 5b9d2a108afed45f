#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace smoe {

// Icosphere subdivision hierarchy. Level L has 10*4^L + 2 vertices; the 12
// level-0 vertices keep 5 neighbors at every level, all others have 6.
// Vertex indices are stable across levels: the first 10*4^(L-1)+2 vertices of
// level L are exactly the vertices of level L-1, bit-identical positions.

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

using VertexId = std::uint32_t;

inline constexpr VertexId kNoNeighbor = 0xFFFFFFFFu;  // missing 6th slot of a pentagon vertex

struct MeshLevel {
    int level = 0;
    std::vector<Vec3> positions;                       // unit vectors
    std::vector<std::array<VertexId, 3>> faces;        // CCW viewed from outside
    std::vector<std::array<VertexId, 6>> neighbors;    // canonical ring order, kNoNeighbor pads slot 5
    // parent_of[v]: for an inherited vertex {v, v}; for an edge child the coarse
    // edge endpoints {a, b} with a < b. Level 0 maps every vertex to itself.
    std::vector<std::pair<VertexId, VertexId>> parent_of;

    std::size_t vertex_count() const { return positions.size(); }
    std::size_t face_count() const { return faces.size(); }
    std::size_t edge_count() const { return faces.size() * 3 / 2; }
    int ring_size(VertexId v) const { return neighbors[v][5] == kNoNeighbor ? 5 : 6; }
};

struct MeshHierarchy {
    std::vector<MeshLevel> levels;
    // down_maps[L-1]: for each vertex of level L-1, the level-L vertices in its
    // pooling support (itself plus its fine-level 1-ring). Empty for L=0.
    std::vector<std::vector<std::vector<VertexId>>> down_maps;

    const MeshLevel& level(int l) const { return levels.at(static_cast<std::size_t>(l)); }
    int max_level() const { return static_cast<int>(levels.size()) - 1; }
    const std::vector<std::vector<VertexId>>& supports(int coarse_level) const {
        return down_maps.at(static_cast<std::size_t>(coarse_level));
    }
};

inline std::size_t icosphere_vertex_count(int level) {
    return 10u * (std::size_t{1} << (2 * level)) + 2u;
}

// Builds levels 0..max_level. Deterministic: two calls yield bit-identical
// structures. Throws ConfigError if max_level is outside 0..6.
MeshHierarchy build_hierarchy(int max_level);

// Ordered 1-ring of v: 5 or 6 indices, counter-clockwise viewed from outside
// the sphere, starting at the smallest-index neighbor. Throws RangeError.
std::vector<VertexId> one_ring(const MeshLevel& mesh, VertexId v);

struct LevelCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct LevelReport {
    std::vector<LevelCheck> checks;
    bool all_pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

// Report-only invariant audit: counts, Euler characteristic, pentagon census,
// unit norms, neighbor symmetry, and (given the previous level) index
// stability of the vertex prefix.
LevelReport verify_level(const MeshLevel& mesh, const MeshLevel* previous = nullptr);

}  // namespace smoe
