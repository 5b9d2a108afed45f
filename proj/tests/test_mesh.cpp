#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "smoe/errors.hpp"
#include "smoe/mesh.hpp"

using namespace smoe;

namespace {

// Independent adjacency oracle: neighbor sets straight from the face list.
std::vector<std::set<VertexId>> adjacency_from_faces(const MeshLevel& m) {
    std::vector<std::set<VertexId>> adj(m.vertex_count());
    for (const auto& f : m.faces) {
        for (int i = 0; i < 3; ++i) {
            adj[f[i]].insert(f[(i + 1) % 3]);
            adj[f[i]].insert(f[(i + 2) % 3]);
        }
    }
    return adj;
}

}  // namespace

TEST_CASE("level 0 is the regular icosahedron") {
    auto h = build_hierarchy(0);
    const auto& m = h.level(0);
    CHECK(m.vertex_count() == 12);
    CHECK(m.edge_count() == 30);
    CHECK(m.face_count() == 20);
    for (VertexId v = 0; v < 12; ++v) CHECK(m.ring_size(v) == 5);
    // Faces wound CCW viewed from outside: outward normal has positive
    // component along the face centroid.
    for (const auto& f : m.faces) {
        const Vec3& a = m.positions[f[0]];
        const Vec3& b = m.positions[f[1]];
        const Vec3& c = m.positions[f[2]];
        Vec3 ab{b.x - a.x, b.y - a.y, b.z - a.z};
        Vec3 ac{c.x - a.x, c.y - a.y, c.z - a.z};
        Vec3 centroid{(a.x + b.x + c.x) / 3, (a.y + b.y + c.y) / 3, (a.z + b.z + c.z) / 3};
        CHECK(dot(cross(ab, ac), centroid) > 0.0);
    }
}

TEST_CASE("level 1 vertex count equals parents plus distinct edge midpoints") {
    auto h = build_hierarchy(1);
    // oracle: count distinct midpoints of the level-0 edge set
    const auto& m0 = h.level(0);
    std::set<std::pair<VertexId, VertexId>> edges;
    for (const auto& f : m0.faces)
        for (int i = 0; i < 3; ++i) {
            VertexId a = f[i], b = f[(i + 1) % 3];
            if (a > b) std::swap(a, b);
            edges.insert({a, b});
        }
    CHECK(edges.size() == 30);
    CHECK(h.level(1).vertex_count() == 12 + edges.size());
    CHECK(h.level(1).vertex_count() == 42);
}

TEST_CASE("paper-scale level 6 count") {
    auto h = build_hierarchy(6);
    CHECK(h.level(6).vertex_count() == 40962);
    CHECK(h.level(6).face_count() == 81920);
}

TEST_CASE("build_hierarchy rejects out-of-range levels") {
    CHECK_THROWS_AS(build_hierarchy(-1), ConfigError);
    CHECK_THROWS_AS(build_hierarchy(7), ConfigError);
}

TEST_CASE("build_hierarchy is deterministic") {
    auto a = build_hierarchy(3);
    auto b = build_hierarchy(3);
    for (int l = 0; l <= 3; ++l) {
        const auto& ma = a.level(l);
        const auto& mb = b.level(l);
        REQUIRE(ma.vertex_count() == mb.vertex_count());
        for (VertexId v = 0; v < ma.vertex_count(); ++v) {
            CHECK(ma.positions[v].x == mb.positions[v].x);
            CHECK(ma.positions[v].y == mb.positions[v].y);
            CHECK(ma.positions[v].z == mb.positions[v].z);
            CHECK(ma.neighbors[v] == mb.neighbors[v]);
        }
        CHECK(ma.faces == mb.faces);
    }
}

TEST_CASE("one_ring matches the face-list adjacency oracle") {
    auto h = build_hierarchy(2);
    for (int l = 0; l <= 2; ++l) {
        const auto& m = h.level(l);
        auto adj = adjacency_from_faces(m);
        for (VertexId v = 0; v < m.vertex_count(); ++v) {
            auto ring = one_ring(m, v);
            CHECK(std::set<VertexId>(ring.begin(), ring.end()) == adj[v]);
            // canonical start: smallest index first
            CHECK(*std::min_element(ring.begin(), ring.end()) == ring.front());
        }
    }
}

TEST_CASE("one_ring pentagon and hexagon census") {
    auto h = build_hierarchy(1);
    const auto& m0 = h.level(0);
    const auto& m1 = h.level(1);
    for (VertexId v = 0; v < 12; ++v) CHECK(one_ring(m0, v).size() == 5);
    CHECK(one_ring(m1, 0).size() == 5);    // inherited vertices stay pentagons
    CHECK(one_ring(m1, 12).size() == 6);   // first edge child is a hexagon
    CHECK_THROWS_AS(one_ring(m1, 42), RangeError);
}

TEST_CASE("one_ring order is CCW viewed from outside") {
    auto h = build_hierarchy(2);
    const auto& m = h.level(2);
    for (VertexId v = 0; v < m.vertex_count(); ++v) {
        auto ring = one_ring(m, v);
        const Vec3& p = m.positions[v];
        for (std::size_t i = 0; i < ring.size(); ++i) {
            const Vec3& a = m.positions[ring[i]];
            const Vec3& b = m.positions[ring[(i + 1) % ring.size()]];
            // consecutive ring edges sweep positively around the outward axis p
            CHECK(dot(cross(a, b), p) > 0.0);
        }
    }
}

TEST_CASE("one_ring symmetry by full scan up to level 4") {
    auto h = build_hierarchy(4);
    for (int l = 0; l <= 4; ++l) {
        const auto& m = h.level(l);
        for (VertexId v = 0; v < m.vertex_count(); ++v) {
            for (VertexId u : one_ring(m, v)) {
                auto back = one_ring(m, u);
                CHECK(std::find(back.begin(), back.end(), v) != back.end());
            }
        }
    }
}

TEST_CASE("index stability: coarse fields are prefixes of fine ones") {
    auto h = build_hierarchy(3);
    for (int l = 1; l <= 3; ++l) {
        const auto& coarse = h.level(l - 1);
        const auto& fine = h.level(l);
        for (VertexId v = 0; v < coarse.vertex_count(); ++v) {
            CHECK(fine.positions[v].x == coarse.positions[v].x);
            CHECK(fine.positions[v].y == coarse.positions[v].y);
            CHECK(fine.positions[v].z == coarse.positions[v].z);
            CHECK(fine.parent_of[v] == std::make_pair(v, v));
        }
        // edge children record their coarse edge
        for (VertexId v = static_cast<VertexId>(coarse.vertex_count()); v < fine.vertex_count(); ++v) {
            auto [a, b] = fine.parent_of[v];
            CHECK(a < b);
            CHECK(b < coarse.vertex_count());
        }
    }
}

TEST_CASE("pooling supports cover every fine vertex") {
    auto h = build_hierarchy(3);
    for (int l = 1; l <= 3; ++l) {
        const auto& fine = h.level(l);
        const auto& supports = h.supports(l - 1);
        std::vector<int> covered(fine.vertex_count(), 0);
        for (const auto& sup : supports)
            for (VertexId f : sup) covered[f]++;
        CHECK(std::all_of(covered.begin(), covered.end(), [](int c) { return c >= 1; }));
    }
}

TEST_CASE("verify_level passes on valid levels and reports V=642 at level 3") {
    auto h = build_hierarchy(3);
    auto report = verify_level(h.level(3), &h.level(2));
    CHECK(report.all_pass());
    CHECK(h.level(3).vertex_count() == 642);  // 10*4^3 + 2
}

TEST_CASE("verify_level flags a scaled position") {
    auto h = build_hierarchy(1);
    MeshLevel broken = h.level(1);
    broken.positions[7].x *= 1.01;
    broken.positions[7].y *= 1.01;
    broken.positions[7].z *= 1.01;
    auto report = verify_level(broken);
    bool norm_failed = false;
    for (const auto& c : report.checks)
        if (c.name == "unit_norms") norm_failed = !c.pass;
    CHECK(norm_failed);
}

TEST_CASE("verify_level flags a deleted face via Euler characteristic") {
    auto h = build_hierarchy(1);
    MeshLevel broken = h.level(1);
    broken.faces.pop_back();
    auto report = verify_level(broken);
    bool euler_failed = false;
    for (const auto& c : report.checks)
        if (c.name == "euler") euler_failed = !c.pass;
    CHECK(euler_failed);
}
