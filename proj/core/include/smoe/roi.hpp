#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smoe/mesh.hpp"

namespace smoe {

enum class Hemisphere : std::uint8_t { Left = 0, Right = 1 };

inline const char* hemi_name(Hemisphere h) { return h == Hemisphere::Left ? "L" : "R"; }

// Per-hemisphere vertex selection at one mesh level.
struct RoiMask {
    int level = 0;
    Hemisphere hemisphere = Hemisphere::Left;
    std::vector<std::uint8_t> selected;  // one flag per vertex of the level

    std::size_t count() const {
        std::size_t n = 0;
        for (auto s : selected) n += s;
        return n;
    }
    std::size_t total() const { return selected.size(); }
    bool is_selected(VertexId v) const { return selected[v] != 0; }

    // Selected vertex ids in increasing order.
    std::vector<VertexId> selected_indices() const;

    static RoiMask full(int level, Hemisphere hemi);
    static RoiMask from_indices(int level, Hemisphere hemi, const std::vector<VertexId>& indices);
};

// Masks at every level from base down to target; masks[0] is the base level.
// A coarse vertex is selected iff any fine vertex in its pooling support is.
struct RoiPyramid {
    std::vector<RoiMask> masks;  // level base, base-1, ..., target

    const RoiMask& at_level(int level) const;
    int base_level() const { return masks.front().level; }
    int target_level() const { return masks.back().level; }
};

// Reads a mask from JSON: {"level": L, "hemi": "L"|"R", "indices": [...]}.
// Indices must be sorted, unique, and < vertex count of the level.
RoiMask load_roi(const std::string& path);

void save_roi(const RoiMask& mask, const std::string& path);

// Union-coarsens a mask down to to_level (to_level < mask.level).
RoiPyramid coarsen(const RoiMask& mask, const MeshHierarchy& hierarchy, int to_level);

struct ReductionStats {
    std::size_t selected = 0;
    std::size_t total = 0;
    double fraction_removed = 0.0;
};

// Fraction of vertices outside the selection, both hemispheres combined.
ReductionStats reduction_stats(const RoiMask& left, const RoiMask& right);

}  // namespace smoe
