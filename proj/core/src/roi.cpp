#include "smoe/roi.hpp"

#include <fstream>

#include <json.hpp>

#include "smoe/errors.hpp"

namespace smoe {

std::vector<VertexId> RoiMask::selected_indices() const {
    std::vector<VertexId> out;
    out.reserve(count());
    for (VertexId v = 0; v < selected.size(); ++v)
        if (selected[v]) out.push_back(v);
    return out;
}

RoiMask RoiMask::full(int level, Hemisphere hemi) {
    RoiMask m;
    m.level = level;
    m.hemisphere = hemi;
    m.selected.assign(icosphere_vertex_count(level), 1);
    return m;
}

RoiMask RoiMask::from_indices(int level, Hemisphere hemi, const std::vector<VertexId>& indices) {
    RoiMask m;
    m.level = level;
    m.hemisphere = hemi;
    m.selected.assign(icosphere_vertex_count(level), 0);
    for (VertexId v : indices) {
        if (v >= m.selected.size())
            throw FormatError("roi: index " + std::to_string(v) + " out of range for level " +
                              std::to_string(level));
        if (m.selected[v]) throw FormatError("roi: duplicate index " + std::to_string(v));
        m.selected[v] = 1;
    }
    return m;
}

const RoiMask& RoiPyramid::at_level(int level) const {
    for (const auto& m : masks)
        if (m.level == level) return m;
    throw RangeError("roi pyramid: no mask at level " + std::to_string(level));
}

RoiMask load_roi(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("roi: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("roi: bad JSON in " + path + ": " + e.what());
    }
    if (!j.contains("level") || !j.contains("hemi") || !j.contains("indices"))
        throw FormatError("roi: " + path + " must contain level, hemi, indices");
    const int level = j.at("level").get<int>();
    if (level < 0 || level > 6) throw FormatError("roi: level out of range in " + path);
    const std::string hemi = j.at("hemi").get<std::string>();
    if (hemi != "L" && hemi != "R") throw FormatError("roi: hemi must be \"L\" or \"R\" in " + path);
    auto indices = j.at("indices").get<std::vector<std::int64_t>>();
    std::vector<VertexId> ids;
    ids.reserve(indices.size());
    std::int64_t prev = -1;
    for (std::int64_t v : indices) {
        if (v < 0) throw FormatError("roi: negative index in " + path);
        if (v <= prev) throw FormatError("roi: indices must be sorted and unique in " + path);
        prev = v;
        ids.push_back(static_cast<VertexId>(v));
    }
    return RoiMask::from_indices(level, hemi == "L" ? Hemisphere::Left : Hemisphere::Right, ids);
}

void save_roi(const RoiMask& mask, const std::string& path) {
    nlohmann::json j;
    j["level"] = mask.level;
    j["hemi"] = hemi_name(mask.hemisphere);
    j["indices"] = mask.selected_indices();
    std::ofstream out(path);
    if (!out) throw FormatError("roi: cannot write " + path);
    out << j.dump(0) << "\n";
}

RoiPyramid coarsen(const RoiMask& mask, const MeshHierarchy& hierarchy, int to_level) {
    if (to_level >= mask.level)
        throw ConfigError("coarsen: to_level " + std::to_string(to_level) +
                          " must be below mask level " + std::to_string(mask.level));
    if (to_level < 0) throw ConfigError("coarsen: to_level must be >= 0");
    if (mask.level > hierarchy.max_level())
        throw ConfigError("coarsen: hierarchy does not reach level " + std::to_string(mask.level));

    RoiPyramid pyr;
    pyr.masks.push_back(mask);
    for (int l = mask.level; l > to_level; --l) {
        const RoiMask& fine = pyr.masks.back();
        const auto& supports = hierarchy.supports(l - 1);
        RoiMask coarse;
        coarse.level = l - 1;
        coarse.hemisphere = mask.hemisphere;
        coarse.selected.assign(icosphere_vertex_count(l - 1), 0);
        for (VertexId c = 0; c < coarse.selected.size(); ++c) {
            for (VertexId f : supports[c]) {
                if (fine.selected[f]) {
                    coarse.selected[c] = 1;
                    break;
                }
            }
        }
        pyr.masks.push_back(std::move(coarse));
    }
    return pyr;
}

ReductionStats reduction_stats(const RoiMask& left, const RoiMask& right) {
    if (left.level != right.level)
        throw ConfigError("reduction_stats: masks at different levels");
    ReductionStats s;
    s.selected = left.count() + right.count();
    s.total = left.total() + right.total();
    s.fraction_removed =
        static_cast<double>(s.total - s.selected) / static_cast<double>(s.total);
    return s;
}

}  // namespace smoe
