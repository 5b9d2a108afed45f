#include "smoe/sconv.hpp"

#include <numeric>

#include "smoe/errors.hpp"
#include "smoe/rng.hpp"

namespace smoe {

template <typename T>
SphConvLayer<T> SphConvLayer<T>::identity(int ch) {
    SphConvLayer<T> l;
    l.in_ch = l.out_ch = ch;
    l.kernel.resize({7 * ch, ch});
    l.bias.resize({1, ch});
    for (int c = 0; c < ch; ++c) l.kernel.at(c, c) = T{1};  // center slot only
    return l;
}

template <typename T>
SphConvLayer<T> SphConvLayer<T>::uniform(int ch) {
    SphConvLayer<T> l;
    l.in_ch = l.out_ch = ch;
    l.kernel.resize({7 * ch, ch});
    l.bias.resize({1, ch});
    for (int s = 0; s < 7; ++s)
        for (int c = 0; c < ch; ++c) l.kernel.at(s * ch + c, c) = static_cast<T>(1.0 / 7.0);
    return l;
}

template <typename T>
SurfaceField<T> SurfaceField<T>::constant(int level, Hemisphere hemi, int channels, T value,
                                          const RoiMask& mask) {
    SurfaceField<T> f;
    f.level = level;
    f.hemisphere = hemi;
    f.channels = channels;
    f.valid_mask = mask;
    f.values.resize({static_cast<int>(icosphere_vertex_count(level)), channels});
    for (VertexId v = 0; v < mask.total(); ++v)
        if (mask.is_selected(v))
            for (int c = 0; c < channels; ++c) f.values.at(static_cast<int>(v), c) = value;
    return f;
}

namespace {

std::vector<std::int32_t> compact_index(const RoiMask& mask) {
    std::vector<std::int32_t> row_of(mask.total(), -1);
    std::int32_t r = 0;
    for (VertexId v = 0; v < mask.total(); ++v)
        if (mask.is_selected(v)) row_of[v] = r++;
    return row_of;
}

std::vector<VertexId> shuffle_map(std::size_t n, std::uint64_t seed) {
    std::vector<VertexId> perm(n);
    std::iota(perm.begin(), perm.end(), 0u);
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i)
        std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
    return perm;
}

RingPlan build_plan(const MeshLevel& ring_mesh, const RoiMask& in_mask,
                    const std::vector<VertexId>& out_vertices, const SconvConfig& cfg) {
    if (in_mask.total() != ring_mesh.vertex_count())
        throw ConfigError("ring plan: mask level does not match mesh level");
    RingPlan plan;
    plan.in_vertices = in_mask.selected_indices();
    plan.out_vertices = out_vertices;
    const auto row_of = compact_index(in_mask);
    std::vector<VertexId> shuffled;
    if (cfg.shuffle_topology_seed != 0)
        shuffled = shuffle_map(ring_mesh.vertex_count(), cfg.shuffle_topology_seed);

    plan.gather.slots = 7;
    plan.gather.in_rows = static_cast<int>(plan.in_vertices.size());
    plan.gather.idx.resize(out_vertices.size() * 7);
    for (std::size_t r = 0; r < out_vertices.size(); ++r) {
        const VertexId v = out_vertices[r];
        std::int32_t* slots = plan.gather.idx.data() + r * 7;
        const std::int32_t center = row_of[v];
        slots[0] = center;
        const VertexId ring_v = shuffled.empty() ? v : shuffled[v];
        const auto& nb = ring_mesh.neighbors[ring_v];
        for (int s = 0; s < 6; ++s) {
            if (cfg.receptive_field == ReceptiveField::CenterOnly) {
                slots[s + 1] = -1;
            } else if (nb[s] == kNoNeighbor) {
                slots[s + 1] = center;  // pentagon: duplicate center
            } else {
                slots[s + 1] = row_of[nb[s]];  // -1 when outside the ROI
            }
        }
    }
    return plan;
}

}  // namespace

RingPlan make_ring_plan(const MeshLevel& mesh, const RoiMask& in_mask, const RoiMask& out_mask,
                        const SconvConfig& cfg) {
    if (in_mask.level != mesh.level || out_mask.level != mesh.level)
        throw ConfigError("make_ring_plan: level mismatch");
    return build_plan(mesh, in_mask, out_mask.selected_indices(), cfg);
}

RingPlan make_downconv_plan(const MeshLevel& fine_mesh, const RoiMask& in_mask,
                            const RoiMask& out_mask_coarse, const SconvConfig& cfg) {
    if (in_mask.level != fine_mesh.level)
        throw ConfigError("make_downconv_plan: input mask level mismatch");
    if (out_mask_coarse.level != fine_mesh.level - 1)
        throw ConfigError("make_downconv_plan: output mask must be one level coarser");
    // Coarse vertices keep their fine index (prefix property), so the fine
    // ring of the same id is the stride-2 stencil.
    return build_plan(fine_mesh, in_mask, out_mask_coarse.selected_indices(), cfg);
}

template <typename T>
TensorData<T> compact_rows(const SurfaceField<T>& x) {
    const auto ids = x.valid_mask.selected_indices();
    TensorData<T> out({static_cast<int>(ids.size()), x.channels});
    for (std::size_t r = 0; r < ids.size(); ++r)
        for (int c = 0; c < x.channels; ++c)
            out.at(static_cast<int>(r), c) = x.values.at(static_cast<int>(ids[r]), c);
    return out;
}

template <typename T>
SurfaceField<T> field_from_compact(const TensorData<T>& rows, int level, Hemisphere hemi,
                                   const RoiMask& mask) {
    SurfaceField<T> f;
    f.level = level;
    f.hemisphere = hemi;
    f.channels = rows.cols();
    f.valid_mask = mask;
    f.values.resize({static_cast<int>(icosphere_vertex_count(level)), rows.cols()});
    const auto ids = mask.selected_indices();
    if (ids.size() != static_cast<std::size_t>(rows.rows()))
        throw ShapeError("field_from_compact: row count does not match mask");
    for (std::size_t r = 0; r < ids.size(); ++r)
        for (int c = 0; c < rows.cols(); ++c)
            f.values.at(static_cast<int>(ids[r]), c) = rows.at(static_cast<int>(r), c);
    return f;
}

namespace {

template <typename T>
SurfaceField<T> run_conv(const TensorData<T>& x_compact, const SphConvLayer<T>& layer,
                         const RingPlan& plan, int out_level, Hemisphere hemi,
                         const RoiMask& out_mask) {
    Tape<T> tape;
    auto x = tape.input(x_compact);
    auto k = tape.input(layer.kernel);
    auto b = tape.input(layer.bias);
    auto y = tape.sph_conv(x, &plan.gather, k, b);
    return field_from_compact(tape.val(y), out_level, hemi, out_mask);
}

}  // namespace

template <typename T>
SurfaceField<T> sph_conv(const SurfaceField<T>& x, const SphConvLayer<T>& layer,
                         const MeshLevel& mesh, const RoiMask& out_mask, const SconvConfig& cfg) {
    if (x.level != mesh.level || out_mask.level != mesh.level)
        throw ConfigError("sph_conv: level mismatch");
    if (x.channels != layer.in_ch) throw ConfigError("sph_conv: channel mismatch");
    auto plan = make_ring_plan(mesh, x.valid_mask, out_mask, cfg);
    return run_conv(compact_rows(x), layer, plan, mesh.level, x.hemisphere, out_mask);
}

template <typename T>
SurfaceField<T> sph_downconv(const SurfaceField<T>& x, const SphConvLayer<T>& layer,
                             const MeshHierarchy& hierarchy, const RoiMask& out_mask_coarse,
                             const SconvConfig& cfg) {
    if (x.channels != layer.in_ch) throw ConfigError("sph_downconv: channel mismatch");
    const MeshLevel& fine = hierarchy.level(x.level);
    auto plan = make_downconv_plan(fine, x.valid_mask, out_mask_coarse, cfg);
    return run_conv(compact_rows(x), layer, plan, x.level - 1, x.hemisphere, out_mask_coarse);
}

template <typename T>
std::vector<T> pool_mean(const SurfaceField<T>& x) {
    const std::size_t n = x.valid_mask.count();
    if (n == 0) throw DegenerateInputError("pool_mean: empty mask");
    std::vector<T> out(static_cast<std::size_t>(x.channels), T{0});
    for (VertexId v = 0; v < x.valid_mask.total(); ++v) {
        if (!x.valid_mask.is_selected(v)) continue;
        for (int c = 0; c < x.channels; ++c)
            out[static_cast<std::size_t>(c)] += x.values.at(static_cast<int>(v), c);
    }
    for (auto& o : out) o /= static_cast<T>(n);
    return out;
}

#define SMOE_INSTANTIATE(T)                                                                       \
    template struct SphConvLayer<T>;                                                              \
    template struct SurfaceField<T>;                                                              \
    template TensorData<T> compact_rows(const SurfaceField<T>&);                                  \
    template SurfaceField<T> field_from_compact(const TensorData<T>&, int, Hemisphere,            \
                                                const RoiMask&);                                  \
    template SurfaceField<T> sph_conv(const SurfaceField<T>&, const SphConvLayer<T>&,             \
                                      const MeshLevel&, const RoiMask&, const SconvConfig&);      \
    template SurfaceField<T> sph_downconv(const SurfaceField<T>&, const SphConvLayer<T>&,         \
                                          const MeshHierarchy&, const RoiMask&,                   \
                                          const SconvConfig&);                                    \
    template std::vector<T> pool_mean(const SurfaceField<T>&);

SMOE_INSTANTIATE(float)
SMOE_INSTANTIATE(double)
#undef SMOE_INSTANTIATE

}  // namespace smoe
