#pragma once

#include <cstdint>
#include <vector>

#include "smoe/mesh.hpp"
#include "smoe/roi.hpp"
#include "smoe/tape.hpp"

namespace smoe {

// Padding is fixed: a pentagon's missing ring slot reads the center vertex
// (constants are preserved in the interior), an out-of-ROI neighbor reads
// zero (no signal is invented outside the mask).
inline constexpr const char* kPentagonPadding = "duplicate_center";
inline constexpr const char* kRoiPadding = "zero";

enum class DownsampleMode { StridedConv, MeanPool };
enum class ReceptiveField { Ring, CenterOnly };

struct SconvConfig {
    DownsampleMode downsample = DownsampleMode::StridedConv;
    ReceptiveField receptive_field = ReceptiveField::Ring;
    std::uint64_t shuffle_topology_seed = 0;  // 0 = canonical topology
};

// Weights of one 1-ring convolution. kernel rows are slot-major blocks of
// in_ch (slot 0 = center, slots 1..6 in canonical ring order).
template <typename T>
struct SphConvLayer {
    int in_ch = 0;
    int out_ch = 0;
    TensorData<T> kernel;  // [7*in_ch, out_ch]
    TensorData<T> bias;    // [1, out_ch]

    T weight(int oc, int ic, int slot) const { return kernel.at(slot * in_ch + ic, oc); }
    T& weight(int oc, int ic, int slot) { return kernel.at(slot * in_ch + ic, oc); }

    static SphConvLayer identity(int ch);
    static SphConvLayer uniform(int ch);  // every slot 1/7 on the diagonal
};

// Per-hemisphere scalar fields over a mesh level. Values outside valid_mask
// are defined to read as zero.
template <typename T>
struct SurfaceField {
    int level = 0;
    Hemisphere hemisphere = Hemisphere::Left;
    int channels = 0;
    TensorData<T> values;  // [vertex_count, channels], full level
    RoiMask valid_mask;

    static SurfaceField constant(int level, Hemisphere hemi, int channels, T value,
                                 const RoiMask& mask);
};

// Gather table for one conv application over compact (selected-vertex) rows.
struct RingPlan {
    GatherPlan gather;                  // slots = 7; -1 entries read zero
    std::vector<VertexId> in_vertices;  // compact input row -> vertex id
    std::vector<VertexId> out_vertices; // compact output row -> vertex id
};

// Same-level plan: output rows are out_mask's vertices, ring lookups on
// `mesh` restricted to in_mask. A nonzero shuffle seed replaces each vertex's
// ring with that of a seeded random permutation image (topology ablation).
RingPlan make_ring_plan(const MeshLevel& mesh, const RoiMask& in_mask, const RoiMask& out_mask,
                        const SconvConfig& cfg = {});

// Level L -> L-1 plan: evaluates the fine-level ring of each retained coarse
// vertex (index-stable prefix), keeping only coarse-index outputs.
RingPlan make_downconv_plan(const MeshLevel& fine_mesh, const RoiMask& in_mask,
                            const RoiMask& out_mask_coarse, const SconvConfig& cfg = {});

// --- host-level operations (build a throwaway tape internally) -------------

template <typename T>
SurfaceField<T> sph_conv(const SurfaceField<T>& x, const SphConvLayer<T>& layer,
                         const MeshLevel& mesh, const RoiMask& out_mask,
                         const SconvConfig& cfg = {});

template <typename T>
SurfaceField<T> sph_downconv(const SurfaceField<T>& x, const SphConvLayer<T>& layer,
                             const MeshHierarchy& hierarchy, const RoiMask& out_mask_coarse,
                             const SconvConfig& cfg = {});

// Channelwise mean over selected vertices. Throws DegenerateInputError on an
// empty mask.
template <typename T>
std::vector<T> pool_mean(const SurfaceField<T>& x);

// Compact [n_selected, C] view of the masked field (row order = ascending
// vertex id), and back.
template <typename T>
TensorData<T> compact_rows(const SurfaceField<T>& x);
template <typename T>
SurfaceField<T> field_from_compact(const TensorData<T>& rows, int level, Hemisphere hemi,
                                   const RoiMask& mask);

}  // namespace smoe
