#pragma once

#include <cstdint>
#include <vector>

#include "smoe/params.hpp"
#include "smoe/sconv.hpp"

namespace smoe {

// Tokenizer geometry and widths. The desk profile keeps the same stack shape
// as the paper profile at a size that trains in minutes on a CPU.
struct SrstConfig {
    int base_level = 4;
    int functional_target_level = 1;
    int structural_target_level = 0;
    std::vector<int> functional_channels = {16, 32, 64, 64};
    std::vector<int> structural_channels = {8, 16, 32, 32, 32};
    int model_dim = 64;    // d
    int struct_dim = 32;   // d_s, width of structural embeddings fed to the router
    int n_cls = 4;
    int n_global = 4;
    double dropout = 0.3;  // functional stack only; the structural path is deterministic

    void validate() const;

    static SrstConfig desk();
    static SrstConfig paper();  // level 6, channels [64,128,256,512] / [16..512], d=768
};

struct TokenOrigin {
    enum class Kind { Cls, Global, Local };
    Kind kind = Kind::Cls;
    Hemisphere hemi = Hemisphere::Left;
    VertexId vertex = 0;  // coarse vertex id for Local tokens
};

// Sequence layout: [CLS 0..3][GLOBAL 4..7][left locals][right locals].
struct TokenLayout {
    int n_cls = 4;
    int n_global = 4;
    std::vector<VertexId> left_locals;   // ascending coarse ids at functional target level
    std::vector<VertexId> right_locals;

    int n_special() const { return n_cls + n_global; }
    int n_local() const { return static_cast<int>(left_locals.size() + right_locals.size()); }
    int tokens() const { return n_special() + n_local(); }
    TokenOrigin origin(int t) const;
};

struct TokenBudget {
    std::size_t tokens_selective = 0;
    std::size_t tokens_full = 0;
    double reduction = 0.0;  // over local tokens at the functional target level
};

TokenBudget token_budget(const SrstConfig& cfg, const RoiPyramid& left, const RoiPyramid& right);

// Selective ROI spherical tokenizer. Convolution weights are shared across
// hemispheres; positional embeddings are per (hemisphere, coarse vertex).
template <typename T>
class SrstTokenizer {
  public:
    SrstTokenizer(const SrstConfig& cfg, const MeshHierarchy& hierarchy, const RoiMask& roi_left,
                  const RoiMask& roi_right, ParamStore<T>& params, std::uint64_t seed,
                  bool global_tokens_enabled = true, const SconvConfig& sconv_cfg = {});

    const TokenLayout& layout() const { return layout_; }
    const SrstConfig& config() const { return cfg_; }
    int n_left_base() const { return static_cast<int>(left_base_count_); }
    int n_right_base() const { return static_cast<int>(right_base_count_); }

    // Functional path. xl [B*nL,1] and xr [B*nR,1] are compact base-level rows,
    // B sample blocks each. Returns the token matrix [B*T, model_dim].
    typename Tape<T>::Id functional(Tape<T>& t, typename Tape<T>::Id xl, typename Tape<T>::Id xr,
                                    int batch, bool train, std::uint64_t dropout_seed) const;

    struct Structural {
        typename Tape<T>::Id per_token;   // [n_local, struct_dim]
        typename Tape<T>::Id global;      // [1, struct_dim]
        typename Tape<T>::Id for_tokens;  // [T, struct_dim]; specials carry the global row
    };
    // Structural path on one subject's anatomy (4 channels), deterministic.
    Structural structural(Tape<T>& t, typename Tape<T>::Id al, typename Tape<T>::Id ar) const;

    // Base-level compact-row support cone of each local token, in layout order
    // (left block then right block). Rows index into that hemisphere's compact
    // input.
    const std::vector<std::vector<std::int32_t>>& local_cones() const { return cones_; }

  private:
    struct HemiPlans {
        std::vector<RingPlan> functional;      // stage 0 conv + downconv stages
        std::vector<RingPlan> struct_shallow;  // to functional target
        std::vector<RingPlan> struct_deep;     // to structural target
    };

    typename Tape<T>::Id run_stack(Tape<T>& t, typename Tape<T>::Id x, const std::vector<RingPlan>& plans,
                                   const char* prefix, int batch, bool train,
                                   std::uint64_t dropout_seed) const;

    SrstConfig cfg_;
    TokenLayout layout_;
    ParamStore<T>* params_;
    HemiPlans left_, right_;
    std::size_t left_base_count_ = 0, right_base_count_ = 0;
    std::vector<std::vector<std::int32_t>> cones_;
    bool globals_enabled_ = true;
};

}  // namespace smoe
