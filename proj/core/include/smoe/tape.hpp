#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "smoe/params.hpp"
#include "smoe/tensor.hpp"

namespace smoe {

// Precomputed row-gather table: each output row reads `slots` input rows.
// Entry -1 reads a zero row (out-of-ROI padding).
struct GatherPlan {
    int slots = 1;
    int in_rows = 0;
    std::vector<std::int32_t> idx;  // out_rows * slots

    int out_rows() const { return slots ? static_cast<int>(idx.size()) / slots : 0; }
};

// Define-by-run reverse-mode tape. One tape per forward/backward pass;
// nodes are appended in evaluation order, so creation order is a valid
// topological order for the reverse sweep. Backward accumulates into the
// Param buffers the leaves were bound to.
template <typename T>
class Tape {
  public:
    using Id = std::int32_t;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // --- leaves -----------------------------------------------------------
    Id input(TensorData<T> v);         // constant, no gradient
    Id param(Param<T>& p);             // differentiable leaf, grads exported to p.grad

    const TensorData<T>& val(Id id) const { return *nodes_[static_cast<std::size_t>(id)].vptr; }
    TensorData<T>& grad(Id id);        // lazily allocated, zero-initialized

    // --- elementwise / reductions ------------------------------------------
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);
    Id scale(Id a, double c);
    Id add_bias(Id x, Id bias);        // bias shape [1, cols]
    Id colvec_scale(Id x, Id s);       // row i of x scaled by s[i, 0]
    Id sum(Id a);                      // -> [1]
    Id mean(Id a);                     // -> [1]
    Id mean_rows(Id x);                // -> [1, cols], mean across rows
    Id relu(Id x);
    Id gelu(Id x);                     // tanh approximation
    Id softmax_rows(Id x);
    Id layer_norm_rows(Id x, Id gamma, Id beta, double eps);
    Id dropout(Id x, double p, bool train, std::uint64_t seed);  // inverted; eval = identity
    Id mse(Id a, Id b);                // sum of squared differences -> [1]

    // --- shape / indexing ---------------------------------------------------
    Id concat_rows(const std::vector<Id>& xs);
    Id concat_cols(const std::vector<Id>& xs);
    Id slice_rows(Id x, int r0, int r1);
    Id slice_cols(Id x, int c0, int c1);
    Id gather_rows(Id x, std::vector<std::int32_t> idx);
    Id scatter_add_rows(Id x, std::vector<std::int32_t> idx, int out_rows);

    // --- linear algebra -----------------------------------------------------
    Id matmul(Id a, Id b);             // [m,k] x [k,n]
    Id matmul_nt(Id a, Id b);          // [m,k] x [n,k]^T

    // 1-ring surface convolution. kernel is [slots*in_ch, out_ch] with slot-
    // major row blocks (slot 0 = center), bias [1, out_ch]. x is [in_rows,
    // in_ch] or a batch of `batch` stacked blocks of plan->in_rows rows.
    Id sph_conv(Id x, const GatherPlan* plan, Id kernel, Id bias, int batch = 1);

    // Fused multi-head self-attention over `n_blocks` independent blocks of
    // `block_rows` rows. Weights [d,d], biases [1,d]. Dropout on attention
    // probabilities.
    Id block_mhsa(Id x, int n_blocks, int block_rows, int heads, Id wq, Id bq, Id wk, Id bk,
                  Id wv, Id bv, Id wo, Id bo, double drop_p, bool train, std::uint64_t seed);

    // --- reverse sweep ------------------------------------------------------
    // loss must be scalar; throws ContractError otherwise.
    void backward(Id loss);

    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        TensorData<T> owned;
        const TensorData<T>* vptr = nullptr;
        TensorData<T> grad;
        Param<T>* bound = nullptr;
        std::function<void()> back;
        bool needs_grad = false;
    };

    Id push(TensorData<T> value, bool needs_grad, std::function<void()> back = nullptr);
    bool wants_grad(Id id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
    bool grad_ready(Id id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }

    // deque: node addresses must stay stable because vptr self-references owned.
    std::deque<Node> nodes_;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace smoe
