#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "smoe/tensor.hpp"

namespace smoe {

template <typename T>
struct Param {
    std::string name;
    TensorData<T> value;
    TensorData<T> grad;
    TensorData<T> adam_m, adam_v;  // sized on first optimizer step
};

enum class Init { Zeros, Normal, Xavier };

// Named parameter set. Initialization derives a per-parameter seed from the
// run seed and the parameter name, so values do not depend on creation order.
template <typename T>
class ParamStore {
  public:
    Param<T>& create(const std::string& name, std::vector<int> shape, Init init,
                     double std_or_unused, std::uint64_t run_seed);
    Param<T>& get(const std::string& name);
    const Param<T>& get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Param<T>*> all();  // creation order
    std::vector<const Param<T>*> all() const;
    void zero_grads();
    std::size_t total_numel() const;

  private:
    std::deque<Param<T>> params_;  // stable addresses
    std::unordered_map<std::string, std::size_t> index_;
};

// AdamW with decoupled weight decay and global-norm gradient clipping.
// With zero gradients one step multiplies every weight by exactly
// (1 - lr * weight_decay).
template <typename T>
struct AdamW {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 0.1;  // <= 0 disables clipping
    long step_count = 0;

    // Returns the pre-clip global gradient norm, then zeroes all grads.
    double step(ParamStore<T>& params);
};

// Binary checkpoint: header JSON (names, shapes, dtype, caller metadata) +
// raw little-endian values. Round-trips bit-exactly.
template <typename T>
void save_params(const ParamStore<T>& params, const std::string& path, const std::string& meta_json);
template <typename T>
std::string load_params(ParamStore<T>& params, const std::string& path);  // returns meta JSON

// Peeks at a checkpoint's metadata/dtype without loading tensors.
struct CheckpointInfo {
    std::string dtype;
    std::string meta_json;
};
CheckpointInfo read_checkpoint_info(const std::string& path);

}  // namespace smoe
