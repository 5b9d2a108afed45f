#pragma once

#include <atomic>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "smoe/errors.hpp"

namespace smoe {

// Running byte count of live dense buffers plus the observed peak. The peak
// is what run reports use as "peak memory"; it is deterministic, unlike RSS.
struct MemTracker {
    static std::atomic<std::int64_t>& live() {
        static std::atomic<std::int64_t> v{0};
        return v;
    }
    static std::atomic<std::int64_t>& peak() {
        static std::atomic<std::int64_t> v{0};
        return v;
    }
    static void add(std::int64_t bytes) {
        const std::int64_t now = live().fetch_add(bytes) + bytes;
        std::int64_t p = peak().load();
        while (now > p && !peak().compare_exchange_weak(p, now)) {
        }
    }
    static void sub(std::int64_t bytes) { live().fetch_sub(bytes); }
    static void reset_peak() { peak().store(live().load()); }
};

// Dense row-major array, rank 1 or 2. Scalars are shape {1}.
template <typename T>
class TensorData {
  public:
    TensorData() = default;
    explicit TensorData(std::vector<int> shape) { resize(std::move(shape)); }
    TensorData(const TensorData& o) : shape_(o.shape_), v_(o.v_) { track(bytes()); }
    TensorData(TensorData&& o) noexcept : shape_(std::move(o.shape_)), v_(std::move(o.v_)) {
        o.shape_.clear();
    }
    TensorData& operator=(const TensorData& o) {
        if (this != &o) {
            untrack(bytes());
            shape_ = o.shape_;
            v_ = o.v_;
            track(bytes());
        }
        return *this;
    }
    TensorData& operator=(TensorData&& o) noexcept {
        if (this != &o) {
            untrack(bytes());
            shape_ = std::move(o.shape_);
            v_ = std::move(o.v_);
            o.shape_.clear();
        }
        return *this;
    }
    ~TensorData() { untrack(bytes()); }

    void resize(std::vector<int> shape) {
        untrack(bytes());
        shape_ = std::move(shape);
        std::size_t n = 1;
        for (int d : shape_) {
            if (d < 0) throw ShapeError("tensor: negative dimension");
            n *= static_cast<std::size_t>(d);
        }
        v_.assign(n, T{0});
        track(bytes());
    }

    const std::vector<int>& shape() const { return shape_; }
    std::size_t numel() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    int rows() const { return shape_.size() == 2 ? shape_[0] : 1; }
    int cols() const { return shape_.size() == 2 ? shape_[1] : (shape_.empty() ? 0 : shape_[0]); }

    T* data() { return v_.data(); }
    const T* data() const { return v_.data(); }
    T& operator[](std::size_t i) { return v_[i]; }
    const T& operator[](std::size_t i) const { return v_[i]; }
    T& at(int r, int c) { return v_[static_cast<std::size_t>(r) * cols() + c]; }
    const T& at(int r, int c) const { return v_[static_cast<std::size_t>(r) * cols() + c]; }

    void fill(T x) { std::fill(v_.begin(), v_.end(), x); }

    std::int64_t bytes() const { return static_cast<std::int64_t>(v_.capacity() * sizeof(T)); }

    bool same_shape(const TensorData& o) const { return shape_ == o.shape_; }
    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i)
            s += (i ? "," : "") + std::to_string(shape_[i]);
        return s + "]";
    }

  private:
    static void track(std::int64_t b) {
        if (b) MemTracker::add(b);
    }
    static void untrack(std::int64_t b) {
        if (b) MemTracker::sub(b);
    }
    std::vector<int> shape_;
    std::vector<T> v_;
};

template <typename T>
TensorData<T> tensor_scalar(T x) {
    TensorData<T> t({1});
    t[0] = x;
    return t;
}

}  // namespace smoe
