#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace smoe {

// Fixed-size pool used by the dense kernels. Work is split into one
// contiguous chunk per worker, so every output element is written by exactly
// one thread and results are bit-identical for any thread count.
class ThreadPool {
  public:
    static ThreadPool& instance();

    void set_threads(int n);
    int threads() const { return n_threads_; }

    // fn(begin, end) over [0, n) in static contiguous chunks.
    void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

    ~ThreadPool();

  private:
    ThreadPool() = default;
    void stop_workers();
    void start_workers(int n);
    void worker_loop(int worker_id);

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_work_;
    std::condition_variable cv_done_;
    const std::function<void(std::int64_t, std::int64_t)>* job_ = nullptr;
    std::vector<std::pair<std::int64_t, std::int64_t>> ranges_;
    std::uint64_t epoch_ = 0;
    int pending_ = 0;
    bool shutdown_ = false;
    int n_threads_ = 1;
};

}  // namespace smoe
