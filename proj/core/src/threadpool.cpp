#include "smoe/threadpool.hpp"

namespace smoe {

ThreadPool& ThreadPool::instance() {
    static ThreadPool pool;
    return pool;
}

ThreadPool::~ThreadPool() { stop_workers(); }

void ThreadPool::set_threads(int n) {
    if (n < 1) n = 1;
    if (n == n_threads_) return;
    stop_workers();
    n_threads_ = n;
    if (n > 1) start_workers(n - 1);  // caller participates as worker 0
}

void ThreadPool::stop_workers() {
    {
        std::lock_guard lk(mu_);
        shutdown_ = true;
        ++epoch_;
    }
    cv_work_.notify_all();
    for (auto& t : workers_) t.join();
    workers_.clear();
    shutdown_ = false;
}

void ThreadPool::start_workers(int n) {
    ranges_.assign(static_cast<std::size_t>(n) + 1, {0, 0});
    for (int i = 0; i < n; ++i)
        workers_.emplace_back([this, i] { worker_loop(i + 1); });
}

void ThreadPool::worker_loop(int worker_id) {
    std::uint64_t seen = 0;
    for (;;) {
        const std::function<void(std::int64_t, std::int64_t)>* job = nullptr;
        std::pair<std::int64_t, std::int64_t> range{0, 0};
        {
            std::unique_lock lk(mu_);
            cv_work_.wait(lk, [&] { return shutdown_ || epoch_ != seen; });
            if (shutdown_) return;
            seen = epoch_;
            job = job_;
            range = ranges_[static_cast<std::size_t>(worker_id)];
        }
        if (job && range.second > range.first) (*job)(range.first, range.second);
        {
            std::lock_guard lk(mu_);
            if (--pending_ == 0) cv_done_.notify_all();
        }
    }
}

void ThreadPool::parallel_for(std::int64_t n,
                              const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) return;
    const int nt = n_threads_;
    if (nt <= 1 || n == 1) {
        fn(0, n);
        return;
    }
    const std::int64_t chunk = (n + nt - 1) / nt;
    {
        std::lock_guard lk(mu_);
        job_ = &fn;
        for (int i = 0; i < nt; ++i) {
            std::int64_t b = std::min<std::int64_t>(i * chunk, n);
            std::int64_t e = std::min<std::int64_t>(b + chunk, n);
            ranges_[static_cast<std::size_t>(i)] = {b, e};
        }
        pending_ = nt - 1;
        ++epoch_;
    }
    cv_work_.notify_all();
    fn(ranges_[0].first, ranges_[0].second);  // caller takes chunk 0
    std::unique_lock lk(mu_);
    cv_done_.wait(lk, [&] { return pending_ == 0; });
    job_ = nullptr;
}

}  // namespace smoe
