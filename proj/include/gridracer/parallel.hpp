#pragma once

#include <algorithm>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace gridracer {

// Persistent pool for the per-control-step rollout loop. Work is split into
// one fixed contiguous chunk per lane (workers plus the calling thread), so
// writes stay disjoint and results do not depend on scheduling or on the
// lane count. Spawning threads per call would cost more than the rollouts
// for small sample counts.
class WorkerPool {
public:
    explicit WorkerPool(int threads) {
        if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
        lanes_ = std::max(1, threads);
        for (int i = 1; i < lanes_; ++i)
            workers_.emplace_back([this, i] { worker_loop(i); });
    }

    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    ~WorkerPool() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            stop_ = true;
            ++generation_;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    int lanes() const { return lanes_; }

    // Runs fn(begin, end) over [0, total) split across the lanes; blocks
    // until every lane is done.
    void run(int total, const std::function<void(int, int)>& fn) {
        if (total <= 0) return;
        const int lanes = std::min(lanes_, total);
        if (lanes == 1) {
            fn(0, total);
            return;
        }
        {
            std::lock_guard<std::mutex> lock(mutex_);
            task_ = &fn;
            total_ = total;
            active_lanes_ = lanes;
            pending_ = lanes - 1;  // lane 0 runs inline below
            ++generation_;
        }
        cv_.notify_all();

        auto [begin, end] = chunk(0, lanes, total);
        fn(begin, end);

        std::unique_lock<std::mutex> lock(mutex_);
        done_cv_.wait(lock, [this] { return pending_ == 0; });
        task_ = nullptr;
    }

private:
    static std::pair<int, int> chunk(int lane, int lanes, int total) {
        const int per = (total + lanes - 1) / lanes;
        const int begin = lane * per;
        return {std::min(begin, total), std::min(begin + per, total)};
    }

    void worker_loop(int lane) {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(int, int)>* task = nullptr;
            int total = 0;
            int lanes = 0;
            {
                std::unique_lock<std::mutex> lock(mutex_);
                cv_.wait(lock, [&] { return generation_ != seen; });
                seen = generation_;
                if (stop_) return;
                task = task_;
                total = total_;
                lanes = active_lanes_;
            }
            if (task == nullptr || lane >= lanes) {
                // not participating this round; still must ack nothing
                continue;
            }
            auto [begin, end] = chunk(lane, lanes, total);
            if (begin < end) (*task)(begin, end);
            {
                std::lock_guard<std::mutex> lock(mutex_);
                if (--pending_ == 0) done_cv_.notify_one();
            }
        }
    }

    int lanes_ = 1;
    std::vector<std::thread> workers_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void(int, int)>* task_ = nullptr;
    int total_ = 0;
    int active_lanes_ = 0;
    int pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

// One-shot chunked parallel loop for code without a persistent pool.
template <typename Fn>
void parallel_for(int total, int threads, Fn&& fn) {
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, total));
    if (threads == 1) {
        fn(0, total);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const int chunk = (total + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const int begin = t * chunk;
        const int end = std::min(total, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace gridracer
