#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace mcam {

inline int default_threads() {
    if (const char* env = std::getenv("MCAM_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

// Small persistent pool. Work is split into a fixed number of chunks that
// depends only on the problem size, never on the lane count, so reductions
// combined in chunk order are bitwise identical for any --threads value.
class ThreadPool {
public:
    explicit ThreadPool(int threads = 0) {
        int n = threads > 0 ? threads : default_threads();
        lanes_ = n;
        for (int i = 0; i + 1 < n; ++i) workers_.emplace_back([this] { worker(); });
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

    int lanes() const { return lanes_; }

    // Runs fn(chunk) for chunk in [0, chunks); blocks until all complete.
    void run(int chunks, const std::function<void(int)>& fn) {
        if (chunks <= 0) return;
        if (workers_.empty() || chunks == 1) {
            for (int c = 0; c < chunks; ++c) fn(c);
            return;
        }
        {
            std::lock_guard<std::mutex> lk(mu_);
            job_ = &fn;
            pending_.store(chunks, std::memory_order_relaxed);
            total_.store(chunks, std::memory_order_relaxed);
            error_ = nullptr;
            ++generation_;
            // next_ release-publishes job_/total_ to lock-free readers
            next_.store(0, std::memory_order_release);
        }
        cv_.notify_all();
        work_on_job();
        std::unique_lock<std::mutex> lk(mu_);
        done_cv_.wait(lk, [this] { return pending_.load(std::memory_order_acquire) == 0; });
        if (error_) std::rethrow_exception(error_);
    }

    // Splits [0, n) into at most `chunks` contiguous ranges.
    template <class F>
    void for_chunks(long n, int chunks, F&& body) {
        if (n <= 0) return;
        int c = static_cast<int>(std::min<long>(chunks, n));
        long step = (n + c - 1) / c;
        run(c, [&](int k) {
            long lo = k * step;
            long hi = std::min(n, lo + step);
            if (lo < hi) body(lo, hi, k);
        });
    }

private:
    void work_on_job() {
        for (;;) {
            int c = next_.fetch_add(1, std::memory_order_acquire);
            if (c >= total_.load(std::memory_order_acquire)) break;
            try {
                (*job_)(c);
            } catch (...) {
                std::lock_guard<std::mutex> lk(mu_);
                if (!error_) error_ = std::current_exception();
            }
            if (pending_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
                std::lock_guard<std::mutex> lk(mu_);
                done_cv_.notify_all();
            }
        }
    }

    void worker() {
        uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
            }
            work_on_job();
        }
    }

    std::vector<std::thread> workers_;
    int lanes_ = 1;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(int)>* job_ = nullptr;
    std::atomic<int> next_{1}, total_{0}, pending_{0};
    uint64_t generation_ = 0;
    bool stop_ = false;
    std::exception_ptr error_;
};

}  // namespace mcam
