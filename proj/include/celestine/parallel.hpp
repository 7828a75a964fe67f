#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <vector>

namespace celestine::parallel {

// Process-wide worker budget. The CLI sets it once from --threads (or the
// CELESTINE_THREADS environment variable); library code only consumes it.
inline std::atomic<int>& thread_budget() {
    static std::atomic<int> budget{0};
    return budget;
}

inline int default_threads() {
    if (const char* env = std::getenv("CELESTINE_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

inline int max_threads() {
    int n = thread_budget().load(std::memory_order_relaxed);
    if (n < 1) {
        n = default_threads();
        thread_budget().store(n, std::memory_order_relaxed);
    }
    return n;
}

inline void set_max_threads(int n) {
    if (n < 1) throw std::invalid_argument("thread count must be >= 1");
    thread_budget().store(n, std::memory_order_relaxed);
}

namespace detail {

// Minimal blocking fork-join pool. Work items are half-open index ranges;
// any thread may claim any chunk, but every index is processed exactly once
// and writes only its own outputs, so results do not depend on the worker
// count. run() returns only once the pool is quiescent, which keeps the
// shared job state safe to reset for the next call.
class ThreadPool {
public:
    explicit ThreadPool(int workers) {
        for (int i = 0; i < workers; ++i)
            threads_.emplace_back([this] { worker_loop(); });
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            stopping_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void run(std::size_t total, std::size_t chunk,
             const std::function<void(std::size_t, std::size_t)>& body) {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            body_ = &body;
            total_ = total;
            chunk_ = chunk;
            next_.store(0, std::memory_order_relaxed);
            pending_ = total;
            failure_ = nullptr;
            ++generation_;
        }
        cv_.notify_all();
        drain();
        std::unique_lock<std::mutex> lock(mutex_);
        done_cv_.wait(lock, [this] { return pending_ == 0 && active_ == 0; });
        body_ = nullptr;
        if (failure_) {
            std::exception_ptr failure = failure_;
            failure_ = nullptr;
            std::rethrow_exception(failure);
        }
    }

private:
    void drain() {
        while (true) {
            const std::size_t begin = next_.fetch_add(chunk_, std::memory_order_relaxed);
            if (begin >= total_) break;
            const std::size_t end = std::min(total_, begin + chunk_);
            std::exception_ptr error;
            try {
                (*body_)(begin, end);
            } catch (...) {
                error = std::current_exception();
            }
            // The claimed range counts as done even on failure, so the job
            // always completes and run() can rethrow.
            std::lock_guard<std::mutex> lock(mutex_);
            if (error && !failure_) failure_ = error;
            pending_ -= end - begin;
            if (pending_ == 0 && active_ == 0) done_cv_.notify_all();
        }
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        while (true) {
            {
                std::unique_lock<std::mutex> lock(mutex_);
                // pending_ > 0 keeps a late-waking worker out of generations
                // that already completed; otherwise it could claim a chunk
                // of the next job while its state is being reset.
                cv_.wait(lock, [&] { return stopping_ || (generation_ != seen && pending_ > 0); });
                if (stopping_) return;
                seen = generation_;
                ++active_;
            }
            drain();
            std::lock_guard<std::mutex> lock(mutex_);
            --active_;
            if (pending_ == 0 && active_ == 0) done_cv_.notify_all();
        }
    }

    std::vector<std::thread> threads_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void(std::size_t, std::size_t)>* body_ = nullptr;
    std::size_t total_ = 0;
    std::size_t chunk_ = 1;
    std::size_t pending_ = 0;
    int active_ = 0;
    std::exception_ptr failure_;
    std::atomic<std::size_t> next_{0};
    std::uint64_t generation_ = 0;
    bool stopping_ = false;
};

inline ThreadPool& pool(int workers) {
    static ThreadPool* instance = nullptr;
    static int instance_size = 0;
    static std::mutex m;
    std::lock_guard<std::mutex> lock(m);
    if (!instance || instance_size != workers) {
        delete instance;
        instance = new ThreadPool(workers);
        instance_size = workers;
    }
    return *instance;
}

}  // namespace detail

// Runs body(begin, end) over disjoint chunks covering [0, n). Each index is
// handled by exactly one invocation, so any per-index output is identical
// for every thread budget.
inline void parallel_for(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& body) {
    if (n == 0) return;
    const int threads = max_threads();
    if (threads == 1 || n < 2) {
        body(0, n);
        return;
    }
    const std::size_t chunk = std::max<std::size_t>(1, n / (static_cast<std::size_t>(threads) * 8));
    detail::pool(threads - 1).run(n, chunk, body);
}

}  // namespace celestine::parallel
