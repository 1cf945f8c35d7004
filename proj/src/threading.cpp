#include "dygex/threading.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace dygex {

namespace {

std::atomic<int> g_num_threads{1};

// Nonzero while the current thread is executing inside a parallel region;
// nested parallel_for calls then run serially instead of re-entering the pool.
thread_local int tl_parallel_depth = 0;

// Lazily started pool; workers spin on a generation counter.
class Pool {
public:
    static Pool& instance() {
        static Pool pool;
        return pool;
    }

    void run(std::size_t n, int workers, const std::function<void(std::size_t, std::size_t)>& fn) {
        ensure_workers(workers - 1);
        std::size_t chunk = (n + workers - 1) / workers;
        {
            std::unique_lock<std::mutex> lock(mutex_);
            task_ = &fn;
            task_n_ = n;
            task_chunk_ = chunk;
            task_parts_ = workers;
            next_part_.store(1, std::memory_order_relaxed);
            // every pool thread wakes and decrements once, parts or not
            remaining_.store(static_cast<int>(threads_.size()), std::memory_order_relaxed);
            ++generation_;
        }
        cv_.notify_all();
        // this thread takes part 0
        ++tl_parallel_depth;
        fn(0, std::min(chunk, n));
        --tl_parallel_depth;
        std::unique_lock<std::mutex> lock(mutex_);
        done_cv_.wait(lock, [&] { return remaining_.load(std::memory_order_acquire) == 0; });
        task_ = nullptr;
    }

private:
    Pool() = default;
    ~Pool() {
        {
            std::unique_lock<std::mutex> lock(mutex_);
            stop_ = true;
            ++generation_;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void ensure_workers(int count) {
        std::unique_lock<std::mutex> lock(mutex_);
        while (static_cast<int>(threads_.size()) < count) {
            threads_.emplace_back([this] { worker_loop(); });
        }
    }

    void worker_loop() {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(std::size_t, std::size_t)>* task = nullptr;
            {
                std::unique_lock<std::mutex> lock(mutex_);
                cv_.wait(lock, [&] { return generation_ != seen; });
                seen = generation_;
                if (stop_) return;
                task = task_;
            }
            if (!task) continue;
            ++tl_parallel_depth;
            for (;;) {
                int part = next_part_.fetch_add(1, std::memory_order_relaxed);
                if (part >= task_parts_) break;
                std::size_t begin = static_cast<std::size_t>(part) * task_chunk_;
                if (begin >= task_n_) break;
                (*task)(begin, std::min(begin + task_chunk_, task_n_));
            }
            --tl_parallel_depth;
            if (remaining_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
                std::unique_lock<std::mutex> lock(mutex_);
                done_cv_.notify_all();
            }
        }
    }

    std::mutex mutex_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    std::vector<std::thread> threads_;
    const std::function<void(std::size_t, std::size_t)>* task_ = nullptr;
    std::size_t task_n_ = 0;
    std::size_t task_chunk_ = 0;
    int task_parts_ = 0;
    std::atomic<int> next_part_{0};
    std::atomic<int> remaining_{0};
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

}  // namespace

void set_num_threads(int n) { g_num_threads.store(n < 1 ? 1 : n); }

int num_threads() { return g_num_threads.load(); }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    int workers = num_threads();
    if (workers > static_cast<int>(n)) workers = static_cast<int>(n);
    if (workers <= 1 || tl_parallel_depth > 0) {
        fn(0, n);
        return;
    }
    Pool::instance().run(n, workers, fn);
}

}  // namespace dygex
