#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace layerkit {

// Fixed-size worker pool. Tasks are independent; wait_idle() is the
// per-step synchronization barrier. With zero workers tasks run inline on
// the caller, which keeps single-threaded runs trivially deterministic.
class ThreadPool {
public:
    explicit ThreadPool(int workers) {
        workers = std::max(workers, 0);
        threads_.reserve(static_cast<std::size_t>(workers));
        for (int i = 0; i < workers; ++i)
            threads_.emplace_back([this] { worker_loop(); });
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            stopping_ = true;
        }
        cv_task_.notify_all();
        for (auto& t : threads_) t.join();
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    int worker_count() const { return static_cast<int>(threads_.size()); }

    void run(std::function<void()> task) {
        if (threads_.empty()) {
            task();
            return;
        }
        {
            std::lock_guard<std::mutex> lock(mutex_);
            queue_.push_back(std::move(task));
            ++pending_;
        }
        cv_task_.notify_one();
    }

    // Blocks until every queued task has finished.
    void wait_idle() {
        if (threads_.empty()) return;
        std::unique_lock<std::mutex> lock(mutex_);
        cv_idle_.wait(lock, [this] { return pending_ == 0; });
    }

private:
    void worker_loop() {
        for (;;) {
            std::function<void()> task;
            {
                std::unique_lock<std::mutex> lock(mutex_);
                cv_task_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
                if (stopping_ && queue_.empty()) return;
                task = std::move(queue_.front());
                queue_.pop_front();
            }
            task();
            {
                std::lock_guard<std::mutex> lock(mutex_);
                if (--pending_ == 0) cv_idle_.notify_all();
            }
        }
    }

    std::vector<std::thread> threads_;
    std::deque<std::function<void()>> queue_;
    std::mutex mutex_;
    std::condition_variable cv_task_;
    std::condition_variable cv_idle_;
    int pending_ = 0;
    bool stopping_ = false;
};

}  // namespace layerkit
