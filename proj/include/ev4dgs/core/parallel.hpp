#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace ev4dgs {

// Fixed-size worker pool. Work is always split into caller-defined items and
// every item writes its own output slot, so results never depend on the
// number of workers or on scheduling order.
class ThreadPool {
 public:
  explicit ThreadPool(int workers) {
    for (int i = 0; i < workers; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  ~ThreadPool() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    wake_.notify_all();
    for (auto& t : threads_) t.join();
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int size() const { return static_cast<int>(threads_.size()); }

  void run(std::size_t count, const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    std::unique_lock lock(mutex_);
    job_ = &fn;
    job_count_ = count;
    next_.store(0);
    pending_ = threads_.size();
    error_ = nullptr;
    ++generation_;
    lock.unlock();
    wake_.notify_all();

    drain();

    lock.lock();
    done_.wait(lock, [this] { return pending_ == 0; });
    job_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void drain() {
    for (;;) {
      const std::size_t i = next_.fetch_add(1);
      if (i >= job_count_) return;
      try {
        (*job_)(i);
      } catch (...) {
        std::lock_guard lock(mutex_);
        if (!error_) error_ = std::current_exception();
      }
    }
  }

  void worker_loop() {
    std::size_t seen = 0;
    for (;;) {
      std::unique_lock lock(mutex_);
      wake_.wait(lock, [&] { return stopping_ || generation_ != seen; });
      if (stopping_) return;
      seen = generation_;
      lock.unlock();
      drain();
      lock.lock();
      if (--pending_ == 0) done_.notify_all();
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mutex_;
  std::condition_variable wake_;
  std::condition_variable done_;
  const std::function<void(std::size_t)>* job_ = nullptr;
  std::size_t job_count_ = 0;
  std::atomic<std::size_t> next_{0};
  std::size_t pending_ = 0;
  std::size_t generation_ = 0;
  bool stopping_ = false;
  std::exception_ptr error_;
};

namespace detail {

struct PoolHolder {
  std::mutex mutex;
  int threads = 1;
  std::unique_ptr<ThreadPool> pool;
};

inline PoolHolder& pool_holder() {
  static PoolHolder holder;
  return holder;
}

}  // namespace detail

/// Number of threads used by parallel_for (the calling thread included).
inline int num_threads() { return detail::pool_holder().threads; }

inline void set_num_threads(int n) {
  auto& h = detail::pool_holder();
  std::lock_guard lock(h.mutex);
  n = std::max(1, n);
  if (n == h.threads) return;
  h.pool.reset();
  h.threads = n;
  if (n > 1) h.pool = std::make_unique<ThreadPool>(n - 1);
}

/// Calls fn(i) for every i in [0, count). Not reentrant: nested calls run
/// serially on the calling thread.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  thread_local bool inside = false;
  auto& h = detail::pool_holder();
  if (h.threads <= 1 || count <= 1 || inside || !h.pool) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::function<void(std::size_t)> job = [&fn](std::size_t i) {
    struct Flag {
      Flag() { inside = true; }
      ~Flag() { inside = false; }
    } flag;
    fn(i);
  };
  h.pool->run(count, job);
}

}  // namespace ev4dgs
