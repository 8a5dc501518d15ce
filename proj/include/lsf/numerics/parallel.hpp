#pragma once

// Fixed-partition worker pool. Work is split into chunks whose boundaries do
// not depend on the thread count, and cross-chunk reductions are merged in
// chunk order, so results are bit-identical for any pool size.

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace lsf {

class ThreadPool {
 public:
  explicit ThreadPool(std::size_t threads = 1) { resize(threads); }
  ~ThreadPool() { stop(); }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  std::size_t size() const { return workers_.size() + 1; }

  void resize(std::size_t threads) {
    stop();
    threads = std::max<std::size_t>(threads, 1);
    shutdown_ = false;
    for (std::size_t i = 0; i + 1 < threads; ++i) workers_.emplace_back([this] { worker_loop(); });
  }

  // Runs fn(chunk) for chunk in [0, chunks). The calling thread participates.
  void run(std::size_t chunks, const std::function<void(std::size_t)>& fn) {
    if (chunks == 0) return;
    if (workers_.empty() || chunks == 1) {
      for (std::size_t c = 0; c < chunks; ++c) fn(c);
      return;
    }
    std::unique_lock lock(mu_);
    job_ = &fn;
    job_chunks_ = chunks;
    next_.store(0);
    pending_ = workers_.size();
    error_ = nullptr;
    ++generation_;
    cv_.notify_all();
    lock.unlock();

    drain();

    lock.lock();
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    job_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void drain() {
    for (;;) {
      const std::size_t c = next_.fetch_add(1);
      if (c >= job_chunks_) return;
      try {
        (*job_)(c);
      } catch (...) {
        std::lock_guard g(mu_);
        if (!error_) error_ = std::current_exception();
      }
    }
  }

  void worker_loop() {
    std::size_t seen = 0;
    for (;;) {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return shutdown_ || generation_ != seen; });
      if (shutdown_) return;
      seen = generation_;
      lock.unlock();
      drain();
      lock.lock();
      if (--pending_ == 0) done_cv_.notify_one();
    }
  }

  void stop() {
    {
      std::lock_guard g(mu_);
      shutdown_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
    workers_.clear();
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(std::size_t)>* job_ = nullptr;
  std::size_t job_chunks_ = 0;
  std::atomic<std::size_t> next_{0};
  std::size_t pending_ = 0;
  std::size_t generation_ = 0;
  bool shutdown_ = false;
  std::exception_ptr error_;
};

inline ThreadPool& default_pool() {
  static ThreadPool pool(1);
  return pool;
}

inline void set_num_threads(std::size_t n) { default_pool().resize(n); }
inline std::size_t num_threads() { return default_pool().size(); }

// Row grain used by every kernel. Fixed so chunk boundaries never move.
inline constexpr std::size_t kRowGrain = 16;

inline std::size_t chunk_count(std::size_t n, std::size_t grain) { return (n + grain - 1) / grain; }

template <class Fn>
void parallel_for(std::size_t n, std::size_t grain, Fn&& fn) {
  const std::size_t chunks = chunk_count(n, grain);
  const std::function<void(std::size_t)> body = [&](std::size_t c) {
    const std::size_t begin = c * grain;
    fn(begin, std::min(n, begin + grain));
  };
  default_pool().run(chunks, body);
}

// Reduces per-chunk partial vectors of length `width` in chunk order.
// fn(begin, end, partial) accumulates rows [begin, end) into `partial`.
template <class T, class Fn>
std::vector<T> parallel_reduce_rows(std::size_t n, std::size_t grain, std::size_t width, Fn&& fn) {
  const std::size_t chunks = chunk_count(n, grain);
  std::vector<std::vector<T>> partials(chunks, std::vector<T>(width, T{}));
  parallel_for(n, grain, [&](std::size_t begin, std::size_t end) { fn(begin, end, partials[begin / grain]); });
  std::vector<T> total(width, T{});
  for (const auto& p : partials)
    for (std::size_t j = 0; j < width; ++j) total[j] += p[j];
  return total;
}

}  // namespace lsf
