#pragma once

#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace sbn {

// Fork-join worker pool. Work is always partitioned into contiguous index
// ranges and every output element is produced by exactly one sequential loop,
// so results are bitwise independent of the worker count. Floating-point
// reductions must therefore be arranged per output element (e.g. parallelize
// a weight-gradient over output channels, not over the batch).
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  // body(chunk_index, nchunks) — caller derives its index range from these.
  void run(const std::function<void(int, int)>& body) {
    const int n = size();
    if (n == 1) {
      body(0, 1);
      return;
    }
    {
      std::unique_lock<std::mutex> lk(m_);
      body_ = &body;
      nchunks_ = n;
      pending_ = n - 1;
      ++generation_;
      cv_start_.notify_all();
    }
    body(0, n);  // the calling thread takes chunk 0
    std::unique_lock<std::mutex> lk(m_);
    cv_done_.wait(lk, [&] { return pending_ == 0; });
    body_ = nullptr;
  }

  ~ThreadPool() {
    {
      std::unique_lock<std::mutex> lk(m_);
      stop_ = true;
      ++generation_;
      cv_start_.notify_all();
    }
    for (auto& t : workers_) t.join();
  }

 private:
  ThreadPool() {
    int n = 0;
    if (const char* env = std::getenv("SBN_THREADS")) n = std::atoi(env);
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    if (n > 16) n = 16;
    for (int i = 1; i < n; ++i)
      workers_.emplace_back([this, i] { worker_loop(i); });
  }

  void worker_loop(int chunk) {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(int, int)>* body = nullptr;
      int nchunks = 0;
      {
        std::unique_lock<std::mutex> lk(m_);
        cv_start_.wait(lk, [&] { return generation_ != seen; });
        seen = generation_;
        if (stop_) return;
        body = body_;
        nchunks = nchunks_;
      }
      if (body) (*body)(chunk, nchunks);
      {
        std::unique_lock<std::mutex> lk(m_);
        if (--pending_ == 0) cv_done_.notify_all();
      }
    }
  }

  std::vector<std::thread> workers_;
  std::mutex m_;
  std::condition_variable cv_start_, cv_done_;
  const std::function<void(int, int)>* body_ = nullptr;
  int nchunks_ = 0;
  int pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

// Runs body(i) for i in [0, n). Each index is handled by exactly one thread.
template <typename F>
void parallel_for(std::int64_t n, F&& body, std::int64_t grain = 1) {
  if (n <= 0) return;
  ThreadPool& pool = ThreadPool::instance();
  if (pool.size() == 1 || n <= grain) {
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
  pool.run([&](int chunk, int nchunks) {
    std::int64_t lo = n * chunk / nchunks;
    std::int64_t hi = n * (chunk + 1) / nchunks;
    for (std::int64_t i = lo; i < hi; ++i) body(i);
  });
}

}  // namespace sbn
