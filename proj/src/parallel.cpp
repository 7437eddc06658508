#include "stripflow/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace stripflow {

namespace {

int resolve_thread_count() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("STRIPFLOW_THREADS")) {
    char* end = nullptr;
    long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) n = std::min<long>(n, cap);
  }
  return n;
}

void run_chunk(const std::function<void(int64_t, int64_t)>& fn, int64_t n, int chunks, int idx) {
  int64_t per = n / chunks;
  int64_t rem = n % chunks;
  int64_t begin = idx * per + std::min<int64_t>(idx, rem);
  int64_t end = begin + per + (idx < rem ? 1 : 0);
  if (begin < end) fn(begin, end);
}

// Persistent pool; workers park on a condition variable between jobs.
class Pool {
 public:
  Pool() : threads_(resolve_thread_count()) {
    for (int i = 1; i < threads_; ++i) {
      workers_.emplace_back([this, i] { worker_loop(i); });
    }
  }

  ~Pool() {
    {
      std::unique_lock<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  int threads() const { return threads_; }

  void run(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    int chunks = static_cast<int>(std::min<int64_t>(threads_, n));
    if (chunks <= 1) {
      fn(0, n);
      return;
    }
    {
      std::unique_lock<std::mutex> lk(mu_);
      job_fn_ = &fn;
      job_n_ = n;
      job_chunks_ = chunks;
      pending_.store(chunks - 1, std::memory_order_relaxed);
      ++epoch_;
    }
    cv_.notify_all();
    run_chunk(fn, n, chunks, 0);
    while (pending_.load(std::memory_order_acquire) != 0) std::this_thread::yield();
    std::unique_lock<std::mutex> lk(mu_);
    job_fn_ = nullptr;
  }

 private:
  void worker_loop(int idx) {
    uint64_t seen = 0;
    for (;;) {
      const std::function<void(int64_t, int64_t)>* fn = nullptr;
      int64_t n = 0;
      int chunks = 0;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || (job_fn_ && epoch_ != seen && idx < job_chunks_); });
        if (stop_) return;
        seen = epoch_;
        fn = job_fn_;
        n = job_n_;
        chunks = job_chunks_;
      }
      run_chunk(*fn, n, chunks, idx);
      pending_.fetch_sub(1, std::memory_order_release);
    }
  }

  int threads_;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool stop_ = false;
  const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
  int64_t job_n_ = 0;
  int job_chunks_ = 0;
  uint64_t epoch_ = 0;
  std::atomic<int> pending_{0};
};

Pool& pool() {
  static Pool p;
  return p;
}

thread_local bool in_parallel_region = false;

}  // namespace

int thread_count() { return pool().threads(); }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  if (in_parallel_region || pool().threads() <= 1) {
    fn(0, n);
    return;
  }
  in_parallel_region = true;
  pool().run(n, fn);
  in_parallel_region = false;
}

}  // namespace stripflow
