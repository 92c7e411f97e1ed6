#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "lmap/error.hpp"

namespace lmap {

// WorkerPool
//
// Fixed set of threads that execute index-range chunks of a data-parallel
// section. Every chunk writes only to its own output slots, so results never
// depend on the number of workers or on scheduling. The calling thread runs
// chunk 0 itself and the section joins before parallel_for returns.
class WorkerPool {

  public:

  explicit WorkerPool(std::size_t workers = 1) : _workers{std::max<std::size_t>(1, workers)} {
    for (std::size_t i = 1; i < _workers; ++i) {
      _threads.emplace_back([this, i] { _worker_loop(i); });
    }
  }

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  ~WorkerPool() {
    {
      std::lock_guard lock(_mutex);
      _shutdown = true;
    }
    _wake.notify_all();
    for (auto& t : _threads) {
      t.join();
    }
  }

  std::size_t size() const noexcept { return _workers; }

  /// Calls body(begin, end) over disjoint chunks covering [0, count).
  void parallel_for(std::size_t count, const std::function<void(std::size_t, std::size_t)>& body) {
    if (count == 0) {
      return;
    }
    if (_workers == 1 || count == 1) {
      body(0, count);
      return;
    }

    const std::size_t chunks = std::min(_workers, count);
    {
      std::lock_guard lock(_mutex);
      _body = &body;
      _count = count;
      _chunks = chunks;
      _pending = chunks - 1;
      _error = nullptr;
      ++_generation;
    }
    _wake.notify_all();

    std::exception_ptr local_error;
    try {
      _run_chunk(0);
    } catch (...) {
      local_error = std::current_exception();
    }

    std::unique_lock lock(_mutex);
    _done.wait(lock, [this] { return _pending == 0; });
    _body = nullptr;
    if (local_error) {
      std::rethrow_exception(local_error);
    }
    if (_error) {
      std::rethrow_exception(_error);
    }
  }

  private:

  void _run_chunk(std::size_t chunk) {
    const std::size_t begin = _count * chunk / _chunks;
    const std::size_t end = _count * (chunk + 1) / _chunks;
    if (begin < end) {
      (*_body)(begin, end);
    }
  }

  void _worker_loop(std::size_t index) {
    std::size_t seen = 0;
    for (;;) {
      std::unique_lock lock(_mutex);
      _wake.wait(lock, [&] { return _shutdown || _generation != seen; });
      if (_shutdown) {
        return;
      }
      seen = _generation;
      if (index >= _chunks) {
        continue;
      }
      lock.unlock();

      std::exception_ptr error;
      try {
        _run_chunk(index);
      } catch (...) {
        error = std::current_exception();
      }

      lock.lock();
      if (error && !_error) {
        _error = error;
      }
      if (--_pending == 0) {
        _done.notify_one();
      }
    }
  }

  std::size_t _workers;
  std::vector<std::thread> _threads;
  std::mutex _mutex;
  std::condition_variable _wake;
  std::condition_variable _done;
  const std::function<void(std::size_t, std::size_t)>* _body {nullptr};
  std::size_t _count {0};
  std::size_t _chunks {0};
  std::size_t _pending {0};
  std::size_t _generation {0};
  std::exception_ptr _error;
  bool _shutdown {false};
};

/// Runs sequentially when pool is null.
inline void parallel_for(WorkerPool* pool, std::size_t count,
                         const std::function<void(std::size_t, std::size_t)>& body) {
  if (pool == nullptr) {
    if (count > 0) {
      body(0, count);
    }
    return;
  }
  pool->parallel_for(count, body);
}

}  // namespace lmap
