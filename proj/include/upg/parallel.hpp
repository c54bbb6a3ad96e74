#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <map>
#include <mutex>
#include <thread>
#include <vector>

namespace upg {

// Thread count from UPG_THREADS, else hardware concurrency. Always >= 1.
inline int default_thread_count() {
  if (const char* env = std::getenv("UPG_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : int(hc);
}

// Runs body(begin, end) over a partition of [0, n). The body must only write
// to disjoint per-index state.
inline void parallel_for(std::size_t n, int n_threads,
                         const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  if (n_threads <= 1 || n == 1) {
    body(0, n);
    return;
  }
  std::size_t grain = std::max<std::size_t>(1, n / (std::size_t(n_threads) * 8));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t begin = next.fetch_add(grain);
      if (begin >= n) break;
      body(begin, std::min(begin + grain, n));
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(n_threads));
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

// Deterministic parallel reduction. The index range is cut into fixed-size
// chunks; each chunk is accumulated sequentially in index order, and chunk
// partials are merged into the total strictly in chunk order. The reduction
// tree therefore does not depend on the thread count and the result is
// bit-identical for n_threads = 1, 2, ....
//
//   make()            -> Acc (zero accumulator)
//   body(acc, i)      accumulate index i
//   merge(total, acc) fold a chunk partial into the running total
template <class Acc, class MakeAcc, class Body, class Merge>
Acc ordered_chunk_reduce(std::size_t n, std::size_t chunk_size, int n_threads,
                         MakeAcc make, Body body, Merge merge) {
  Acc total = make();
  if (n == 0) return total;
  chunk_size = std::max<std::size_t>(1, chunk_size);
  std::size_t n_chunks = (n + chunk_size - 1) / chunk_size;

  if (n_threads <= 1 || n_chunks == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) {
      Acc part = make();
      std::size_t end = std::min((c + 1) * chunk_size, n);
      for (std::size_t i = c * chunk_size; i < end; ++i) body(part, i);
      merge(total, part);
    }
    return total;
  }

  std::atomic<std::size_t> next{0};
  std::mutex m;
  std::map<std::size_t, Acc> pending;
  std::size_t merge_next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t c = next.fetch_add(1);
      if (c >= n_chunks) break;
      Acc part = make();
      std::size_t end = std::min((c + 1) * chunk_size, n);
      for (std::size_t i = c * chunk_size; i < end; ++i) body(part, i);
      std::lock_guard<std::mutex> lock(m);
      pending.emplace(c, std::move(part));
      while (!pending.empty() && pending.begin()->first == merge_next) {
        merge(total, pending.begin()->second);
        pending.erase(pending.begin());
        ++merge_next;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return total;
}

}  // namespace upg
