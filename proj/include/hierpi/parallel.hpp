#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace hierpi {

/// Worker count: hardware concurrency, capped by HIERPI_THREADS when set.
inline int default_workers() {
  int workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("HIERPI_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap >= 1) workers = std::min(workers, cap);
    } catch (const std::exception&) {
      // unparsable value: ignore the cap
    }
  }
  return workers;
}

/// Runs body(begin, end) over contiguous chunks of [0, n). Chunks only write
/// to their own index range, so results do not depend on the worker count.
/// The exception from the lowest failing chunk is rethrown.
template <typename Body>
void parallel_for(std::size_t n, int workers, Body&& body) {
  if (n == 0) return;
  const std::size_t chunks = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (chunks == 1) {
    body(std::size_t{0}, n);
    return;
  }
  std::vector<std::exception_ptr> errors(chunks);
  {
    std::vector<std::jthread> threads;
    threads.reserve(chunks - 1);
    auto run = [&](std::size_t c) {
      const std::size_t begin = n * c / chunks;
      const std::size_t end = n * (c + 1) / chunks;
      try {
        body(begin, end);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    };
    for (std::size_t c = 1; c < chunks; ++c) threads.emplace_back(run, c);
    run(0);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace hierpi
