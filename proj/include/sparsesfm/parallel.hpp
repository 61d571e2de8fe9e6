// Copyright 2026 The sparsesfm Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace sparsesfm {

inline constexpr const char* kNumThreadsEnv = "SPARSESFM_NUM_THREADS";

/// Worker count: SPARSESFM_NUM_THREADS when set to a positive integer,
/// otherwise the hardware concurrency.
inline int DefaultNumThreads() {
  if (const char* env = std::getenv(kNumThreadsEnv)) {
    char* end = nullptr;
    const long value = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && value > 0) {
      return static_cast<int>(value);
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [begin, end) on up to num_threads workers with a static
/// contiguous partition. fn must only write state owned by index i; under
/// that contract the result does not depend on the worker count.
template <typename Fn>
void ParallelFor(int begin, int end, int num_threads, Fn&& fn) {
  const int count = end - begin;
  if (count <= 0) {
    return;
  }
  const int workers = std::clamp(num_threads, 1, count);
  // Below this size thread start-up dominates.
  if (workers == 1 || count < 256) {
    for (int i = begin; i < end; ++i) {
      fn(i);
    }
    return;
  }

  // One slot per worker so the rethrown failure is the lowest worker's.
  std::vector<std::exception_ptr> failures(workers);
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    const int lo = begin + static_cast<int>(static_cast<long long>(count) * w / workers);
    const int hi =
        begin + static_cast<int>(static_cast<long long>(count) * (w + 1) / workers);
    threads.emplace_back([&, w, lo, hi] {
      try {
        for (int i = lo; i < hi; ++i) {
          fn(i);
        }
      } catch (...) {
        failures[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) {
    t.join();
  }
  for (const auto& failure : failures) {
    if (failure) {
      std::rethrow_exception(failure);
    }
  }
}

}  // namespace sparsesfm
