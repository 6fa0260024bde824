// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <future>
#include <thread>
#include <vector>

namespace scd {

inline int fanout(int requested, int work) {
    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    int n = requested > 0 ? requested : work;
    return std::max(1, std::min({n, work, hw > 0 ? hw : 1}));
}

// Runs fn(0..n-1); results must be written to index-addressed slots so the
// outcome is independent of scheduling.
template <typename Fn>
void parallel_over(int n, int threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::future<void>> futs;
    futs.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) futs.push_back(std::async(std::launch::async, [&fn, i] { fn(i); }));
    for (auto& f : futs) f.get();
}

}  // namespace scd
