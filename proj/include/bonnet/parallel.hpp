// Copyright (c) 2026 The Bonnet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>

namespace bonnet {

/// Splits [begin, end) into at most `threads` contiguous chunks and runs
/// `body(lo, hi)` on each, the first chunk on the calling thread. Callers
/// must make each index's result independent of the chunking so the output
/// is identical for every thread count.
void parallel_for(std::int64_t begin, std::int64_t end, int threads,
                  const std::function<void(std::int64_t, std::int64_t)>& body);

/// std::thread::hardware_concurrency() with a floor of 1.
int hardware_threads();

}  // namespace bonnet
