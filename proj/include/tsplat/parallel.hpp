// Copyright Contributors to the tsplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace tsplat {

/// Worker count used by the internally parallel kernels. Defaults to the
/// TSPLAT_THREADS environment variable, else the hardware concurrency.
int num_threads();
void set_num_threads(int n);

/// Runs body(i) for i in [0, n) across the worker pool. Work items are claimed
/// dynamically; callers write to disjoint per-item outputs, so results do not
/// depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

} // namespace tsplat
