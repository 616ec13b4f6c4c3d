#ifndef CCMT_RUNTIME_HPP_
#define CCMT_RUNTIME_HPP_

namespace ccmt {

/// Keeps large per-batch buffers on the heap instead of fresh mmap'd pages
/// (glibc only; no-op elsewhere). Idempotent. train() calls it.
void tune_allocator();

}  // namespace ccmt

#endif  // CCMT_RUNTIME_HPP_
