#pragma once

namespace dgcnn {

/// Keeps large allocations in the heap arena instead of per-block mmaps.
/// Training allocates and frees multi-megabyte activation tensors every
/// batch; with glibc defaults each one round-trips through mmap/munmap and
/// page zeroing.  Call once at process start.
void tune_allocator();

}  // namespace dgcnn
