#pragma once

// Allocation accounting shared between the library and an optional malloc
// interposer linked into the executable. Without the interposer the
// counters stay at zero and `lofi_memprobe_installed` is 0.
#define LOFI_MEMPROBE_EXPORT __attribute__((visibility("default")))

extern "C" {
LOFI_MEMPROBE_EXPORT extern int lofi_memprobe_installed;
LOFI_MEMPROBE_EXPORT extern int lofi_memprobe_counting;
LOFI_MEMPROBE_EXPORT extern int lofi_memprobe_exclusion_depth;
LOFI_MEMPROBE_EXPORT extern unsigned long long lofi_memprobe_bytes;
LOFI_MEMPROBE_EXPORT extern unsigned long long lofi_memprobe_calls;
}

namespace lofi {

// Allocations made while a scope is alive are not counted. Used around
// buffers that necessarily scale with the image (stored inputs, filter
// transforms, full-image gradients).
class ExclusionScope {
 public:
  ExclusionScope() { ++lofi_memprobe_exclusion_depth; }
  ~ExclusionScope() { --lofi_memprobe_exclusion_depth; }
  ExclusionScope(const ExclusionScope&) = delete;
  ExclusionScope& operator=(const ExclusionScope&) = delete;
};

struct AllocationCount {
  unsigned long long bytes = 0;
  unsigned long long calls = 0;
};

// Starts counting from zero.
void memprobe_begin();
// Stops counting and returns what was seen since memprobe_begin().
AllocationCount memprobe_end();
bool memprobe_available();

}  // namespace lofi
