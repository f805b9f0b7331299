#include "lofi/memprobe.hpp"

extern "C" {
int lofi_memprobe_installed = 0;
int lofi_memprobe_counting = 0;
int lofi_memprobe_exclusion_depth = 0;
unsigned long long lofi_memprobe_bytes = 0;
unsigned long long lofi_memprobe_calls = 0;
}

namespace lofi {

void memprobe_begin() {
  lofi_memprobe_bytes = 0;
  lofi_memprobe_calls = 0;
  lofi_memprobe_counting = 1;
}

AllocationCount memprobe_end() {
  lofi_memprobe_counting = 0;
  return {lofi_memprobe_bytes, lofi_memprobe_calls};
}

bool memprobe_available() { return lofi_memprobe_installed != 0; }

}  // namespace lofi
