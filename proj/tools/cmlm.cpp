#include <iostream>
#include <string>
#include <vector>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "cmlm/cli.hpp"

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Activation buffers are freed and reallocated every step; keep them on
  // the heap instead of paying for mmap/munmap each time.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  cmlm::configure_logging();
  return cmlm::dispatch(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
