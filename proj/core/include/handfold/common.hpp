#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace handfold {

// Library-wide error hierarchy. Exit-code mapping lives in the CLI:
// FormatError/UsageError -> 2, everything else -> 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed or corrupt input files (depth images, manifests, checkpoints).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Point set too degenerate to define an oriented bounding box.
class DegenerateFrameError : public Error {
 public:
  using Error::Error;
};

class EmptyFrameError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff graph (backward twice, detached loss, ...).
class GraphError : public Error {
 public:
  using Error::Error;
};

// SplitMix64. Used to derive independent, replayable RNG streams from a
// base seed plus stream tags, so results do not depend on scheduling.
inline std::uint64_t split_mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  return split_mix64(base ^ split_mix64(tag));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag_a, std::uint64_t tag_b) {
  return derive_seed(derive_seed(base, tag_a), tag_b);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b,
                                 std::uint64_t c) {
  return derive_seed(derive_seed(base, a, b), c);
}

}  // namespace handfold
