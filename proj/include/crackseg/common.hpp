#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace crackseg {

enum class Err {
  MissingMask,
  EmptyDataset,
  BadTargetSize,
  DecodeError,
  ShapeMismatch,
  BadResolution,
  BackendUnavailable,
  CorruptWeights,
  VersionMismatch,
  ChannelMismatch,
  NonBinaryInput,
  EmptyInput,
  ConfigError,
  NonFiniteLoss,
  IoError,
};

const char* err_name(Err code);

/// Single exception type carrying a machine-checkable error code.
class Error : public std::runtime_error {
 public:
  Error(Err code, const std::string& what)
      : std::runtime_error(std::string(err_name(code)) + ": " + what), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& what) { throw Error(code, what); }

// FNV-1a over raw bytes; used for parameter digests.
uint64_t fnv1a64(const void* data, size_t n, uint64_t state = 14695981039346656037ull);
std::string hex64(uint64_t v);

// splitmix64-based mixing for derived seeds (pure function of its inputs).
uint64_t mix_seed(uint64_t a, uint64_t b = 0, uint64_t c = 0);

}  // namespace crackseg
