#include "crackseg/common.hpp"

#include <array>
#include <cstdio>

namespace crackseg {

const char* err_name(Err code) {
  switch (code) {
    case Err::MissingMask: return "MissingMask";
    case Err::EmptyDataset: return "EmptyDataset";
    case Err::BadTargetSize: return "BadTargetSize";
    case Err::DecodeError: return "DecodeError";
    case Err::ShapeMismatch: return "ShapeMismatch";
    case Err::BadResolution: return "BadResolution";
    case Err::BackendUnavailable: return "BackendUnavailable";
    case Err::CorruptWeights: return "CorruptWeights";
    case Err::VersionMismatch: return "VersionMismatch";
    case Err::ChannelMismatch: return "ChannelMismatch";
    case Err::NonBinaryInput: return "NonBinaryInput";
    case Err::EmptyInput: return "EmptyInput";
    case Err::ConfigError: return "ConfigError";
    case Err::NonFiniteLoss: return "NonFiniteLoss";
    case Err::IoError: return "IoError";
  }
  return "UnknownError";
}

uint64_t fnv1a64(const void* data, size_t n, uint64_t state) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    state ^= p[i];
    state *= 1099511628211ull;
  }
  return state;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {
uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace

uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  uint64_t x = a;
  uint64_t h = splitmix64(x);
  x ^= b + 0x9e3779b97f4a7c15ull;
  h ^= splitmix64(x);
  x ^= c + 0xc2b2ae3d27d4eb4full;
  h ^= splitmix64(x);
  return h;
}

}  // namespace crackseg
