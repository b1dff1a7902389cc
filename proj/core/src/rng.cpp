#include "m2h/rng.hpp"

namespace m2h {
namespace {

// splitmix64 finalizer
std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = mix(base);
  for (std::uint64_t tag : tags) {
    h = mix(h ^ mix(tag + 0x632be59bd9b4e019ULL));
  }
  return h;
}

}  // namespace m2h
