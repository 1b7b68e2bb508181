#include "icgm/rng.hpp"

namespace icgm {

namespace {

// FNV-1a over the tag, then splitmix64 finalization.
uint64_t mix(uint64_t h) {
  h ^= h >> 30;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  h *= 0x94d049bb133111ebULL;
  h ^= h >> 31;
  return h;
}

uint64_t hash_tag(std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

uint64_t derive_seed(uint64_t seed, std::string_view tag) {
  return mix(seed ^ hash_tag(tag));
}

uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t index) {
  return mix(derive_seed(seed, tag) + 0x9e3779b97f4a7c15ULL * (index + 1));
}

}  // namespace icgm
