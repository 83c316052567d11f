#include "bepa/rng.hpp"

#include <sstream>

#include "bepa/errors.hpp"

namespace bepa {

std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                          std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = fnv1a(tag);
  h = mix64(h ^ mix64(master));
  h = mix64(h ^ mix64(a + 0x9e3779b97f4a7c15ULL));
  h = mix64(h ^ mix64(b + 0x6a09e667f3bcc909ULL));
  h = mix64(h ^ mix64(c + 0xbb67ae8584caa73bULL));
  return h;
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw UsageError("uniform_int requires n >= 1");
  // Lemire's multiply-shift; bias is negligible for toy-scale n and the
  // mapping is fully deterministic.
  unsigned __int128 wide =
      static_cast<unsigned __int128>(gen_()) * static_cast<unsigned>(n);
  return static_cast<int>(wide >> 64);
}

int Rng::categorical(std::span<const double> probs) {
  if (probs.empty()) throw UsageError("categorical over empty support");
  double total = 0.0;
  for (double p : probs) total += p;
  double u = uniform() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << gen_;
  return os.str();
}

void Rng::deserialize(const std::string& text) {
  std::istringstream is(text);
  is >> gen_;
  if (is.fail()) throw IoError("failed to parse rng state");
}

}  // namespace bepa
