#ifndef SMS_RANDOM_HPP
#define SMS_RANDOM_HPP

#include <cstdint>
#include <random>

#include "sms/tensor.hpp"

namespace sms {

/// splitmix64 mix; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double normal() { return normal_(eng_); }
  double uniform() { return uniform_(eng_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::int64_t index(std::int64_t n) {
    return static_cast<std::int64_t>(eng_() % static_cast<std::uint64_t>(n));
  }

  /// Standard normal real and imaginary parts (variance 1 each), so the
  /// squared norm counts real degrees of freedom.
  cd cnormal() { return cd(normal(), normal()); }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

inline Tensor4 gaussian_tensor(const Dims4& dims, Domain domain, Rng& rng) {
  Tensor4 t(dims, domain);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.cnormal();
  return t;
}

}  // namespace sms

#endif  // SMS_RANDOM_HPP
