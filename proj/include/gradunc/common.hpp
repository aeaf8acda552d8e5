#ifndef GRADUNC_COMMON_HPP_
#define GRADUNC_COMMON_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gradunc {

// Malformed or out-of-contract input. The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A property the library guarantees did not hold. The CLI maps this to 3.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

double sigmoid(double x);
double logit(double p);

// SplitMix64 finalizer; used to derive independent streams from one seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// FNV-1a over the bytes of `s`.
std::uint64_t hash_string(std::string_view s);

// Deterministic generator whose outputs do not depend on the standard
// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  bool bernoulli(double p);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);
// Strict parse; throws ValidationError on trailing garbage or non-finite.
double parse_double(std::string_view s);

// Runs fn(0..n-1) on up to `threads` workers. Each index is handled once;
// the exception of the lowest failing index is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace gradunc

#endif  // GRADUNC_COMMON_HPP_
