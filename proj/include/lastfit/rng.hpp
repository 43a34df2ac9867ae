#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

namespace lastfit {

/// Seeded 64-bit generator: std::mt19937_64 with hand-written mappings to
/// reals and bounded integers, so streams do not depend on the standard
/// library's distribution implementations. Fixed for snapshot stability.
class Rng {
public:
	explicit Rng(std::uint64_t seed) : engine_(seed) {}

	/// Independent stream derived from (seed, tag, index).
	static Rng stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
		std::uint64_t s = splitmix64(seed);
		s = splitmix64(s ^ (tag * 0x9e3779b97f4a7c15ULL));
		s = splitmix64(s ^ (index + 0xbf58476d1ce4e5b9ULL));
		return Rng(s);
	}

	std::uint64_t next() { return engine_(); }

	/// Uniform on [0, 1) with 53 random bits.
	double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

	double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

	/// Uniform integer on [0, n) by rejection.
	std::uint64_t below(std::uint64_t n) {
		if (n == 0) throw std::invalid_argument("Rng::below: empty range");
		const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
		std::uint64_t v;
		do {
			v = engine_();
		} while (v >= limit);
		return v % n;
	}

	bool bernoulli(double p) { return uniform() < p; }

	static std::uint64_t splitmix64(std::uint64_t x) {
		x += 0x9e3779b97f4a7c15ULL;
		x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
		x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
		return x ^ (x >> 31);
	}

private:
	std::mt19937_64 engine_;
};

/// Stream tags, one per consumer, so streams never overlap.
namespace rng_tag {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t batch_order = 2;
inline constexpr std::uint64_t dropout = 3;
inline constexpr std::uint64_t split = 4;
inline constexpr std::uint64_t synthetic = 5;
inline constexpr std::uint64_t posttrain_batches = 6;
}  // namespace rng_tag

/// Fisher-Yates permutation of 0..n-1.
template <typename IndexT>
void shuffle_indices(std::vector<IndexT>& v, Rng& rng) {
	for (std::size_t i = v.size(); i > 1; --i) {
		const auto j = static_cast<std::size_t>(rng.below(i));
		std::swap(v[i - 1], v[j]);
	}
}

}  // namespace lastfit
