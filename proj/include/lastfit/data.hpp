#pragma once

#include "lastfit/linalg.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace lastfit {

struct Dataset {
	Matrix x;  // N x d_in
	Matrix y;  // N x d_out
	std::vector<std::string> feature_names;
	std::vector<std::string> target_names;
	std::string provenance;

	Index size() const noexcept { return x.rows(); }

	/// Throws unless rows agree, N >= 1 and every entry is finite.
	void validate() const;

	/// Rows in the given order.
	Dataset subset(const std::vector<Index>& rows) const;
};

struct Split {
	Dataset train;
	Dataset test;
	double fraction = 0;
	std::uint64_t seed = 0;
	std::vector<Index> train_indices;
	std::vector<Index> test_indices;
};

/// Teacher weights of the synthetic tanh regression.
struct SyntheticTeacher {
	Matrix w1;  // 10 x 5
	Matrix w2;  // 5 x 1
};

inline constexpr Index kSyntheticInputDim = 10;
inline constexpr Index kSyntheticHiddenDim = 5;

SyntheticTeacher synthetic_teacher(std::uint64_t seed);

/// X ~ U[0,1]^{n x 10}, Y = tanh(X W1) W2 with W1, W2 ~ U[-1,1].
/// The teacher is drawn first, then X, from one seeded stream.
Dataset gen_synthetic(Index n, std::uint64_t seed);

/// Column selectors are header names, or zero-based column numbers.
Dataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& feature_columns,
                 const std::vector<std::string>& target_columns, bool has_header);

/// Writes features then targets with %.17g, header row included.
void write_csv(const Dataset& ds, std::ostream& out);
void write_csv(const Dataset& ds, const std::filesystem::path& path);

/// Seeded permutation, first floor(fraction * N) rows train, rest test.
Split split(const Dataset& ds, double fraction, std::uint64_t seed);

struct Standardizer {
	Vector mean;
	Vector stddev;
	std::vector<bool> passthrough;  // constant columns are left unscaled

	Dataset apply(const Dataset& ds) const;
};

struct StandardizeResult {
	Dataset data;
	Standardizer transform;
	std::vector<std::string> warnings;
};

/// Feature columns to zero mean and unit (population) variance.
StandardizeResult standardize(const Dataset& ds);

nlohmann::json dataset_to_json(const Dataset& ds);
Dataset dataset_from_json(const nlohmann::json& j);

}  // namespace lastfit
