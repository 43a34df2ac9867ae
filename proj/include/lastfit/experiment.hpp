// Experiment harness: train to each checkpoint on one seeded trajectory and
// compare three last layers on held-out data (as trained, post-trained, and
// the closed-form kernel ridge optimum).

#pragma once

#include "lastfit/data.hpp"
#include "lastfit/kernel.hpp"
#include "lastfit/network.hpp"
#include "lastfit/posttrain.hpp"
#include "lastfit/train.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace lastfit {

struct DatasetSource {
	enum class Kind { synthetic, csv };
	Kind kind = Kind::synthetic;
	Index n = 10000;
	std::uint64_t seed = 0;
	std::filesystem::path path;
	std::vector<std::string> features;
	std::vector<std::string> targets;
	bool has_header = true;
};

struct LayerDesign {
	Index units = 1;
	Activation activation = Activation::identity;
	bool bias = false;
};

enum class Metric { rmse, classification_error };

struct ExperimentConfig {
	DatasetSource dataset;
	double split_fraction = 0.7;
	std::uint64_t split_seed = 0;
	bool standardize = false;
	LossSpec loss;
	Metric metric = Metric::rmse;
	std::vector<LayerDesign> network;
	TrainConfig train;
	PostTrainConfig posttrain;
	std::vector<std::size_t> checkpoints{250, 500, 750};
	std::vector<std::uint64_t> seeds{1};
	KrrConvention convention = KrrConvention::objective_consistent;

	/// Checkpoints strictly increasing, none beyond train.iterations, etc.
	void validate() const;
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct ComparisonRow {
	std::size_t iterations = 0;
	double classic = 0;
	double posttrain = 0;
	std::optional<double> optimal;  // empty when no closed form exists (softmax runs)
	std::uint64_t seed = 0;
};

/// Per-phase metric streams emitted while the experiment runs.
struct PhaseLog {
	std::uint64_t seed = 0;
	std::size_t checkpoint = 0;
	std::string phase;  // "train" or "posttrain"
	MetricsSeries metrics;
};

/// Dataset after loading, splitting and optional standardization.
Split prepare_data(const ExperimentConfig& cfg, std::vector<std::string>* warnings = nullptr);

std::vector<LayerSpec> layer_specs(const ExperimentConfig& cfg, Index input_dim);

/// Rows ordered by (seed, checkpoint).
std::vector<ComparisonRow> run_experiment(const ExperimentConfig& cfg,
                                          std::vector<PhaseLog>* log = nullptr);

/// Test metric of a network: RMSE = sqrt(mean ||y_hat - y||^2), or error rate.
double evaluate_metric(Metric metric, const Network& net, const Dataset& test);

/// Per-checkpoint medians across seeds (seed field set to 0).
std::vector<ComparisonRow> median_rows(const std::vector<ComparisonRow>& rows);

/// Header: iterations,classic,posttrain,optimal,seed
void write_comparison_csv(const std::vector<ComparisonRow>& rows, std::ostream& out);
void write_phase_logs_jsonl(const std::vector<PhaseLog>& logs, std::ostream& out);

std::string_view to_string(Metric m);
Metric metric_from_string(std::string_view s);

// ---------------------------------------------------------------------------
// Invariant suite

struct CheckResult {
	std::string name;
	bool passed = false;
	double max_error = 0;
	double tolerance = 0;
	std::size_t cases = 0;
	std::string detail;
};

struct CheckReport {
	std::uint64_t seed = 0;
	std::vector<CheckResult> results;

	bool passed() const;
	nlohmann::json to_json() const;
};

using GradientFn =
	std::function<Gradients(const Network&, const Matrix&, const Matrix&, const LossSpec&)>;

/// Backprop against central differences (step 1e-5) on `count` random
/// networks of up to 3 layers, widths <= 8, batches <= 16, both losses.
/// Error per entry: |a - b| / max(|a|, |b|, 1e-4).
CheckResult check_gradients(std::uint64_t seed, std::size_t count, const GradientFn& gradient);

/// Kronecker Hessian vs finite differences (step 1e-4), its smallest
/// eigenvalue, and the diagonal-dominance identity, over random instances
/// with M <= 6 classes and N <= 8 features.
std::vector<CheckResult> check_softmax_hessians(std::uint64_t seed, std::size_t count);

CheckResult check_softmax_rows(std::uint64_t seed, std::size_t count);
CheckResult check_push_through(std::uint64_t seed, std::size_t count);
CheckResult check_representer(std::uint64_t seed, std::size_t count);
CheckResult check_rkhs_bound(std::uint64_t seed, std::size_t count);
CheckResult check_spd_residual(std::uint64_t seed, std::size_t count);
CheckResult check_gram_psd(std::uint64_t seed, std::size_t count);
CheckResult check_posttrain_monotone(std::uint64_t seed, std::size_t count);
CheckResult check_midpoint_convexity(std::uint64_t seed, std::size_t count);

/// Runs every check above with its default case count.
CheckReport check_suite(std::uint64_t seed);

struct ConvexityStats {
	std::size_t instances = 0;
	double min_eigenvalue = 0;   // smallest over all instances
	double mean_min_eigenvalue = 0;
	double max_min_eigenvalue = 0;
	double max_dominance_gap = 0;
};

ConvexityStats convexity_stats(std::uint64_t seed, std::size_t count);

}  // namespace lastfit
