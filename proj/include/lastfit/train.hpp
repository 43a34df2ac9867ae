// Regular training of the whole network: seeded minibatch SGD with optional
// inverted dropout, and a deterministic full-batch gradient descent.

#pragma once

#include "lastfit/data.hpp"
#include "lastfit/network.hpp"
#include "lastfit/rng.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <vector>

namespace lastfit {

class TrainingDiverged : public std::runtime_error {
public:
	explicit TrainingDiverged(std::size_t iteration)
		: std::runtime_error("non-finite loss at iteration " + std::to_string(iteration)),
		  iteration_(iteration) {}

	std::size_t iteration() const noexcept { return iteration_; }

private:
	std::size_t iteration_;
};

struct MetricRecord {
	std::size_t iteration = 0;
	double train_loss = 0;
	std::optional<double> test_loss;
	std::optional<double> train_error;  // classification error rate
	std::optional<double> test_error;
	std::optional<double> objective;    // regularized training objective
};

class MetricsSeries {
public:
	/// Iteration indices must be strictly increasing.
	void push(MetricRecord r);

	const std::vector<MetricRecord>& records() const noexcept { return records_; }
	bool empty() const noexcept { return records_.empty(); }
	const MetricRecord& back() const { return records_.back(); }

	/// One JSON object per line.
	void write_jsonl(std::ostream& out) const;
	/// Header: iteration,train_loss,test_loss,train_error,test_error,objective.
	void write_csv(std::ostream& out) const;

	bool operator==(const MetricsSeries& o) const;

private:
	std::vector<MetricRecord> records_;
};

struct TrainConfig {
	std::size_t iterations = 0;
	std::size_t batch_size = 50;
	double lr0 = 0.05;
	double lr_decay = 1.0;             // lr_t = lr0 * lr_decay^t
	std::vector<double> dropout_keep;  // one per hidden layer; empty disables dropout
	double weight_decay = 0.0;         // adds weight_decay * sum ||W_l||^2 to the loss
	std::uint64_t seed = 0;
	std::size_t eval_every = 50;
	std::size_t start_iteration = 0;   // global index of the first step (resume)

	void validate(const Network& net, Index n_train) const;
};

struct TrainResult {
	Network network;
	MetricsSeries metrics;
	bool stalled = false;  // full_batch_gd only: backtracking exhausted
};

/// Minibatch SGD for `cfg.iterations` steps starting at global step
/// `cfg.start_iteration`. Batches are consecutive windows of a stream of
/// seeded per-epoch permutations, and dropout masks depend only on
/// (seed, step), so resuming from a snapshot reproduces an uninterrupted run.
TrainResult sgd_train(const Network& net, const Dataset& data, const TrainConfig& cfg,
                      const LossSpec& loss, const Dataset* test = nullptr);

struct StepRule {
	double lr = 0.1;            // fixed step, or the first trial step when backtracking
	bool backtracking = false;  // Armijo: f(w - s g) <= f(w) - 1e-4 s ||g||^2
};

/// Full-batch gradient descent on mean loss + weight_decay * sum ||W_l||^2.
/// Records the objective after every iteration. Stops early with
/// `stalled = true` when 50 halvings fail to satisfy the Armijo condition.
TrainResult full_batch_gd(const Network& net, const Dataset& data, StepRule step,
                          std::size_t iterations, const LossSpec& loss, double weight_decay);

/// Mean loss plus weight_decay * sum of squared weights (biases excluded).
double training_objective(const Network& net, const Dataset& data, const LossSpec& loss,
                          double weight_decay);

/// Inverted-dropout mask: entries are 0 or 1/keep.
Matrix dropout_mask(Index rows, Index cols, double keep, Rng& rng);

/// Fraction of rows whose argmax differs from the one-hot target.
double classification_error(const Matrix& output, const Matrix& targets);

/// Sample index at a given position in the concatenation of seeded per-epoch
/// permutations of 0..n-1.
class BatchStream {
public:
	BatchStream(Index n, std::uint64_t seed, std::uint64_t tag);
	std::vector<Index> batch(std::size_t step, std::size_t batch_size);

private:
	const std::vector<Index>& epoch(std::size_t e);

	Index n_;
	std::uint64_t seed_;
	std::uint64_t tag_;
	std::size_t cached_epoch_ = SIZE_MAX;
	std::vector<Index> perm_;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& defaults = {});

}  // namespace lastfit
