// Post-training: freeze layers 1..L-1 and minimize
//
//     J(W) = (1/N) sum_i loss(act_L(W phi(x_i)), y_i) + lambda ||W||_F^2
//
// over the last layer's weights only. When the last layer carries a bias it
// is folded in as an extra weight column on a constant-1 feature, and is then
// part of the regularized parameter.

#pragma once

#include "lastfit/data.hpp"
#include "lastfit/network.hpp"
#include "lastfit/train.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace lastfit {

enum class PostTrainMode { full_batch_backtracking, minibatch };

struct PostTrainConfig {
	double lambda = 1e-3;
	std::size_t iterations = 200;
	PostTrainMode mode = PostTrainMode::full_batch_backtracking;
	std::size_t batch_size = 128;  // minibatch mode
	double lr = 0.05;              // minibatch mode
	double initial_step = 1.0;     // first Armijo trial in full-batch mode
	double grad_tol = 0.0;         // stop once ||grad J||_F <= grad_tol (0: never)
	std::uint64_t seed = 0;
	std::size_t eval_every = 1;
};

/// Features the last layer sees: phi(x), with a trailing 1 column when the
/// last layer has a bias.
Matrix last_layer_features(const Network& net, const Matrix& x);

/// [W | b] when the last layer has a bias, W otherwise.
Matrix last_layer_parameters(const Network& net);

/// Copy of `net` with the last layer replaced by (augmented) parameters.
Network with_last_layer_parameters(const Network& net, const Matrix& params);

/// The convex last-layer problem on a cached feature matrix.
class LastLayerProblem {
public:
	/// lambda >= 0; zero is accepted so the plain empirical risk can be probed.
	LastLayerProblem(Matrix features, Matrix targets, Activation activation, LossSpec loss,
	                 double lambda, std::size_t layer_index = 0);

	/// Builds the feature cache with one pass through the frozen layers.
	static LastLayerProblem from_network(const Network& net, const Dataset& data, double lambda,
	                                     const LossSpec& loss);

	const Matrix& features() const noexcept { return features_; }
	const Matrix& targets() const noexcept { return targets_; }
	double lambda() const noexcept { return lambda_; }

	/// Model output act(F W^T) on the cached features.
	Matrix predict(const Matrix& w) const;

	double objective(const Matrix& w) const;
	/// Objective and its gradient dJ/dW = (1/N) G^T F + 2 lambda W.
	double objective_and_gradient(const Matrix& w, Matrix& grad) const;
	/// Same, restricted to a subset of rows (minibatch estimate).
	double objective_and_gradient(const Matrix& w, const std::vector<Index>& rows, Matrix& grad) const;

	/// Mean loss without the regularizer.
	double empirical_loss(const Matrix& w) const;

private:
	Matrix features_;
	Matrix targets_;
	Activation activation_;
	LossSpec loss_;
	double lambda_;
	std::size_t layer_index_;
};

/// J at the network's current last layer. Throws when lambda <= 0.
double posttrain_objective(const Network& net, const Dataset& data, double lambda, const LossSpec& loss);

struct PostTrainResult {
	Network network;
	MetricsSeries metrics;  // objective recorded at iteration 0 and every eval_every
	bool stalled = false;   // Armijo backtracking exhausted
	std::size_t iterations_run = 0;
	std::size_t cache_build_products = 0;  // frozen-layer products spent building the cache
	std::vector<std::size_t> frozen_products_per_iteration;
	std::vector<std::string> warnings;
};

/// Post-trains the last layer. Layers 1..L-1 of the result are bit-identical
/// to the input. No dropout is applied; the frozen feature map runs once per
/// dataset and every iteration works on the cached features.
PostTrainResult post_train(const Network& net, const Dataset& data, const PostTrainConfig& cfg,
                           const LossSpec& loss, const Dataset* test = nullptr);

std::string_view to_string(PostTrainMode m);
PostTrainMode posttrain_mode_from_string(std::string_view s);

nlohmann::json posttrain_config_to_json(const PostTrainConfig& cfg);
PostTrainConfig posttrain_config_from_json(const nlohmann::json& j, const PostTrainConfig& defaults = {});

}  // namespace lastfit
