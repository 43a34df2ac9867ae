// Dense feedforward networks: forward evaluation, the feature map of the
// frozen lower layers, losses, and exact reverse-mode gradients.
//
// Weight convention: layer l maps a batch X (batch x in) to
// act(X * W^T + 1 b^T), with W stored as out x in. A single input x is thus
// mapped to act(W x + b), the column-vector form.

#pragma once

#include "lastfit/linalg.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lastfit {

enum class Activation { identity, tanh, relu, softmax };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

struct LayerSpec {
	Index input_dim = 0;
	Index output_dim = 0;
	Activation activation = Activation::identity;
	bool has_bias = false;

	bool operator==(const LayerSpec&) const = default;
};

struct Layer {
	LayerSpec spec;
	Matrix weights;  // output_dim x input_dim
	Vector bias;     // output_dim entries when spec.has_bias, else empty
};

enum class LossKind { squared_error, cross_entropy };

std::string_view to_string(LossKind k);
LossKind loss_from_string(std::string_view s);

struct LossSpec {
	LossKind kind = LossKind::squared_error;
};

/// Throws unless the loss pairs with `last` (squared_error with identity,
/// cross_entropy with softmax).
void require_loss_pairing(const LossSpec& loss, Activation last);

class Network {
public:
	/// Validates shapes, layer chaining and activation placement.
	explicit Network(std::vector<Layer> layers);

	/// Scaled-uniform initialization: U[-a, a], a = sqrt(6 / (fan_in + fan_out)),
	/// zero biases.
	static Network initialize(const std::vector<LayerSpec>& specs, std::uint64_t seed);

	std::size_t depth() const noexcept { return layers_.size(); }
	Index input_dim() const { return layers_.front().spec.input_dim; }
	Index output_dim() const { return layers_.back().spec.output_dim; }
	/// Width of the last layer's input, i.e. the feature dimension.
	Index feature_dim() const { return layers_.back().spec.input_dim; }

	const std::vector<Layer>& layers() const noexcept { return layers_; }
	const Layer& layer(std::size_t l) const { return layers_.at(l); }
	const Layer& last() const { return layers_.back(); }

	/// Replaces the parameters of layer l. Shapes must match the spec.
	void set_parameters(std::size_t l, Matrix weights, Vector bias = Vector());

	/// Mutable access for in-place optimizers. Callers keep shapes intact.
	Matrix& weights(std::size_t l) { return layers_.at(l).weights; }
	Vector& bias(std::size_t l) { return layers_.at(l).bias; }

	/// Bitwise equality of specs and all parameters.
	friend bool operator==(const Network& a, const Network& b);

private:
	void validate() const;

	std::vector<Layer> layers_;
};

struct ForwardTrace {
	std::vector<Matrix> pre;   // affine outputs per layer
	std::vector<Matrix> post;  // activations per layer (post[L-1] is the output)

	const Matrix& output() const { return post.back(); }
};

/// Inverted-dropout masks for hidden layers, already scaled by 1/keep.
/// masks[l] has the shape of post[l]; an empty matrix means no dropout.
using DropoutMasks = std::vector<Matrix>;

Matrix apply_activation(Activation a, const Matrix& z);
Matrix softmax_rows(const Matrix& z);

ForwardTrace forward(const Network& net, const Matrix& x);
ForwardTrace forward(const Network& net, const Matrix& x, const DropoutMasks* masks);

/// Output of layer L-1 (the input itself when the network has one layer).
Matrix feature_map(const Network& net, const Matrix& x);

/// Applies the last layer to precomputed features.
Matrix apply_last_layer(const Network& net, const Matrix& features);

/// Batch-mean loss. Squared error is ||out - y||^2 per sample with no
/// per-dimension averaging; cross entropy is -log(max(p_true, 1e-12)).
double loss_eval(const LossSpec& loss, const Matrix& output, const Matrix& targets);

/// d(batch-mean loss)/d(pre-activation of the last layer), given the output.
Matrix output_delta(const LossSpec& loss, const Matrix& output, const Matrix& targets);

struct Gradients {
	std::vector<Matrix> weights;
	std::vector<Vector> bias;  // empty vectors for bias-free layers
	double loss = 0;           // batch-mean loss at the evaluated point
};

Gradients backprop(const Network& net, const Matrix& x, const Matrix& y, const LossSpec& loss);
Gradients backprop(const Network& net, const Matrix& x, const Matrix& y, const LossSpec& loss,
                   const DropoutMasks* masks);

/// Per-thread count of layer matrix products, indexed by layer. Forward and
/// backward passes increment the slot of the layer they touch; post-training
/// uses it to show that iterations never reach the frozen layers.
class OpProbe {
public:
	void reset() { counts_.clear(); }
	void record(std::size_t layer) {
		if (counts_.size() <= layer) counts_.resize(layer + 1, 0);
		++counts_[layer];
	}
	std::size_t count(std::size_t layer) const {
		return layer < counts_.size() ? counts_[layer] : 0;
	}
	/// Products recorded for layers [0, end).
	std::size_t total_below(std::size_t end) const {
		std::size_t sum = 0;
		for (std::size_t l = 0; l < end && l < counts_.size(); ++l) sum += counts_[l];
		return sum;
	}

private:
	std::vector<std::size_t> counts_;
};

OpProbe& op_probe();

nlohmann::json network_to_json(const Network& net);
Network network_from_json(const nlohmann::json& j);

inline constexpr int kNetworkFormatVersion = 1;

}  // namespace lastfit
