#include "lastfit/network.hpp"

#include "lastfit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lastfit {

namespace {

constexpr double kProbabilityFloor = 1e-12;
constexpr double kSimplexTolerance = 1e-6;

void require_same_shape(const Matrix& a, const Matrix& b, const char* who) {
	if (a.rows() != b.rows() || a.cols() != b.cols())
		throw std::invalid_argument(std::string(who) + ": shape mismatch " + shape_string(a) +
		                            " vs " + shape_string(b));
}

Index one_hot_class(const Matrix& targets, Index row) {
	Index cls = -1;
	for (Index j = 0; j < targets.cols(); ++j) {
		const double t = targets(row, j);
		if (t == 1.0) {
			if (cls != -1) return -1;
			cls = j;
		} else if (t != 0.0) {
			return -1;
		}
	}
	return cls;
}

// Derivative of a hidden activation, evaluated from the pre-activation.
Matrix activation_derivative(Activation a, const Matrix& z) {
	switch (a) {
	case Activation::identity:
		return Matrix::Ones(z.rows(), z.cols());
	case Activation::tanh:
		return z.unaryExpr([](double v) {
			const double t = std::tanh(v);
			return 1.0 - t * t;
		});
	case Activation::relu:
		// relu'(0) := 0
		return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
	case Activation::softmax:
		break;
	}
	throw std::logic_error("activation_derivative: softmax is only valid on the last layer");
}

Matrix affine(const Layer& layer, const Matrix& in) {
	Matrix z = matmul(in, layer.weights.transpose());
	if (layer.spec.has_bias) z.rowwise() += layer.bias.transpose();
	return z;
}

}  // namespace

std::string_view to_string(Activation a) {
	switch (a) {
	case Activation::identity: return "identity";
	case Activation::tanh: return "tanh";
	case Activation::relu: return "relu";
	case Activation::softmax: return "softmax";
	}
	return "?";
}

Activation activation_from_string(std::string_view s) {
	if (s == "identity" || s == "linear") return Activation::identity;
	if (s == "tanh") return Activation::tanh;
	if (s == "relu") return Activation::relu;
	if (s == "softmax") return Activation::softmax;
	throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

std::string_view to_string(LossKind k) {
	return k == LossKind::squared_error ? "squared_error" : "cross_entropy";
}

LossKind loss_from_string(std::string_view s) {
	if (s == "squared_error") return LossKind::squared_error;
	if (s == "cross_entropy") return LossKind::cross_entropy;
	throw std::invalid_argument("unknown loss '" + std::string(s) + "'");
}

void require_loss_pairing(const LossSpec& loss, Activation last) {
	const bool ok = (loss.kind == LossKind::squared_error && last == Activation::identity) ||
	                (loss.kind == LossKind::cross_entropy && last == Activation::softmax);
	if (!ok)
		throw std::invalid_argument("loss " + std::string(to_string(loss.kind)) +
		                            " cannot pair with last activation " +
		                            std::string(to_string(last)));
}

Network::Network(std::vector<Layer> layers) : layers_(std::move(layers)) { validate(); }

void Network::validate() const {
	if (layers_.empty()) throw std::invalid_argument("Network: at least one layer is required");
	for (std::size_t l = 0; l < layers_.size(); ++l) {
		const auto& layer = layers_[l];
		const auto& s = layer.spec;
		const std::string where = "Network: layer " + std::to_string(l);
		if (s.input_dim < 1 || s.output_dim < 1) throw std::invalid_argument(where + " has a zero dimension");
		if (layer.weights.rows() != s.output_dim || layer.weights.cols() != s.input_dim)
			throw std::invalid_argument(where + " weights are " + shape_string(layer.weights) +
			                            ", expected " + shape_string(s.output_dim, s.input_dim));
		const Index bias_len = s.has_bias ? s.output_dim : 0;
		if (layer.bias.size() != bias_len)
			throw std::invalid_argument(where + " bias has " + std::to_string(layer.bias.size()) +
			                            " entries, expected " + std::to_string(bias_len));
		if (l + 1 < layers_.size() && s.output_dim != layers_[l + 1].spec.input_dim)
			throw std::invalid_argument(where + " output does not chain into the next layer");
		if (s.activation == Activation::softmax && l + 1 != layers_.size())
			throw std::invalid_argument(where + ": softmax is only allowed on the last layer");
		if (!layer.weights.allFinite() || !layer.bias.allFinite())
			throw std::invalid_argument(where + " has non-finite parameters");
	}
}

Network Network::initialize(const std::vector<LayerSpec>& specs, std::uint64_t seed) {
	Rng rng = Rng::stream(seed, rng_tag::init);
	std::vector<Layer> layers;
	layers.reserve(specs.size());
	for (const auto& s : specs) {
		if (s.input_dim < 1 || s.output_dim < 1)
			throw std::invalid_argument("Network::initialize: zero layer dimension");
		const double a = std::sqrt(6.0 / static_cast<double>(s.input_dim + s.output_dim));
		Layer layer{s, Matrix(s.output_dim, s.input_dim), Vector()};
		for (Index i = 0; i < s.output_dim; ++i)
			for (Index j = 0; j < s.input_dim; ++j) layer.weights(i, j) = rng.uniform(-a, a);
		if (s.has_bias) layer.bias = Vector::Zero(s.output_dim);
		layers.push_back(std::move(layer));
	}
	return Network(std::move(layers));
}

void Network::set_parameters(std::size_t l, Matrix weights, Vector bias) {
	auto& layer = layers_.at(l);
	const auto& s = layer.spec;
	if (weights.rows() != s.output_dim || weights.cols() != s.input_dim)
		throw std::invalid_argument("Network::set_parameters: weights are " + shape_string(weights) +
		                            ", expected " + shape_string(s.output_dim, s.input_dim));
	if (bias.size() != (s.has_bias ? s.output_dim : 0))
		throw std::invalid_argument("Network::set_parameters: bias length mismatch");
	layer.weights = std::move(weights);
	layer.bias = std::move(bias);
}

bool operator==(const Network& a, const Network& b) {
	if (a.depth() != b.depth()) return false;
	for (std::size_t l = 0; l < a.depth(); ++l) {
		const auto& la = a.layers_[l];
		const auto& lb = b.layers_[l];
		if (!(la.spec == lb.spec)) return false;
		if (la.weights.size() != lb.weights.size() || la.bias.size() != lb.bias.size()) return false;
		if (!std::equal(la.weights.data(), la.weights.data() + la.weights.size(), lb.weights.data()))
			return false;
		if (!std::equal(la.bias.data(), la.bias.data() + la.bias.size(), lb.bias.data())) return false;
	}
	return true;
}

Matrix softmax_rows(const Matrix& z) {
	Matrix p(z.rows(), z.cols());
	for (Index i = 0; i < z.rows(); ++i) {
		const double m = z.row(i).maxCoeff();
		double sum = 0;
		for (Index j = 0; j < z.cols(); ++j) {
			p(i, j) = std::exp(z(i, j) - m);
			sum += p(i, j);
		}
		for (Index j = 0; j < z.cols(); ++j) p(i, j) /= sum;
	}
	return p;
}

Matrix apply_activation(Activation a, const Matrix& z) {
	switch (a) {
	case Activation::identity: return z;
	case Activation::tanh: return z.unaryExpr([](double v) { return std::tanh(v); });
	case Activation::relu: return z.unaryExpr([](double v) { return v > 0.0 ? v : 0.0; });
	case Activation::softmax: return softmax_rows(z);
	}
	throw std::logic_error("apply_activation: unknown activation");
}

namespace {

// Runs layers [0, count) and fills the trace.
void forward_layers(const Network& net, const Matrix& x, std::size_t count,
                    const DropoutMasks* masks, ForwardTrace& trace) {
	if (x.cols() != net.input_dim())
		throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) +
		                            " columns, network expects " + std::to_string(net.input_dim()));
	trace.pre.reserve(count);
	trace.post.reserve(count);
	const std::size_t last = net.depth() - 1;
	for (std::size_t l = 0; l < count; ++l) {
		const Layer& layer = net.layer(l);
		const Matrix& in = l == 0 ? x : trace.post.back();
		Matrix z = affine(layer, in);
		op_probe().record(l);
		Matrix a = apply_activation(layer.spec.activation, z);
		if (masks && l < last && l < masks->size() && (*masks)[l].size() != 0) {
			const Matrix& m = (*masks)[l];
			if (m.rows() != a.rows() || m.cols() != a.cols())
				throw std::invalid_argument("forward: dropout mask shape mismatch at layer " +
				                            std::to_string(l));
			a = a.cwiseProduct(m);
		}
		trace.pre.push_back(std::move(z));
		trace.post.push_back(std::move(a));
	}
}

}  // namespace

ForwardTrace forward(const Network& net, const Matrix& x) { return forward(net, x, nullptr); }

ForwardTrace forward(const Network& net, const Matrix& x, const DropoutMasks* masks) {
	ForwardTrace trace;
	forward_layers(net, x, net.depth(), masks, trace);
	return trace;
}

Matrix feature_map(const Network& net, const Matrix& x) {
	if (net.depth() == 1) {
		if (x.cols() != net.input_dim())
			throw std::invalid_argument("feature_map: input has " + std::to_string(x.cols()) +
			                            " columns, network expects " + std::to_string(net.input_dim()));
		return x;
	}
	ForwardTrace trace;
	forward_layers(net, x, net.depth() - 1, nullptr, trace);
	return std::move(trace.post.back());
}

Matrix apply_last_layer(const Network& net, const Matrix& features) {
	const Layer& last = net.last();
	if (features.cols() != last.spec.input_dim)
		throw std::invalid_argument("apply_last_layer: features have " +
		                            std::to_string(features.cols()) + " columns, expected " +
		                            std::to_string(last.spec.input_dim));
	Matrix z = affine(last, features);
	op_probe().record(net.depth() - 1);
	return apply_activation(last.spec.activation, z);
}

double loss_eval(const LossSpec& loss, const Matrix& output, const Matrix& targets) {
	require_same_shape(output, targets, "loss_eval");
	const Index n = output.rows();
	if (n == 0) throw std::invalid_argument("loss_eval: empty batch");
	double total = 0;
	if (loss.kind == LossKind::squared_error) {
		for (Index i = 0; i < n; ++i) {
			double s = 0;
			for (Index j = 0; j < output.cols(); ++j) {
				const double r = output(i, j) - targets(i, j);
				s += r * r;
			}
			total += s;
		}
	} else {
		for (Index i = 0; i < n; ++i) {
			const Index cls = one_hot_class(targets, i);
			if (cls < 0)
				throw std::invalid_argument("loss_eval: target row " + std::to_string(i) +
				                            " is not one-hot");
			if (std::abs(output.row(i).sum() - 1.0) > kSimplexTolerance)
				throw std::invalid_argument("loss_eval: output row " + std::to_string(i) +
				                            " does not sum to 1");
			total += -std::log(std::max(output(i, cls), kProbabilityFloor));
		}
	}
	return total / static_cast<double>(n);
}

Matrix output_delta(const LossSpec& loss, const Matrix& output, const Matrix& targets) {
	require_same_shape(output, targets, "output_delta");
	const double n = static_cast<double>(output.rows());
	if (loss.kind == LossKind::squared_error) return (2.0 / n) * (output - targets);
	// softmax + cross entropy: dL/dz = (p - y) / N
	return (output - targets) / n;
}

Gradients backprop(const Network& net, const Matrix& x, const Matrix& y, const LossSpec& loss) {
	return backprop(net, x, y, loss, nullptr);
}

Gradients backprop(const Network& net, const Matrix& x, const Matrix& y, const LossSpec& loss,
                   const DropoutMasks* masks) {
	require_loss_pairing(loss, net.last().spec.activation);
	if (y.rows() != x.rows() || y.cols() != net.output_dim())
		throw std::invalid_argument("backprop: targets are " + shape_string(y) + ", expected " +
		                            shape_string(x.rows(), net.output_dim()));
	const ForwardTrace trace = forward(net, x, masks);
	const std::size_t depth = net.depth();

	Gradients g;
	g.loss = loss_eval(loss, trace.output(), y);
	g.weights.resize(depth);
	g.bias.resize(depth);

	Matrix delta = output_delta(loss, trace.output(), y);
	for (std::size_t l = depth; l-- > 0;) {
		const Layer& layer = net.layer(l);
		const Matrix& in = l == 0 ? x : trace.post[l - 1];
		g.weights[l] = matmul(delta.transpose(), in);
		op_probe().record(l);
		if (layer.spec.has_bias) {
			Vector gb = Vector::Zero(delta.cols());
			for (Index i = 0; i < delta.rows(); ++i)
				for (Index j = 0; j < delta.cols(); ++j) gb(j) += delta(i, j);
			g.bias[l] = std::move(gb);
		}
		if (l == 0) break;
		Matrix back = matmul(delta, layer.weights);
		op_probe().record(l);
		Matrix d = back.cwiseProduct(activation_derivative(net.layer(l - 1).spec.activation, trace.pre[l - 1]));
		if (masks && l - 1 < masks->size() && (*masks)[l - 1].size() != 0)
			d = d.cwiseProduct((*masks)[l - 1]);
		delta = std::move(d);
	}
	return g;
}

OpProbe& op_probe() {
	thread_local OpProbe probe;
	return probe;
}

nlohmann::json network_to_json(const Network& net) {
	nlohmann::json layers = nlohmann::json::array();
	for (const auto& layer : net.layers()) {
		const auto& s = layer.spec;
		nlohmann::json j;
		j["input_dim"] = s.input_dim;
		j["output_dim"] = s.output_dim;
		j["activation"] = to_string(s.activation);
		j["has_bias"] = s.has_bias;
		j["weights"] = std::vector<double>(layer.weights.data(), layer.weights.data() + layer.weights.size());
		if (s.has_bias) j["bias"] = std::vector<double>(layer.bias.data(), layer.bias.data() + layer.bias.size());
		layers.push_back(std::move(j));
	}
	return {{"format_version", kNetworkFormatVersion}, {"layers", std::move(layers)}};
}

Network network_from_json(const nlohmann::json& j) {
	const int version = j.at("format_version").get<int>();
	if (version != kNetworkFormatVersion)
		throw std::invalid_argument("network_from_json: unsupported format_version " +
		                            std::to_string(version));
	std::vector<Layer> layers;
	for (const auto& jl : j.at("layers")) {
		LayerSpec s;
		s.input_dim = jl.at("input_dim").get<Index>();
		s.output_dim = jl.at("output_dim").get<Index>();
		s.activation = activation_from_string(jl.at("activation").get<std::string>());
		s.has_bias = jl.value("has_bias", false);
		const auto w = jl.at("weights").get<std::vector<double>>();
		if (static_cast<Index>(w.size()) != s.input_dim * s.output_dim)
			throw std::invalid_argument("network_from_json: weight array has " + std::to_string(w.size()) +
			                            " entries, expected " + std::to_string(s.input_dim * s.output_dim));
		Layer layer{s, Eigen::Map<const Matrix>(w.data(), s.output_dim, s.input_dim), Vector()};
		if (s.has_bias) {
			const auto b = jl.at("bias").get<std::vector<double>>();
			layer.bias = Eigen::Map<const Vector>(b.data(), static_cast<Index>(b.size()));
		}
		layers.push_back(std::move(layer));
	}
	return Network(std::move(layers));
}

}  // namespace lastfit
