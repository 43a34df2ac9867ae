#include "lastfit/posttrain.hpp"

#include <cmath>

namespace lastfit {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxHalvings = 50;
constexpr double kLambdaLow = 1e-5;
constexpr double kLambdaHigh = 1e-2;

Matrix rows_of(const Matrix& m, const std::vector<Index>& rows) {
	Matrix out(static_cast<Index>(rows.size()), m.cols());
	for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
	return out;
}

}  // namespace

Matrix last_layer_features(const Network& net, const Matrix& x) {
	Matrix f = feature_map(net, x);
	if (!net.last().spec.has_bias) return f;
	Matrix aug(f.rows(), f.cols() + 1);
	aug.leftCols(f.cols()) = f;
	aug.col(f.cols()).setOnes();
	return aug;
}

Matrix last_layer_parameters(const Network& net) {
	const Layer& last = net.last();
	if (!last.spec.has_bias) return last.weights;
	Matrix p(last.weights.rows(), last.weights.cols() + 1);
	p.leftCols(last.weights.cols()) = last.weights;
	p.col(last.weights.cols()) = last.bias;
	return p;
}

Network with_last_layer_parameters(const Network& net, const Matrix& params) {
	Network out = net;
	const Layer& last = net.last();
	const Index in = last.spec.input_dim;
	const Index cols = in + (last.spec.has_bias ? 1 : 0);
	if (params.rows() != last.spec.output_dim || params.cols() != cols)
		throw std::invalid_argument("with_last_layer_parameters: got " + shape_string(params) +
		                            ", expected " + shape_string(last.spec.output_dim, cols));
	if (last.spec.has_bias)
		out.set_parameters(net.depth() - 1, params.leftCols(in), params.col(in));
	else
		out.set_parameters(net.depth() - 1, params);
	return out;
}

LastLayerProblem::LastLayerProblem(Matrix features, Matrix targets, Activation activation,
                                   LossSpec loss, double lambda, std::size_t layer_index)
	: features_(std::move(features)),
	  targets_(std::move(targets)),
	  activation_(activation),
	  loss_(loss),
	  lambda_(lambda),
	  layer_index_(layer_index) {
	if (!(lambda_ >= 0)) throw std::invalid_argument("LastLayerProblem: lambda must be nonnegative");
	if (features_.rows() != targets_.rows() || features_.rows() < 1)
		throw std::invalid_argument("LastLayerProblem: features are " + shape_string(features_) +
		                            " but targets are " + shape_string(targets_));
	require_loss_pairing(loss_, activation_);
}

LastLayerProblem LastLayerProblem::from_network(const Network& net, const Dataset& data,
                                                double lambda, const LossSpec& loss) {
	data.validate();
	return LastLayerProblem(last_layer_features(net, data.x), data.y, net.last().spec.activation,
	                        loss, lambda, net.depth() - 1);
}

Matrix LastLayerProblem::predict(const Matrix& w) const {
	Matrix z = matmul(features_, w.transpose());
	op_probe().record(layer_index_);
	return apply_activation(activation_, z);
}

double LastLayerProblem::empirical_loss(const Matrix& w) const {
	return loss_eval(loss_, predict(w), targets_);
}

double LastLayerProblem::objective(const Matrix& w) const {
	return empirical_loss(w) + lambda_ * sq_frobenius(w);
}

double LastLayerProblem::objective_and_gradient(const Matrix& w, Matrix& grad) const {
	const Matrix out = predict(w);
	const double value = loss_eval(loss_, out, targets_) + lambda_ * sq_frobenius(w);
	grad = matmul(output_delta(loss_, out, targets_).transpose(), features_);
	op_probe().record(layer_index_);
	grad += (2.0 * lambda_) * w;
	return value;
}

double LastLayerProblem::objective_and_gradient(const Matrix& w, const std::vector<Index>& rows,
                                                Matrix& grad) const {
	const Matrix f = rows_of(features_, rows);
	const Matrix y = rows_of(targets_, rows);
	Matrix z = matmul(f, w.transpose());
	op_probe().record(layer_index_);
	const Matrix out = apply_activation(activation_, z);
	const double value = loss_eval(loss_, out, y) + lambda_ * sq_frobenius(w);
	grad = matmul(output_delta(loss_, out, y).transpose(), f);
	op_probe().record(layer_index_);
	grad += (2.0 * lambda_) * w;
	return value;
}

double posttrain_objective(const Network& net, const Dataset& data, double lambda, const LossSpec& loss) {
	if (!(lambda > 0)) throw std::invalid_argument("posttrain_objective: lambda must be positive");
	return LastLayerProblem::from_network(net, data, lambda, loss).objective(last_layer_parameters(net));
}

PostTrainResult post_train(const Network& net, const Dataset& data, const PostTrainConfig& cfg,
                           const LossSpec& loss, const Dataset* test) {
	if (!(cfg.lambda > 0)) throw std::invalid_argument("post_train: lambda must be positive");
	if (cfg.eval_every < 1) throw std::invalid_argument("post_train: eval_every must be at least 1");
	if (cfg.mode == PostTrainMode::minibatch &&
	    (cfg.batch_size < 1 || static_cast<Index>(cfg.batch_size) > data.size() || !(cfg.lr > 0)))
		throw std::invalid_argument("post_train: invalid minibatch settings");
	if (cfg.mode == PostTrainMode::full_batch_backtracking && !(cfg.initial_step > 0))
		throw std::invalid_argument("post_train: initial_step must be positive");

	PostTrainResult r{net, {}, false, 0, 0, {}, {}};
	if (cfg.lambda < kLambdaLow || cfg.lambda > kLambdaHigh)
		r.warnings.push_back("post_train: lambda outside the recommended range [1e-5, 1e-2]");

	const std::size_t frozen = net.depth() - 1;
	auto& probe = op_probe();
	const std::size_t before_cache = probe.total_below(frozen);
	const LastLayerProblem problem = LastLayerProblem::from_network(net, data, cfg.lambda, loss);
	Matrix test_features;
	if (test) {
		test->validate();
		test_features = last_layer_features(net, test->x);
	}
	r.cache_build_products = probe.total_below(frozen) - before_cache;

	auto record = [&](std::size_t iteration, const Matrix& w, double objective) {
		MetricRecord m;
		m.iteration = iteration;
		const Matrix out = problem.predict(w);
		m.train_loss = loss_eval(loss, out, data.y);
		m.objective = objective;
		if (loss.kind == LossKind::cross_entropy) m.train_error = classification_error(out, data.y);
		if (test) {
			Matrix z = matmul(test_features, w.transpose());
			probe.record(frozen);
			const Matrix tout = apply_activation(net.last().spec.activation, z);
			m.test_loss = loss_eval(loss, tout, test->y);
			if (loss.kind == LossKind::cross_entropy) m.test_error = classification_error(tout, test->y);
		}
		r.metrics.push(m);
	};

	Matrix w = last_layer_parameters(net);
	Matrix grad;
	double f = problem.objective_and_gradient(w, grad);
	if (!std::isfinite(f)) throw TrainingDiverged(0);
	record(0, w, f);

	BatchStream stream(data.size(), cfg.seed, rng_tag::posttrain_batches);
	double step = cfg.initial_step / 2;
	for (std::size_t it = 0; it < cfg.iterations; ++it) {
		const std::size_t frozen_before = probe.total_below(frozen);
		if (cfg.grad_tol > 0 && std::sqrt(sq_frobenius(grad)) <= cfg.grad_tol) break;

		if (cfg.mode == PostTrainMode::full_batch_backtracking) {
			const double gnorm2 = sq_frobenius(grad);
			double s = 2 * step;
			bool accepted = false;
			Matrix candidate;
			for (int h = 0; h <= kMaxHalvings; ++h, s /= 2) {
				candidate = w - s * grad;
				double fc;
				try {
					fc = problem.objective(candidate);
				} catch (const NonFiniteError&) {
					continue;
				}
				if (fc <= f - kArmijo * s * gnorm2) {
					accepted = true;
					break;
				}
			}
			if (!accepted) {
				r.stalled = true;
				break;
			}
			step = s;
			w = std::move(candidate);
		} else {
			Matrix batch_grad;
			problem.objective_and_gradient(w, stream.batch(it, cfg.batch_size), batch_grad);
			w -= cfg.lr * batch_grad;
		}
		try {
			f = problem.objective_and_gradient(w, grad);
		} catch (const NonFiniteError&) {
			throw TrainingDiverged(it + 1);
		}
		if (!std::isfinite(f)) throw TrainingDiverged(it + 1);
		++r.iterations_run;
		if ((it + 1) % cfg.eval_every == 0 || it + 1 == cfg.iterations) record(it + 1, w, f);
		r.frozen_products_per_iteration.push_back(probe.total_below(frozen) - frozen_before);
	}
	if (r.metrics.back().iteration != r.iterations_run) record(r.iterations_run, w, f);

	r.network = with_last_layer_parameters(net, w);
	return r;
}

std::string_view to_string(PostTrainMode m) {
	return m == PostTrainMode::minibatch ? "minibatch" : "full_batch_backtracking";
}

PostTrainMode posttrain_mode_from_string(std::string_view s) {
	if (s == "full_batch_backtracking") return PostTrainMode::full_batch_backtracking;
	if (s == "minibatch") return PostTrainMode::minibatch;
	throw std::invalid_argument("unknown post-training mode '" + std::string(s) + "'");
}

nlohmann::json posttrain_config_to_json(const PostTrainConfig& cfg) {
	return {{"lambda", cfg.lambda},         {"iterations", cfg.iterations},
	        {"mode", to_string(cfg.mode)},  {"batch_size", cfg.batch_size},
	        {"lr", cfg.lr},                 {"initial_step", cfg.initial_step},
	        {"grad_tol", cfg.grad_tol},     {"seed", cfg.seed},
	        {"eval_every", cfg.eval_every}};
}

PostTrainConfig posttrain_config_from_json(const nlohmann::json& j, const PostTrainConfig& defaults) {
	PostTrainConfig c = defaults;
	c.lambda = j.value("lambda", c.lambda);
	c.iterations = j.value("iterations", c.iterations);
	if (j.contains("mode")) c.mode = posttrain_mode_from_string(j["mode"].get<std::string>());
	c.batch_size = j.value("batch_size", c.batch_size);
	c.lr = j.value("lr", c.lr);
	c.initial_step = j.value("initial_step", c.initial_step);
	c.grad_tol = j.value("grad_tol", c.grad_tol);
	c.seed = j.value("seed", c.seed);
	c.eval_every = j.value("eval_every", c.eval_every);
	return c;
}

}  // namespace lastfit
