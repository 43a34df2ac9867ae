#include "lastfit/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace lastfit {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxHalvings = 50;

std::string format_real(double v) {
	char buf[32];
	std::snprintf(buf, sizeof buf, "%.17g", v);
	return buf;
}

void take_rows(const Dataset& data, const std::vector<Index>& idx, Matrix& x, Matrix& y) {
	x.resize(static_cast<Index>(idx.size()), data.x.cols());
	y.resize(static_cast<Index>(idx.size()), data.y.cols());
	for (std::size_t i = 0; i < idx.size(); ++i) {
		x.row(static_cast<Index>(i)) = data.x.row(idx[i]);
		y.row(static_cast<Index>(i)) = data.y.row(idx[i]);
	}
}

double weight_penalty(const Network& net) {
	double s = 0;
	for (const auto& layer : net.layers()) s += sq_frobenius(layer.weights);
	return s;
}

MetricRecord evaluate(const Network& net, const Dataset& data, const Dataset* test,
                      const LossSpec& loss, double weight_decay, std::size_t iteration) {
	MetricRecord r;
	r.iteration = iteration;
	const Matrix out = forward(net, data.x).output();
	r.train_loss = loss_eval(loss, out, data.y);
	r.objective = r.train_loss + weight_decay * weight_penalty(net);
	if (loss.kind == LossKind::cross_entropy) r.train_error = classification_error(out, data.y);
	if (test) {
		const Matrix tout = forward(net, test->x).output();
		r.test_loss = loss_eval(loss, tout, test->y);
		if (loss.kind == LossKind::cross_entropy) r.test_error = classification_error(tout, test->y);
	}
	return r;
}

// net - s * (g + 2 wd W); biases are not decayed.
Network descend(const Network& net, const Gradients& g, double s, double weight_decay) {
	Network out = net;
	for (std::size_t l = 0; l < net.depth(); ++l) {
		const Layer& layer = net.layer(l);
		out.weights(l) = layer.weights - s * (g.weights[l] + (2.0 * weight_decay) * layer.weights);
		if (layer.spec.has_bias) out.bias(l) = layer.bias - s * g.bias[l];
	}
	return out;
}

double gradient_sq_norm(const Network& net, const Gradients& g, double weight_decay) {
	double s = 0;
	for (std::size_t l = 0; l < net.depth(); ++l) {
		s += sq_frobenius(g.weights[l] + (2.0 * weight_decay) * net.layer(l).weights);
		if (net.layer(l).spec.has_bias) s += sq_frobenius(g.bias[l]);
	}
	return s;
}

void optional_field(nlohmann::json& j, const char* key, const std::optional<double>& v) {
	if (v) j[key] = *v;
}

}  // namespace

void MetricsSeries::push(MetricRecord r) {
	if (!records_.empty() && r.iteration <= records_.back().iteration)
		throw std::logic_error("MetricsSeries: iteration " + std::to_string(r.iteration) +
		                       " does not follow " + std::to_string(records_.back().iteration));
	records_.push_back(r);
}

void MetricsSeries::write_jsonl(std::ostream& out) const {
	for (const auto& r : records_) {
		nlohmann::json j;
		j["iteration"] = r.iteration;
		j["train_loss"] = r.train_loss;
		optional_field(j, "test_loss", r.test_loss);
		optional_field(j, "train_error", r.train_error);
		optional_field(j, "test_error", r.test_error);
		optional_field(j, "objective", r.objective);
		out << j.dump() << "\n";
	}
}

void MetricsSeries::write_csv(std::ostream& out) const {
	auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
	out << "iteration,train_loss,test_loss,train_error,test_error,objective\n";
	for (const auto& r : records_)
		out << r.iteration << "," << format_real(r.train_loss) << "," << opt(r.test_loss) << ","
		    << opt(r.train_error) << "," << opt(r.test_error) << "," << opt(r.objective) << "\n";
}

bool MetricsSeries::operator==(const MetricsSeries& o) const {
	if (records_.size() != o.records_.size()) return false;
	for (std::size_t i = 0; i < records_.size(); ++i) {
		const auto& a = records_[i];
		const auto& b = o.records_[i];
		if (a.iteration != b.iteration || a.train_loss != b.train_loss || a.test_loss != b.test_loss ||
		    a.train_error != b.train_error || a.test_error != b.test_error || a.objective != b.objective)
			return false;
	}
	return true;
}

void TrainConfig::validate(const Network& net, Index n_train) const {
	if (n_train < 1) throw std::invalid_argument("TrainConfig: empty training set");
	if (batch_size < 1 || static_cast<Index>(batch_size) > n_train)
		throw std::invalid_argument("TrainConfig: batch_size " + std::to_string(batch_size) +
		                            " must lie in [1, " + std::to_string(n_train) + "]");
	if (!(lr0 > 0)) throw std::invalid_argument("TrainConfig: lr0 must be positive");
	if (!(lr_decay > 0 && lr_decay <= 1)) throw std::invalid_argument("TrainConfig: lr_decay must lie in (0, 1]");
	if (!(weight_decay >= 0)) throw std::invalid_argument("TrainConfig: weight_decay must be nonnegative");
	if (eval_every < 1) throw std::invalid_argument("TrainConfig: eval_every must be at least 1");
	if (!dropout_keep.empty()) {
		if (dropout_keep.size() != net.depth() - 1)
			throw std::invalid_argument("TrainConfig: dropout_keep has " + std::to_string(dropout_keep.size()) +
			                            " entries for " + std::to_string(net.depth() - 1) + " hidden layers");
		for (double p : dropout_keep)
			if (!(p > 0 && p <= 1)) throw std::invalid_argument("TrainConfig: keep probabilities must lie in (0, 1]");
	}
}

BatchStream::BatchStream(Index n, std::uint64_t seed, std::uint64_t tag) : n_(n), seed_(seed), tag_(tag) {
	if (n < 1) throw std::invalid_argument("BatchStream: empty dataset");
}

const std::vector<Index>& BatchStream::epoch(std::size_t e) {
	if (e != cached_epoch_) {
		perm_.resize(static_cast<std::size_t>(n_));
		std::iota(perm_.begin(), perm_.end(), Index{0});
		Rng rng = Rng::stream(seed_, tag_, e);
		shuffle_indices(perm_, rng);
		cached_epoch_ = e;
	}
	return perm_;
}

std::vector<Index> BatchStream::batch(std::size_t step, std::size_t batch_size) {
	std::vector<Index> out;
	out.reserve(batch_size);
	const auto n = static_cast<std::size_t>(n_);
	for (std::size_t k = 0; k < batch_size; ++k) {
		const std::size_t pos = step * batch_size + k;
		out.push_back(epoch(pos / n)[pos % n]);
	}
	return out;
}

Matrix dropout_mask(Index rows, Index cols, double keep, Rng& rng) {
	Matrix m(rows, cols);
	const double scale = 1.0 / keep;
	for (Index i = 0; i < rows; ++i)
		for (Index j = 0; j < cols; ++j) m(i, j) = rng.bernoulli(keep) ? scale : 0.0;
	return m;
}

double classification_error(const Matrix& output, const Matrix& targets) {
	if (output.rows() != targets.rows() || output.cols() != targets.cols())
		throw std::invalid_argument("classification_error: shape mismatch");
	Index wrong = 0;
	for (Index i = 0; i < output.rows(); ++i) {
		Index pred, truth;
		output.row(i).maxCoeff(&pred);
		targets.row(i).maxCoeff(&truth);
		if (pred != truth) ++wrong;
	}
	return static_cast<double>(wrong) / static_cast<double>(output.rows());
}

double training_objective(const Network& net, const Dataset& data, const LossSpec& loss,
                          double weight_decay) {
	return loss_eval(loss, forward(net, data.x).output(), data.y) + weight_decay * weight_penalty(net);
}

TrainResult sgd_train(const Network& net, const Dataset& data, const TrainConfig& cfg,
                      const LossSpec& loss, const Dataset* test) {
	data.validate();
	cfg.validate(net, data.size());
	require_loss_pairing(loss, net.last().spec.activation);

	TrainResult r{net, {}, false};
	BatchStream stream(data.size(), cfg.seed, rng_tag::batch_order);
	const bool use_dropout = !cfg.dropout_keep.empty();
	Matrix xb, yb;
	DropoutMasks masks;

	for (std::size_t s = 0; s < cfg.iterations; ++s) {
		const std::size_t t = cfg.start_iteration + s;
		take_rows(data, stream.batch(t, cfg.batch_size), xb, yb);
		if (use_dropout) {
			Rng mask_rng = Rng::stream(cfg.seed, rng_tag::dropout, t);
			masks.assign(r.network.depth() - 1, Matrix());
			for (std::size_t l = 0; l + 1 < r.network.depth(); ++l)
				if (cfg.dropout_keep[l] < 1.0)
					masks[l] = dropout_mask(xb.rows(), r.network.layer(l).spec.output_dim, cfg.dropout_keep[l], mask_rng);
		}
		Gradients g;
		try {
			g = backprop(r.network, xb, yb, loss, use_dropout ? &masks : nullptr);
		} catch (const NonFiniteError&) {
			throw TrainingDiverged(t);
		}
		if (!std::isfinite(g.loss)) throw TrainingDiverged(t);
		const double lr = cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(t));
		r.network = descend(r.network, g, lr, cfg.weight_decay);
		if ((t + 1) % cfg.eval_every == 0) {
			try {
				r.metrics.push(evaluate(r.network, data, test, loss, cfg.weight_decay, t + 1));
			} catch (const NonFiniteError&) {
				throw TrainingDiverged(t);
			}
			if (!std::isfinite(r.metrics.back().train_loss)) throw TrainingDiverged(t);
		}
	}
	return r;
}

TrainResult full_batch_gd(const Network& net, const Dataset& data, StepRule step,
                          std::size_t iterations, const LossSpec& loss, double weight_decay) {
	data.validate();
	require_loss_pairing(loss, net.last().spec.activation);
	if (!(step.lr > 0)) throw std::invalid_argument("full_batch_gd: step must be positive");
	if (!(weight_decay >= 0)) throw std::invalid_argument("full_batch_gd: weight_decay must be nonnegative");

	TrainResult r{net, {}, false};
	MetricRecord start = evaluate(net, data, nullptr, loss, weight_decay, 0);
	double f = *start.objective;
	r.metrics.push(start);

	for (std::size_t it = 1; it <= iterations; ++it) {
		const Gradients g = backprop(r.network, data.x, data.y, loss);
		const double gnorm2 = gradient_sq_norm(r.network, g, weight_decay);
		Network candidate = r.network;
		double fc = f;
		if (step.backtracking) {
			double s = step.lr;
			bool accepted = false;
			for (int h = 0; h <= kMaxHalvings; ++h, s /= 2) {
				try {
					candidate = descend(r.network, g, s, weight_decay);
					fc = training_objective(candidate, data, loss, weight_decay);
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
		} else {
			candidate = descend(r.network, g, step.lr, weight_decay);
			fc = training_objective(candidate, data, loss, weight_decay);
		}
		if (!std::isfinite(fc)) throw TrainingDiverged(it);
		r.network = std::move(candidate);
		f = fc;
		r.metrics.push(evaluate(r.network, data, nullptr, loss, weight_decay, it));
	}
	return r;
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
	return {{"iterations", cfg.iterations},     {"batch_size", cfg.batch_size},
	        {"lr0", cfg.lr0},                   {"lr_decay", cfg.lr_decay},
	        {"dropout_keep", cfg.dropout_keep}, {"weight_decay", cfg.weight_decay},
	        {"seed", cfg.seed},                 {"eval_every", cfg.eval_every}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& defaults) {
	TrainConfig c = defaults;
	c.iterations = j.value("iterations", c.iterations);
	c.batch_size = j.value("batch_size", c.batch_size);
	c.lr0 = j.value("lr0", c.lr0);
	c.lr_decay = j.value("lr_decay", c.lr_decay);
	c.dropout_keep = j.value("dropout_keep", c.dropout_keep);
	c.weight_decay = j.value("weight_decay", c.weight_decay);
	c.seed = j.value("seed", c.seed);
	c.eval_every = j.value("eval_every", c.eval_every);
	return c;
}

}  // namespace lastfit
