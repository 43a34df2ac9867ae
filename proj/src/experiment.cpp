#include "lastfit/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>

namespace lastfit {

namespace {

std::string format_real(double v) {
	char buf[32];
	std::snprintf(buf, sizeof buf, "%.17g", v);
	return buf;
}

double median(std::vector<double> v) {
	std::sort(v.begin(), v.end());
	const std::size_t n = v.size();
	return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::string_view to_string(Metric m) { return m == Metric::rmse ? "rmse" : "classification_error"; }

Metric metric_from_string(std::string_view s) {
	if (s == "rmse") return Metric::rmse;
	if (s == "classification_error") return Metric::classification_error;
	throw std::invalid_argument("unknown metric '" + std::string(s) + "'");
}

void ExperimentConfig::validate() const {
	if (network.empty()) throw std::invalid_argument("ExperimentConfig: network has no layers");
	if (checkpoints.empty()) throw std::invalid_argument("ExperimentConfig: no checkpoints");
	for (std::size_t i = 0; i < checkpoints.size(); ++i) {
		if (i > 0 && checkpoints[i] <= checkpoints[i - 1])
			throw std::invalid_argument("ExperimentConfig: checkpoints must be strictly increasing");
		if (checkpoints[i] > train.iterations)
			throw std::invalid_argument("ExperimentConfig: checkpoint " + std::to_string(checkpoints[i]) +
			                            " exceeds train.iterations " + std::to_string(train.iterations));
	}
	if (seeds.empty()) throw std::invalid_argument("ExperimentConfig: no seeds");
	require_loss_pairing(loss, network.back().activation);
	if (loss.kind == LossKind::cross_entropy && metric == Metric::rmse)
		throw std::invalid_argument("ExperimentConfig: rmse metric requires squared_error loss");
	if (!(posttrain.lambda > 0)) throw std::invalid_argument("ExperimentConfig: posttrain.lambda must be positive");
	if (dataset.kind == DatasetSource::Kind::csv && (dataset.features.empty() || dataset.targets.empty()))
		throw std::invalid_argument("ExperimentConfig: csv dataset needs feature and target columns");
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
	ExperimentConfig c;
	const auto& d = j.at("dataset");
	const std::string kind = d.at("kind").get<std::string>();
	if (kind == "synthetic") {
		c.dataset.kind = DatasetSource::Kind::synthetic;
		c.dataset.n = d.value("n", c.dataset.n);
		c.dataset.seed = d.value("seed", c.dataset.seed);
	} else if (kind == "csv") {
		c.dataset.kind = DatasetSource::Kind::csv;
		c.dataset.path = d.at("path").get<std::string>();
		c.dataset.features = d.at("features").get<std::vector<std::string>>();
		c.dataset.targets = d.at("targets").get<std::vector<std::string>>();
		c.dataset.has_header = d.value("has_header", true);
	} else {
		throw std::invalid_argument("unknown dataset kind '" + kind + "'");
	}
	if (j.contains("split")) {
		c.split_fraction = j["split"].value("fraction", c.split_fraction);
		c.split_seed = j["split"].value("seed", c.split_seed);
	}
	c.standardize = j.value("standardize", c.dataset.kind == DatasetSource::Kind::csv);
	if (j.contains("loss")) c.loss.kind = loss_from_string(j["loss"].get<std::string>());
	if (j.contains("metric")) c.metric = metric_from_string(j["metric"].get<std::string>());
	for (const auto& jl : j.at("network")) {
		LayerDesign l;
		l.units = jl.at("units").get<Index>();
		l.activation = activation_from_string(jl.at("activation").get<std::string>());
		l.bias = jl.value("bias", false);
		c.network.push_back(l);
	}
	if (j.contains("train")) c.train = train_config_from_json(j["train"], c.train);
	if (j.contains("posttrain")) c.posttrain = posttrain_config_from_json(j["posttrain"], c.posttrain);
	c.checkpoints = j.value("checkpoints", c.checkpoints);
	c.seeds = j.value("seeds", c.seeds);
	if (j.contains("krr_convention"))
		c.convention = krr_convention_from_string(j["krr_convention"].get<std::string>());
	c.validate();
	return c;
}

nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
	nlohmann::json d;
	if (c.dataset.kind == DatasetSource::Kind::synthetic) {
		d = {{"kind", "synthetic"}, {"n", c.dataset.n}, {"seed", c.dataset.seed}};
	} else {
		d = {{"kind", "csv"},
		     {"path", c.dataset.path.string()},
		     {"features", c.dataset.features},
		     {"targets", c.dataset.targets},
		     {"has_header", c.dataset.has_header}};
	}
	nlohmann::json net = nlohmann::json::array();
	for (const auto& l : c.network)
		net.push_back({{"units", l.units}, {"activation", to_string(l.activation)}, {"bias", l.bias}});
	return {{"format_version", 1},
	        {"dataset", d},
	        {"split", {{"fraction", c.split_fraction}, {"seed", c.split_seed}}},
	        {"standardize", c.standardize},
	        {"loss", to_string(c.loss.kind)},
	        {"metric", to_string(c.metric)},
	        {"network", net},
	        {"train", train_config_to_json(c.train)},
	        {"posttrain", posttrain_config_to_json(c.posttrain)},
	        {"checkpoints", c.checkpoints},
	        {"seeds", c.seeds},
	        {"krr_convention", to_string(c.convention)}};
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
	std::ifstream in(path);
	if (!in) throw std::runtime_error("cannot open config " + path.string());
	return experiment_config_from_json(nlohmann::json::parse(in));
}

Split prepare_data(const ExperimentConfig& cfg, std::vector<std::string>* warnings) {
	Dataset ds = cfg.dataset.kind == DatasetSource::Kind::synthetic
	                 ? gen_synthetic(cfg.dataset.n, cfg.dataset.seed)
	                 : load_csv(cfg.dataset.path, cfg.dataset.features, cfg.dataset.targets,
	                            cfg.dataset.has_header);
	ds.validate();
	Split s = split(ds, cfg.split_fraction, cfg.split_seed);
	if (cfg.standardize) {
		StandardizeResult st = standardize(s.train);
		s.train = std::move(st.data);
		s.test = st.transform.apply(s.test);
		if (warnings) warnings->insert(warnings->end(), st.warnings.begin(), st.warnings.end());
	}
	return s;
}

std::vector<LayerSpec> layer_specs(const ExperimentConfig& cfg, Index input_dim) {
	std::vector<LayerSpec> specs;
	Index in = input_dim;
	for (const auto& l : cfg.network) {
		specs.push_back({in, l.units, l.activation, l.bias});
		in = l.units;
	}
	return specs;
}

double evaluate_metric(Metric metric, const Network& net, const Dataset& test) {
	const Matrix out = forward(net, test.x).output();
	if (metric == Metric::classification_error) return classification_error(out, test.y);
	return std::sqrt(loss_eval(LossSpec{LossKind::squared_error}, out, test.y));
}

std::vector<ComparisonRow> run_experiment(const ExperimentConfig& cfg, std::vector<PhaseLog>* log) {
	cfg.validate();
	const Split data = prepare_data(cfg);
	if (data.train.y.cols() != cfg.network.back().units)
		throw std::invalid_argument("run_experiment: network output width " +
		                            std::to_string(cfg.network.back().units) + " does not match " +
		                            std::to_string(data.train.y.cols()) + " target columns");
	const auto specs = layer_specs(cfg, data.train.x.cols());
	const bool closed_form = cfg.loss.kind == LossKind::squared_error;

	std::vector<ComparisonRow> rows;
	for (const std::uint64_t seed : cfg.seeds) {
		Network net = Network::initialize(specs, seed);
		std::size_t done = 0;
		for (const std::size_t checkpoint : cfg.checkpoints) {
			TrainConfig tc = cfg.train;
			tc.seed = seed;
			tc.start_iteration = done;
			tc.iterations = checkpoint - done;
			TrainResult trained = sgd_train(net, data.train, tc, cfg.loss, &data.test);
			// Resume from the serialized snapshot so every branch shares it exactly.
			net = network_from_json(network_to_json(trained.network));
			done = checkpoint;
			if (log) log->push_back({seed, checkpoint, "train", std::move(trained.metrics)});

			ComparisonRow row;
			row.iterations = checkpoint;
			row.seed = seed;
			row.classic = evaluate_metric(cfg.metric, net, data.test);

			PostTrainConfig pc = cfg.posttrain;
			pc.seed = seed;
			PostTrainResult post = post_train(net, data.train, pc, cfg.loss, &data.test);
			row.posttrain = evaluate_metric(cfg.metric, post.network, data.test);
			if (log) log->push_back({seed, checkpoint, "posttrain", std::move(post.metrics)});

			if (closed_form) {
				const Matrix features = last_layer_features(net, data.train.x);
				const KrrSolution<double> sol =
					krr_solve(features, data.train.y, cfg.posttrain.lambda, cfg.convention);
				const Network optimal = with_last_layer_parameters(net, sol.w.transpose());
				row.optimal = evaluate_metric(cfg.metric, optimal, data.test);
			}
			rows.push_back(row);
		}
	}
	std::stable_sort(rows.begin(), rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
		return a.seed != b.seed ? a.seed < b.seed : a.iterations < b.iterations;
	});
	return rows;
}

std::vector<ComparisonRow> median_rows(const std::vector<ComparisonRow>& rows) {
	std::map<std::size_t, std::vector<const ComparisonRow*>> by_checkpoint;
	for (const auto& r : rows) by_checkpoint[r.iterations].push_back(&r);
	std::vector<ComparisonRow> out;
	for (const auto& [iterations, group] : by_checkpoint) {
		std::vector<double> classic, post, optimal;
		for (const auto* r : group) {
			classic.push_back(r->classic);
			post.push_back(r->posttrain);
			if (r->optimal) optimal.push_back(*r->optimal);
		}
		ComparisonRow m;
		m.iterations = iterations;
		m.classic = median(classic);
		m.posttrain = median(post);
		if (optimal.size() == group.size()) m.optimal = median(optimal);
		out.push_back(m);
	}
	return out;
}

void write_comparison_csv(const std::vector<ComparisonRow>& rows, std::ostream& out) {
	out << "iterations,classic,posttrain,optimal,seed\n";
	for (const auto& r : rows)
		out << r.iterations << "," << format_real(r.classic) << "," << format_real(r.posttrain) << ","
		    << (r.optimal ? format_real(*r.optimal) : std::string("NA")) << "," << r.seed << "\n";
}

void write_phase_logs_jsonl(const std::vector<PhaseLog>& logs, std::ostream& out) {
	for (const auto& log : logs) {
		for (const auto& r : log.metrics.records()) {
			nlohmann::json j;
			j["seed"] = log.seed;
			j["checkpoint"] = log.checkpoint;
			j["phase"] = log.phase;
			j["iteration"] = r.iteration;
			j["train_loss"] = r.train_loss;
			if (r.test_loss) j["test_loss"] = *r.test_loss;
			if (r.train_error) j["train_error"] = *r.train_error;
			if (r.test_error) j["test_error"] = *r.test_error;
			if (r.objective) j["objective"] = *r.objective;
			out << j.dump() << "\n";
		}
	}
}

}  // namespace lastfit
