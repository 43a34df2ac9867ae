// lastfit command line: data generation, training, post-training, the
// closed-form last layer, the checkpoint comparison and the invariant suite.

#include "lastfit/convexity.hpp"
#include "lastfit/experiment.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace lastfit;

namespace {

std::ofstream open_out(const fs::path& path) {
	if (path.has_parent_path()) fs::create_directories(path.parent_path());
	std::ofstream out(path);
	if (!out) throw std::runtime_error("cannot write " + path.string());
	return out;
}

nlohmann::json read_json(const fs::path& path) {
	std::ifstream in(path);
	if (!in) throw std::runtime_error("cannot open " + path.string());
	return nlohmann::json::parse(in);
}

void write_json(const fs::path& path, const nlohmann::json& j) { open_out(path) << j.dump(2) << "\n"; }

void freeze_config(const fs::path& dir, const ExperimentConfig& cfg) {
	write_json(dir / "config.json", experiment_config_to_json(cfg));
}

void write_metrics(const fs::path& path, const MetricsSeries& metrics) {
	auto out = open_out(path);
	metrics.write_jsonl(out);
}

std::string real(double v) {
	char buf[32];
	std::snprintf(buf, sizeof buf, "%.6g", v);
	return buf;
}

struct Common {
	std::string config;
	std::optional<std::uint64_t> seed;
	std::string out;
};

ExperimentConfig resolve(const Common& c) {
	ExperimentConfig cfg = load_experiment_config(c.config);
	if (c.seed) cfg.seeds = {*c.seed};
	return cfg;
}

int cmd_gen_data(Index n, std::uint64_t seed, const std::string& out, bool json) {
	const Dataset ds = gen_synthetic(n, seed);
	if (json)
		write_json(out, dataset_to_json(ds));
	else {
		auto f = open_out(out);
		write_csv(ds, f);
	}
	std::cout << "wrote " << ds.size() << " samples to " << out << "\n";
	return 0;
}

int cmd_train(const Common& c) {
	const ExperimentConfig cfg = resolve(c);
	const Split data = prepare_data(cfg);
	const std::uint64_t seed = cfg.seeds.front();
	TrainConfig tc = cfg.train;
	tc.seed = seed;
	const Network init = Network::initialize(layer_specs(cfg, data.train.x.cols()), seed);
	TrainResult r = sgd_train(init, data.train, tc, cfg.loss, &data.test);
	const fs::path dir = c.out;
	write_json(dir / "network.json", network_to_json(r.network));
	write_metrics(dir / "metrics.jsonl", r.metrics);
	freeze_config(dir, cfg);
	std::cout << "test " << to_string(cfg.metric) << " " << real(evaluate_metric(cfg.metric, r.network, data.test))
	          << "\n";
	return 0;
}

int cmd_post_train(const Common& c, const std::string& network_path) {
	const ExperimentConfig cfg = resolve(c);
	const Split data = prepare_data(cfg);
	const Network net = network_from_json(read_json(network_path));
	PostTrainConfig pc = cfg.posttrain;
	pc.seed = cfg.seeds.front();
	PostTrainResult r = post_train(net, data.train, pc, cfg.loss, &data.test);
	for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
	const fs::path dir = c.out;
	write_json(dir / "network.json", network_to_json(r.network));
	write_metrics(dir / "metrics.jsonl", r.metrics);
	freeze_config(dir, cfg);
	std::cout << "iterations " << r.iterations_run << (r.stalled ? " (line search stalled)" : "") << "\n"
	          << "test " << to_string(cfg.metric) << " before "
	          << real(evaluate_metric(cfg.metric, net, data.test)) << " after "
	          << real(evaluate_metric(cfg.metric, r.network, data.test)) << "\n";
	return 0;
}

int cmd_krr(const Common& c, const std::string& network_path) {
	const ExperimentConfig cfg = resolve(c);
	if (cfg.loss.kind != LossKind::squared_error)
		throw std::invalid_argument("krr: the closed form exists only for squared_error with an identity output");
	const Split data = prepare_data(cfg);
	const Network net = network_from_json(read_json(network_path));
	const Matrix features = last_layer_features(net, data.train.x);
	const auto sol = krr_solve(features, data.train.y, cfg.posttrain.lambda, cfg.convention);
	const Network optimal = with_last_layer_parameters(net, sol.w.transpose());
	const fs::path dir = c.out;
	write_json(dir / "krr.json", krr_to_json(sol));
	write_json(dir / "network.json", network_to_json(optimal));
	freeze_config(dir, cfg);
	std::cout << "objective " << real(posttrain_objective(optimal, data.train, cfg.posttrain.lambda, cfg.loss))
	          << "\ntest " << to_string(cfg.metric) << " "
	          << real(evaluate_metric(cfg.metric, optimal, data.test)) << "\n";
	return 0;
}

int cmd_compare(const Common& c) {
	const ExperimentConfig cfg = resolve(c);
	std::vector<PhaseLog> logs;
	const auto rows = run_experiment(cfg, &logs);
	const auto medians = median_rows(rows);
	const fs::path dir = c.out;
	{
		auto f = open_out(dir / "comparison.csv");
		write_comparison_csv(rows, f);
	}
	{
		auto f = open_out(dir / "median.csv");
		write_comparison_csv(medians, f);
	}
	{
		auto f = open_out(dir / "metrics.jsonl");
		write_phase_logs_jsonl(logs, f);
	}
	freeze_config(dir, cfg);
	std::cout << "median test " << to_string(cfg.metric) << " over " << cfg.seeds.size() << " seed(s)\n"
	          << "iterations  classic  posttrain  optimal\n";
	for (const auto& r : medians)
		std::cout << r.iterations << "  " << real(r.classic) << "  " << real(r.posttrain) << "  "
		          << (r.optimal ? real(*r.optimal) : std::string("NA")) << "\n";
	return 0;
}

int cmd_check(std::uint64_t seed, const std::string& out, bool convexity, std::size_t count) {
	if (convexity) {
		const ConvexityStats s = convexity_stats(seed, count);
		const nlohmann::json j = {{"seed", seed},
		                          {"instances", s.instances},
		                          {"min_eigenvalue", s.min_eigenvalue},
		                          {"mean_min_eigenvalue", s.mean_min_eigenvalue},
		                          {"max_min_eigenvalue", s.max_min_eigenvalue},
		                          {"max_dominance_gap", s.max_dominance_gap}};
		if (!out.empty()) write_json(out, j);
		std::cout << j.dump(2) << "\n";
		return s.min_eigenvalue >= -1e-10 && s.max_dominance_gap <= 1e-12 ? 0 : 1;
	}
	const CheckReport report = check_suite(seed);
	if (!out.empty()) write_json(out, report.to_json());
	for (const auto& r : report.results)
		std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  max_error " << r.max_error << "  tol "
		          << r.tolerance << "  cases " << r.cases << (r.detail.empty() ? "" : "  " + r.detail) << "\n";
	return report.passed() ? 0 : 1;
}

void add_common(CLI::App* sub, Common& c, bool needs_out = true) {
	sub->add_option("--config", c.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
	sub->add_option("--seed", c.seed, "run seed, overrides the config's seed list");
	auto* o = sub->add_option("--out", c.out, "output directory");
	if (needs_out) o->required();
}

}  // namespace

int main(int argc, char** argv) {
	CLI::App app{"Last-layer post-training for dense networks"};
	app.require_subcommand(1);

	Index gen_n = 10000;
	std::uint64_t gen_seed = 0;
	std::string gen_out;
	bool gen_json = false;
	auto* gen = app.add_subcommand("gen-data", "write a synthetic teacher dataset");
	gen->add_option("--n", gen_n, "number of samples")->check(CLI::PositiveNumber);
	gen->add_option("--seed", gen_seed, "dataset seed");
	gen->add_option("--out", gen_out, "output file")->required();
	gen->add_flag("--json", gen_json, "write the JSON snapshot instead of CSV");

	Common train_opts, post_opts, krr_opts, compare_opts;
	std::string post_net, krr_net;
	auto* train = app.add_subcommand("train", "train the configured network with minibatch SGD");
	add_common(train, train_opts);
	auto* post = app.add_subcommand("post-train", "optimize the last layer of a trained network");
	add_common(post, post_opts);
	post->add_option("--network", post_net, "network JSON")->required()->check(CLI::ExistingFile);
	auto* krr = app.add_subcommand("krr", "substitute the closed-form ridge last layer");
	add_common(krr, krr_opts);
	krr->add_option("--network", krr_net, "network JSON")->required()->check(CLI::ExistingFile);
	auto* compare = app.add_subcommand("compare", "classic vs post-trained vs optimal at each checkpoint");
	add_common(compare, compare_opts);

	std::uint64_t check_seed = 0;
	std::string check_out;
	bool check_convexity = false;
	std::size_t check_count = 100;
	auto* check = app.add_subcommand("check", "run the invariant suite");
	check->add_option("--seed", check_seed, "suite seed");
	check->add_option("--out", check_out, "write the JSON report here");
	check->add_flag("--convexity", check_convexity, "only print Hessian eigenvalue statistics");
	check->add_option("--count", check_count, "instances for --convexity")->check(CLI::PositiveNumber);

	CLI11_PARSE(app, argc, argv);

	try {
		if (*gen) return cmd_gen_data(gen_n, gen_seed, gen_out, gen_json);
		if (*train) return cmd_train(train_opts);
		if (*post) return cmd_post_train(post_opts, post_net);
		if (*krr) return cmd_krr(krr_opts, krr_net);
		if (*compare) return cmd_compare(compare_opts);
		if (*check) return cmd_check(check_seed, check_out, check_convexity, check_count);
	} catch (const std::exception& e) {
		std::cerr << "error: " << e.what() << "\n";
		return 2;
	}
	return 0;
}
