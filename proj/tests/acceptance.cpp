// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance <path-to-lastfit-cli> <path-to-regression-config>

#include "lastfit/convexity.hpp"
#include "lastfit/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

using namespace lastfit;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 1;

struct Outcome {
	bool passed = false;
	std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& name, double budget_s, const std::function<Outcome()>& body) {
	const auto t0 = std::chrono::steady_clock::now();
	Outcome o;
	try {
		o = body();
	} catch (const std::exception& e) {
		o = {false, std::string("exception: ") + e.what()};
	}
	const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
	if (budget_s > 0 && secs > budget_s) {
		o.passed = false;
		o.detail += "; over time budget";
	}
	char buf[64];
	std::snprintf(buf, sizeof buf, " [%.1fs]", secs);
	std::cout << (o.passed ? "PASS " : "FAIL ") << id << " " << name << ": " << o.detail << buf << std::endl;
	if (!o.passed) ++failures;
}

std::string num(double v) {
	char buf[32];
	std::snprintf(buf, sizeof buf, "%.3g", v);
	return buf;
}

std::string describe(const CheckResult& r) { return r.name + " " + num(r.max_error) + " <= " + num(r.tolerance); }

std::string slurp(const fs::path& p) {
	std::ifstream in(p, std::ios::binary);
	std::ostringstream s;
	s << in.rdbuf();
	return s.str();
}

Network trained_regressor(const Dataset& train, std::size_t iterations, std::uint64_t seed,
                          std::vector<double> keep = {}) {
	const Network init = Network::initialize({{10, 10, Activation::tanh, true},
	                                          {10, 10, Activation::relu, true},
	                                          {10, 1, Activation::identity, false}},
	                                         seed);
	TrainConfig tc;
	tc.iterations = iterations;
	tc.batch_size = 50;
	tc.lr0 = 0.05;
	tc.weight_decay = 1e-3;
	tc.seed = seed;
	tc.dropout_keep = std::move(keep);
	return sgd_train(init, train, tc, {LossKind::squared_error}).network;
}

}  // namespace

int main(int argc, char** argv) {
	if (argc != 3) {
		std::cerr << "usage: acceptance <lastfit-cli> <regression-config>\n";
		return 2;
	}
	const fs::path cli = argv[1];
	const fs::path config = argv[2];
	const LossSpec se{LossKind::squared_error};

	criterion(1, "gradient correctness", 10, [] {
		const auto r = check_gradients(kSeed, 20, [](const Network& n, const Matrix& x, const Matrix& y,
		                                             const LossSpec& l) { return backprop(n, x, y, l); });
		return Outcome{r.passed && r.max_error <= 1e-5, describe(r) + " over " + r.detail};
	});

	criterion(2, "softmax cross-entropy Hessian", 30, [] {
		const auto rs = check_softmax_hessians(kSeed, 100);
		Outcome o{true, ""};
		for (const auto& r : rs) {
			o.passed = o.passed && r.passed;
			o.detail += (o.detail.empty() ? "" : "; ") + describe(r);
		}
		return o;
	});

	criterion(3, "post-training reaches the closed form", 60, [&] {
		const Dataset data = gen_synthetic(1000, kSeed);
		const Network net = trained_regressor(data, 500, kSeed);
		PostTrainConfig pc;
		pc.lambda = 1e-3;
		pc.iterations = 200000;
		pc.grad_tol = 1e-9;
		pc.eval_every = 1000;
		const PostTrainResult r = post_train(net, data, pc, se);
		const Matrix f = last_layer_features(net, data.x);
		const auto sol = krr_solve(f, data.y, pc.lambda, KrrConvention::objective_consistent);
		const LastLayerProblem problem(f, data.y, Activation::identity, se, pc.lambda);
		Matrix grad;
		const double optimum = problem.objective_and_gradient(sol.w.transpose(), grad);
		const double grad_norm = std::sqrt(sq_frobenius(grad));
		const double w_norm = std::sqrt(sq_frobenius(sol.w));
		const double reached = problem.objective(last_layer_parameters(r.network));
		const double rel = std::abs(reached - optimum) / std::abs(optimum);
		return Outcome{rel <= 1e-6 && grad_norm <= 1e-8 * (1 + w_norm),
		               "objective rel gap " + num(rel) + " <= 1e-06 after " + std::to_string(r.iterations_run) +
		                   " iterations; ||grad J(W*)|| " + num(grad_norm) + " <= " + num(1e-8 * (1 + w_norm))};
	});

	criterion(4, "push-through identity", 0, [] {
		const auto r = check_push_through(kSeed, 50);
		return Outcome{r.passed, describe(r)};
	});

	criterion(5, "regression table ordering", 600, [&] {
		const ExperimentConfig cfg = load_experiment_config(config);
		if (cfg.seeds.size() < 5) return Outcome{false, "config has fewer than 5 seeds"};
		const auto med = median_rows(run_experiment(cfg));
		bool ordered = true;
		std::string detail;
		for (const auto& m : med) {
			ordered = ordered && m.optimal && *m.optimal <= m.posttrain && m.posttrain <= m.classic;
			detail += std::to_string(m.iterations) + ": " + num(m.classic) + "/" + num(m.posttrain) + "/" +
			          (m.optimal ? num(*m.optimal) : std::string("NA")) + "  ";
		}
		const double gap_first = med.front().classic - med.front().posttrain;
		const double gap_last = med.back().classic - med.back().posttrain;
		detail += "gap " + num(gap_first) + " -> " + num(gap_last);
		return Outcome{ordered && gap_first > gap_last, "median classic/post/optimal RMSE " + detail};
	});

	criterion(6, "frozen layers and dropout independence", 0, [&] {
		const Dataset data = gen_synthetic(600, kSeed);
		const Network plain = trained_regressor(data, 100, kSeed);
		const Network dropped = trained_regressor(data, 100, kSeed, {0.8, 0.8});
		bool ok = !(plain == dropped);
		for (const PostTrainMode mode : {PostTrainMode::full_batch_backtracking, PostTrainMode::minibatch}) {
			PostTrainConfig pc;
			pc.mode = mode;
			pc.iterations = 50;
			pc.batch_size = 50;
			for (const Network* net : {&plain, &dropped}) {
				const PostTrainResult r = post_train(*net, data, pc, se);
				for (std::size_t l = 0; l + 1 < net->depth(); ++l)
					ok = ok && r.network.layer(l).weights == net->layer(l).weights &&
					     r.network.layer(l).bias == net->layer(l).bias;
				const Network restored = network_from_json(nlohmann::json::parse(network_to_json(*net).dump()));
				const PostTrainResult again = post_train(restored, data, pc, se);
				ok = ok && again.network == r.network && again.metrics == r.metrics;
			}
		}
		return Outcome{ok, "lower layers bit-identical; results depend only on the network weights"};
	});

	criterion(7, "monotone post-training and midpoint convexity", 0, [&] {
		const auto mono = check_posttrain_monotone(kSeed, 20);
		const Dataset data = gen_synthetic(500, kSeed + 1);
		PostTrainConfig pc;
		pc.iterations = 100;
		const PostTrainResult r = post_train(trained_regressor(data, 200, kSeed), data, pc, se);
		double worst = 0;
		const auto& recs = r.metrics.records();
		for (std::size_t i = 1; i < recs.size(); ++i) worst = std::max(worst, *recs[i].objective - *recs[i - 1].objective);
		const auto mid = check_midpoint_convexity(kSeed, 200);  // 100 segments per pairing
		return Outcome{mono.passed && worst <= 0 && mid.passed,
		               describe(mono) + "; synthetic run increase " + num(worst) + "; " + describe(mid)};
	});

	criterion(8, "RKHS norm bound", 0, [] {
		const auto r = check_rkhs_bound(kSeed, 100);
		return Outcome{r.passed, describe(r) + "; " + r.detail};
	});

	criterion(9, "determinism", 0, [&] {
		nlohmann::json j = experiment_config_to_json(load_experiment_config(config));
		j["dataset"]["n"] = 1000;
		j["train"]["iterations"] = 300;
		j["checkpoints"] = {100, 200, 300};
		j["seeds"] = {1, 2};
		const fs::path dir = fs::temp_directory_path() / "lastfit_acceptance";
		fs::create_directories(dir);
		std::ofstream(dir / "small.json") << j.dump(2);
		for (const char* run : {"a", "b"}) {
			const std::string cmd = "\"" + cli.string() + "\" compare --config \"" + (dir / "small.json").string() +
			                        "\" --out \"" + (dir / run).string() + "\" > /dev/null";
			if (std::system(cmd.c_str()) != 0) return Outcome{false, "compare exited with an error"};
		}
		const std::string a = slurp(dir / "a" / "comparison.csv"), b = slurp(dir / "b" / "comparison.csv");
		const bool same_csv = !a.empty() && a == b;

		const Dataset data = gen_synthetic(800, kSeed);
		const Network init = Network::initialize({{10, 10, Activation::tanh, true},
		                                          {10, 10, Activation::relu, true},
		                                          {10, 1, Activation::identity, false}},
		                                         kSeed);
		TrainConfig tc;
		tc.batch_size = 50;
		tc.seed = kSeed;
		tc.weight_decay = 1e-3;
		tc.dropout_keep = {0.9, 0.9};
		tc.iterations = 500;
		const Network whole = sgd_train(init, data, tc, se).network;
		tc.iterations = 250;
		const Network half = sgd_train(init, data, tc, se).network;
		tc.start_iteration = 250;
		const Network resumed =
			sgd_train(network_from_json(nlohmann::json::parse(network_to_json(half).dump())), data, tc, se).network;
		const bool same_net = resumed == whole;
		fs::remove_all(dir);
		return Outcome{same_csv && same_net, std::string("CSV ") + (same_csv ? "byte-identical" : "differs") +
		                                         "; resumed training " + (same_net ? "bit-identical" : "differs")};
	});

	criterion(10, "post-training iterations skip the frozen layers", 0, [&] {
		const Dataset data = gen_synthetic(500, kSeed);
		const Network net = trained_regressor(data, 100, kSeed);
		std::size_t total = 0, iterations = 0, cache = 0;
		for (const PostTrainMode mode : {PostTrainMode::full_batch_backtracking, PostTrainMode::minibatch}) {
			PostTrainConfig pc;
			pc.mode = mode;
			pc.iterations = 100;
			pc.batch_size = 50;
			const PostTrainResult r = post_train(net, data, pc, se, &data);
			for (std::size_t c : r.frozen_products_per_iteration) total += c;
			iterations += r.frozen_products_per_iteration.size();
			cache += r.cache_build_products;
		}
		return Outcome{total == 0 && iterations == 200 && cache > 0,
		               std::to_string(total) + " frozen-layer products over " + std::to_string(iterations) +
		                   " iterations (cache build used " + std::to_string(cache) + ")"};
	});

	std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
	return failures == 0 ? 0 : 1;
}
