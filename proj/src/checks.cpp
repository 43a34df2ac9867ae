#include "lastfit/convexity.hpp"
#include "lastfit/experiment.hpp"
#include "lastfit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lastfit {

namespace {

constexpr double kGradStep = 1e-5;
constexpr double kGradTol = 1e-5;
constexpr double kGradFloor = 1e-4;
constexpr double kHessStep = 1e-4;
constexpr double kHessTol = 1e-4;
constexpr double kPsdTol = 1e-10;
constexpr double kDominanceTol = 1e-12;
constexpr double kEigTol = 1e-13;

Matrix uniform_matrix(Rng& rng, Index rows, Index cols, double lo = -1.0, double hi = 1.0) {
	Matrix m(rows, cols);
	for (Index i = 0; i < rows; ++i)
		for (Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
	return m;
}

Matrix one_hot(Rng& rng, Index rows, Index classes) {
	Matrix y = Matrix::Zero(rows, classes);
	for (Index i = 0; i < rows; ++i) y(i, static_cast<Index>(rng.below(static_cast<std::uint64_t>(classes)))) = 1.0;
	return y;
}

Index dim(Rng& rng, Index lo, Index hi) { return lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

struct GradientCase {
	Network net;
	Matrix x, y;
	LossSpec loss;
};

GradientCase random_gradient_case(Rng& rng, bool cross_entropy) {
	const std::size_t depth = 1 + rng.below(3);
	const Activation hidden[] = {Activation::identity, Activation::tanh, Activation::relu};
	std::vector<LayerSpec> specs;
	Index in = dim(rng, 1, 8);
	for (std::size_t l = 0; l < depth; ++l) {
		const bool last = l + 1 == depth;
		LayerSpec s;
		s.input_dim = in;
		s.output_dim = last && cross_entropy ? dim(rng, 2, 8) : dim(rng, 1, 8);
		s.activation = last ? (cross_entropy ? Activation::softmax : Activation::identity) : hidden[rng.below(3)];
		s.has_bias = rng.bernoulli(0.5);
		specs.push_back(s);
		in = s.output_dim;
	}
	Network net = Network::initialize(specs, rng.next());
	for (std::size_t l = 0; l < depth; ++l)
		if (specs[l].has_bias) net.bias(l) = uniform_matrix(rng, specs[l].output_dim, 1, -0.5, 0.5).col(0);
	const Index batch = dim(rng, 1, 16);
	Matrix x = uniform_matrix(rng, batch, specs.front().input_dim);
	Matrix y = cross_entropy ? one_hot(rng, batch, specs.back().output_dim)
	                         : uniform_matrix(rng, batch, specs.back().output_dim);
	return {std::move(net), std::move(x), std::move(y),
	        LossSpec{cross_entropy ? LossKind::cross_entropy : LossKind::squared_error}};
}

double loss_at(const Network& net, const GradientCase& c) {
	return loss_eval(c.loss, forward(net, c.x).output(), c.y);
}

double rel_error(double a, double b) {
	return std::abs(a - b) / std::max({std::abs(a), std::abs(b), kGradFloor});
}

SoftmaxInstance<double> random_softmax_instance(Rng& rng, Index max_classes = 6, Index max_features = 8) {
	SoftmaxInstance<double> inst;
	const Index m = dim(rng, 2, max_classes);
	const Index n = dim(rng, 1, max_features);
	inst.w = uniform_matrix(rng, m, n);
	inst.x = uniform_matrix(rng, n, 1).col(0);
	inst.true_class = static_cast<Index>(rng.below(static_cast<std::uint64_t>(m)));
	return inst;
}

// Central-difference Hessian of the cross-entropy value in the row-major
// flattening of w.
Matrix fd_hessian(const SoftmaxInstance<double>& inst, double h) {
	const Index d = inst.w.size();
	Matrix out(d, d);
	auto value = [&](Index r, double dr, Index c, double dc) {
		SoftmaxInstance<double> p = inst;
		p.w.data()[r] += dr;
		p.w.data()[c] += dc;
		return ce_value(p);
	};
	for (Index r = 0; r < d; ++r)
		for (Index c = 0; c < d; ++c)
			out(r, c) = (value(r, h, c, h) - value(r, h, c, -h) - value(r, -h, c, h) + value(r, -h, c, -h)) /
			            (4 * h * h);
	return out;
}

LastLayerProblem random_last_layer_problem(Rng& rng, bool cross_entropy, double lambda) {
	const Index n = dim(rng, 5, 40);
	const Index d = dim(rng, 1, 8);
	const Index out = cross_entropy ? dim(rng, 2, 5) : dim(rng, 1, 3);
	Matrix f = uniform_matrix(rng, n, d);
	Matrix y = cross_entropy ? one_hot(rng, n, out) : uniform_matrix(rng, n, out);
	return LastLayerProblem(std::move(f), std::move(y), cross_entropy ? Activation::softmax : Activation::identity,
	                        LossSpec{cross_entropy ? LossKind::cross_entropy : LossKind::squared_error}, lambda);
}

CheckResult finish(CheckResult r) {
	r.passed = r.max_error <= r.tolerance;
	return r;
}

}  // namespace

CheckResult check_gradients(std::uint64_t seed, std::size_t count, const GradientFn& gradient) {
	CheckResult r{"gradient_vs_finite_differences", false, 0, kGradTol, count, ""};
	Rng rng = Rng::stream(seed, 101);
	std::size_t entries = 0;
	for (std::size_t c = 0; c < count; ++c) {
		const GradientCase gc = random_gradient_case(rng, c % 2 == 1);
		const Gradients g = gradient(gc.net, gc.x, gc.y, gc.loss);
		for (std::size_t l = 0; l < gc.net.depth(); ++l) {
			const Layer& layer = gc.net.layer(l);
			for (Index i = 0; i < layer.weights.rows(); ++i)
				for (Index j = 0; j < layer.weights.cols(); ++j) {
					Network plus = gc.net, minus = gc.net;
					plus.weights(l)(i, j) += kGradStep;
					minus.weights(l)(i, j) -= kGradStep;
					const double fd = (loss_at(plus, gc) - loss_at(minus, gc)) / (2 * kGradStep);
					r.max_error = std::max(r.max_error, rel_error(g.weights[l](i, j), fd));
					++entries;
				}
			for (Index i = 0; i < layer.bias.size(); ++i) {
				Network plus = gc.net, minus = gc.net;
				plus.bias(l)(i) += kGradStep;
				minus.bias(l)(i) -= kGradStep;
				const double fd = (loss_at(plus, gc) - loss_at(minus, gc)) / (2 * kGradStep);
				r.max_error = std::max(r.max_error, rel_error(g.bias[l](i), fd));
				++entries;
			}
		}
	}
	r.detail = std::to_string(entries) + " gradient entries";
	return finish(r);
}

std::vector<CheckResult> check_softmax_hessians(std::uint64_t seed, std::size_t count) {
	CheckResult fd{"hessian_vs_finite_differences", false, 0, kHessTol, count, "relative max-norm"};
	CheckResult psd{"hessian_min_eigenvalue", false, 0, kPsdTol, count, "max of -lambda_min"};
	CheckResult dom{"diagonal_dominance_identity", false, 0, kDominanceTol, count, ""};
	Rng rng = Rng::stream(seed, 102);
	for (std::size_t c = 0; c < count; ++c) {
		const auto inst = random_softmax_instance(rng);
		const Matrix h = ce_hessian(inst);
		const Matrix h_fd = fd_hessian(inst, kHessStep);
		const double scale = std::max(max_abs(h), 1e-300);
		fd.max_error = std::max(fd.max_error, max_abs(Matrix(h - h_fd)) / scale);
		psd.max_error = std::max(psd.max_error, -min_eigenvalue_symmetric(h, kEigTol));
		dom.max_error = std::max(dom.max_error, diagonal_dominance_gap(p_matrix(inst)));
	}
	psd.max_error = std::max(psd.max_error, 0.0);
	return {finish(fd), finish(psd), finish(dom)};
}

CheckResult check_softmax_rows(std::uint64_t seed, std::size_t count) {
	CheckResult r{"softmax_sum_and_shift", false, 0, 1e-12, count, ""};
	Rng rng = Rng::stream(seed, 103);
	for (std::size_t c = 0; c < count; ++c) {
		const Matrix z = uniform_matrix(rng, dim(rng, 1, 8), dim(rng, 2, 10), -5.0, 5.0);
		const double shift = rng.uniform(-10.0, 10.0);
		const Matrix p = softmax_rows(z);
		const Matrix q = softmax_rows((z.array() + shift).matrix());
		for (Index i = 0; i < p.rows(); ++i) r.max_error = std::max(r.max_error, std::abs(p.row(i).sum() - 1.0));
		r.max_error = std::max(r.max_error, max_abs(Matrix(p - q)));
	}
	return finish(r);
}

CheckResult check_push_through(std::uint64_t seed, std::size_t count) {
	CheckResult r{"push_through_identity", false, 0, 1e-8, count, "primal vs dual weights, relative"};
	Rng rng = Rng::stream(seed, 104);
	for (std::size_t c = 0; c < count; ++c) {
		const Index n = dim(rng, 1, 200);
		const Index d = dim(rng, 1, 20);
		const Matrix f = uniform_matrix(rng, n, d);
		const Matrix y = uniform_matrix(rng, n, dim(rng, 1, 3));
		const double lambda = std::pow(10.0, rng.uniform(-5.0, -1.0));
		const auto sol = krr_solve(f, y, lambda, KrrConvention::objective_consistent);
		const Matrix primal = primal_ridge(f, y, krr_shift(lambda, n, KrrConvention::objective_consistent));
		r.max_error = std::max(r.max_error, max_abs(Matrix(primal - sol.w)) / std::max(max_abs(sol.w), 1e-300));
	}
	return finish(r);
}

CheckResult check_representer(std::uint64_t seed, std::size_t count) {
	CheckResult r{"representer_predictions", false, 0, 1e-8, count, "F W* vs K alpha, relative"};
	Rng rng = Rng::stream(seed, 105);
	for (std::size_t c = 0; c < count; ++c) {
		const Index n = dim(rng, 2, 120);
		const Matrix f = uniform_matrix(rng, n, dim(rng, 1, 12));
		const Matrix y = uniform_matrix(rng, n, dim(rng, 1, 3));
		const auto sol = krr_solve(f, y, 1e-3, c % 2 ? KrrConvention::paper_literal : KrrConvention::objective_consistent);
		const Matrix primal = matmul(f, sol.w);
		const Matrix dual = matmul(gram(f).k, sol.alpha);
		r.max_error = std::max(r.max_error, max_abs(Matrix(primal - dual)) / std::max(max_abs(dual), 1e-300));
	}
	return finish(r);
}

CheckResult check_rkhs_bound(std::uint64_t seed, std::size_t count) {
	CheckResult r{"rkhs_norm_bound", false, 0, 1e-10, count,
	              "max(proj - l2) overall; equality within 1e-8 at full rank"};
	Rng rng = Rng::stream(seed, 106);
	double equality_gap = 0;
	for (std::size_t c = 0; c < count; ++c) {
		const Index d = dim(rng, 1, 10);
		const Index n = dim(rng, 1, 30);
		const Index rank = dim(rng, 1, std::min(n, d));
		const Matrix f = matmul(uniform_matrix(rng, n, rank), uniform_matrix(rng, rank, d));
		const Vector w = uniform_matrix(rng, d, 1).col(0);
		const auto norms = rkhs_norm_bound(w, f);
		r.max_error = std::max(r.max_error, norms.proj_norm - norms.l2_norm);
		if (norms.rank == d) equality_gap = std::max(equality_gap, std::abs(norms.proj_norm - norms.l2_norm));
	}
	r.max_error = std::max(r.max_error, 0.0);
	r.passed = r.max_error <= r.tolerance && equality_gap <= 1e-8;
	std::ostringstream os;
	os << "full-rank equality gap " << equality_gap;
	r.detail = os.str();
	return r;
}

CheckResult check_spd_residual(std::uint64_t seed, std::size_t count) {
	CheckResult r{"solve_spd_residual", false, 0, 1e-8, count, "||AX-B||_inf / (1 + ||B||_inf)"};
	Rng rng = Rng::stream(seed, 107);
	for (std::size_t c = 0; c < count; ++c) {
		const Index n = dim(rng, 1, 50);
		const Matrix m = uniform_matrix(rng, n, n);
		Matrix a = matmul(m.transpose(), m);
		a.diagonal().array() += 1.0;
		const Matrix b = uniform_matrix(rng, n, dim(rng, 1, 4));
		const Matrix x = solve_spd(a, b);
		r.max_error = std::max(r.max_error, max_abs(Matrix(matmul(a, x) - b)) / (1.0 + max_abs(b)));
	}
	return finish(r);
}

CheckResult check_gram_psd(std::uint64_t seed, std::size_t count) {
	CheckResult r{"gram_psd", false, 0, 0, count, "max of -lambda_min / (1e-8 trace/N)"};
	Rng rng = Rng::stream(seed, 108);
	r.tolerance = 1.0;
	for (std::size_t c = 0; c < count; ++c) {
		const Index n = dim(rng, 1, 60);
		const Matrix k = gram(uniform_matrix(rng, n, dim(rng, 1, 8))).k;
		const double bound = 1e-8 * k.trace() / static_cast<double>(n);
		const double lmin = min_eigenvalue_symmetric(k, kEigTol);
		r.max_error = std::max(r.max_error, bound > 0 ? -lmin / bound : 0.0);
	}
	r.max_error = std::max(r.max_error, 0.0);
	return finish(r);
}

CheckResult check_posttrain_monotone(std::uint64_t seed, std::size_t count) {
	CheckResult r{"posttrain_monotone_objective", false, 0, 0, count, "largest objective increase"};
	Rng rng = Rng::stream(seed, 109);
	for (std::size_t c = 0; c < count; ++c) {
		const bool ce = c % 2 == 1;
		GradientCase gc = random_gradient_case(rng, ce);
		Dataset ds{gc.x, gc.y, {}, {}, "check"};
		PostTrainConfig pc;
		pc.iterations = 30;
		pc.lambda = 1e-3;
		const auto res = post_train(gc.net, ds, pc, gc.loss);
		const auto& recs = res.metrics.records();
		for (std::size_t i = 1; i < recs.size(); ++i)
			r.max_error = std::max(r.max_error, *recs[i].objective - *recs[i - 1].objective);
	}
	return finish(r);
}

CheckResult check_midpoint_convexity(std::uint64_t seed, std::size_t count) {
	CheckResult r{"midpoint_convexity", false, 0, 1e-10, count, "J(mid) - mean(J(A), J(B))"};
	Rng rng = Rng::stream(seed, 110);
	double worst = -1e300;
	for (std::size_t c = 0; c < count; ++c) {
		const bool ce = c % 2 == 1;
		const LastLayerProblem p = random_last_layer_problem(rng, ce, 1e-3);
		const Index out = p.targets().cols(), d = p.features().cols();
		const Matrix a = uniform_matrix(rng, out, d, -3.0, 3.0);
		const Matrix b = uniform_matrix(rng, out, d, -3.0, 3.0);
		const Matrix mid = 0.5 * (a + b);
		worst = std::max(worst, p.objective(mid) - 0.5 * (p.objective(a) + p.objective(b)));
	}
	r.max_error = std::max(worst, 0.0);
	return finish(r);
}

bool CheckReport::passed() const {
	return std::all_of(results.begin(), results.end(), [](const CheckResult& c) { return c.passed; });
}

nlohmann::json CheckReport::to_json() const {
	nlohmann::json checks = nlohmann::json::array();
	for (const auto& c : results)
		checks.push_back({{"name", c.name},
		                  {"passed", c.passed},
		                  {"max_error", c.max_error},
		                  {"tolerance", c.tolerance},
		                  {"cases", c.cases},
		                  {"detail", c.detail}});
	return {{"seed", seed}, {"passed", passed()}, {"checks", checks}};
}

CheckReport check_suite(std::uint64_t seed) {
	CheckReport report;
	report.seed = seed;
	auto& out = report.results;
	out.push_back(check_gradients(seed, 20, [](const Network& n, const Matrix& x, const Matrix& y,
	                                           const LossSpec& l) { return backprop(n, x, y, l); }));
	out.push_back(check_softmax_rows(seed, 100));
	for (auto& c : check_softmax_hessians(seed, 100)) out.push_back(std::move(c));
	out.push_back(check_spd_residual(seed, 100));
	out.push_back(check_gram_psd(seed, 20));
	out.push_back(check_push_through(seed, 50));
	out.push_back(check_representer(seed, 20));
	out.push_back(check_rkhs_bound(seed, 100));
	out.push_back(check_midpoint_convexity(seed, 100));
	out.push_back(check_posttrain_monotone(seed, 10));
	return report;
}

ConvexityStats convexity_stats(std::uint64_t seed, std::size_t count) {
	ConvexityStats s;
	Rng rng = Rng::stream(seed, 102);
	double sum = 0;
	s.min_eigenvalue = 1e300;
	s.max_min_eigenvalue = -1e300;
	for (std::size_t c = 0; c < count; ++c) {
		const auto inst = random_softmax_instance(rng);
		const double lmin = min_eigenvalue_symmetric(ce_hessian(inst), kEigTol);
		s.min_eigenvalue = std::min(s.min_eigenvalue, lmin);
		s.max_min_eigenvalue = std::max(s.max_min_eigenvalue, lmin);
		s.max_dominance_gap = std::max(s.max_dominance_gap, diagonal_dominance_gap(p_matrix(inst)));
		sum += lmin;
		++s.instances;
	}
	s.mean_min_eigenvalue = count ? sum / static_cast<double>(count) : 0.0;
	return s;
}

}  // namespace lastfit
