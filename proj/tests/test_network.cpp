#include "oracles.hpp"

#include "lastfit/network.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>

using namespace lastfit;

namespace {

Network three_layer(std::uint64_t seed, Activation out, Index classes = 1) {
	Network net = Network::initialize({{4, 6, Activation::tanh, true},
	                                   {6, 5, Activation::relu, true},
	                                   {5, classes, out, false}},
	                                  seed);
	Rng rng = Rng::stream(seed, 99);
	net.bias(0) = oracle::random_matrix(rng, 6, 1, -0.5, 0.5).col(0);
	net.bias(1) = oracle::random_matrix(rng, 5, 1, -0.5, 0.5).col(0);
	return net;
}

Matrix one_hot_rows(Rng& rng, Index rows, Index classes) {
	Matrix y = Matrix::Zero(rows, classes);
	for (Index i = 0; i < rows; ++i) y(i, static_cast<Index>(rng.below(static_cast<std::uint64_t>(classes)))) = 1;
	return y;
}

double fd_rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4}); }

}  // namespace

TEST_CASE("linear single layer forward is x W^T") {
	Rng rng = Rng::stream(21, 0);
	const Matrix w = oracle::random_matrix(rng, 3, 4);
	const Network net({Layer{{4, 3, Activation::identity, false}, w, Vector()}});
	const Matrix x = oracle::random_matrix(rng, 5, 4);
	CHECK(forward(net, x).output() == oracle::naive_matmul(x, Matrix(w.transpose())));
}

TEST_CASE("zero weights give zero output") {
	Network net = Network::initialize({{3, 4, Activation::tanh, true}, {4, 2, Activation::identity, false}}, 1);
	net.set_parameters(0, Matrix::Zero(4, 3), Vector::Zero(4));
	net.set_parameters(1, Matrix::Zero(2, 4));
	CHECK(forward(net, Matrix::Ones(3, 3)).output().isZero(0));
}

TEST_CASE("forward matches manual composition") {
	Rng rng = Rng::stream(22, 0);
	const Network reg = three_layer(5, Activation::identity, 2);
	const Network cls = three_layer(6, Activation::softmax, 3);
	const Matrix x = oracle::random_matrix(rng, 9, 4);
	CHECK(oracle::rel_diff(forward(reg, x).output(), oracle::manual_forward(reg, x, 3)) <= 1e-12);
	CHECK(oracle::rel_diff(forward(cls, x).output(), oracle::manual_forward(cls, x, 3)) <= 1e-12);
	const ForwardTrace t = forward(reg, x);
	CHECK(t.pre.size() == 3);
	CHECK(t.post.size() == 3);
}

TEST_CASE("feature map") {
	Rng rng = Rng::stream(23, 0);
	const Matrix x = oracle::random_matrix(rng, 6, 4);
	const Network one = Network::initialize({{4, 2, Activation::identity, false}}, 3);
	CHECK(feature_map(one, x) == x);

	const Network net = three_layer(7, Activation::identity);
	const ForwardTrace t = forward(net, x);
	const Matrix f = feature_map(net, x);
	CHECK(f == t.post[1]);
	CHECK(feature_map(net, x) == f);
	CHECK(apply_last_layer(net, f) == t.output());
	CHECK(oracle::rel_diff(f, oracle::manual_forward(net, x, 2)) <= 1e-12);
}

TEST_CASE("loss_eval") {
	Rng rng = Rng::stream(24, 0);
	const Matrix y = oracle::random_matrix(rng, 5, 2);
	CHECK(loss_eval({LossKind::squared_error}, y, y) == 0.0);

	const Matrix uniform = Matrix::Constant(4, 10, 0.1);
	const Matrix hot = one_hot_rows(rng, 4, 10);
	CHECK(loss_eval({LossKind::cross_entropy}, uniform, hot) == Catch::Approx(std::log(10.0)).epsilon(1e-12));

	const Matrix out = oracle::random_matrix(rng, 7, 3);
	const Matrix tgt = oracle::random_matrix(rng, 7, 3);
	CHECK(loss_eval({LossKind::squared_error}, out, tgt) ==
	      Catch::Approx(oracle::per_sample_squared(out, tgt)).epsilon(1e-13));

	const Matrix probs = softmax_rows(oracle::random_matrix(rng, 7, 3, -3, 3));
	const Matrix labels = one_hot_rows(rng, 7, 3);
	CHECK(loss_eval({LossKind::cross_entropy}, probs, labels) ==
	      Catch::Approx(oracle::per_sample_cross_entropy(probs, labels)).epsilon(1e-13));

	Matrix bad = labels;
	bad(0, 0) = 0.5;
	CHECK_THROWS_AS(loss_eval({LossKind::cross_entropy}, probs, bad), std::invalid_argument);
	CHECK_THROWS_AS(loss_eval({LossKind::squared_error}, out, Matrix(tgt.leftCols(2))), std::invalid_argument);
}

TEST_CASE("probability floor keeps cross entropy finite") {
	Matrix p(1, 2), y(1, 2);
	p << 1.0, 0.0;
	y << 0.0, 1.0;
	CHECK(loss_eval({LossKind::cross_entropy}, p, y) == Catch::Approx(-std::log(1e-12)));
}

TEST_CASE("softmax rows sum to one and ignore shifts") {
	Rng rng = Rng::stream(25, 0);
	for (int t = 0; t < 50; ++t) {
		const Matrix z = oracle::random_matrix(rng, 4, 6, -5, 5);
		const Matrix p = softmax_rows(z);
		for (Index i = 0; i < p.rows(); ++i) {
			CHECK(std::abs(p.row(i).sum() - 1.0) <= 1e-12);
			std::vector<double> zi(z.row(i).data(), z.row(i).data() + z.cols());
			const auto direct = oracle::direct_softmax(zi);
			for (Index j = 0; j < p.cols(); ++j) CHECK(std::abs(p(i, j) - direct[static_cast<std::size_t>(j)]) <= 1e-14);
		}
		const Matrix shifted = softmax_rows(Matrix(z.array() + rng.uniform(-10, 10)));
		CHECK((p - shifted).cwiseAbs().maxCoeff() <= 1e-12);
	}
	Matrix huge(1, 3);
	huge << 1000, 999, -1000;
	CHECK(softmax_rows(huge).allFinite());
}

TEST_CASE("backprop on a linear least squares layer") {
	Rng rng = Rng::stream(26, 0);
	const Matrix w = oracle::random_matrix(rng, 2, 3);
	const Network net({Layer{{3, 2, Activation::identity, false}, w, Vector()}});
	const Matrix x = oracle::random_matrix(rng, 8, 3), y = oracle::random_matrix(rng, 8, 2);
	const Gradients g = backprop(net, x, y, {LossKind::squared_error});
	const Matrix resid = oracle::naive_matmul(x, Matrix(w.transpose())) - y;
	const Matrix want = (2.0 / 8.0) * oracle::naive_matmul(Matrix(resid.transpose()), x);
	CHECK(oracle::rel_diff(g.weights[0], want) <= 1e-13);

	const Matrix exact = forward(net, x).output();
	const Gradients zero = backprop(net, x, exact, {LossKind::squared_error});
	CHECK(zero.weights[0].isZero(0));
	CHECK(zero.loss == 0.0);
}

TEST_CASE("backprop matches central differences on three-layer nets") {
	Rng rng = Rng::stream(27, 0);
	for (const bool ce : {false, true}) {
		const Network net = three_layer(ce ? 8 : 9, ce ? Activation::softmax : Activation::identity, ce ? 4 : 2);
		const LossSpec loss{ce ? LossKind::cross_entropy : LossKind::squared_error};
		const Matrix x = oracle::random_matrix(rng, 10, 4);
		const Matrix y = ce ? one_hot_rows(rng, 10, 4) : oracle::random_matrix(rng, 10, 2);
		const Gradients g = backprop(net, x, y, loss);
		for (std::size_t l = 0; l < net.depth(); ++l) {
			const Matrix fd = oracle::fd_gradient(
				[&](const Matrix& w) {
					Network n = net;
					n.weights(l) = w;
					return loss_eval(loss, forward(n, x).output(), y);
				},
				net.layer(l).weights, 1e-5);
			for (Index i = 0; i < fd.size(); ++i) CHECK(fd_rel(g.weights[l].data()[i], fd.data()[i]) <= 1e-5);
			if (net.layer(l).spec.has_bias) {
				const Matrix fdb = oracle::fd_gradient(
					[&](const Matrix& b) {
						Network n = net;
						n.bias(l) = b.col(0);
						return loss_eval(loss, forward(n, x).output(), y);
					},
					Matrix(net.layer(l).bias), 1e-5);
				for (Index i = 0; i < fdb.size(); ++i) CHECK(fd_rel(g.bias[l](i), fdb(i, 0)) <= 1e-5);
			}
		}
	}
}

TEST_CASE("relu derivative at zero is zero") {
	Matrix w1(1, 1), w2(1, 1);
	w1 << 1.0;
	w2 << 1.0;
	const Network net({Layer{{1, 1, Activation::relu, false}, w1, Vector()},
	                   Layer{{1, 1, Activation::identity, false}, w2, Vector()}});
	const Gradients g = backprop(net, Matrix::Zero(1, 1), Matrix::Ones(1, 1), {LossKind::squared_error});
	CHECK(g.weights[0](0, 0) == 0.0);
}

TEST_CASE("network validation") {
	CHECK_THROWS_AS(Network::initialize({{3, 4, Activation::softmax, false}, {4, 2, Activation::identity, false}}, 1),
	                std::invalid_argument);
	CHECK_THROWS_AS(Network::initialize({{3, 4, Activation::tanh, false}, {5, 2, Activation::identity, false}}, 1),
	                std::invalid_argument);
	CHECK_THROWS_AS(Network(std::vector<Layer>{}), std::invalid_argument);
	CHECK_THROWS_AS(require_loss_pairing({LossKind::cross_entropy}, Activation::identity), std::invalid_argument);
	CHECK_THROWS_AS(require_loss_pairing({LossKind::squared_error}, Activation::softmax), std::invalid_argument);
	const Network net = three_layer(1, Activation::identity);
	CHECK_THROWS_AS(forward(net, Matrix::Ones(2, 3)), std::invalid_argument);
}

TEST_CASE("initialization is bounded and seeded") {
	const std::vector<LayerSpec> specs{{10, 10, Activation::tanh, true}, {10, 1, Activation::identity, false}};
	const Network a = Network::initialize(specs, 42), b = Network::initialize(specs, 42),
	              c = Network::initialize(specs, 43);
	CHECK(a == b);
	CHECK_FALSE(a == c);
	CHECK(a.layer(0).weights.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 20.0));
	CHECK(a.layer(1).weights.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 11.0));
	CHECK(a.layer(0).bias.isZero(0));
}

TEST_CASE("dropout masks scale hidden activations only") {
	Rng rng = Rng::stream(28, 0);
	const Network net = three_layer(10, Activation::identity);
	const Matrix x = oracle::random_matrix(rng, 3, 4);
	const ForwardTrace plain = forward(net, x);
	DropoutMasks masks{Matrix::Constant(3, 6, 2.0), Matrix()};
	const ForwardTrace dropped = forward(net, x, &masks);
	CHECK(dropped.post[0] == Matrix(2.0 * plain.post[0]));
	CHECK_FALSE(dropped.output() == plain.output());
}

TEST_CASE("network JSON round trip is bit exact") {
	const Network net = three_layer(11, Activation::softmax, 3);
	const nlohmann::json j = network_to_json(net);
	CHECK(j.at("format_version") == kNetworkFormatVersion);
	const Network back = network_from_json(nlohmann::json::parse(j.dump()));
	CHECK(back == net);
}

TEST_CASE("op probe counts products per layer") {
	op_probe().reset();
	const Network net = three_layer(12, Activation::identity);
	forward(net, Matrix::Ones(2, 4));
	CHECK(op_probe().count(0) == 1);
	CHECK(op_probe().count(2) == 1);
	CHECK(op_probe().total_below(2) == 2);
}
