// Independent reference computations for the unit tests. Nothing here calls
// into the library's numerics; only its plain data types are shared.

#pragma once

#include "lastfit/linalg.hpp"
#include "lastfit/network.hpp"
#include "lastfit/rng.hpp"

#include <Eigen/QR>

#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

using lastfit::Index;
using lastfit::Matrix;
using lastfit::Vector;

inline Matrix random_matrix(lastfit::Rng& rng, Index rows, Index cols, double lo = -1, double hi = 1) {
	Matrix m(rows, cols);
	for (Index i = 0; i < rows; ++i)
		for (Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
	return m;
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
	Matrix c(a.rows(), b.cols());
	for (Index i = 0; i < a.rows(); ++i)
		for (Index j = 0; j < b.cols(); ++j) {
			double s = 0;
			for (Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
			c(i, j) = s;
		}
	return c;
}

// Cyclic Jacobi rotations; returns all eigenvalues of a symmetric matrix.
inline std::vector<double> jacobi_eigenvalues(Matrix a) {
	const Index n = a.rows();
	for (int sweep = 0; sweep < 100; ++sweep) {
		double off = 0;
		for (Index p = 0; p < n; ++p)
			for (Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
		if (off < 1e-30) break;
		for (Index p = 0; p < n; ++p)
			for (Index q = p + 1; q < n; ++q) {
				if (a(p, q) == 0) continue;
				const double theta = (a(q, q) - a(p, p)) / (2 * a(p, q));
				const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
				const double c = 1 / std::sqrt(t * t + 1), s = t * c;
				for (Index k = 0; k < n; ++k) {
					const double akp = a(k, p), akq = a(k, q);
					a(k, p) = c * akp - s * akq;
					a(k, q) = s * akp + c * akq;
				}
				for (Index k = 0; k < n; ++k) {
					const double apk = a(p, k), aqk = a(q, k);
					a(p, k) = c * apk - s * aqk;
					a(q, k) = s * apk + c * aqk;
				}
			}
	}
	std::vector<double> ev(static_cast<std::size_t>(n));
	for (Index i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = a(i, i);
	return ev;
}

inline double jacobi_min_eigenvalue(const Matrix& a) {
	const auto ev = jacobi_eigenvalues(a);
	double m = ev.front();
	for (double v : ev) m = std::min(m, v);
	return m;
}

inline double act(lastfit::Activation a, double z) {
	switch (a) {
	case lastfit::Activation::tanh: return std::tanh(z);
	case lastfit::Activation::relu: return z > 0 ? z : 0.0;
	default: return z;
	}
}

// One sample at a time, neuron by neuron.
inline Matrix manual_forward(const lastfit::Network& net, const Matrix& x, std::size_t layers) {
	Matrix out(x.rows(), 0);
	for (Index s = 0; s < x.rows(); ++s) {
		std::vector<double> h(x.row(s).data(), x.row(s).data() + x.cols());
		for (std::size_t l = 0; l < layers; ++l) {
			const lastfit::Layer& layer = net.layer(l);
			std::vector<double> z(static_cast<std::size_t>(layer.spec.output_dim));
			for (Index o = 0; o < layer.spec.output_dim; ++o) {
				double v = layer.spec.has_bias ? layer.bias(o) : 0.0;
				for (Index i = 0; i < layer.spec.input_dim; ++i) v += layer.weights(o, i) * h[static_cast<std::size_t>(i)];
				z[static_cast<std::size_t>(o)] = v;
			}
			if (layer.spec.activation == lastfit::Activation::softmax) {
				double sum = 0;
				for (double& v : z) sum += (v = std::exp(v));
				for (double& v : z) v /= sum;
			} else {
				for (double& v : z) v = act(layer.spec.activation, v);
			}
			h = std::move(z);
		}
		if (s == 0) out.resize(x.rows(), static_cast<Index>(h.size()));
		for (std::size_t j = 0; j < h.size(); ++j) out(s, static_cast<Index>(j)) = h[j];
	}
	return out;
}

inline double per_sample_squared(const Matrix& out, const Matrix& y) {
	double total = 0;
	for (Index i = 0; i < out.rows(); ++i) {
		double s = 0;
		for (Index j = 0; j < out.cols(); ++j) s += (out(i, j) - y(i, j)) * (out(i, j) - y(i, j));
		total += s;
	}
	return total / static_cast<double>(out.rows());
}

inline double per_sample_cross_entropy(const Matrix& out, const Matrix& y) {
	double total = 0;
	for (Index i = 0; i < out.rows(); ++i)
		for (Index j = 0; j < out.cols(); ++j)
			if (y(i, j) == 1.0) total -= std::log(std::max(out(i, j), 1e-12));
	return total / static_cast<double>(out.rows());
}

// Central differences of a scalar function of a matrix argument.
inline Matrix fd_gradient(const std::function<double(const Matrix&)>& f, const Matrix& at, double h) {
	Matrix g(at.rows(), at.cols());
	for (Index i = 0; i < at.rows(); ++i)
		for (Index j = 0; j < at.cols(); ++j) {
			Matrix p = at, m = at;
			p(i, j) += h;
			m(i, j) -= h;
			g(i, j) = (f(p) - f(m)) / (2 * h);
		}
	return g;
}

// Central-difference Hessian over the row-major flattening of the argument.
inline Matrix fd_hessian(const std::function<double(const Matrix&)>& f, const Matrix& at, double h) {
	const Index d = at.size();
	Matrix out(d, d);
	auto shifted = [&](Index r, double dr, Index c, double dc) {
		Matrix w = at;
		w.data()[r] += dr;
		w.data()[c] += dc;
		return f(w);
	};
	for (Index r = 0; r < d; ++r)
		for (Index c = 0; c < d; ++c)
			out(r, c) = (shifted(r, h, c, h) - shifted(r, h, c, -h) - shifted(r, -h, c, h) + shifted(r, -h, c, -h)) /
			            (4 * h * h);
	return out;
}

// Softmax probabilities straight from the definition, no shift.
inline std::vector<double> direct_softmax(const std::vector<double>& z) {
	double sum = 0;
	for (double v : z) sum += std::exp(v);
	std::vector<double> p;
	for (double v : z) p.push_back(std::exp(v) / sum);
	return p;
}

inline Matrix pairwise_dots(const Matrix& f) {
	Matrix k(f.rows(), f.rows());
	for (Index i = 0; i < f.rows(); ++i)
		for (Index j = 0; j < f.rows(); ++j) {
			double s = 0;
			for (Index c = 0; c < f.cols(); ++c) s += f(i, c) * f(j, c);
			k(i, j) = s;
		}
	return k;
}

// min ||v|| subject to F v = F w.
inline double min_norm_equivalent(const Matrix& f, const Vector& w) {
	const Eigen::MatrixXd fc = f;
	Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(fc);
	cod.setThreshold(1e-10);
	const Eigen::VectorXd target = fc * w;
	return cod.solve(target).norm();
}

struct ColumnStats {
	std::vector<double> mean, variance;
};

// Two-pass population statistics in long double.
inline ColumnStats column_stats(const Matrix& x) {
	ColumnStats s;
	for (Index j = 0; j < x.cols(); ++j) {
		long double sum = 0;
		for (Index i = 0; i < x.rows(); ++i) sum += x(i, j);
		const long double mean = sum / x.rows();
		long double ss = 0;
		for (Index i = 0; i < x.rows(); ++i) ss += (x(i, j) - mean) * (x(i, j) - mean);
		s.mean.push_back(static_cast<double>(mean));
		s.variance.push_back(static_cast<double>(ss / x.rows()));
	}
	return s;
}

inline double rel_diff(const Matrix& a, const Matrix& b) {
	const double scale = std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
	return (a - b).cwiseAbs().maxCoeff() / std::max(scale, 1e-300);
}

}  // namespace oracle
