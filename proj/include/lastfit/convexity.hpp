// Softmax cross-entropy as a function of the last-layer weights.
//
// For one sample x (N features), weights W (M classes x N) and true class j,
//
//     F(W) = log sum_i exp(<W_i, x>) - <W_j, x>,
//     P_i  = softmax(W x)_i,
//     d2F / dW_{m,n} dW_{p,q} = P_m (delta_mp - P_p) x_n x_q,
//
// i.e. the Hessian is kron(P, x x^T) with P_mp = P_m (delta_mp - P_p).
// P is symmetric with nonnegative diagonal and sum_{p != m} |P_mp| = P_mm,
// hence positive semidefinite, and so is the Hessian. Classes are zero-based.

#pragma once

#include "lastfit/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace lastfit {

template <typename Scalar>
struct SoftmaxInstance {
	MatrixX<Scalar> w;  // M x N, row m scores class m
	VectorX<Scalar> x;  // N
	Index true_class = 0;

	Index classes() const { return w.rows(); }
	Index features() const { return w.cols(); }

	void validate() const {
		if (w.rows() < 2) throw std::invalid_argument("SoftmaxInstance: at least two classes are required");
		if (x.size() != w.cols())
			throw std::invalid_argument("SoftmaxInstance: x has " + std::to_string(x.size()) +
			                            " entries, w has " + std::to_string(w.cols()) + " columns");
		if (true_class < 0 || true_class >= w.rows())
			throw std::invalid_argument("SoftmaxInstance: true_class out of range");
		if (!w.allFinite() || !x.allFinite()) throw std::invalid_argument("SoftmaxInstance: non-finite entry");
	}
};

inline constexpr Index kMaxHessianDim = 200;

template <typename Scalar>
VectorX<Scalar> logits(const SoftmaxInstance<Scalar>& inst) {
	inst.validate();
	VectorX<Scalar> z(inst.classes());
	for (Index m = 0; m < inst.classes(); ++m) {
		Scalar s = 0;
		for (Index n = 0; n < inst.features(); ++n) s += inst.w(m, n) * inst.x(n);
		z(m) = s;
	}
	return z;
}

template <typename Scalar>
VectorX<Scalar> class_probs(const SoftmaxInstance<Scalar>& inst) {
	const VectorX<Scalar> z = logits(inst);
	const Scalar top = z.maxCoeff();
	VectorX<Scalar> p = (z.array() - top).exp().matrix();
	return p / p.sum();
}

/// -log P_j, evaluated as logsumexp(z) - z_j.
template <typename Scalar>
Scalar ce_value(const SoftmaxInstance<Scalar>& inst) {
	const VectorX<Scalar> z = logits(inst);
	Index arg = 0;
	const Scalar top = z.maxCoeff(&arg);
	Scalar rest = 0;
	for (Index m = 0; m < z.size(); ++m)
		if (m != arg) rest += std::exp(z(m) - top);
	const Scalar value = (top - z(inst.true_class)) + std::log1p(rest);
	return value > 0 ? value : Scalar(0);
}

template <typename Scalar>
MatrixX<Scalar> p_matrix(const SoftmaxInstance<Scalar>& inst) {
	const VectorX<Scalar> p = class_probs(inst);
	const Index m = p.size();
	MatrixX<Scalar> out(m, m);
	for (Index a = 0; a < m; ++a)
		for (Index b = 0; b < m; ++b) out(a, b) = p(a) * ((a == b ? Scalar(1) : Scalar(0)) - p(b));
	return out;
}

/// kron(P, x x^T) with row/column index m * N + n.
template <typename Scalar>
MatrixX<Scalar> ce_hessian(const SoftmaxInstance<Scalar>& inst) {
	inst.validate();
	const Index m = inst.classes(), n = inst.features();
	if (m * n > kMaxHessianDim)
		throw std::invalid_argument("ce_hessian: dimension " + std::to_string(m * n) + " exceeds " +
		                            std::to_string(kMaxHessianDim));
	const MatrixX<Scalar> p = p_matrix(inst);
	MatrixX<Scalar> h(m * n, m * n);
	for (Index a = 0; a < m; ++a)
		for (Index i = 0; i < n; ++i)
			for (Index b = 0; b < m; ++b)
				for (Index k = 0; k < n; ++k) h(a * n + i, b * n + k) = p(a, b) * inst.x(i) * inst.x(k);
	return h;
}

/// Mean cross-entropy over a batch (rows of xs) at shared weights.
template <typename Scalar>
Scalar batch_ce_value(const MatrixX<Scalar>& w, const MatrixX<Scalar>& xs, const std::vector<Index>& classes) {
	if (xs.rows() < 1 || static_cast<std::size_t>(xs.rows()) != classes.size())
		throw std::invalid_argument("batch_ce_value: one class label per sample is required");
	Scalar sum = 0;
	for (Index i = 0; i < xs.rows(); ++i)
		sum += ce_value(SoftmaxInstance<Scalar>{w, xs.row(i).transpose(), classes[static_cast<std::size_t>(i)]});
	return sum / static_cast<Scalar>(xs.rows());
}

/// Hessian of batch_ce_value: the mean of per-sample Kronecker Hessians.
template <typename Scalar>
MatrixX<Scalar> batch_ce_hessian(const MatrixX<Scalar>& w, const MatrixX<Scalar>& xs,
                                 const std::vector<Index>& classes) {
	if (xs.rows() < 1 || static_cast<std::size_t>(xs.rows()) != classes.size())
		throw std::invalid_argument("batch_ce_hessian: one class label per sample is required");
	MatrixX<Scalar> h = MatrixX<Scalar>::Zero(w.size(), w.size());
	for (Index i = 0; i < xs.rows(); ++i)
		h += ce_hessian(SoftmaxInstance<Scalar>{w, xs.row(i).transpose(), classes[static_cast<std::size_t>(i)]});
	return h / static_cast<Scalar>(xs.rows());
}

/// max_m |sum_{p != m} |P_mp| - P_mm|: zero for every softmax P matrix.
template <typename Scalar>
Scalar diagonal_dominance_gap(const MatrixX<Scalar>& p) {
	Scalar worst = 0;
	for (Index m = 0; m < p.rows(); ++m) {
		Scalar off = 0;
		for (Index q = 0; q < p.cols(); ++q)
			if (q != m) off += std::abs(p(m, q));
		worst = std::max(worst, std::abs(off - p(m, m)));
	}
	return worst;
}

}  // namespace lastfit
