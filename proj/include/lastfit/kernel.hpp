// The kernel view of the last layer.
//
// With the lower layers frozen, the last layer is a linear predictor on the
// features F (N x d_L). The induced kernel is k(x1, x2) = <phi(x1), phi(x2)>,
// so the Gram matrix is K = F F^T. For squared error with identity output the
// regularized problem has the closed form
//
//     alpha = (K + c I_N)^{-1} Y,    W = F^T alpha,
//
// where c = lambda reproduces the textbook kernel ridge formula and
// c = N * lambda is the exact minimizer of
//
//     (1/N) sum_i ||F_i W - y_i||^2 + lambda ||W||_F^2.
//
// The primal route (F^T F + c I_d)^{-1} F^T Y gives the same W through the
// push-through identity and serves as an independent check.

#pragma once

#include "lastfit/linalg.hpp"

#include <json.hpp>

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lastfit {

enum class KrrConvention { paper_literal, objective_consistent };

std::string_view to_string(KrrConvention c);
KrrConvention krr_convention_from_string(std::string_view s);

template <typename Scalar>
struct GramMatrix {
	MatrixX<Scalar> k;
};

template <typename Scalar>
struct KrrSolution {
	MatrixX<Scalar> alpha;  // N x d_out
	MatrixX<Scalar> w;      // d_L x d_out
	Scalar lambda = 0;
	KrrConvention convention = KrrConvention::objective_consistent;
};

template <typename Scalar>
struct RkhsNorms {
	Scalar proj_norm = 0;
	Scalar l2_norm = 0;
	Index rank = 0;
};

inline constexpr Index kMaxKrrSamples = 20000;

template <typename Derived>
GramMatrix<typename Derived::Scalar> gram(const Eigen::MatrixBase<Derived>& features) {
	if (features.rows() < 1) throw std::invalid_argument("gram: no samples");
	return {matmul(features, features.transpose())};
}

/// Diagonal shift added to the Gram matrix under the given convention.
template <typename Scalar>
Scalar krr_shift(Scalar lambda, Index n, KrrConvention convention) {
	return convention == KrrConvention::paper_literal ? lambda : static_cast<Scalar>(n) * lambda;
}

template <typename DerivedF, typename DerivedY>
KrrSolution<typename DerivedF::Scalar> krr_solve(
	const Eigen::MatrixBase<DerivedF>& features, const Eigen::MatrixBase<DerivedY>& y,
	typename DerivedF::Scalar lambda,
	KrrConvention convention = KrrConvention::objective_consistent) {
	using Scalar = typename DerivedF::Scalar;
	if (!(lambda > 0)) throw std::invalid_argument("krr_solve: lambda must be positive");
	const Index n = features.rows();
	if (y.rows() != n)
		throw std::invalid_argument("krr_solve: features are " + shape_string(features) +
		                            " but targets are " + shape_string(y));
	if (n > kMaxKrrSamples)
		throw std::invalid_argument("krr_solve: " + std::to_string(n) + " samples exceed the limit of " +
		                            std::to_string(kMaxKrrSamples));
	KrrSolution<Scalar> sol;
	sol.lambda = lambda;
	sol.convention = convention;
	{
		MatrixX<Scalar> k = gram(features).k;
		k.diagonal().array() += krr_shift(lambda, n, convention);
		sol.alpha = solve_spd(k, y);
	}
	sol.w = matmul(features.transpose(), sol.alpha);
	return sol;
}

/// (F^T F + lambda_eff I)^{-1} F^T Y.
template <typename DerivedF, typename DerivedY>
MatrixX<typename DerivedF::Scalar> primal_ridge(const Eigen::MatrixBase<DerivedF>& features,
                                                const Eigen::MatrixBase<DerivedY>& y,
                                                typename DerivedF::Scalar lambda_eff) {
	using Scalar = typename DerivedF::Scalar;
	if (!(lambda_eff > 0)) throw std::invalid_argument("primal_ridge: lambda_eff must be positive");
	if (y.rows() != features.rows())
		throw std::invalid_argument("primal_ridge: features are " + shape_string(features) +
		                            " but targets are " + shape_string(y));
	MatrixX<Scalar> a = matmul(features.transpose(), features);
	a.diagonal().array() += lambda_eff;
	return solve_spd(a, matmul(features.transpose(), y));
}

/// Norm of w projected on the row space of the features next to its l2 norm.
///
/// The row space is read off a thin SVD; singular values at or below
/// 1e-10 * sigma_max count as zero. proj_norm is the smallest norm of any v
/// with F v = F w, the empirical counterpart of the RKHS norm of x -> <phi(x), w>.
template <typename DerivedW, typename DerivedF>
RkhsNorms<typename DerivedF::Scalar> rkhs_norm_bound(const Eigen::MatrixBase<DerivedW>& w,
                                                     const Eigen::MatrixBase<DerivedF>& features) {
	using Scalar = typename DerivedF::Scalar;
	using Dense = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
	constexpr Scalar kRankTol = 1e-10;
	if (features.rows() < 1) throw std::invalid_argument("rkhs_norm_bound: no samples");
	if (w.size() != features.cols())
		throw std::invalid_argument("rkhs_norm_bound: w has " + std::to_string(w.size()) +
		                            " entries, features have " + std::to_string(features.cols()) +
		                            " columns");
	const VectorX<Scalar> wv = Eigen::Map<const VectorX<Scalar>>(w.eval().data(), w.size());
	Eigen::JacobiSVD<Dense> svd(Dense(features.eval()), Eigen::ComputeThinV);
	const auto& sigma = svd.singularValues();
	RkhsNorms<Scalar> out;
	out.l2_norm = wv.norm();
	const Scalar cutoff = sigma.size() > 0 ? kRankTol * sigma(0) : Scalar(0);
	for (Index i = 0; i < sigma.size(); ++i)
		if (sigma(i) > cutoff) ++out.rank;
	if (out.rank > 0) out.proj_norm = (svd.matrixV().leftCols(out.rank).transpose() * wv).norm();
	return out;
}

nlohmann::json krr_to_json(const KrrSolution<double>& sol);

}  // namespace lastfit
