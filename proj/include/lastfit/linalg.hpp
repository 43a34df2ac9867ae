// Dense real linear algebra used throughout lastfit.
//
// Everything here is a free function over Eigen expressions. Storage is
// row-major so that a Matrix is literally a rows x cols row-major array of
// reals. The product kernel is a plain triple loop with a fixed summation
// order; results are bit-reproducible across runs on the same build.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace lastfit {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using Index = Eigen::Index;

class NotPositiveDefinite : public std::runtime_error {
public:
	explicit NotPositiveDefinite(Index pivot)
		: std::runtime_error("solve_spd: matrix is not positive definite (pivot " +
		                     std::to_string(pivot) + ")"),
		  pivot_(pivot) {}

	Index pivot() const noexcept { return pivot_; }

private:
	Index pivot_;
};

class NonFiniteError : public std::domain_error {
public:
	using std::domain_error::domain_error;
};

inline std::string shape_string(Index rows, Index cols) {
	return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename Derived>
std::string shape_string(const Eigen::MatrixBase<Derived>& a) {
	return shape_string(a.rows(), a.cols());
}

/// Largest absolute entry, 0 for an empty matrix.
template <typename Derived>
typename Derived::Scalar max_abs(const Eigen::MatrixBase<Derived>& a) {
	if (a.size() == 0) return 0;
	return a.cwiseAbs().maxCoeff();
}

/// True when |a_ij - a_ji| <= rel_tol * max|a| for every pair.
template <typename Derived>
bool is_symmetric(const Eigen::MatrixBase<Derived>& a,
                  typename Derived::Scalar rel_tol = 1e-10) {
	if (a.rows() != a.cols()) return false;
	const auto bound = rel_tol * max_abs(a);
	for (Index i = 0; i < a.rows(); ++i)
		for (Index j = i + 1; j < a.cols(); ++j)
			if (std::abs(a(i, j) - a(j, i)) > bound) return false;
	return true;
}

namespace detail {

template <typename Derived>
void require_symmetric(const Eigen::MatrixBase<Derived>& a, const char* who) {
	if (a.rows() != a.cols())
		throw std::invalid_argument(std::string(who) + ": expected a square matrix, got " +
		                            shape_string(a));
	if (!is_symmetric(a))
		throw std::invalid_argument(std::string(who) + ": matrix is not symmetric");
}

// Unblocked Cholesky used only to locate the first failing pivot.
template <typename Scalar>
Index first_nonpositive_pivot(const MatrixX<Scalar>& a) {
	const Index n = a.rows();
	MatrixX<Scalar> l = MatrixX<Scalar>::Zero(n, n);
	for (Index j = 0; j < n; ++j) {
		Scalar d = a(j, j);
		for (Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
		if (!(d > 0)) return j;
		l(j, j) = std::sqrt(d);
		for (Index i = j + 1; i < n; ++i) {
			Scalar s = a(i, j);
			for (Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
			l(i, j) = s / l(j, j);
		}
	}
	return n > 0 ? n - 1 : 0;
}

}  // namespace detail

/// Matrix product with a fixed i-j-k summation order.
template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                          const Eigen::MatrixBase<DerivedB>& b) {
	using Scalar = typename DerivedA::Scalar;
	static_assert(std::is_same_v<Scalar, typename DerivedB::Scalar>,
	              "matmul: operands must share a scalar type");
	if (a.cols() != b.rows())
		throw std::invalid_argument("matmul: shape mismatch " + shape_string(a) + " * " +
		                            shape_string(b));
	const auto& lhs = a.eval();
	const auto& rhs = b.eval();
	MatrixX<Scalar> out(lhs.rows(), rhs.cols());
	for (Index i = 0; i < lhs.rows(); ++i) {
		for (Index j = 0; j < rhs.cols(); ++j) {
			Scalar sum = 0;
			for (Index k = 0; k < lhs.cols(); ++k) sum += lhs(i, k) * rhs(k, j);
			out(i, j) = sum;
		}
	}
	if (!out.allFinite()) throw NonFiniteError("matmul: non-finite entry in product");
	return out;
}

/// Solves a X = b for symmetric positive-definite a via Cholesky.
///
/// The factorization is Eigen's blocked LLT. When it breaks down the
/// unblocked reference factorization is rerun to report the failing pivot.
template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> solve_spd(const Eigen::MatrixBase<DerivedA>& a,
                                             const Eigen::MatrixBase<DerivedB>& b) {
	using Scalar = typename DerivedA::Scalar;
	detail::require_symmetric(a, "solve_spd");
	if (b.rows() != a.rows())
		throw std::invalid_argument("solve_spd: shape mismatch " + shape_string(a) + " \\ " +
		                            shape_string(b));
	Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> work = a;
	Eigen::LLT<Eigen::Ref<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>>, Eigen::Lower>
		llt(work);
	if (llt.info() != Eigen::Success) {
		throw NotPositiveDefinite(detail::first_nonpositive_pivot<Scalar>(a.eval()));
	}
	MatrixX<Scalar> x = llt.solve(b.eval());
	if (!x.allFinite()) throw NonFiniteError("solve_spd: non-finite solution");
	return x;
}

/// Sum of squared entries, accumulated in row-major order.
template <typename Derived>
typename Derived::Scalar sq_frobenius(const Eigen::MatrixBase<Derived>& a) {
	typename Derived::Scalar sum = 0;
	for (Index i = 0; i < a.rows(); ++i)
		for (Index j = 0; j < a.cols(); ++j) sum += a(i, j) * a(i, j);
	return sum;
}

/// Smallest eigenvalue of a symmetric matrix to within `tol`.
///
/// Householder tridiagonalization followed by Sturm-count bisection.
template <typename Derived>
typename Derived::Scalar min_eigenvalue_symmetric(const Eigen::MatrixBase<Derived>& a,
                                                  typename Derived::Scalar tol) {
	using Scalar = typename Derived::Scalar;
	constexpr Index kMaxDim = 200;
	detail::require_symmetric(a, "min_eigenvalue_symmetric");
	const Index n = a.rows();
	if (n == 0) throw std::invalid_argument("min_eigenvalue_symmetric: empty matrix");
	if (n > kMaxDim)
		throw std::invalid_argument("min_eigenvalue_symmetric: dimension " + std::to_string(n) +
		                            " exceeds " + std::to_string(kMaxDim));
	if (!(tol > 0)) throw std::invalid_argument("min_eigenvalue_symmetric: tol must be positive");
	if (n == 1) return a(0, 0);

	using Dense = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
	Eigen::Tridiagonalization<Dense> tri(Dense(a.eval()));
	const VectorX<Scalar> d = tri.diagonal();
	const VectorX<Scalar> e = tri.subDiagonal();

	Scalar lo = std::numeric_limits<Scalar>::max();
	Scalar hi = std::numeric_limits<Scalar>::lowest();
	Scalar e2max = 0;
	for (Index i = 0; i < n; ++i) {
		Scalar radius = 0;
		if (i > 0) radius += std::abs(e(i - 1));
		if (i + 1 < n) radius += std::abs(e(i));
		lo = std::min(lo, d(i) - radius);
		hi = std::max(hi, d(i) + radius);
		if (i + 1 < n) e2max = std::max(e2max, e(i) * e(i));
	}
	const Scalar pivmin = std::numeric_limits<Scalar>::min() * std::max<Scalar>(1, e2max);

	// Number of eigenvalues strictly below x (LDL^T inertia of T - xI).
	auto count_below = [&](Scalar x) {
		Index count = 0;
		Scalar q = d(0) - x;
		if (std::abs(q) < pivmin) q = -pivmin;
		if (q < 0) ++count;
		for (Index i = 1; i < n; ++i) {
			q = d(i) - x - e(i - 1) * e(i - 1) / q;
			if (std::abs(q) < pivmin) q = -pivmin;
			if (q < 0) ++count;
		}
		return count;
	};

	const Scalar pad = std::numeric_limits<Scalar>::epsilon() * std::max(std::abs(lo), std::abs(hi)) + tol;
	lo -= pad;
	hi += pad;
	while (hi - lo > tol) {
		const Scalar mid = lo + (hi - lo) / 2;
		if (mid <= lo || mid >= hi) break;
		if (count_below(mid) >= 1)
			hi = mid;
		else
			lo = mid;
	}
	return lo + (hi - lo) / 2;
}

}  // namespace lastfit
