#include "lastfit/kernel.hpp"

#include "lastfit/network.hpp"

namespace lastfit {

std::string_view to_string(KrrConvention c) {
	return c == KrrConvention::paper_literal ? "paper_literal" : "objective_consistent";
}

KrrConvention krr_convention_from_string(std::string_view s) {
	if (s == "paper_literal") return KrrConvention::paper_literal;
	if (s == "objective_consistent") return KrrConvention::objective_consistent;
	throw std::invalid_argument("unknown KRR convention '" + std::string(s) + "'");
}

// The "layer" block mirrors a network layer so it can be dropped in as W_L.
nlohmann::json krr_to_json(const KrrSolution<double>& sol) {
	const Matrix wt = sol.w.transpose();
	nlohmann::json layer;
	layer["input_dim"] = sol.w.rows();
	layer["output_dim"] = sol.w.cols();
	layer["activation"] = to_string(Activation::identity);
	layer["has_bias"] = false;
	layer["weights"] = std::vector<double>(wt.data(), wt.data() + wt.size());
	return {{"format_version", kNetworkFormatVersion},
	        {"lambda", sol.lambda},
	        {"convention", to_string(sol.convention)},
	        {"alpha_rows", sol.alpha.rows()},
	        {"alpha_cols", sol.alpha.cols()},
	        {"alpha", std::vector<double>(sol.alpha.data(), sol.alpha.data() + sol.alpha.size())},
	        {"layer", std::move(layer)}};
}

}  // namespace lastfit
