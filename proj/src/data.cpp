#include "lastfit/data.hpp"

#include "lastfit/rng.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace lastfit {

namespace {

std::string format_real(double v) {
	char buf[32];
	std::snprintf(buf, sizeof buf, "%.17g", v);
	return buf;
}

// One CSV record; quoted fields may contain commas and doubled quotes.
std::vector<std::string> parse_csv_line(const std::string& line, std::size_t line_no) {
	std::vector<std::string> fields;
	std::string cur;
	bool quoted = false;
	for (std::size_t i = 0; i < line.size(); ++i) {
		const char c = line[i];
		if (quoted) {
			if (c == '"') {
				if (i + 1 < line.size() && line[i + 1] == '"') {
					cur += '"';
					++i;
				} else {
					quoted = false;
				}
			} else {
				cur += c;
			}
		} else if (c == '"') {
			quoted = true;
		} else if (c == ',') {
			fields.push_back(std::move(cur));
			cur.clear();
		} else {
			cur += c;
		}
	}
	if (quoted) throw std::runtime_error("load_csv: unterminated quote on line " + std::to_string(line_no));
	fields.push_back(std::move(cur));
	return fields;
}

std::string trim(const std::string& s) {
	const auto b = s.find_first_not_of(" \t");
	if (b == std::string::npos) return {};
	const auto e = s.find_last_not_of(" \t");
	return s.substr(b, e - b + 1);
}

bool parse_index(const std::string& s, std::size_t& out) {
	if (s.empty()) return false;
	for (char c : s)
		if (c < '0' || c > '9') return false;
	out = std::stoul(s);
	return true;
}

std::size_t resolve_column(const std::string& selector, const std::vector<std::string>& header,
                           std::size_t width) {
	for (std::size_t i = 0; i < header.size(); ++i)
		if (header[i] == selector) return i;
	std::size_t idx;
	if (parse_index(selector, idx)) {
		if (idx >= width)
			throw std::invalid_argument("load_csv: column " + selector + " out of range (" +
			                            std::to_string(width) + " columns)");
		return idx;
	}
	throw std::invalid_argument("load_csv: no column named '" + selector + "'");
}

SyntheticTeacher draw_teacher(Rng& rng) {
	SyntheticTeacher t{Matrix(kSyntheticInputDim, kSyntheticHiddenDim), Matrix(kSyntheticHiddenDim, 1)};
	for (Index i = 0; i < t.w1.rows(); ++i)
		for (Index j = 0; j < t.w1.cols(); ++j) t.w1(i, j) = rng.uniform(-1.0, 1.0);
	for (Index i = 0; i < t.w2.rows(); ++i) t.w2(i, 0) = rng.uniform(-1.0, 1.0);
	return t;
}

}  // namespace

void Dataset::validate() const {
	if (x.rows() < 1) throw std::invalid_argument("Dataset: no rows");
	if (x.rows() != y.rows())
		throw std::invalid_argument("Dataset: " + std::to_string(x.rows()) + " inputs but " +
		                            std::to_string(y.rows()) + " targets");
	if (!x.allFinite() || !y.allFinite()) throw std::invalid_argument("Dataset: non-finite entry");
}

Dataset Dataset::subset(const std::vector<Index>& rows) const {
	Dataset out;
	out.x.resize(static_cast<Index>(rows.size()), x.cols());
	out.y.resize(static_cast<Index>(rows.size()), y.cols());
	for (std::size_t i = 0; i < rows.size(); ++i) {
		out.x.row(static_cast<Index>(i)) = x.row(rows[i]);
		out.y.row(static_cast<Index>(i)) = y.row(rows[i]);
	}
	out.feature_names = feature_names;
	out.target_names = target_names;
	out.provenance = provenance;
	return out;
}

SyntheticTeacher synthetic_teacher(std::uint64_t seed) {
	Rng rng = Rng::stream(seed, rng_tag::synthetic);
	return draw_teacher(rng);
}

Dataset gen_synthetic(Index n, std::uint64_t seed) {
	if (n < 1) throw std::invalid_argument("gen_synthetic: n must be at least 1");
	// Same stream as synthetic_teacher: teacher draws first, then inputs.
	Rng rng = Rng::stream(seed, rng_tag::synthetic);
	const SyntheticTeacher t = draw_teacher(rng);

	Dataset ds;
	ds.x.resize(n, kSyntheticInputDim);
	for (Index i = 0; i < n; ++i)
		for (Index j = 0; j < kSyntheticInputDim; ++j) ds.x(i, j) = rng.uniform();
	const Matrix hidden = matmul(ds.x, t.w1).unaryExpr([](double v) { return std::tanh(v); });
	ds.y = matmul(hidden, t.w2);

	for (Index j = 0; j < kSyntheticInputDim; ++j) ds.feature_names.push_back("x" + std::to_string(j));
	ds.target_names = {"y"};

	std::ostringstream prov;
	prov << "synthetic tanh regression n=" << n << " seed=" << seed << " w1=[";
	for (Index k = 0; k < t.w1.size(); ++k) prov << (k ? "," : "") << format_real(t.w1.data()[k]);
	prov << "] w2=[";
	for (Index k = 0; k < t.w2.size(); ++k) prov << (k ? "," : "") << format_real(t.w2.data()[k]);
	prov << "]";
	ds.provenance = prov.str();
	return ds;
}

Dataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& feature_columns,
                 const std::vector<std::string>& target_columns, bool has_header) {
	std::ifstream in(path);
	if (!in) throw std::runtime_error("load_csv: cannot open " + path.string());
	if (feature_columns.empty() || target_columns.empty())
		throw std::invalid_argument("load_csv: feature and target columns must be non-empty");

	std::vector<std::string> header;
	std::vector<std::vector<double>> rows;
	std::vector<std::size_t> feat_idx, targ_idx;
	std::size_t width = 0;
	std::string line;
	std::size_t line_no = 0;
	bool resolved = false;

	auto resolve = [&]() {
		for (const auto& c : feature_columns) feat_idx.push_back(resolve_column(c, header, width));
		for (const auto& c : target_columns) targ_idx.push_back(resolve_column(c, header, width));
		resolved = true;
	};

	while (std::getline(in, line)) {
		++line_no;
		if (!line.empty() && line.back() == '\r') line.pop_back();
		if (line.empty()) continue;
		auto fields = parse_csv_line(line, line_no);
		if (width == 0) {
			width = fields.size();
			if (has_header) {
				for (auto& f : fields) header.push_back(trim(f));
				resolve();
				continue;
			}
			resolve();
		}
		if (fields.size() != width)
			throw std::runtime_error("load_csv: line " + std::to_string(line_no) + " has " +
			                         std::to_string(fields.size()) + " columns, expected " +
			                         std::to_string(width));
		std::vector<double> values(width);
		for (std::size_t c = 0; c < width; ++c) {
			const std::string cell = trim(fields[c]);
			char* end = nullptr;
			errno = 0;
			const double v = std::strtod(cell.c_str(), &end);
			if (cell.empty() || end != cell.c_str() + cell.size() || errno == ERANGE || !std::isfinite(v))
				throw std::runtime_error("load_csv: non-numeric value '" + cell + "' at line " +
				                         std::to_string(line_no) + ", column " + std::to_string(c + 1));
			values[c] = v;
		}
		rows.push_back(std::move(values));
	}
	if (rows.empty()) throw std::runtime_error("load_csv: no data rows in " + path.string());
	if (!resolved) resolve();

	Dataset ds;
	const auto n = static_cast<Index>(rows.size());
	ds.x.resize(n, static_cast<Index>(feat_idx.size()));
	ds.y.resize(n, static_cast<Index>(targ_idx.size()));
	for (Index i = 0; i < n; ++i) {
		for (std::size_t j = 0; j < feat_idx.size(); ++j) ds.x(i, static_cast<Index>(j)) = rows[i][feat_idx[j]];
		for (std::size_t j = 0; j < targ_idx.size(); ++j) ds.y(i, static_cast<Index>(j)) = rows[i][targ_idx[j]];
	}
	auto name_of = [&](std::size_t idx) { return has_header ? header[idx] : "c" + std::to_string(idx); };
	for (auto idx : feat_idx) ds.feature_names.push_back(name_of(idx));
	for (auto idx : targ_idx) ds.target_names.push_back(name_of(idx));
	ds.provenance = "csv " + path.string();
	return ds;
}

void write_csv(const Dataset& ds, std::ostream& out) {
	const Index dx = ds.x.cols(), dy = ds.y.cols();
	auto name = [](const std::vector<std::string>& names, Index j, const char* prefix) {
		return j < static_cast<Index>(names.size()) ? names[j] : prefix + std::to_string(j);
	};
	for (Index j = 0; j < dx; ++j) out << (j ? "," : "") << name(ds.feature_names, j, "x");
	for (Index j = 0; j < dy; ++j) out << "," << name(ds.target_names, j, "y");
	out << "\n";
	for (Index i = 0; i < ds.size(); ++i) {
		for (Index j = 0; j < dx; ++j) out << (j ? "," : "") << format_real(ds.x(i, j));
		for (Index j = 0; j < dy; ++j) out << "," << format_real(ds.y(i, j));
		out << "\n";
	}
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
	std::ofstream out(path);
	if (!out) throw std::runtime_error("write_csv: cannot open " + path.string());
	write_csv(ds, out);
}

Split split(const Dataset& ds, double fraction, std::uint64_t seed) {
	if (!(fraction > 0.0 && fraction < 1.0))
		throw std::invalid_argument("split: fraction must lie in (0, 1)");
	const Index n = ds.size();
	const auto n_train = static_cast<Index>(std::floor(fraction * static_cast<double>(n)));
	if (n_train < 1 || n - n_train < 1)
		throw std::invalid_argument("split: fraction " + format_real(fraction) + " of " +
		                            std::to_string(n) + " rows leaves an empty side");
	std::vector<Index> perm(static_cast<std::size_t>(n));
	std::iota(perm.begin(), perm.end(), Index{0});
	Rng rng = Rng::stream(seed, rng_tag::split);
	shuffle_indices(perm, rng);

	Split s;
	s.fraction = fraction;
	s.seed = seed;
	s.train_indices.assign(perm.begin(), perm.begin() + n_train);
	s.test_indices.assign(perm.begin() + n_train, perm.end());
	s.train = ds.subset(s.train_indices);
	s.test = ds.subset(s.test_indices);
	return s;
}

Dataset Standardizer::apply(const Dataset& ds) const {
	if (ds.x.cols() != mean.size()) throw std::invalid_argument("Standardizer::apply: column count mismatch");
	Dataset out = ds;
	for (Index j = 0; j < out.x.cols(); ++j) {
		if (passthrough[static_cast<std::size_t>(j)]) continue;
		for (Index i = 0; i < out.x.rows(); ++i) out.x(i, j) = (out.x(i, j) - mean(j)) / stddev(j);
	}
	return out;
}

StandardizeResult standardize(const Dataset& ds) {
	ds.validate();
	const Index n = ds.size(), d = ds.x.cols();
	StandardizeResult r;
	r.transform.mean = Vector::Zero(d);
	r.transform.stddev = Vector::Ones(d);
	r.transform.passthrough.assign(static_cast<std::size_t>(d), false);
	for (Index j = 0; j < d; ++j) {
		double mean = 0;
		for (Index i = 0; i < n; ++i) mean += ds.x(i, j);
		mean /= static_cast<double>(n);
		double var = 0;
		for (Index i = 0; i < n; ++i) var += (ds.x(i, j) - mean) * (ds.x(i, j) - mean);
		var /= static_cast<double>(n);
		r.transform.mean(j) = mean;
		if (!(var > 0)) {
			r.transform.passthrough[static_cast<std::size_t>(j)] = true;
			const std::string name = j < static_cast<Index>(ds.feature_names.size())
			                             ? ds.feature_names[j]
			                             : std::to_string(j);
			r.warnings.push_back("standardize: column " + name + " is constant, left unscaled");
		} else {
			r.transform.stddev(j) = std::sqrt(var);
		}
	}
	r.data = r.transform.apply(ds);
	return r;
}

nlohmann::json dataset_to_json(const Dataset& ds) {
	nlohmann::json j;
	j["format_version"] = 1;
	j["provenance"] = {{"description", ds.provenance}};
	j["rows"] = ds.size();
	j["feature_names"] = ds.feature_names;
	j["target_names"] = ds.target_names;
	j["x"] = std::vector<double>(ds.x.data(), ds.x.data() + ds.x.size());
	j["y"] = std::vector<double>(ds.y.data(), ds.y.data() + ds.y.size());
	j["x_cols"] = ds.x.cols();
	j["y_cols"] = ds.y.cols();
	return j;
}

Dataset dataset_from_json(const nlohmann::json& j) {
	Dataset ds;
	const auto n = j.at("rows").get<Index>();
	const auto dx = j.at("x_cols").get<Index>();
	const auto dy = j.at("y_cols").get<Index>();
	const auto x = j.at("x").get<std::vector<double>>();
	const auto y = j.at("y").get<std::vector<double>>();
	if (static_cast<Index>(x.size()) != n * dx || static_cast<Index>(y.size()) != n * dy)
		throw std::invalid_argument("dataset_from_json: array lengths do not match the declared shape");
	ds.x = Eigen::Map<const Matrix>(x.data(), n, dx);
	ds.y = Eigen::Map<const Matrix>(y.data(), n, dy);
	ds.feature_names = j.value("feature_names", std::vector<std::string>{});
	ds.target_names = j.value("target_names", std::vector<std::string>{});
	if (j.contains("provenance")) ds.provenance = j["provenance"].value("description", "");
	ds.validate();
	return ds;
}

}  // namespace lastfit
