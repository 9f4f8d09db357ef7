#pragma once

// File formats: numeric CSV (17 significant digits), ground truth and fit
// JSON (sparse beta as index/value pairs, omega as upper-triangle COO), and
// result rows with optional metrics.

#include "srjm/em.hpp"
#include "srjm/simgen.hpp"
#include "srjm/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <type_traits>
#include <vector>

namespace srjm::io {

using json = nlohmann::json;

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

inline double parse_cell(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(where + ": non-numeric cell '" + raw + "'");
  }
  if (!std::isfinite(v)) throw Error(where + ": non-finite cell '" + raw + "'");
  return v;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::string& path, bool append = false) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace detail

struct Table {
  std::vector<std::string> header;
  Matrix values;
};

/// Numeric CSV with one header row. Errors name file, line and column.
inline Table read_csv(const std::string& path) {
  auto in = detail::open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw Error(path + ": empty file");
  Table t;
  for (auto& h : detail::split_csv_line(line)) t.header.push_back(detail::trim(h));
  const std::size_t cols = t.header.size();
  std::vector<double> vals;
  std::size_t rows = 0;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != cols) {
      throw Error(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(cols) + " fields, found " +
                  std::to_string(cells.size()));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      vals.push_back(detail::parse_cell(
          cells[c], path + ":" + std::to_string(lineno) + ": column " + std::to_string(c + 1) + " (" + t.header[c] + ")"));
    }
    ++rows;
  }
  t.values.resize(static_cast<Index>(rows), static_cast<Index>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) t.values(static_cast<Index>(r), static_cast<Index>(c)) = vals[r * cols + c];
  return t;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header, const Matrix& m) {
  ::srjm::detail::require(static_cast<Index>(header.size()) == m.cols(), "write_csv: header width mismatch");
  auto out = detail::open_out(path);
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
  out << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << format_double(m(i, j));
    out << '\n';
  }
  if (!out) throw Error("write failed for '" + path + "'");
}

inline std::vector<std::string> feature_header(Index p) {
  std::vector<std::string> h;
  for (Index j = 0; j < p; ++j) h.push_back("c" + std::to_string(j));
  return h;
}

inline void write_x(const std::string& path, const Matrix& x) { write_csv(path, feature_header(x.cols()), x); }

inline void write_y(const std::string& path, const Vector& y) { write_csv(path, {"y"}, Matrix(y)); }

inline void write_labels(const std::string& path, const std::vector<int>& labels) {
  auto out = detail::open_out(path);
  out << "label\n";
  for (int l : labels) out << l << '\n';
  if (!out) throw Error("write failed for '" + path + "'");
}

inline Matrix read_x(const std::string& path) {
  Table t = read_csv(path);
  if (t.values.rows() == 0) throw Error(path + ": no data rows");
  return std::move(t.values);
}

inline Vector read_single_column(const std::string& path) {
  Table t = read_csv(path);
  if (t.header.size() != 1) throw Error(path + ": expected a single column, found " + std::to_string(t.header.size()));
  if (t.values.rows() == 0) throw Error(path + ": no data rows");
  return t.values.col(0);
}

inline Vector read_y(const std::string& path) { return read_single_column(path); }

inline std::vector<int> read_labels(const std::string& path) {
  const Vector v = read_single_column(path);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(v.size()));
  for (Index i = 0; i < v.size(); ++i) {
    const double d = v(i);
    if (d < 0 || d != std::floor(d)) {
      throw Error(path + ":" + std::to_string(i + 2) + ": label must be a non-negative integer");
    }
    out.push_back(static_cast<int>(d));
  }
  return out;
}

inline Dataset read_dataset(const std::string& x_path, const std::string& y_path) {
  Matrix x = read_x(x_path);
  Vector y = read_y(y_path);
  if (x.rows() != y.size()) {
    throw Error("row mismatch: " + x_path + " has " + std::to_string(x.rows()) + " rows, " + y_path + " has " +
                std::to_string(y.size()));
  }
  return Dataset(std::move(x), std::move(y));
}

// ---- JSON helpers ----

inline json vector_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Vector json_vector(const json& a, const std::string& what) {
  if (!a.is_array()) throw Error(what + ": expected an array");
  Vector v(static_cast<Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) throw Error(what + "[" + std::to_string(i) + "]: expected a number");
    v(static_cast<Index>(i)) = a[i].get<double>();
  }
  return v;
}

/// Nonzero entries as {"index": [...], "value": [...]}, with the length.
inline json sparse_vector_json(const Vector& v) {
  json idx = json::array(), val = json::array();
  for (Index j = 0; j < v.size(); ++j) {
    if (v(j) != 0.0) {
      idx.push_back(j);
      val.push_back(v(j));
    }
  }
  return {{"length", v.size()}, {"index", idx}, {"value", val}};
}

inline Vector json_sparse_vector(const json& j, const std::string& what) {
  if (!j.is_object() || !j.contains("length") || !j.contains("index") || !j.contains("value")) {
    throw Error(what + ": expected {length, index, value}");
  }
  const auto len = j.at("length").get<Index>();
  const auto& idx = j.at("index");
  const auto& val = j.at("value");
  if (idx.size() != val.size()) throw Error(what + ": index and value differ in length");
  Vector v = Vector::Zero(len);
  for (std::size_t t = 0; t < idx.size(); ++t) {
    const auto i = idx[t].get<Index>();
    if (i < 0 || i >= len) throw Error(what + ": index " + std::to_string(i) + " out of range");
    v(i) = val[t].get<double>();
  }
  return v;
}

/// Upper triangle (diagonal included) in COO form.
inline json upper_coo_json(const Matrix& m) {
  json r = json::array(), c = json::array(), v = json::array();
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = i; j < m.cols(); ++j)
      if (m(i, j) != 0.0) {
        r.push_back(i);
        c.push_back(j);
        v.push_back(m(i, j));
      }
  return {{"dim", m.rows()}, {"row", r}, {"col", c}, {"value", v}};
}

inline json upper_coo_json(const SparseMatrix& m) {
  json r = json::array(), c = json::array(), v = json::array();
  std::vector<std::tuple<Index, Index, double>> entries;
  for (Index k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it)
      if (it.row() <= it.col() && it.value() != 0.0) entries.emplace_back(it.row(), it.col(), it.value());
  std::sort(entries.begin(), entries.end());
  for (const auto& [i, j, x] : entries) {
    r.push_back(i);
    c.push_back(j);
    v.push_back(x);
  }
  return {{"dim", m.rows()}, {"row", r}, {"col", c}, {"value", v}};
}

inline std::vector<Eigen::Triplet<double>> json_upper_triplets(const json& j, Index& dim, const std::string& what) {
  if (!j.is_object() || !j.contains("dim") || !j.contains("row") || !j.contains("col") || !j.contains("value")) {
    throw Error(what + ": expected {dim, row, col, value}");
  }
  dim = j.at("dim").get<Index>();
  const auto &r = j.at("row"), &c = j.at("col"), &v = j.at("value");
  if (r.size() != c.size() || r.size() != v.size()) throw Error(what + ": row/col/value differ in length");
  std::vector<Eigen::Triplet<double>> out;
  for (std::size_t t = 0; t < r.size(); ++t) {
    const auto i = r[t].get<Index>(), k = c[t].get<Index>();
    if (i < 0 || k < i || k >= dim) throw Error(what + ": entry (" + std::to_string(i) + "," + std::to_string(k) + ") is not upper-triangular");
    const double x = v[t].get<double>();
    out.emplace_back(i, k, x);
    if (i != k) out.emplace_back(k, i, x);
  }
  return out;
}

inline Matrix json_upper_coo_dense(const json& j, const std::string& what) {
  Index dim = 0;
  const auto trip = json_upper_triplets(j, dim, what);
  Matrix m = Matrix::Zero(dim, dim);
  for (const auto& t : trip) m(t.row(), t.col()) = t.value();
  return m;
}

inline SparseMatrix json_upper_coo_sparse(const json& j, const std::string& what) {
  Index dim = 0;
  const auto trip = json_upper_triplets(j, dim, what);
  SparseMatrix m(dim, dim);
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

inline json read_json(const std::string& path) {
  auto in = detail::open_in(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(path + ": " + e.what());
  }
}

inline void write_json(const std::string& path, const json& j) {
  auto out = detail::open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed for '" + path + "'");
}

// ---- ground truth ----

inline json truth_json(const GroundTruth& g) {
  json groups = json::array();
  for (Index k = 0; k < g.k(); ++k) {
    const auto s = static_cast<std::size_t>(k);
    groups.push_back({{"tau", g.tau[s]},
                      {"mu", vector_json(g.mu[s])},
                      {"omega", upper_coo_json(g.omega[s])},
                      {"alpha", g.alpha[s]},
                      {"beta", sparse_vector_json(g.beta[s])},
                      {"sigma", g.sigma[s]}});
  }
  return {{"p", g.p}, {"k", g.k()}, {"groups", groups}, {"labels", g.labels}};
}

/// Patterns are rebuilt from the nonzeros of beta and of omega's strict upper triangle.
inline GroundTruth truth_from_json(const json& j) {
  try {
    GroundTruth g;
    g.p = j.at("p").get<Index>();
    const auto& groups = j.at("groups");
    if (!groups.is_array() || groups.empty()) throw Error("truth: 'groups' must be a non-empty array");
    for (std::size_t k = 0; k < groups.size(); ++k) {
      const auto& e = groups[k];
      const std::string w = "truth group " + std::to_string(k);
      g.tau.push_back(e.at("tau").get<double>());
      g.mu.push_back(json_vector(e.at("mu"), w + " mu"));
      g.omega.push_back(json_upper_coo_sparse(e.at("omega"), w + " omega"));
      g.alpha.push_back(e.at("alpha").get<double>());
      g.beta.push_back(json_sparse_vector(e.at("beta"), w + " beta"));
      g.sigma.push_back(e.at("sigma").get<double>());
      if (g.mu.back().size() != g.p || g.beta.back().size() != g.p || g.omega.back().rows() != g.p) {
        throw Error(w + ": dimension does not match p=" + std::to_string(g.p));
      }
      std::vector<bool> bp(static_cast<std::size_t>(g.p));
      for (Index i = 0; i < g.p; ++i) bp[static_cast<std::size_t>(i)] = g.beta.back()(i) != 0.0;
      g.beta_pattern.push_back(std::move(bp));
      const Matrix dense(g.omega.back());
      std::vector<bool> op;
      op.reserve(static_cast<std::size_t>(g.p * (g.p - 1) / 2));
      for (Index i = 0; i < g.p; ++i)
        for (Index c = i + 1; c < g.p; ++c) op.push_back(dense(i, c) != 0.0);
      g.omega_pattern.push_back(std::move(op));
    }
    g.labels = j.at("labels").get<std::vector<int>>();
    if (static_cast<Index>(j.at("k").get<int>()) != g.k()) throw Error("truth: 'k' disagrees with the group list");
    return g;
  } catch (const json::exception& e) {
    throw Error(std::string("truth: ") + e.what());
  }
}

// ---- fit ----

inline json fit_json(const FitResult& fit, const std::string& variant, bool include_responsibilities = true) {
  const auto& par = fit.params;
  json groups = json::array();
  for (Index k = 0; k < par.k(); ++k) {
    const auto& g = par.group(k);
    groups.push_back({{"tau", g.tau},
                      {"mu", vector_json(g.mu)},
                      {"omega", upper_coo_json(g.omega)},
                      {"alpha", g.alpha},
                      {"beta", sparse_vector_json(g.beta)},
                      {"sigma", g.sigma}});
  }
  json j = {{"variant", variant},
            {"k", par.k()},
            {"p", par.ambient_dim()},
            {"q", par.embed_dim()},
            {"T", fit.balancing_T},
            {"lambda", fit.lambda},
            {"groups", groups},
            {"labels", fit.hard_labels},
            {"objective_trace", fit.objective_trace},
            {"n_iter", fit.n_iter},
            {"converged", fit.converged},
            {"restart", fit.restart},
            {"failed_restarts", fit.failed_restarts},
            {"wall_time_seconds", fit.wall_time_seconds}};
  if (include_responsibilities) {
    json r = json::array();
    for (Index i = 0; i < fit.resp.n(); ++i) r.push_back(vector_json(fit.resp.matrix().row(i).transpose()));
    j["responsibilities"] = r;
  }
  return j;
}

/// Fitted parameters stored in fit.json (q-dimensional feature model).
inline MixtureParams params_from_fit_json(const json& j) {
  try {
    const auto p = j.at("p").get<Index>();
    const auto q = j.at("q").get<Index>();
    std::vector<GroupParams> groups;
    for (const auto& e : j.at("groups")) {
      groups.push_back({e.at("tau").get<double>(), json_vector(e.at("mu"), "fit mu"),
                        json_upper_coo_dense(e.at("omega"), "fit omega"), e.at("alpha").get<double>(),
                        json_sparse_vector(e.at("beta"), "fit beta"), e.at("sigma").get<double>()});
    }
    return MixtureParams(std::move(groups), q, p);
  } catch (const json::exception& e) {
    throw Error(std::string("fit: ") + e.what());
  }
}

// ---- result rows ----

struct ResultRow {
  std::string method;
  int replicate = 0;
  Index n = 0;
  Index p = 0;
  std::optional<Index> q;
  std::optional<Index> K;
  std::optional<double> T;
  std::optional<double> ari;
  std::optional<double> pr_auc_beta;
  std::optional<double> pr_auc_omega;
  std::optional<double> roc_auc_beta;
  std::optional<double> roc_auc_omega;
  std::optional<double> wall_time_seconds;
  std::optional<int> n_iter;
  std::optional<double> objective_final;

  bool operator==(const ResultRow&) const = default;
};

inline const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols{"method", "replicate", "n", "p", "q", "K", "T", "ari",
                                             "pr_auc_beta", "pr_auc_omega", "roc_auc_beta", "roc_auc_omega",
                                             "wall_time_seconds", "n_iter", "objective_final"};
  return cols;
}

namespace detail {

template <class T>
std::string opt_field(const std::optional<T>& v) {
  if (!v) return "";
  if constexpr (std::is_floating_point_v<T>) {
    return format_double(*v);
  } else {
    return std::to_string(*v);
  }
}

inline std::string quote_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> split_quoted(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline std::string result_header_line() {
  std::string s;
  for (const auto& c : result_columns()) s += (s.empty() ? "" : ",") + c;
  return s;
}

inline std::string result_line(const ResultRow& r) {
  std::vector<std::string> f{detail::quote_field(r.method),
                             std::to_string(r.replicate),
                             std::to_string(r.n),
                             std::to_string(r.p),
                             detail::opt_field(r.q),
                             detail::opt_field(r.K),
                             detail::opt_field(r.T),
                             detail::opt_field(r.ari),
                             detail::opt_field(r.pr_auc_beta),
                             detail::opt_field(r.pr_auc_omega),
                             detail::opt_field(r.roc_auc_beta),
                             detail::opt_field(r.roc_auc_omega),
                             detail::opt_field(r.wall_time_seconds),
                             detail::opt_field(r.n_iter),
                             detail::opt_field(r.objective_final)};
  std::string s;
  for (std::size_t i = 0; i < f.size(); ++i) s += (i ? "," : "") + f[i];
  return s;
}

/// Appends rows, writing the header first when the file is new or empty.
inline void append_results(const std::string& path, const std::vector<ResultRow>& rows) {
  bool fresh = true;
  {
    std::ifstream probe(path, std::ios::ate);
    if (probe && probe.tellg() > 0) fresh = false;
  }
  auto out = detail::open_out(path, true);
  if (fresh) out << result_header_line() << '\n';
  for (const auto& r : rows) out << result_line(r) << '\n';
  if (!out) throw Error("write failed for '" + path + "'");
}

inline void write_results(const std::string& path, const std::vector<ResultRow>& rows) {
  auto out = detail::open_out(path);
  out << result_header_line() << '\n';
  for (const auto& r : rows) out << result_line(r) << '\n';
  if (!out) throw Error("write failed for '" + path + "'");
}

inline std::vector<ResultRow> read_results(const std::string& path) {
  auto in = detail::open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw Error(path + ": empty file");
  if (detail::split_quoted(line) != result_columns()) throw Error(path + ": unexpected header '" + line + "'");
  std::vector<ResultRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_quoted(line);
    const std::string at = path + ":" + std::to_string(lineno);
    if (f.size() != result_columns().size()) throw Error(at + ": expected 15 fields, found " + std::to_string(f.size()));
    auto num = [&](std::size_t c) { return detail::parse_cell(f[c], at + ": " + result_columns()[c]); };
    auto opt = [&](std::size_t c) -> std::optional<double> {
      if (f[c].empty()) return std::nullopt;
      return num(c);
    };
    auto opt_int = [&](std::size_t c) -> std::optional<Index> {
      if (f[c].empty()) return std::nullopt;
      return static_cast<Index>(num(c));
    };
    ResultRow r;
    r.method = f[0];
    r.replicate = static_cast<int>(num(1));
    r.n = static_cast<Index>(num(2));
    r.p = static_cast<Index>(num(3));
    r.q = opt_int(4);
    r.K = opt_int(5);
    r.T = opt(6);
    r.ari = opt(7);
    r.pr_auc_beta = opt(8);
    r.pr_auc_omega = opt(9);
    r.roc_auc_beta = opt(10);
    r.roc_auc_omega = opt(11);
    r.wall_time_seconds = opt(12);
    if (auto v = opt_int(13)) r.n_iter = static_cast<int>(*v);
    r.objective_final = opt(14);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace srjm::io
