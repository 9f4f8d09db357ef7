// srjm: simulate, fit, evaluate and experiment sub-commands.

#include "srjm/srjm.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using srjm::Error;
using srjm::Index;
using srjm::io::json;

namespace {

// ---- strict config reading ----

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw Error(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) throw Error(where + ": unknown key '" + it.key() + "'");
  }
}

template <class T>
T get_or(const json& j, const std::string& key, const std::string& where, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(where + "." + key + ": wrong type");
  }
}

/// A scalar or an array of numbers, as a list.
std::vector<double> number_list(const json& j, const std::string& key, const std::string& where,
                                std::vector<double> fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (v.is_number()) return {v.get<double>()};
  if (!v.is_array() || v.empty()) throw Error(where + "." + key + ": expected a number or a non-empty array");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number()) throw Error(where + "." + key + ": expected numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

struct GeneratorConfig {
  std::string kind = "gaussian";
  std::vector<double> n{200}, p{100}, delta_mu{0.0}, beta_amplitude{5.0};
  srjm::SignalSpec spec;
  double dof = 10.0;
  double binary_fraction = 0.5;
};

const std::set<std::string> kGeneratorKeys{"kind",       "n",           "p",          "k",        "delta_mu",
                                           "beta_amplitude", "beta_nonzeros", "beta_mode", "omega", "omega_edges",
                                           "sigma_noise", "tau",        "dof",        "binary_fraction", "seed"};

GeneratorConfig parse_generator(const json& j, const std::string& where) {
  check_keys(j, where, kGeneratorKeys);
  GeneratorConfig g;
  g.kind = get_or<std::string>(j, "kind", where, "gaussian");
  if (g.kind != "gaussian" && g.kind != "student_t" && g.kind != "mixed_binary") {
    throw Error(where + ".kind: expected gaussian, student_t or mixed_binary");
  }
  g.n = number_list(j, "n", where, g.n);
  g.p = number_list(j, "p", where, g.p);
  g.delta_mu = number_list(j, "delta_mu", where, g.delta_mu);
  g.beta_amplitude = number_list(j, "beta_amplitude", where, g.beta_amplitude);
  g.spec.k = get_or<Index>(j, "k", where, 2);
  g.spec.beta_nonzeros = get_or<Index>(j, "beta_nonzeros", where, 0);
  const std::string bm = get_or<std::string>(j, "beta_mode", where, "disjoint");
  if (bm == "disjoint") g.spec.beta_mode = srjm::SignalSpec::BetaMode::DisjointSupports;
  else if (bm == "flipped") g.spec.beta_mode = srjm::SignalSpec::BetaMode::FlippedSigns;
  else if (bm == "shared") g.spec.beta_mode = srjm::SignalSpec::BetaMode::Shared;
  else throw Error(where + ".beta_mode: expected disjoint, flipped or shared");
  const std::string om = get_or<std::string>(j, "omega", where, "shared");
  if (om == "shared") g.spec.omega_kind = srjm::SignalSpec::OmegaKind::SharedRandom;
  else if (om == "distinct") g.spec.omega_kind = srjm::SignalSpec::OmegaKind::DistinctSparse;
  else throw Error(where + ".omega: expected shared or distinct");
  g.spec.omega_edges = get_or<Index>(j, "omega_edges", where, -1);
  if (j.contains("sigma_noise")) {
    const auto s = number_list(j, "sigma_noise", where, {});
    g.spec.sigma_noise = s.size() == 1 ? std::vector<double>(static_cast<std::size_t>(g.spec.k), s[0]) : s;
  }
  if (j.contains("tau")) g.spec.tau = number_list(j, "tau", where, {});
  g.dof = get_or<double>(j, "dof", where, 10.0);
  g.binary_fraction = get_or<double>(j, "binary_fraction", where, 0.5);
  return g;
}

srjm::Simulation generate(const GeneratorConfig& g, Index n, Index p, double dmu, double amp, std::uint64_t seed) {
  srjm::SignalSpec spec = g.spec;
  spec.delta_mu = dmu;
  spec.beta_amplitude = amp;
  spec.validate(p);
  if (g.kind == "student_t") return srjm::gen_student_t(n, p, spec, g.dof, seed);
  if (g.kind == "mixed_binary") return srjm::gen_mixed_binary(n, p, spec, g.binary_fraction, seed);
  return srjm::gen_gaussian(n, p, spec, seed);
}

Index as_index(double v, const std::string& what) {
  if (v < 1 || v != std::floor(v)) throw Error(what + " must be a positive integer");
  return static_cast<Index>(v);
}

// ---- preprocessing ----

/// Column z-scores (divisor n - 1).
srjm::Matrix standardize_columns(const srjm::Matrix& x) {
  srjm::detail::require(x.rows() >= 2, "--standardize needs at least 2 rows");
  srjm::Matrix out = x;
  for (Index j = 0; j < x.cols(); ++j) {
    const double m = x.col(j).mean();
    const double sd = std::sqrt((x.col(j).array() - m).square().sum() / static_cast<double>(x.rows() - 1));
    if (!(sd > 0.0)) throw Error("--standardize: column " + std::to_string(j) + " is constant");
    out.col(j) = (x.col(j).array() - m) / sd;
  }
  return out;
}

/// Subtracts the per-label column means of x.
srjm::Matrix remove_group_means(const srjm::Matrix& x, const std::vector<int>& labels) {
  if (static_cast<Index>(labels.size()) != x.rows()) throw Error("--remove-group-means: labels and x differ in rows");
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  srjm::Matrix sums = srjm::Matrix::Zero(k, x.cols());
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (Index i = 0; i < x.rows(); ++i) {
    sums.row(labels[static_cast<std::size_t>(i)]) += x.row(i);
    counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] += 1.0;
  }
  srjm::Matrix out = x;
  for (Index i = 0; i < x.rows(); ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    out.row(i) -= sums.row(l) / counts[static_cast<std::size_t>(l)];
  }
  return out;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory '" + dir + "': " + ec.message());
}

std::string join(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

// ---- simulate ----

struct SimulateArgs {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
};

int cmd_simulate(const SimulateArgs& a) {
  json cfg = srjm::io::read_json(a.config);
  const GeneratorConfig g = parse_generator(cfg, "config");
  if (g.n.size() != 1 || g.p.size() != 1 || g.delta_mu.size() != 1 || g.beta_amplitude.size() != 1) {
    throw Error("config: simulate takes scalar n, p, delta_mu and beta_amplitude");
  }
  const std::uint64_t seed = a.seed ? *a.seed : get_or<std::uint64_t>(cfg, "seed", "config", 0);
  const auto sim = generate(g, as_index(g.n[0], "n"), as_index(g.p[0], "p"), g.delta_mu[0], g.beta_amplitude[0], seed);
  ensure_dir(a.out);
  srjm::io::write_x(join(a.out, "x.csv"), sim.data.x());
  srjm::io::write_y(join(a.out, "y.csv"), sim.data.y());
  srjm::io::write_labels(join(a.out, "labels.csv"), sim.truth.labels);
  json t = srjm::io::truth_json(sim.truth);
  if (!sim.binary_mask.empty()) t["binary_mask"] = sim.binary_mask;
  srjm::io::write_json(join(a.out, "truth.json"), t);
  std::cout << "wrote " << sim.data.n() << " x " << sim.data.p() << " dataset to " << a.out << "\n";
  return 0;
}

// ---- fit ----

struct FitArgs {
  std::string x, y, embedding, labels, out = ".";
  std::string variant = "rjm";
  std::optional<Index> q;
  std::optional<double> T;
  Index k = 2;
  bool adaptive = false;
  std::vector<Index> k_grid{1, 2, 3, 4, 5};
  std::vector<Index> q_grid{2, 5, 10};
  std::string ic = "aic";
  double eta = 1.0;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  srjm::RunSettings run;
  bool standardize = false;
  bool remove_means = false;
  bool q_given = false;
};

srjm::Dataset load_dataset(const std::string& x, const std::string& y, bool standardize, bool remove_means,
                           const std::string& labels_path) {
  srjm::Dataset d = srjm::io::read_dataset(x, y);
  srjm::Matrix xm = d.x();
  if (remove_means) {
    if (labels_path.empty()) throw Error("--remove-group-means requires --labels");
    xm = remove_group_means(xm, srjm::io::read_labels(labels_path));
  }
  if (standardize) xm = standardize_columns(xm);
  return srjm::Dataset(std::move(xm), d.y());
}

void print_selection(const srjm::SelectionResult& sel, bool ambient) {
  std::cout << "information criterion table\n";
  std::cout << (ambient ? "K,ic,neg_log_lik,df,error\n" : "q,K,ic,neg_log_lik,df,error\n");
  for (const auto& c : sel.ic_table) {
    if (!ambient) std::cout << c.q << ",";
    std::cout << c.k << "," << srjm::io::format_double(c.ic) << "," << srjm::io::format_double(c.neg_log_lik) << ","
              << c.df << "," << c.error << "\n";
  }
  if (!ambient) {
    std::cout << "stability table\nq,K,stability\n";
    for (const auto& [q, st] : sel.stability) {
      std::cout << q << "," << sel.k_hat.at(q) << "," << srjm::io::format_double(st.score) << "\n";
    }
  }
  std::cout << "selected K=" << sel.chosen_k;
  if (!ambient) std::cout << " q=" << sel.chosen_q;
  std::cout << "\n";
}

int cmd_fit(const FitArgs& a) {
  const srjm::Variant v = srjm::parse_variant(a.variant);
  const bool ambient = v == srjm::Variant::RJM || v == srjm::Variant::Balanced;
  if (ambient && a.q_given) {
    std::cerr << "warning: --q is ignored for variant " << a.variant << " (q only applies to projected variants)\n";
  }
  const srjm::Dataset data = load_dataset(a.x, a.y, a.standardize, a.remove_means, a.labels);

  srjm::MethodSpec m;
  m.name = a.variant;
  m.kind = static_cast<srjm::MethodSpec::Kind>(static_cast<int>(v));
  m.k = a.k;
  m.q = a.q.value_or(5);
  m.T = a.T;
  m.adaptive = a.adaptive;
  m.grid.k_candidates = a.k_grid;
  m.grid.q_candidates = a.q_grid;
  m.grid.ic = srjm::parse_criterion(a.ic);
  m.grid.eta = a.eta;
  m.grid.jobs = a.jobs;

  srjm::MethodOutcome o;
  if (!a.embedding.empty()) {
    if (a.adaptive) throw Error("--embedding cannot be combined with --adaptive");
    if (ambient) throw Error("--embedding needs a projected variant (proj or bal-proj)");
    srjm::Matrix e = srjm::io::read_x(a.embedding);
    if (e.rows() != data.n()) throw Error("--embedding has " + std::to_string(e.rows()) + " rows, data has " + std::to_string(data.n()));
    srjm::FitConfig cfg = srjm::method_config(m, a.k, data.p(), e.cols(), a.run, a.seed);
    if (!a.T && v == srjm::Variant::BalancedProjected) cfg.penalty.balancing_T = static_cast<double>(e.cols());
    cfg.embedding = srjm::EmbeddingSpec::from_values(std::move(e));
    srjm::FitResult fit = srjm::fit_em(data, cfg);
    o.labels = fit.hard_labels;
    o.k = a.k;
    o.fit = std::move(fit);
  } else {
    o = srjm::run_method(data, m, a.run, a.seed);
  }
  if (o.selection) print_selection(*o.selection, ambient);

  ensure_dir(a.out);
  json j = srjm::io::fit_json(*o.fit, a.variant);
  j["seed"] = a.seed;
  srjm::io::write_json(join(a.out, "fit.json"), j);
  srjm::io::write_labels(join(a.out, "labels.csv"), o.labels);
  const auto& f = *o.fit;
  std::cout << "variant=" << a.variant << " K=" << f.params.k() << " q=" << f.params.embed_dim()
            << " T=" << srjm::io::format_double(f.balancing_T) << " iterations=" << f.n_iter
            << " converged=" << (f.converged ? "yes" : "no")
            << " objective=" << srjm::io::format_double(f.objective_trace.back()) << "\n";
  return 0;
}

// ---- evaluate ----

struct EvaluateArgs {
  std::string fit, truth, x, y, results = "results.csv", method;
  int replicate = 0;
  std::string recovery = "all";
};

srjm::RunSettings recovery_settings(const std::string& r) {
  srjm::RunSettings s;
  if (r == "all") return s;
  if (r == "beta") {
    s.recovery_omega = false;
    return s;
  }
  if (r == "none") {
    s.recovery_beta = s.recovery_omega = false;
    return s;
  }
  throw Error("recovery must be all, beta or none");
}

int cmd_evaluate(const EvaluateArgs& a) {
  const json fj = srjm::io::read_json(a.fit);
  const srjm::GroundTruth truth = srjm::io::truth_from_json(srjm::io::read_json(a.truth));
  srjm::MethodOutcome o;
  try {
    o.labels = fj.at("labels").get<std::vector<int>>();
    o.k = fj.at("k").get<Index>();
    o.q = fj.at("q").get<Index>();
    o.T = fj.at("T").get<double>();
    o.wall_time_seconds = fj.at("wall_time_seconds").get<double>();
  } catch (const json::exception& e) {
    throw Error(a.fit + ": " + e.what());
  }
  if (o.labels.size() != truth.labels.size()) {
    throw Error("fit has " + std::to_string(o.labels.size()) + " labels, truth has " + std::to_string(truth.labels.size()));
  }
  srjm::RunSettings s = recovery_settings(a.recovery);
  std::optional<srjm::Dataset> data;
  if (!a.x.empty() || !a.y.empty()) {
    if (a.x.empty() || a.y.empty()) throw Error("--x and --y must be given together");
    data = srjm::io::read_dataset(a.x, a.y);
    if (data->n() != static_cast<Index>(truth.labels.size())) throw Error("data and truth differ in rows");
  } else {
    s.recovery_beta = s.recovery_omega = false;
  }
  const std::string method = a.method.empty() ? fj.value("variant", std::string("fit")) : a.method;
  srjm::io::ResultRow r;
  if (data) {
    r = srjm::make_row(method, a.replicate, *data, o, &truth, s);
  } else {
    r.method = method;
    r.replicate = a.replicate;
    r.n = static_cast<Index>(truth.labels.size());
    r.p = truth.p;
    r.q = o.q;
    r.K = o.k;
    r.T = o.T;
    r.wall_time_seconds = o.wall_time_seconds;
    r.ari = srjm::adjusted_rand_index(o.labels, truth.labels);
  }
  r.n_iter = fj.at("n_iter").get<int>();
  r.objective_final = fj.at("objective_trace").back().get<double>();
  srjm::io::append_results(a.results, {r});
  std::cout << srjm::io::result_header_line() << "\n" << srjm::io::result_line(r) << "\n";
  return 0;
}

// ---- experiment ----

struct ExperimentArgs {
  std::string config;
  std::optional<unsigned> jobs;
  std::string out;
  std::optional<std::uint64_t> seed;
};

const std::set<std::string> kMethodKeys{"name", "kind", "input", "k", "q", "T", "adaptive",
                                        "k_candidates", "q_candidates", "ic", "eta"};

srjm::MethodSpec parse_method(const json& j, const std::string& where) {
  check_keys(j, where, kMethodKeys);
  srjm::MethodSpec m;
  if (!j.contains("kind")) throw Error(where + ": missing 'kind'");
  const std::string kind = get_or<std::string>(j, "kind", where, "");
  m.kind = srjm::parse_method_kind(kind);
  const std::string input = get_or<std::string>(j, "input", where, "x");
  if (input == "x") m.input = srjm::BaselineSpec::Input::XOnly;
  else if (input == "xy") m.input = srjm::BaselineSpec::Input::XY;
  else throw Error(where + ".input: expected x or xy");
  m.name = get_or<std::string>(j, "name", where, m.is_em() ? kind : kind + "(" + input + ")");
  m.k = get_or<Index>(j, "k", where, 0);
  m.q = get_or<Index>(j, "q", where, 5);
  if (j.contains("T")) m.T = get_or<double>(j, "T", where, 1.0);
  m.adaptive = get_or<bool>(j, "adaptive", where, false);
  if (m.adaptive && !m.is_em()) throw Error(where + ": adaptive applies to EM variants only");
  m.grid.k_candidates = get_or<std::vector<Index>>(j, "k_candidates", where, m.grid.k_candidates);
  m.grid.q_candidates = get_or<std::vector<Index>>(j, "q_candidates", where, m.grid.q_candidates);
  m.grid.ic = srjm::parse_criterion(get_or<std::string>(j, "ic", where, "aic"));
  m.grid.eta = get_or<double>(j, "eta", where, 1.0);
  return m;
}

struct Cell {
  Index n = 0, p = 0;
  double delta_mu = 0.0, beta_amplitude = 0.0;
};

struct Failure {
  std::size_t cell;
  int replicate;
  std::string method, error;
};

int cmd_experiment(const ExperimentArgs& a) {
  const json cfg = srjm::io::read_json(a.config);
  check_keys(cfg, "config", {"generator", "input", "methods", "replicates", "seed", "jobs", "output", "fit", "recovery"});
  if (!cfg.contains("methods") || !cfg.at("methods").is_array()) throw Error("config: 'methods' must be an array");
  if (cfg.at("methods").empty()) throw Error("no methods configured");
  std::vector<srjm::MethodSpec> methods;
  for (std::size_t i = 0; i < cfg.at("methods").size(); ++i) {
    methods.push_back(parse_method(cfg.at("methods")[i], "methods[" + std::to_string(i) + "]"));
  }
  if (cfg.contains("generator") == cfg.contains("input")) throw Error("config: give exactly one of 'generator' or 'input'");

  srjm::RunSettings run = recovery_settings(get_or<std::string>(cfg, "recovery", "config", "all"));
  if (cfg.contains("fit")) {
    const json& f = cfg.at("fit");
    check_keys(f, "fit", {"max_iter", "tol_obj", "tol_param", "restarts"});
    run.max_iter = get_or<int>(f, "max_iter", "fit", run.max_iter);
    run.tol_obj = get_or<double>(f, "tol_obj", "fit", run.tol_obj);
    run.tol_param = get_or<double>(f, "tol_param", "fit", run.tol_param);
    run.restarts = get_or<int>(f, "restarts", "fit", run.restarts);
  }
  const int replicates = get_or<int>(cfg, "replicates", "config", 1);
  if (replicates < 1) throw Error("config.replicates must be >= 1");
  const std::uint64_t seed = a.seed ? *a.seed : get_or<std::uint64_t>(cfg, "seed", "config", 0);
  const unsigned jobs = a.jobs ? *a.jobs : get_or<unsigned>(cfg, "jobs", "config", 1);
  const std::string out = !a.out.empty() ? a.out : get_or<std::string>(cfg, "output", "config", ".");

  std::vector<Cell> cells;
  std::optional<GeneratorConfig> gen;
  std::optional<srjm::Dataset> fixed_data;
  std::optional<srjm::GroundTruth> fixed_truth;
  if (cfg.contains("generator")) {
    gen = parse_generator(cfg.at("generator"), "generator");
    for (double n : gen->n)
      for (double p : gen->p)
        for (double d : gen->delta_mu)
          for (double b : gen->beta_amplitude) cells.push_back({as_index(n, "generator.n"), as_index(p, "generator.p"), d, b});
  } else {
    const json& in = cfg.at("input");
    check_keys(in, "input", {"x", "y", "labels", "truth", "standardize", "remove_group_means"});
    const std::string labels = get_or<std::string>(in, "labels", "input", "");
    fixed_data = load_dataset(get_or<std::string>(in, "x", "input", ""), get_or<std::string>(in, "y", "input", ""),
                              get_or<bool>(in, "standardize", "input", false),
                              get_or<bool>(in, "remove_group_means", "input", false), labels);
    if (in.contains("truth")) {
      fixed_truth = srjm::io::truth_from_json(srjm::io::read_json(get_or<std::string>(in, "truth", "input", "")));
    } else if (!labels.empty()) {
      srjm::GroundTruth t;
      t.labels = srjm::io::read_labels(labels);
      t.p = fixed_data->p();
      t.tau.assign(static_cast<std::size_t>(*std::max_element(t.labels.begin(), t.labels.end()) + 1), 0.0);
      fixed_truth = std::move(t);
      run.recovery_beta = run.recovery_omega = false;
    } else {
      run.recovery_beta = run.recovery_omega = false;
    }
    cells.push_back({fixed_data->n(), fixed_data->p(), 0.0, 0.0});
  }

  const std::size_t tasks = cells.size() * static_cast<std::size_t>(replicates);
  std::vector<std::vector<srjm::io::ResultRow>> rows(tasks);
  std::vector<std::vector<Failure>> failures(tasks);
  srjm::parallel_for(tasks, jobs, [&](std::size_t t) {
    const std::size_t c = t / static_cast<std::size_t>(replicates);
    const int r = static_cast<int>(t % static_cast<std::size_t>(replicates));
    const std::uint64_t s = seed + 100003ULL * c + static_cast<std::uint64_t>(r);
    std::optional<srjm::Simulation> sim;
    const srjm::Dataset* data = nullptr;
    const srjm::GroundTruth* truth = nullptr;
    try {
      if (gen) {
        sim = generate(*gen, cells[c].n, cells[c].p, cells[c].delta_mu, cells[c].beta_amplitude, s);
        data = &sim->data;
        truth = &sim->truth;
      } else {
        data = &*fixed_data;
        truth = fixed_truth ? &*fixed_truth : nullptr;
      }
    } catch (const Error& e) {
      for (const auto& m : methods) failures[t].push_back({c, r, m.name, std::string("data: ") + e.what()});
      return;
    }
    for (const auto& m : methods) {
      try {
        const srjm::MethodOutcome o = srjm::run_method(*data, m, run, s, truth);
        rows[t].push_back(srjm::make_row(m.name, r, *data, o, truth, run));
      } catch (const Error& e) {
        srjm::io::ResultRow row;
        row.method = m.name;
        row.replicate = r;
        row.n = data->n();
        row.p = data->p();
        rows[t].push_back(row);
        failures[t].push_back({c, r, m.name, e.what()});
      }
    }
  });

  std::vector<srjm::io::ResultRow> all;
  json summary = {{"cells", json::array()}, {"failures", json::array()}};
  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<srjm::io::ResultRow> cell_rows;
    for (int r = 0; r < replicates; ++r) {
      const std::size_t t = c * static_cast<std::size_t>(replicates) + static_cast<std::size_t>(r);
      cell_rows.insert(cell_rows.end(), rows[t].begin(), rows[t].end());
      for (const auto& f : failures[t]) {
        summary["failures"].push_back({{"cell", f.cell}, {"replicate", f.replicate}, {"method", f.method}, {"error", f.error}});
      }
    }
    json cj = {{"cell", c}, {"n", cells[c].n}, {"p", cells[c].p}};
    if (gen) {
      cj["delta_mu"] = cells[c].delta_mu;
      cj["beta_amplitude"] = cells[c].beta_amplitude;
    }
    cj["methods"] = srjm::summarize_rows(cell_rows);
    summary["cells"].push_back(cj);
    all.insert(all.end(), cell_rows.begin(), cell_rows.end());
  }
  ensure_dir(out);
  srjm::io::write_results(join(out, "results.csv"), all);
  srjm::io::write_json(join(out, "summary.json"), summary);
  std::cout << "wrote " << all.size() << " rows to " << join(out, "results.csv");
  if (!summary["failures"].empty()) std::cout << " (" << summary["failures"].size() << " failed runs)";
  std::cout << "\n";
  return 0;
}

void add_run_flags(CLI::App* app, srjm::RunSettings& run, std::uint64_t& seed) {
  app->add_option("--seed", seed, "Random seed");
  app->add_option("--tol-obj", run.tol_obj, "Relative objective tolerance")->check(CLI::PositiveNumber);
  app->add_option("--tol-param", run.tol_param, "Relative parameter tolerance")->check(CLI::PositiveNumber);
  app->add_option("--max-iter", run.max_iter, "Maximum EM iterations")->check(CLI::PositiveNumber);
  app->add_option("--restarts", run.restarts, "EM restarts")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scalable regularised joint mixture models"};
  app.require_subcommand(1);

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Draw a synthetic dataset and its ground truth");
  sim->add_option("--config", sa.config, "Generator config (JSON)")->required();
  sim->add_option("--out", sa.out, "Output directory");
  sim->add_option("--seed", sa.seed, "Seed (overrides the config)");

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit one model variant");
  fit->add_option("--x", fa.x, "Feature CSV")->required();
  fit->add_option("--y", fa.y, "Response CSV")->required();
  fit->add_option("--embedding", fa.embedding, "Precomputed embedding CSV");
  fit->add_option("--labels", fa.labels, "Labels CSV (for --remove-group-means)");
  fit->add_option("--out", fa.out, "Output directory");
  fit->add_option("--variant", fa.variant, "rjm, bal, proj or bal-proj")
      ->check(CLI::IsMember({"rjm", "bal", "proj", "bal-proj"}));
  fit->add_option("--q", fa.q, "Embedding dimension")->check(CLI::PositiveNumber);
  fit->add_option("--T", fa.T, "Balancing parameter")->check(CLI::PositiveNumber);
  fit->add_option("--K", fa.k, "Number of groups")->check(CLI::PositiveNumber);
  fit->add_flag("--adaptive", fa.adaptive, "Select K (and q) by information criterion and stability");
  fit->add_option("--k-grid", fa.k_grid, "K candidates for --adaptive")->delimiter(',');
  fit->add_option("--q-grid", fa.q_grid, "q candidates for --adaptive")->delimiter(',');
  fit->add_option("--ic", fa.ic, "aic or bic")->check(CLI::IsMember({"aic", "bic"}));
  fit->add_option("--eta", fa.eta, "Penalty factor of the information criterion")->check(CLI::NonNegativeNumber);
  fit->add_option("--jobs", fa.jobs, "Worker threads")->check(CLI::PositiveNumber);
  fit->add_flag("--standardize", fa.standardize, "Z-score the columns of x");
  fit->add_flag("--remove-group-means", fa.remove_means, "Subtract per-label means from x (needs --labels)");
  add_run_flags(fit, fa.run, fa.seed);

  EvaluateArgs ea;
  auto* ev = app.add_subcommand("evaluate", "Score a fit against a ground truth");
  ev->add_option("--fit", ea.fit, "fit.json")->required();
  ev->add_option("--truth", ea.truth, "truth.json")->required();
  ev->add_option("--x", ea.x, "Feature CSV (needed for recovery metrics)");
  ev->add_option("--y", ea.y, "Response CSV (needed for recovery metrics)");
  ev->add_option("--results", ea.results, "results.csv to append to");
  ev->add_option("--method", ea.method, "Method name for the row");
  ev->add_option("--replicate", ea.replicate, "Replicate index for the row");
  ev->add_option("--recovery", ea.recovery, "all, beta or none")->check(CLI::IsMember({"all", "beta", "none"}));

  ExperimentArgs xa;
  auto* ex = app.add_subcommand("experiment", "Run a configured simulation sweep");
  ex->add_option("--config", xa.config, "Experiment config (JSON)")->required();
  ex->add_option("--jobs", xa.jobs, "Worker threads")->check(CLI::PositiveNumber);
  ex->add_option("--out", xa.out, "Output directory (overrides the config)");
  ex->add_option("--seed", xa.seed, "Seed (overrides the config)");

  CLI11_PARSE(app, argc, argv);
  fa.q_given = fit->count("--q") > 0;
  try {
    if (*sim) return cmd_simulate(sa);
    if (*fit) return cmd_fit(fa);
    if (*ev) return cmd_evaluate(ea);
    if (*ex) return cmd_experiment(xa);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
