#include "wgfe/cli.hpp"

#include "wgfe/errors.hpp"
#include "wgfe/ggfe.hpp"
#include "wgfe/inference.hpp"
#include "wgfe/panel_io.hpp"
#include "wgfe/simlab.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

namespace wgfe::cli {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json to_json(const Vector& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v(k));
  return a;
}

template <typename M>
ordered_json rows_json(const M& m) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(std::move(row));
  }
  return a;
}

ordered_json one_based(const GroupAssignment& gamma) {
  ordered_json a = ordered_json::array();
  for (int g : gamma.labels()) a.push_back(g + 1);
  return a;
}

ordered_json meta(const RunConfig& cfg) {
  return {{"seed", cfg.seed}, {"threads", cfg.threads}, {"version", kVersion}, {"command", cfg.command}};
}

const char* rule_name(AssignmentRule r) {
  switch (r) {
    case AssignmentRule::Standard: return "alg1";
    case AssignmentRule::PerPeriod: return "eq6";
    case AssignmentRule::ScaledPenalty: return "scaled";
  }
  return "alg1";
}

void emit(const RunConfig& cfg, const ordered_json& doc, std::ostream& out) {
  const std::string text = doc.dump(2) + "\n";
  if (cfg.out.empty()) {
    out << text;
    return;
  }
  std::ofstream f(cfg.out);
  if (!f) throw Error(ErrorCode::InvalidInput, "cannot write " + cfg.out);
  f << text;
}

int report_error(const RunConfig& cfg, const std::exception& e, std::ostream& err) {
  int code = kNumericError;
  std::string name = "Internal";
  if (const auto* we = dynamic_cast<const Error*>(&e)) {
    name = error_code_name(we->code());
    code = is_input_error(we->code()) ? kInputError : kNumericError;
  } else if (dynamic_cast<const json::exception*>(&e) != nullptr) {
    name = "ParseError";
    code = kInputError;
  }
  ordered_json doc = {{"meta", meta(cfg)}, {"error", {{"code", name}, {"message", e.what()}, {"exit", code}}}};
  err << doc.dump() << "\n";
  return code;
}

template <typename F>
int guarded(const RunConfig& cfg, std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return report_error(cfg, e, err);
  }
}

ordered_json result_json(const EstimationResult& r, const PanelDataset& data) {
  ordered_json units = ordered_json::array();
  for (const auto& u : data.unit_labels()) units.push_back(u);
  ordered_json periods = ordered_json::array();
  for (const auto& t : data.period_labels()) periods.push_back(t);
  ordered_json sizes = ordered_json::array();
  for (int c : r.assignment.counts()) sizes.push_back(c);
  return {{"mode", mode_name(r.mode)},
          {"n_units", data.n_units()},
          {"n_periods", data.n_periods()},
          {"n_covariates", data.n_covariates()},
          {"n_groups", r.assignment.n_groups()},
          {"objective", r.objective},
          {"theta", to_json(r.params.theta)},
          {"alpha", rows_json(r.params.alpha)},
          {"sigma", to_json(r.params.sigma)},
          {"group_shares", to_json(r.params.weights)},
          {"group_sizes", sizes},
          {"per_group_q", to_json(r.breakdown.per_group_ssr)},
          {"units", units},
          {"periods", periods},
          {"assignment", one_based(r.assignment)},
          {"converged", r.converged},
          {"n_iterations", r.n_lloyd_iters},
          {"n_restarts_used", r.n_restarts_used}};
}

ordered_json inference_json(const InferenceResult& inf) {
  return {{"se_theta", to_json(inf.se_theta)},
          {"var_theta", rows_json(inf.var_theta)},
          {"bread", rows_json(inf.bread)},
          {"meat", rows_json(inf.meat)},
          {"sigma2_hat", to_json(inf.sigma2_hat)},
          {"var_alpha", rows_json(inf.var_alpha)},
          {"dof_correction", inf.dof_correction}};
}

EstimationResult fit(const PanelDataset& data, const SolverConfig& config) {
  if (config.mode == Mode::GGFE) return ggfe::ggfe_descent(data, config);
  return multi_start(data, config);
}

// Simulation spec read from JSON; absent keys keep the two-group
// heteroskedastic default design.
Vector json_vector(const json& j, const char* key) {
  const auto v = j.at(key).get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

simlab::SimulationSpec read_spec(const json& j, std::uint64_t seed) {
  simlab::SimulationSpec s = simlab::two_group_spec(seed);
  if (j.contains("n_units")) s.n_units = j.at("n_units").get<int>();
  if (j.contains("n_periods")) s.n_periods = j.at("n_periods").get<int>();
  if (j.contains("n_groups")) s.n_groups = j.at("n_groups").get<int>();
  if (j.contains("dynamic")) s.dynamic = j.at("dynamic").get<bool>();
  if (j.contains("theta")) s.theta_true = json_vector(j, "theta");
  if (j.contains("sigma")) s.sigma_true = json_vector(j, "sigma");
  if (j.contains("group_probs")) s.group_probs = json_vector(j, "group_probs");
  if (j.contains("alpha")) {
    const auto rows = j.at("alpha").get<std::vector<std::vector<double>>>();
    s.alpha_true = Matrix(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows[0].size()) throw Error(ErrorCode::InvalidInput, "alpha rows must have equal length");
      for (std::size_t c = 0; c < rows[r].size(); ++c) s.alpha_true(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  if (j.contains("covariate")) {
    const json& c = j.at("covariate");
    simlab::Ar1Covariate ar;
    ar.rho = c.value("rho", ar.rho);
    ar.innovation_sd = c.value("innovation_sd", ar.innovation_sd);
    ar.mean = c.value("mean", ar.mean);
    s.covariate_law = ar;
  }
  s.validate();
  return s;
}

std::set<simlab::Estimator> read_estimators(const json& j) {
  std::set<simlab::Estimator> out;
  if (!j.contains("estimators")) {
    return {simlab::Estimator::WGFE, simlab::Estimator::GFE, simlab::Estimator::TwoWayFE};
  }
  for (const auto& name : j.at("estimators").get<std::vector<std::string>>()) {
    if (name == "wgfe") out.insert(simlab::Estimator::WGFE);
    else if (name == "gfe") out.insert(simlab::Estimator::GFE);
    else if (name == "twoway_fe") out.insert(simlab::Estimator::TwoWayFE);
    else throw Error(ErrorCode::InvalidInput, "unknown estimator '" + name + "'");
  }
  return out;
}

ordered_json spec_json(const simlab::SimulationSpec& s) {
  ordered_json cov;
  if (const auto* ar = std::get_if<simlab::Ar1Covariate>(&s.covariate_law)) {
    cov = {{"law", "ar1"}, {"rho", ar->rho}, {"innovation_sd", ar->innovation_sd}, {"mean", ar->mean}};
  } else {
    cov = {{"law", "fixed"}};
  }
  return {{"n_units", s.n_units},     {"n_periods", s.n_periods},          {"n_groups", s.n_groups},
          {"dynamic", s.dynamic},     {"theta", to_json(s.theta_true)},    {"alpha", rows_json(s.alpha_true)},
          {"sigma", to_json(s.sigma_true)}, {"group_probs", to_json(s.group_probs)}, {"covariate", cov}};
}

}  // namespace

SolverConfig solver_config(const RunConfig& cfg) {
  SolverConfig c;
  c.mode = cfg.mode;
  c.n_groups = cfg.groups;
  c.n_restarts = cfg.restarts;
  c.seed = cfg.seed;
  c.threads = cfg.threads;
  c.theta_fp_tol = cfg.tol;
  c.max_lloyd_iters = cfg.max_iters;
  c.assignment_rule = cfg.rule;
  c.record_trace = false;
  return c;
}

int cmd_estimate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(cfg, err, [&] {
    const PanelDataset data = ingest_csv(cfg.input);
    const SolverConfig config = solver_config(cfg);
    const EstimationResult r = fit(data, config);
    ordered_json doc = {{"meta", meta(cfg)}};
    doc["result"] = result_json(r, data);
    doc["result"]["assignment_rule"] = rule_name(cfg.rule);
    if (r.mode != Mode::GGFE) doc["inference"] = inference_json(variance_estimates(data, r));
    if (!cfg.truth.empty()) {
      const GroupAssignment truth = ingest_truth_csv(cfg.truth, data);
      const simlab::Misclassification m = simlab::misclassification_rate(r.assignment, truth);
      ordered_json perm = ordered_json::array();
      for (int g : m.permutation) perm.push_back(g + 1);
      doc["truth"] = {{"misclassification", m.rate}, {"permutation", perm}};
    }
    emit(cfg, doc, out);
    return static_cast<int>(kOk);
  });
}

int cmd_simulate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(cfg, err, [&] {
    json j = json::object();
    if (!cfg.spec.empty()) {
      std::ifstream f(cfg.spec);
      if (!f) throw Error(ErrorCode::InvalidInput, "cannot open " + cfg.spec);
      j = json::parse(f);
    }
    const simlab::SimulationSpec spec = read_spec(j, cfg.seed);
    const auto estimators = read_estimators(j);
    const int reps = j.value("replications", cfg.replications);
    simlab::StudyOptions options;
    options.solver = solver_config(cfg);
    options.solver.threads = 1;
    options.threads = cfg.threads;
    const simlab::StudyReport report = simlab::run_study(spec, estimators, reps, options);

    ordered_json rows = ordered_json::array();
    for (const auto& s : report.estimators) {
      ordered_json row = {{"estimator", simlab::estimator_name(s.estimator)},
                          {"rmse", to_json(s.rmse)},
                          {"n_ok", s.n_ok},
                          {"n_failed", s.n_failed}};
      if (s.misclass_mean) {
        row["misclass_mean"] = *s.misclass_mean;
        row["misclass_sd"] = *s.misclass_sd;
      }
      row["failures"] = s.failures;
      rows.push_back(std::move(row));
    }
    ordered_json doc = {{"meta", meta(cfg)}};
    doc["report"] = {{"spec", spec_json(spec)},
                     {"n_replications", report.n_replications},
                     {"estimators", rows},
                     {"runtime_seconds", report.runtime_seconds}};

    if (!cfg.curves.empty()) {
      const json sc = j.value("simple_case", json::object());
      const std::vector<int> grid = sc.value("t_grid", std::vector<int>{2, 4, 8, 16, 32});
      const auto points = simlab::simple_case_curves(sc.value("alpha1", 0.0), sc.value("alpha2", 0.0),
                                                     sc.value("sigma1", 1.0), sc.value("sigma2", 0.5), grid,
                                                     sc.value("n_draws", 100000LL), cfg.seed);
      std::ofstream f(cfg.curves);
      if (!f) throw Error(ErrorCode::InvalidInput, "cannot write " + cfg.curves);
      f << simlab::curves_csv(points);
    }
    emit(cfg, doc, out);
    const bool any_ok = std::any_of(report.estimators.begin(), report.estimators.end(),
                                    [](const simlab::EstimatorSummary& s) { return s.n_ok > 0; });
    return static_cast<int>(any_ok ? kOk : kNumericError);
  });
}

int cmd_select_g(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(cfg, err, [&] {
    const PanelDataset data = ingest_csv(cfg.input);
    SolverConfig config = solver_config(cfg);
    if (config.mode == Mode::GGFE) throw Error(ErrorCode::InvalidInput, "select-g supports wgfe and gfe");
    BicOptions bic;
    bic.penalty_scale = cfg.bic_penalty;
    const GroupCountSelection sel = select_n_groups(data, config, cfg.gmax, bic);
    ordered_json rows = ordered_json::array();
    for (const auto& row : sel.rows) {
      ordered_json r = {{"n_groups", row.n_groups}, {"ok", row.ok}};
      if (row.ok) {
        r["objective"] = row.objective;
        r["ssr"] = row.ssr;
        if (sel.g_hat > 0) r["bic"] = row.bic;
      } else {
        r["error"] = row.error;
      }
      rows.push_back(std::move(r));
    }
    ordered_json doc = {{"meta", meta(cfg)}};
    doc["result"] = {{"mode", mode_name(config.mode)},
                     {"g_max", cfg.gmax},
                     {"g_hat", sel.g_hat},
                     {"sigma2_gmax", sel.sigma2_gmax},
                     {"penalty_scale", cfg.bic_penalty},
                     {"formula", "bic = c * sigma2_gmax * (G*T + N + p) * ln(NT)/NT + ssr/NT"},
                     {"rows", rows}};
    emit(cfg, doc, out);
    return static_cast<int>(sel.g_hat > 0 ? kOk : kNumericError);
  });
}

int cmd_test_homoskedasticity(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(cfg, err, [&] {
    const PanelDataset data = ingest_csv(cfg.input);
    SolverConfig config = solver_config(cfg);
    config.mode = Mode::WGFE;
    const EstimationResult r = multi_start(data, config);
    const HomoskedasticityTest t = homoskedasticity_test(data, r);
    ordered_json doc = {{"meta", meta(cfg)}};
    doc["result"] = {{"tau", t.tau},
                     {"d_nt", t.scale_d_nt},
                     {"q_gfe", t.q_gfe},
                     {"q_wgfe", t.q_wgfe},
                     {"per_group_q", to_json(r.breakdown.per_group_ssr)},
                     {"group_shares", to_json(r.params.weights)},
                     {"assignment", one_based(r.assignment)}};
    emit(cfg, doc, out);
    return static_cast<int>(kOk);
  });
}

int run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.command == "estimate") return cmd_estimate(cfg, out, err);
  if (cfg.command == "simulate") return cmd_simulate(cfg, out, err);
  if (cfg.command == "select-g") return cmd_select_g(cfg, out, err);
  if (cfg.command == "test-homoskedasticity") return cmd_test_homoskedasticity(cfg, out, err);
  err << "unknown command '" << cfg.command << "'\n";
  return kInputError;
}

}  // namespace wgfe::cli
