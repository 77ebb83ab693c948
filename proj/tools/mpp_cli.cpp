// mpp_cli: config-driven runner for the Markov population process studies.
//
//   mpp_cli <command> [--config file.json] [--seed n] [--out dir] [--threads n] [--grid n]
//
// Exit codes: 0 ok, 1 runtime failure, 2 configuration error, 3 numerical failure.

#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mpp/assumptions.hpp"
#include "mpp/diagnostics.hpp"
#include "mpp/io.hpp"
#include "mpp/lna.hpp"
#include "mpp/meanfield.hpp"

namespace {

using namespace mpp;
using io::json;

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

struct Context {
  io::RunConfig cfg;
  std::string hash;
  io::OutputDir out;

  json header(const std::string& command) const {
    return {{"command", command}, {"config_hash", hash}, {"seed", cfg.simulation.seed}};
  }
};

meanfield::MeanFieldSolution solve_meanfield(const io::RunConfig& cfg, std::size_t M) {
  meanfield::MeanFieldOptions mo;
  mo.tol = {cfg.meanfield.rtol, cfg.meanfield.atol};
  mo.grid = uniform_grid(cfg.simulation.T, cfg.simulation.grid_points);
  return meanfield::integrate_meanfield(io::to_model(cfg), DensityVector(cfg.x0), cfg.simulation.T, M, mo);
}

int cmd_simulate(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& s = cfg.simulation;
  const arrigoni::Chain chain(io::to_model(cfg));
  const auto x0 = diagnostics::initial_counts(DensityVector(cfg.x0), s.N);
  SimOptions opt;
  opt.max_events = s.max_events;
  if (s.recording == "grid") opt.recording = Recording::on_grid(uniform_grid(s.T, s.grid_points));
  const auto method = io::to_method(cfg);
  auto trajs = run_replicas(s.replicas, s.seed, cfg.threads, [&](std::size_t, std::uint64_t seed) {
    return diagnostics::simulate(method, chain, x0, s.N, s.T, seed, opt);
  });
  auto csv = io::trajectory_csv();
  json events = json::array();
  for (std::size_t r = 0; r < trajs.size(); ++r) {
    io::trajectory_rows(csv, r, trajs[r]);
    events.push_back(trajs[r].events);
  }
  ctx.out.write("trajectory.csv", csv.text());
  json meta = ctx.header("simulate");
  meta["model"] = io::to_json(cfg)["model"];
  meta["N"] = s.N;
  meta["T"] = s.T;
  meta["replicas"] = s.replicas;
  meta["method"] = s.method;
  meta["recording"] = s.recording;
  meta["events"] = events;
  ctx.out.write_json("trajectory.json", meta);
  return 0;
}

int cmd_meanfield(Context& ctx) {
  const auto mf = solve_meanfield(ctx.cfg, ctx.cfg.meanfield.M);
  ctx.out.write("meanfield.csv", io::meanfield_csv(mf));
  json meta = ctx.header("meanfield");
  meta["M"] = mf.M;
  meta["tol"] = {{"rtol", mf.tol.rel}, {"atol", mf.tol.abs}};
  meta["dropped_flux"] = mf.dropped_flux();
  meta["warnings"] = mf.warnings;
  meta["steps"] = mf.stats.steps;
  ctx.out.write_json("meanfield.json", meta);
  return 0;
}

int cmd_lna(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto model = io::to_model(cfg);
  const std::size_t M = cfg.lna.M;
  const auto n = static_cast<Eigen::Index>(M + 1);
  const auto mf = solve_meanfield(cfg, M);
  const lna::ArrigoniLinearization lin(model, mf);
  json meta = ctx.header("lna");
  meta["M"] = M;
  meta["sigma0"] = cfg.lna.sigma0;

  Eigen::MatrixXd sigma0 = Eigen::MatrixXd::Zero(n, n);
  if (cfg.lna.sigma0 == "diagonal") {
    sigma0.diagonal().setConstant(cfg.lna.sigma0_scale);
  } else if (cfg.lna.sigma0 == "stationary") {
    const auto eq = meanfield::find_equilibrium(model, M);
    const auto st = lna::stationary_covariance(model, eq.x);
    sigma0 = st.sigma;
    ctx.out.write("lna_stationary.csv", io::covariance_csv({0.0}, {st.sigma}));
    meta["stationary"] = {{"residual", st.residual}, {"spectral_abscissa", st.spectral_abscissa},
                          {"equilibrium_residual", eq.residual}};
  }
  const auto gauss = lna::covariance_ode(lin, sigma0, mf.grid, {cfg.meanfield.rtol, cfg.meanfield.atol});
  ctx.out.write("lna_covariance.csv", io::covariance_csv(gauss.grid, gauss.cov));

  const double dt = cfg.lna.dt > 0.0 ? cfg.lna.dt : lna::default_dt(lin, cfg.simulation.T);
  meta["dt"] = dt;
  if (cfg.lna.paths > 0) {
    // Each replica owns its linearization: the interpolation cache is not shared.
    const auto ends = run_replicas(cfg.lna.paths, cfg.simulation.seed, cfg.threads, [&](std::size_t, std::uint64_t seed) {
      const lna::ArrigoniLinearization own(model, mf);
      return lna::simulate_Y(own, std::vector<double>(M + 1, 0.0), cfg.simulation.T, dt, seed).values.back();
    });
    io::Csv csv{"replica", "time", "type_index", "value"};
    for (std::size_t r = 0; r < ends.size(); ++r)
      for (std::size_t i = 0; i < ends[r].size(); ++i) csv.row(r, cfg.simulation.T, i, ends[r][i]);
    ctx.out.write("lna_paths.csv", csv.text());
  }
  meta["paths"] = cfg.lna.paths;
  ctx.out.write_json("lna.json", meta);
  return 0;
}

int cmd_lln(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto st = diagnostics::lln_study(io::to_setup(cfg), cfg.simulation.N_grid, cfg.simulation.replicas);
  auto csv = io::study_csv();
  for (std::size_t k = 0; k < st.N_grid.size(); ++k)
    for (std::size_t r = 0; r < st.errors[k].size(); ++r) csv.row("lln", st.N_grid[k], r, "sup_error", st.errors[k][r]);
  ctx.out.write("lln.csv", csv.text());
  json rep = ctx.header("lln");
  rep["N_grid"] = st.N_grid;
  rep["replicas"] = st.replicas;
  rep["grid_points"] = st.grid_points;
  rep["mean_error"] = st.mean_error;
  rep["mean_error_se"] = st.mean_error_se;
  rep["slope"] = st.slope;
  rep["slope_se"] = st.slope_se;
  rep["slope_residual_se"] = st.slope_residual_se;
  ctx.out.write_json("lln.json", rep);
  return 0;
}

int cmd_clt(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto rep = diagnostics::clt_study(io::to_setup(cfg), cfg.simulation.N, cfg.simulation.replicas,
                                          cfg.study.block, cfg.study.rel_tol);
  auto csv = io::study_csv();
  for (std::size_t i = 0; i < rep.block; ++i) csv.row("clt", rep.N, "all", "mean_" + std::to_string(i), rep.mean[i]);
  for (Eigen::Index i = 0; i < rep.empirical_cov.rows(); ++i)
    for (Eigen::Index j = i; j < rep.empirical_cov.cols(); ++j) {
      const std::string ij = std::to_string(i) + "_" + std::to_string(j);
      csv.row("clt", rep.N, "all", "cov_" + ij, rep.empirical_cov(i, j));
      csv.row("clt", rep.N, "all", "predicted_cov_" + ij, rep.predicted_cov(i, j));
    }
  csv.row("clt", rep.N, "all", "ks_statistic", rep.ks_statistic);
  csv.row("clt", rep.N, "all", "ks_p", rep.ks_p);
  ctx.out.write("clt.csv", csv.text());
  json out = ctx.header("clt");
  out["N"] = rep.N;
  out["replicas"] = rep.replicas;
  out["M"] = rep.M;
  out["T"] = rep.T;
  out["mean"] = rep.mean;
  out["mean_se"] = rep.mean_se;
  out["predicted_mean"] = rep.predicted_mean;
  out["empirical_cov"] = matrix_json(rep.empirical_cov);
  out["predicted_cov"] = matrix_json(rep.predicted_cov);
  out["cov_se"] = matrix_json(rep.cov_se);
  out["cov_pass"] = rep.cov_pass;
  out["worst_cov_ratio"] = rep.worst_cov_ratio;
  out["ell"] = rep.ell;
  out["functional_variance"] = rep.functional_variance;
  out["ks_statistic"] = rep.ks_statistic;
  out["ks_p"] = rep.ks_p;
  out["replicas_above_M"] = rep.replicas_above_M;
  ctx.out.write_json("clt.json", out);
  return 0;
}

int cmd_check(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto model = io::to_model(cfg);
  // Sample states: the mean-field path from x0 on a uniform grid.
  io::RunConfig probe = cfg;
  probe.simulation.grid_points = std::max<std::size_t>(2, cfg.study.check_samples);
  const auto mf = solve_meanfield(probe, cfg.meanfield.M);
  std::vector<DensityVector> samples;
  for (const auto& v : mf.values) samples.emplace_back(v);
  const auto rep = arrigoni::check_assumptions(model, cfg.meanfield.M, samples, cfg.study.r0);
  json out = ctx.header("check");
  out["M"] = rep.M;
  out["weights"] = {{"beta1", rep.weights.beta1}, {"beta2", rep.weights.beta2}, {"beta3", rep.weights.beta3},
                    {"beta4", rep.weights.beta4}, {"beta5", rep.weights.beta5}, {"w", rep.weights.w},
                    {"threshold", rep.weights.threshold()}};
  json checks = json::array();
  for (const auto& c : rep.checks) {
    json values = json::object();
    for (const auto& [k, v] : c.values) values[k] = v;
    checks.push_back({{"name", c.name},
                      {"pass", c.pass},
                      {"structural", c.structural},
                      {"detail", c.detail},
                      {"values", values}});
  }
  out["checks"] = checks;
  out["structural_pass"] = rep.structural_pass();
  out["all_pass"] = rep.all_pass();
  ctx.out.write_json("check.json", out);
  return 0;
}

int cmd_exponents(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto ws = arrigoni::weight_structure(io::to_model(cfg), cfg.study.r0);
  const double r0 = cfg.study.r0;
  const double lo = 1.0 / r0, hi = 1.0 / ws.threshold();
  const double zeta = cfg.study.zeta > 0.0 ? cfg.study.zeta : (lo < hi ? 0.5 * (lo + hi) : lo);
  const auto e = diagnostics::exponent_calc(ws, r0, zeta);
  json out = ctx.header("exponents");
  out["beta"] = {e.beta1, e.beta2, e.beta3, e.beta4, e.beta5};
  out["threshold"] = e.threshold;
  out["r0"] = e.r0;
  out["zeta"] = e.zeta;
  out["zeta_interval"] = {lo, hi};
  out["b1"] = e.b1;
  out["b2"] = e.b2;
  out["feasible"] = e.feasible;
  out["status"] = e.feasible ? "feasible" : "infeasible";
  ctx.out.write_json("exponents.json", out);
  std::cout << "exponents: " << (e.feasible ? "feasible" : "infeasible") << " (threshold " << e.threshold
            << ", r0 " << r0 << ")\n";
  return 0;
}

int cmd_moments(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto st = diagnostics::moment_study(io::to_setup(cfg), cfg.simulation.N_grid, cfg.simulation.replicas,
                                            cfg.study.r, cfg.study.level, cfg.study.band);
  auto csv = io::study_csv();
  for (std::size_t k = 0; k < st.N_grid.size(); ++k)
    for (std::size_t r = 0; r < st.sup_values[k].size(); ++r)
      csv.row("moments", st.N_grid[k], r, "sup_S_r", st.sup_values[k][r]);
  ctx.out.write("moments.csv", csv.text());
  json out = ctx.header("moments");
  out["r"] = st.r;
  out["level"] = st.level;
  out["N_grid"] = st.N_grid;
  out["q50"] = st.q50;
  out["q90"] = st.q90;
  out["q_level"] = st.q_level;
  out["spread"] = st.spread;
  out["stable"] = st.stable;
  ctx.out.write_json("moments.json", out);
  return 0;
}

int cmd_martingale(Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto rep = diagnostics::martingale_study(io::to_setup(cfg), cfg.simulation.N, cfg.simulation.replicas);
  auto csv = io::study_csv();
  for (std::size_t j = 0; j < rep.mean.size(); ++j) {
    csv.row("martingale", rep.N, "all", "mean_" + std::to_string(j), rep.mean[j]);
    csv.row("martingale", rep.N, "all", "se_" + std::to_string(j), rep.se[j]);
  }
  ctx.out.write("martingale.csv", csv.text());
  json out = ctx.header("martingale");
  out["N"] = rep.N;
  out["replicas"] = rep.replicas;
  out["T"] = rep.T;
  out["mean"] = rep.mean;
  out["se"] = rep.se;
  out["z"] = rep.z;
  out["flagged"] = rep.flagged;
  out["all_within"] = rep.all_within();
  ctx.out.write_json("martingale.json", out);
  return 0;
}

const std::map<std::string, std::function<int(Context&)>>& commands() {
  static const std::map<std::string, std::function<int(Context&)>> table{
      {"simulate", cmd_simulate}, {"meanfield", cmd_meanfield}, {"lna", cmd_lna},
      {"lln", cmd_lln},           {"clt", cmd_clt},             {"check", cmd_check},
      {"exponents", cmd_exponents}, {"moments", cmd_moments},   {"martingale", cmd_martingale}};
  return table;
}

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> threads;
  std::optional<std::size_t> grid;
};

int run(const std::string& name, const Overrides& ov) {
  io::RunConfig cfg = ov.config.empty() ? io::RunConfig{} : io::load_config(ov.config);
  if (ov.seed) cfg.simulation.seed = *ov.seed;
  if (ov.out) cfg.output_dir = *ov.out;
  if (ov.threads) cfg.threads = *ov.threads;
  if (ov.grid) cfg.simulation.grid_points = *ov.grid;
  std::string command = name;
  if (command == "run") command = cfg.study.select;
  const auto it = commands().find(command);
  if (it == commands().end()) throw ConfigError("unknown study '" + command + "'", "study.select");
  io::validate(cfg);
  Context ctx{cfg, io::config_hash(cfg), io::OutputDir(cfg.output_dir)};
  ctx.out.write("config.json", io::to_text(cfg));
  const int rc = it->second(ctx);
  ctx.out.finish(command, ctx.hash, cfg.simulation.seed);
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Markov population processes: simulation, mean-field and diffusion studies"};
  app.require_subcommand(1);
  Overrides ov;
  app.add_option("--config", ov.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", ov.seed, "master seed");
  app.add_option("--out", ov.out, "output directory");
  app.add_option("--threads", ov.threads, "worker threads (0: hardware concurrency)");
  app.add_option("--grid", ov.grid, "checkpoint grid points");
  std::string chosen;
  const std::map<std::string, std::string> help{
      {"simulate", "simulate trajectories of the jump chain"},
      {"meanfield", "integrate the truncated mean-field equation"},
      {"lna", "covariance of the linear noise approximation"},
      {"lln", "law-of-large-numbers convergence study"},
      {"clt", "Gaussian fluctuation study at one N"},
      {"check", "audit the standing assumptions"},
      {"exponents", "exponent arithmetic for the diffusion approximation"},
      {"moments", "sup-moment stability across N"},
      {"martingale", "mean of the compensated martingale"},
      {"run", "run the study named by study.select"}};
  for (const auto& [name, text] : help) {
    auto* sub = app.add_subcommand(name, text);
    sub->fallthrough();
    sub->callback([&chosen, n = name] { chosen = n; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  try {
    return run(chosen, ov);
  } catch (const ConfigError& e) {
    std::cerr << "config error";
    if (!e.key().empty()) std::cerr << " [" << e.key() << "]";
    std::cerr << ": " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure at t=" << e.time() << ": " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
