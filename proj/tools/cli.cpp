#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "fit.hpp"
#include "spmc/data_prep.hpp"
#include "spmc/io.hpp"
#include "spmc/studies.hpp"

#ifndef SPMC_VERSION
#define SPMC_VERSION "unknown"
#endif

namespace spmc::cli {
namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  for (const std::string& f : split_csv_line(text)) out.push_back(trim(f));
  return out;
}

std::string read_input(const std::string& path) {
  try {
    return read_file(path);
  } catch (const std::runtime_error& e) {
    throw DataError(e.what());
  }
}

// ---------------------------------------------------------------------------
// Output with metadata sidecars

struct Context {
  std::ostream& out;
  std::ostream& err;
  json meta;
  std::uint64_t seed = kDefaultSeed;
  int threads = 1;
};

/// Writes `content` to `path` (stdout when empty or "-") and, for files, a
/// sidecar <path>.meta.json describing the run.
void emit(Context& ctx, const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    ctx.out << content;
    return;
  }
  write_file_atomic(path, content);
  json meta = ctx.meta;
  meta["file"] = std::filesystem::path(path).filename().string();
  write_file_atomic(path + ".meta.json", meta.dump(2) + "\n");
}

std::string fmt(double x) { return format_double(x); }

// ---------------------------------------------------------------------------
// Shared option groups

struct CommonArgs {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string out;
};

void add_common(CLI::App* app, CommonArgs& c, bool out_required, const std::string& out_help) {
  app->add_option("--seed", c.seed, "Master seed (default: $SPMC_SEED, else 1)");
  app->add_option("--threads", c.threads, "Worker threads; 0 uses all cores (results do not depend on it)")
      ->check(CLI::NonNegativeNumber);
  auto* o = app->add_option("--out", c.out, out_help);
  if (out_required) o->required();
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("SPMC_SEED"); env && *env) {
    std::uint64_t v = 0;
    const std::string s = env;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw UsageError("SPMC_SEED is not an unsigned integer: '" + s + "'");
    return v;
  }
  return kDefaultSeed;
}

int resolve_threads(int t) {
  if (t > 0) return t;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

struct EstimatorArgs {
  std::string proposal = "gaussian";
  bool tilt = true;
  bool rqmc = false;
};

void add_estimator(CLI::App* app, EstimatorArgs& e) {
  app->add_option("--proposal", e.proposal, "Importance proposal")
      ->check(CLI::IsMember({"uniform", "gaussian"}))
      ->capture_default_str();
  app->add_flag("--tilt,!--no-tilt", e.tilt, "Exponential tilting to the saddlepoint (default on)");
  app->add_flag("--rqmc", e.rqmc, "Randomized Sobol points instead of iid draws");
}

EstimatorConfig to_config(const EstimatorArgs& e) {
  EstimatorConfig cfg;
  cfg.proposal = e.proposal == "uniform" ? Proposal::uniform : Proposal::gaussian;
  cfg.tilt = e.tilt;
  cfg.use_rqmc = e.rqmc;
  return cfg;
}

struct FitArgs {
  std::string data;
  std::string likelihood = "saddlepoint";
  double prior_sigma2 = 2.0;
  bool free_all_rows = false;
  AdamSchedule schedule;
  int n_is = 128;
  int hessian_n_is = 128;
  int draws = 1000;
  int pmmh_steps = 2000;
  int burn_in = -1;
  double step_scale = -1.0;
  EstimatorArgs est;
};

void add_fit_options(CLI::App* app, FitArgs& f) {
  app->add_option("--data", f.data, "Canonical dataset CSV")->required();
  app->add_option("--likelihood", f.likelihood, "saddlepoint (estimated) or gaussian (closed-form approximation)")
      ->check(CLI::IsMember({"saddlepoint", "gaussian"}))
      ->capture_default_str();
  app->add_option("--prior-sigma2", f.prior_sigma2, "Prior variance of every parameter")->capture_default_str();
  app->add_flag("--free-all-rows", f.free_all_rows, "Models 2/3: free logits for every first-round row");
  AdamSchedule& s = f.schedule;
  app->add_option("--phase1-iters", s.phase1_iters, "Adam minibatch iterations")->capture_default_str();
  app->add_option("--phase1-batch", s.phase1_batch, "Minibatch size (0: min(2000, K/2))")->capture_default_str();
  app->add_option("--phase1-lr", s.phase1_lr, "Minibatch learning rate")->capture_default_str();
  app->add_option("--phase2-iters", s.phase2_iters, "Adam full-data iterations")->capture_default_str();
  app->add_option("--phase2-lr", s.phase2_lr, "Full-data learning rate")->capture_default_str();
  app->add_option("--nis-early", s.phase2_nis_early, "N_IS before --late-start")->capture_default_str();
  app->add_option("--nis-late", s.phase2_nis_late, "N_IS from --late-start on")->capture_default_str();
  app->add_option("--late-start", s.phase2_late_start, "Full-data iteration switching to --nis-late")
      ->capture_default_str();
  app->add_option("--tail-average", s.tail_average, "Iterates averaged for the MAP")->capture_default_str();
  app->add_option("--n-is", f.n_is, "N_IS per station for importance sampling and PMMH")->capture_default_str();
  app->add_option("--hessian-n-is", f.hessian_n_is, "N_IS per station for the Hessian")->capture_default_str();
  app->add_option("--draws", f.draws, "Importance sampling draws")->capture_default_str();
  app->add_option("--pmmh-steps", f.pmmh_steps, "PMMH chain length")->capture_default_str();
  app->add_option("--burn-in", f.burn_in, "PMMH burn-in (-1: steps/5)")->capture_default_str();
  app->add_option("--step-scale", f.step_scale, "PMMH proposal scale (negative: 2.38/sqrt(d))")
      ->capture_default_str();
  add_estimator(app, f.est);
}

FitOptions to_fit_options(const FitArgs& f, Variant v, std::uint64_t seed, int threads) {
  FitOptions o;
  o.spec.variant = v;
  o.spec.prior_sigma2 = f.prior_sigma2;
  o.spec.free_all_rows = f.free_all_rows;
  o.schedule = f.schedule;
  o.estimator = to_config(f.est);
  o.gaussian_likelihood = f.likelihood == "gaussian";
  o.n_is = f.n_is;
  o.hessian_n_is = f.hessian_n_is;
  o.is_draws = f.draws;
  o.pmmh_steps = f.pmmh_steps;
  o.pmmh_burn_in = f.burn_in;
  o.step_scale = f.step_scale;
  o.seed = seed;
  o.threads = threads;
  return o;
}

std::vector<std::string> param_names(const ModelSpec& spec) {
  std::vector<std::string> names;
  for (int k = 1; k <= spec.theta_dim(); ++k) names.push_back("theta_" + std::to_string(k));
  if (spec.variant == Variant::model3) {
    for (int k = 1; k <= spec.theta_dim(); ++k) names.push_back("beta_" + std::to_string(k));
  }
  return names;
}

std::string summary_csv(const std::vector<TransitionCell>& cells, const Dataset& data) {
  std::ostringstream ss;
  ss << "i,j,from,to,q05,q50,q95\n";
  for (const auto& c : cells) {
    ss << c.i + 1 << ',' << c.j + 1 << ',' << data.options1[c.i] << ',' << data.options2[c.j] << ',' << fmt(c.q05)
       << ',' << fmt(c.q50) << ',' << fmt(c.q95) << '\n';
  }
  return ss.str();
}

// ---------------------------------------------------------------------------
// Subcommands

struct EstimateArgs {
  CommonArgs common;
  EstimatorArgs est;
  std::string model_file;
  std::string y;
  int n_is = 16;
  int replications = 1;
};

int cmd_estimate(Context& ctx, const EstimateArgs& a) {
  std::istringstream mf(read_input(a.model_file));
  const ModelFile m = parse_model_file(mf, a.model_file);
  const std::vector<int> yv = parse_int_list(a.y, "--y");
  if (static_cast<int>(yv.size()) != m.a.dy()) {
    throw DataError("--y has " + std::to_string(yv.size()) + " entries but the margins map has " +
                    std::to_string(m.a.dy()));
  }
  Counts y(m.a.dy());
  for (int i = 0; i < m.a.dy(); ++i) y[i] = yv[i];
  EstimatorConfig cfg = to_config(a.est);
  cfg.n_is = a.n_is;
  if (a.n_is < 1) throw UsageError("--n-is must be >= 1");
  if (a.replications < 1) throw UsageError("--replications must be >= 1");

  std::ostringstream ss;
  ss << "replication,variant,sign,log_abs,estimate,newton_iters,weight_cv,effective_n_is,tilt_fallback\n";
  for (int r = 0; r < a.replications; ++r) {
    EstimatorConfig c = cfg;
    c.seed = a.replications == 1 ? ctx.seed : derive_seed(ctx.seed, static_cast<std::uint64_t>(r));
    const DensityEstimate e = estimate_density(m.model, m.a, y, c);
    if (!e.feasible) throw DataError("y is outside the support of AX (infeasible margins)");
    ss << r << ',' << variant_name(c) << ',' << e.sign << ',' << fmt(e.log_abs) << ',' << fmt(e.value()) << ','
       << e.newton_iters << ',' << fmt(e.weight_cv) << ',' << e.effective_n_is << ',' << (e.tilt_fallback ? 1 : 0)
       << '\n';
  }
  emit(ctx, a.common.out, ss.str());
  return kExitOk;
}

struct BenchArgs {
  CommonArgs common;
  std::string study;
  std::string n_grid, alphas;
  int K = 0, n_is = 0, replications = 0, I = 3, J = 3;
  double tail_alpha = 3.0;
  bool rqmc = false;
};

int cmd_bench(Context& ctx, const BenchArgs& a, const CLI::App& app) {
  const Study s = parse_study(a.study);
  StudyOptions o = default_study_options(s);
  if (app.count("--n-grid")) o.n_grid = parse_int_list(a.n_grid, "--n-grid");
  if (app.count("--alphas")) o.alphas = parse_double_list(a.alphas, "--alphas");
  if (app.count("--K")) o.K = a.K;
  if (app.count("--n-is")) o.n_is = a.n_is;
  if (app.count("--replications")) o.replications = a.replications;
  o.I = a.I;
  o.J = a.J;
  o.tail_alpha = a.tail_alpha;
  o.rqmc = a.rqmc;
  o.seed = ctx.seed;
  o.threads = ctx.threads;
  std::ostringstream ss;
  write_bench_csv(ss, run_study(s, o));
  emit(ctx, a.common.out, ss.str());
  return kExitOk;
}

struct FitCmdArgs {
  CommonArgs common;
  FitArgs fit;
  std::string model;
  std::string stage = "all";
};

int cmd_fit(Context& ctx, const FitCmdArgs& a) {
  const Dataset data = load_dataset(a.fit.data);
  const FitOptions opt = to_fit_options(a.fit, parse_model_flag(a.model), ctx.seed, ctx.threads);
  const Stage stage = parse_stage(a.stage);
  const FitResult r = fit_dataset(data, opt, stage);
  const auto names = param_names(r.spec);
  const std::filesystem::path dir(a.common.out);
  std::vector<std::string> written;
  auto put = [&](const std::string& name, const std::string& content) {
    const std::string p = (dir / name).string();
    emit(ctx, p, content);
    written.push_back(p);
  };

  {
    std::ostringstream ss;
    ss << "param,value\n";
    for (std::size_t k = 0; k < names.size(); ++k) ss << names[k] << ',' << fmt(r.map.mode[k]) << '\n';
    put("map.csv", ss.str());
  }
  {
    std::ostringstream ss;
    ss << "param";
    for (const auto& n : names) ss << ',' << n;
    ss << '\n';
    for (std::size_t i = 0; i < names.size(); ++i) {
      ss << names[i];
      for (std::size_t j = 0; j < names.size(); ++j) ss << ',' << fmt(r.laplace.hessian(i, j));
      ss << '\n';
    }
    put("hessian.csv", ss.str());
  }
  put("map_transitions.csv", summary_csv(transition_summary(r.spec, {r.map.mode}, {}), data));

  if (r.is) {
    std::ostringstream draws;
    write_posterior_csv(draws, *r.is);
    put("is_draws.csv", draws.str());
    put("is_summary.csv", summary_csv(transition_summary(r.spec, r.is->draws, r.is->log_weights), data));
    std::ostringstream ev;
    ev << "log_marginal_likelihood,se_delta,se_jackknife,ess,draws,invalid\n";
    const double lz = r.is->log_marginal_likelihood.value_or(std::nan(""));
    const double jk = std::isfinite(lz) ? jackknife_log_mean_se(r.is->log_weights) : std::nan("");
    ev << fmt(lz) << ',' << fmt(r.is->log_marginal_se.value_or(std::nan(""))) << ',' << fmt(jk) << ','
       << fmt(r.is->ess) << ',' << r.is->draws.size() << ',' << r.is->invalid_count << '\n';
    put("evidence.csv", ev.str());
  }
  if (r.pmmh) {
    std::ostringstream draws;
    write_posterior_csv(draws, *r.pmmh);
    put("pmmh_draws.csv", draws.str());
    const std::vector<Vec> kept(r.pmmh->draws.begin() + r.pmmh_burn_in, r.pmmh->draws.end());
    put("pmmh_summary.csv", summary_csv(transition_summary(r.spec, kept, {}), data));
    std::ostringstream st;
    st << "steps,burn_in,acceptance_rate,ess,invalid\n";
    st << r.pmmh->draws.size() << ',' << r.pmmh_burn_in << ',' << fmt(r.pmmh->acceptance_rate) << ','
       << fmt(kept.size() >= 4 ? chain_ess(kept) : std::nan("")) << ',' << r.pmmh->invalid_count << '\n';
    put("pmmh_stats.csv", st.str());
  }
  ctx.out << "file\n";
  for (const auto& p : written) ctx.out << p << '\n';
  return kExitOk;
}

struct CompareArgs {
  CommonArgs common;
  FitArgs fit;
  std::string models;
};

int cmd_compare(Context& ctx, const CompareArgs& a) {
  const std::vector<std::string> m = split_list(a.models);
  if (m.size() != 2) throw UsageError("--models takes two models, e.g. 3,2");
  const Dataset data = load_dataset(a.fit.data);
  double lz[2], se[2];
  std::string label[2];
  for (int k = 0; k < 2; ++k) {
    const Variant v = parse_model_flag(m[k]);
    label[k] = variant_name(v);
    const FitOptions opt = to_fit_options(a.fit, v, derive_seed(ctx.seed, static_cast<std::uint64_t>(k + 1)), ctx.threads);
    const FitResult r = fit_dataset(data, opt, Stage::is);
    if (!r.is->log_marginal_likelihood || !std::isfinite(*r.is->log_marginal_likelihood)) {
      throw NumericalError("no valid importance weight for " + label[k]);
    }
    lz[k] = *r.is->log_marginal_likelihood;
    se[k] = jackknife_log_mean_se(r.is->log_weights);
  }
  std::ostringstream ss;
  ss << "quantity,model,value,mc_se\n";
  for (int k = 0; k < 2; ++k) ss << "log_marginal_likelihood," << label[k] << ',' << fmt(lz[k]) << ',' << fmt(se[k]) << '\n';
  ss << "log10_bayes_factor," << label[0] << '/' << label[1] << ',' << fmt(log10_bayes_factor(lz[0], lz[1])) << ','
     << fmt(std::hypot(se[0], se[1]) / std::log(10.0)) << '\n';
  emit(ctx, a.common.out, ss.str());
  return kExitOk;
}

struct CountArgs {
  CommonArgs common;
  std::string rows, cols;
  int n_is = 1024;
  int replications = 100;
  bool rqmc = false;
};

int cmd_count_tables(Context& ctx, const CountArgs& a) {
  const CountEstimate c = count_binary_tables(parse_int_list(a.rows, "--rows"), parse_int_list(a.cols, "--cols"),
                                              a.n_is, a.replications, ctx.seed, ctx.threads, a.rqmc);
  std::ostringstream ss;
  ss << "estimate,se,replications,N_IS,feasible,reduced_rows,reduced_cols\n";
  ss << fmt(c.estimate) << ',' << fmt(c.se) << ',' << c.replications << ',' << c.n_is << ',' << (c.feasible ? 1 : 0)
     << ',' << c.reduced_rows << ',' << c.reduced_cols << '\n';
  emit(ctx, a.common.out, ss.str());
  return kExitOk;
}

struct PrepArgs {
  CommonArgs common;
  std::string round1, round2, census, exclude;
  std::string merge_stations = "constituency";
  int station_threshold = 70;
  double candidate_threshold = 0.05;
  long max_gap = 50;
};

int cmd_prep(Context& ctx, const PrepArgs& a) {
  std::istringstream r1(read_input(a.round1)), r2(read_input(a.round2));
  JoinResult joined = join_rounds(read_round_csv(r1, a.round1), read_round_csv(r2, a.round2), a.max_gap);
  std::vector<Rejection> log = joined.rejected;
  Dataset d = std::move(joined.data);
  if (!a.exclude.empty()) {
    std::istringstream ex(read_input(a.exclude));
    d = apply_exclusions(d, read_exclusion_list(ex), log);
  }
  if (!a.census.empty()) {
    std::istringstream cs(read_input(a.census));
    d = attach_covariates(d, cs, a.census);
  }
  if (a.merge_stations != "none") {
    d = merge_small_stations(d, a.merge_stations == "department" ? GroupKey::department : GroupKey::constituency,
                             a.station_threshold);
  }
  std::vector<OptionMerge> mapping;
  if (a.candidate_threshold > 0.0) {
    CandidateMergeResult cm = merge_small_candidates(d, a.candidate_threshold);
    d = std::move(cm.data);
    mapping = std::move(cm.mapping);
  }
  std::sort(log.begin(), log.end(), [](const Rejection& x, const Rejection& y) { return x.station_id < y.station_id; });

  std::ostringstream csv, rej, opts;
  emit_dataset_csv(csv, d);
  write_rejection_log(rej, log);
  opts << "round,from,to\n";
  for (const auto& m : mapping) opts << m.round << ',' << m.from << ',' << m.to << '\n';
  emit(ctx, a.common.out, csv.str());
  write_file_atomic(a.common.out + ".json", dataset_sidecar_json(d));
  emit(ctx, a.common.out + ".rejected.csv", rej.str());
  emit(ctx, a.common.out + ".options.csv", opts.str());
  ctx.out << "stations,rejected\n" << d.stations.size() << ',' << log.size() << '\n';
  return kExitOk;
}

struct SynthArgs {
  CommonArgs common;
  std::string model;
  int I = 2, J = 2, K = 100, n = 500;
  std::string theta, beta, row_shares;
  double prior_sigma2 = 2.0;
  bool free_all_rows = false;
};

int cmd_synth(Context& ctx, const SynthArgs& a) {
  ModelSpec spec;
  spec.variant = parse_model_flag(a.model);
  spec.I = a.I;
  spec.J = a.J;
  spec.prior_sigma2 = a.prior_sigma2;
  spec.free_all_rows = a.free_all_rows;
  spec.validate();
  if (a.K < 0 || a.n < 1) throw UsageError("--K must be >= 0 and --n >= 1");

  Rng prior_rng(derive_seed(ctx.seed, 0x7a0));
  std::normal_distribution<double> prior(0.0, std::sqrt(spec.prior_sigma2));
  auto values = [&](const std::string& text, const char* flag) {
    Vec v(spec.theta_dim());
    if (text.empty()) {
      for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = prior(prior_rng);
      return v;
    }
    const auto list = parse_double_list(text, flag);
    if (static_cast<int>(list.size()) != spec.theta_dim()) {
      throw UsageError(std::string(flag) + " needs " + std::to_string(spec.theta_dim()) + " values");
    }
    for (Eigen::Index k = 0; k < v.size(); ++k) v[k] = list[k];
    return v;
  };
  Theta truth;
  truth.theta = values(a.theta, "--theta");
  if (spec.variant == Variant::model3) truth.beta = values(a.beta, "--beta");

  SynthOptions so;
  so.K = a.K;
  so.n = a.n;
  so.seed = ctx.seed;
  if (!a.row_shares.empty()) {
    const auto rs = parse_double_list(a.row_shares, "--row-shares");
    so.row_shares = Eigen::Map<const Vec>(rs.data(), static_cast<Eigen::Index>(rs.size()));
  }
  Dataset d;
  for (int i = 1; i <= spec.I; ++i) d.options1.push_back("r_" + std::to_string(i));
  for (int j = 1; j <= spec.J; ++j) d.options2.push_back("s_" + std::to_string(j));
  d.stations = synth_generate(spec, truth, so);

  std::ostringstream csv, tr;
  emit_dataset_csv(csv, d);
  const Vec flat = flatten(spec, truth);
  const auto names = param_names(spec);
  tr << "param,value\n";
  for (std::size_t k = 0; k < names.size(); ++k) tr << names[k] << ',' << fmt(flat[k]) << '\n';
  emit(ctx, a.common.out, csv.str());
  write_file_atomic(a.common.out + ".json", dataset_sidecar_json(d));
  emit(ctx, a.common.out + ".truth.csv", tr.str());
  return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  for (const std::string& f : split_list(text)) {
    int v = 0;
    auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (f.empty() || ec != std::errc() || p != f.data() + f.size()) {
      throw UsageError(what + ": '" + f + "' is not an integer");
    }
    out.push_back(v);
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  for (const std::string& f : split_list(text)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(f, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (f.empty() || used != f.size() || !std::isfinite(v)) throw UsageError(what + ": '" + f + "' is not a number");
    out.push_back(v);
  }
  return out;
}

ModelFile parse_model_file(std::istream& in, const std::string& source) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError(source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    static const std::set<std::string> known = {"family", "n", "p", "q", "I", "J", "margins"};
    if (!known.count(key)) throw DataError(source + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second) {
      throw DataError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  auto need = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw DataError(source + ": missing key '" + k + "'");
    return it->second;
  };
  auto as_int = [&](const std::string& k) {
    try {
      const auto v = parse_int_list(need(k), k);
      if (v.size() != 1) throw DataError(source + ": '" + k + "' must be one integer");
      return v[0];
    } catch (const UsageError& e) {
      throw DataError(source + ": " + e.what());
    }
  };
  auto as_vec = [&](const std::string& k) {
    try {
      const auto v = parse_double_list(need(k), k);
      return Vec(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
    } catch (const UsageError& e) {
      throw DataError(source + ": " + e.what());
    }
  };

  const std::string family = need("family");
  const bool multinomial = family == "multinomial";
  if (!multinomial && family != "bernoulli") {
    throw DataError(source + ": family must be multinomial or bernoulli");
  }
  const std::string margins = kv.count("margins") ? kv["margins"] : (multinomial ? "table" : "full");
  const Vec probs = as_vec(multinomial ? "p" : "q");

  std::optional<Model> model;
  try {
    if (multinomial) {
      model.emplace(MultinomialModel(as_int("n"), probs));
    } else {
      model.emplace(BernoulliVectorModel(probs));
    }
  } catch (const std::invalid_argument& e) {
    throw DataError(source + ": " + e.what());
  }
  MarginsMap a;
  if (margins == "identity") {
    a = identity_map(static_cast<int>(probs.size()));
  } else if (margins == "table" || margins == "full") {
    const int I = as_int("I"), J = as_int("J");
    if (I < 1 || J < 1 || I * J != probs.size()) {
      throw DataError(source + ": I * J must equal the number of cell probabilities");
    }
    a = margins == "table" ? table_margins(I, J) : full_margins_matrix(I, J);
  } else {
    throw DataError(source + ": margins must be table, full or identity");
  }
  return ModelFile{std::move(*model), std::move(a)};
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Saddlepoint Monte Carlo: unbiased likelihood estimates for linear maps of exponential-family "
               "counts, with ecological-inference tooling",
               "spmc"};
  app.require_subcommand(1);
  app.set_version_flag("--version", SPMC_VERSION);

  EstimateArgs est;
  auto* s_est = app.add_subcommand("estimate", "One unbiased estimate of P(AX = y)");
  add_common(s_est, est.common, false, "Output CSV (stdout when omitted)");
  add_estimator(s_est, est.est);
  s_est->add_option("--model-file", est.model_file, "key=value model file")->required();
  s_est->add_option("--y", est.y, "Observed margins, comma-separated")->required();
  s_est->add_option("--n-is", est.n_is, "Importance samples")->capture_default_str();
  s_est->add_option("--replications", est.replications, "Independent estimates to print")->capture_default_str();

  BenchArgs bench;
  auto* s_bench = app.add_subcommand("bench", "Variance studies of the estimator");
  add_common(s_bench, bench.common, false, "Output CSV (stdout when omitted)");
  s_bench->add_option("--study", bench.study, "fig1, loglik-vs-n, families or tail")->required();
  s_bench->add_option("--n-grid", bench.n_grid, "Comma-separated n values");
  s_bench->add_option("--alphas", bench.alphas, "Comma-separated asymmetry coefficients (families)");
  s_bench->add_option("--K", bench.K, "Observations per n");
  s_bench->add_option("--n-is", bench.n_is, "Importance samples");
  s_bench->add_option("--replications", bench.replications, "Estimates per observation");
  s_bench->add_option("--I", bench.I, "Table rows")->capture_default_str();
  s_bench->add_option("--J", bench.J, "Table columns")->capture_default_str();
  s_bench->add_option("--tail-alpha", bench.tail_alpha, "type1 coefficient of the tail data (tail)")
      ->capture_default_str();
  s_bench->add_flag("--rqmc", bench.rqmc, "Randomized Sobol points");

  FitCmdArgs fit;
  auto* s_fit = app.add_subcommand("fit", "MAP, Laplace approximation and posterior sampling");
  add_common(s_fit, fit.common, true, "Output directory");
  add_fit_options(s_fit, fit.fit);
  s_fit->add_option("--model", fit.model, "1, 2 or 3")->required();
  s_fit->add_option("--stage", fit.stage, "map, is, pmmh or all")
      ->check(CLI::IsMember({"map", "is", "pmmh", "all"}))
      ->capture_default_str();

  CompareArgs cmp;
  auto* s_cmp = app.add_subcommand("compare", "Log marginal likelihoods and Bayes factor of two models");
  add_common(s_cmp, cmp.common, false, "Output CSV (stdout when omitted)");
  add_fit_options(s_cmp, cmp.fit);
  s_cmp->add_option("--models", cmp.models, "Two models a,b; the Bayes factor is a over b")->required();

  CountArgs cnt;
  auto* s_cnt = app.add_subcommand("count-tables", "Estimated number of binary matrices with given margins");
  add_common(s_cnt, cnt.common, false, "Output CSV (stdout when omitted)");
  s_cnt->add_option("--rows", cnt.rows, "Row sums, comma-separated")->required();
  s_cnt->add_option("--cols", cnt.cols, "Column sums, comma-separated")->required();
  s_cnt->add_option("--n-is", cnt.n_is, "Importance samples per replication")->capture_default_str();
  s_cnt->add_option("--replications", cnt.replications, "Independent replications")->capture_default_str();
  s_cnt->add_flag("--rqmc", cnt.rqmc, "Randomized Sobol points");

  PrepArgs prep;
  auto* s_prep = app.add_subcommand("prep", "Clean two-round returns into the canonical dataset");
  add_common(s_prep, prep.common, true, "Dataset CSV (sidecars are written next to it)");
  s_prep->add_option("--round1", prep.round1, "First-round long-format CSV")->required();
  s_prep->add_option("--round2", prep.round2, "Second-round long-format CSV")->required();
  s_prep->add_option("--census", prep.census, "station_id,population,area_km2 table for the density covariate");
  s_prep->add_option("--exclude", prep.exclude, "Station ids to drop, one per line");
  s_prep->add_option("--merge-stations", prep.merge_stations, "Grouping for small-station merging")
      ->check(CLI::IsMember({"none", "department", "constituency"}))
      ->capture_default_str();
  s_prep->add_option("--station-threshold", prep.station_threshold, "Stations below this size are merged")
      ->capture_default_str();
  s_prep->add_option("--candidate-threshold", prep.candidate_threshold,
                     "Options below this share of votes cast become 'other' (0 disables)")
      ->capture_default_str();
  s_prep->add_option("--max-registered-gap", prep.max_gap, "Largest allowed registered difference")
      ->capture_default_str();

  SynthArgs syn;
  auto* s_syn = app.add_subcommand("synth", "Simulate a dataset from a model");
  add_common(s_syn, syn.common, true, "Dataset CSV");
  s_syn->add_option("--model", syn.model, "1, 2 or 3")->required();
  s_syn->add_option("--I", syn.I, "First-round options")->capture_default_str();
  s_syn->add_option("--J", syn.J, "Second-round options")->capture_default_str();
  s_syn->add_option("--K", syn.K, "Stations")->capture_default_str();
  s_syn->add_option("--n", syn.n, "Electors per station")->capture_default_str();
  s_syn->add_option("--theta", syn.theta, "True theta, comma-separated (drawn from the prior when omitted)");
  s_syn->add_option("--beta", syn.beta, "True beta for model3 (drawn from the prior when omitted)");
  s_syn->add_option("--row-shares", syn.row_shares, "First-round shares for models 2/3 (uniform when omitted)");
  s_syn->add_option("--prior-sigma2", syn.prior_sigma2, "Prior variance")->capture_default_str();
  s_syn->add_flag("--free-all-rows", syn.free_all_rows, "Models 2/3: free logits for every row");

  std::vector<const char*> argv{"spmc"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const CommonArgs* common = nullptr;
    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "estimate") common = &est.common;
    if (name == "bench") common = &bench.common;
    if (name == "fit") common = &fit.common;
    if (name == "compare") common = &cmp.common;
    if (name == "count-tables") common = &cnt.common;
    if (name == "prep") common = &prep.common;
    if (name == "synth") common = &syn.common;

    Context ctx{out, err, json::object(), resolve_seed(common->seed), resolve_threads(common->threads)};
    json recorded = json::array();
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (args[i] == "--threads") {
        ++i;
        continue;
      }
      if (args[i].rfind("--threads=", 0) == 0) continue;
      recorded.push_back(args[i]);
    }
    ctx.meta = {{"program", "spmc"}, {"version", SPMC_VERSION}, {"subcommand", name}, {"seed", ctx.seed},
                {"args", recorded}};

    if (name == "estimate") return cmd_estimate(ctx, est);
    if (name == "bench") return cmd_bench(ctx, bench, *s_bench);
    if (name == "fit") return cmd_fit(ctx, fit);
    if (name == "compare") return cmd_compare(ctx, cmp);
    if (name == "count-tables") return cmd_count_tables(ctx, cnt);
    if (name == "prep") return cmd_prep(ctx, prep);
    if (name == "synth") return cmd_synth(ctx, syn);
    return kExitUsage;
  } catch (const DataError& e) {
    err << "spmc: data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    err << "spmc: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    err << "spmc: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "spmc: error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace spmc::cli
