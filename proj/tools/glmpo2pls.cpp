// Command-line front end: fit, predict, test, simulate, scree, generate.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "glmpo2pls.hpp"

namespace {

using namespace glmpo2pls;

constexpr int kExitOk = 0;
constexpr int kExitNotConverged = 2;
constexpr int kExitUsage = 64;
constexpr int kExitData = 65;
constexpr int kExitNoInput = 66;
constexpr int kExitSoftware = 70;

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

void report_error(const char* kind, const std::string& msg) {
  std::cerr << "glmpo2pls: error[" << kind << "]: " << one_line(msg) << '\n';
}

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

std::uint64_t parse_u64(const std::string& s, const char* what) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(std::string(what) + " must be a non-negative integer, got '" + s + "'");
  }
}

struct FitOpts {
  std::string x, y, z, family = "gaussian", out, init = "svd", centering = "conditional";
  Index r = 1, rx = 0, ry = 0;
  int quad_nodes = 16, max_iter = 1000;
  double tol = 1e-6;
  std::optional<std::uint64_t> seed;
};

int run_fit(const FitOpts& o) {
  const Family family = parse_family(o.family);
  const Ingested in = ingest(o.x, o.y, o.z, family);
  FitConfig cfg;
  cfg.max_iter = o.max_iter;
  cfg.rel_tol = o.tol;
  cfg.quad_nodes = o.quad_nodes;
  cfg.centering = parse_grid_centering(o.centering);
  if (o.init == "svd") {
    cfg.init = InitStrategy::svd;
  } else if (o.init == "random") {
    cfg.init = InitStrategy::random;
  } else {
    throw ValidationError("unknown init strategy '" + o.init + "' (expected svd or random)");
  }
  if (o.seed) {
    cfg.seed = *o.seed;
  } else if (const auto s = env("GLMPO2PLS_SEED")) {
    cfg.seed = parse_u64(*s, "GLMPO2PLS_SEED");
  }
  const ModelDims dims{in.data.X.cols(), in.data.Y.cols(), o.r, o.rx, o.ry, in.data.n()};
  const FitResult fit = family == Family::gaussian ? fit_gaussian(in.data, dims, cfg) : fit_binary(in.data, dims, cfg);
  save_model(o.out, make_model_file(fit, in.centering, cfg));
  std::cerr << "fit: " << (fit.converged ? "converged" : "not converged") << " after " << fit.iterations
            << " iterations, log-likelihood " << fit.loglik << '\n';
  return fit.converged ? kExitOk : kExitNotConverged;
}

int run_predict(const std::string& model_path, const std::string& x_path, const std::string& y_path,
                const std::string& out_path) {
  const ModelFile mf = load_model(model_path);
  auto [x, y] = read_xy(x_path, y_path);
  if (x.cols() != mf.theta.W.rows() || y.cols() != mf.theta.C.rows()) {
    throw ValidationError("X/Y column counts (" + std::to_string(x.cols()) + ", " + std::to_string(y.cols()) +
                          ") do not match the model (" + std::to_string(mf.theta.W.rows()) + ", " +
                          std::to_string(mf.theta.C.rows()) + ")");
  }
  apply_centering(mf.centering, x, y);
  const VectorXd lin = (predict_outcome(mf.theta, x, y).array() + mf.centering.z_mean).matrix();
  if (mf.theta.family == Family::bernoulli) {
    MatrixXd out(lin.size(), 2);
    out.col(0) = lin;
    for (Index i = 0; i < lin.size(); ++i) out(i, 1) = linalg::sigmoid(lin(i));
    write_csv(out_path, {"linear_predictor", "probability"}, out);
  } else {
    write_csv(out_path, {"linear_predictor"}, lin);
  }
  return kExitOk;
}

int run_test(const std::string& model_path, const std::string& x_path, const std::string& y_path,
             const std::string& z_path, const std::string& out_path) {
  const ModelFile mf = load_model(model_path);
  Ingested in = ingest(x_path, y_path, z_path, mf.theta.family, false);
  if (in.data.X.cols() != mf.theta.W.rows() || in.data.Y.cols() != mf.theta.C.rows()) {
    throw ValidationError("X/Y column counts do not match the model");
  }
  apply_centering(mf.centering, in.data.X, in.data.Y);
  if (mf.theta.family == Family::gaussian) in.data.z.array() -= mf.centering.z_mean;
  in.data.validate();
  const FitResult fit = fit_from_model(mf);
  const MatrixXd info = louis_information_alpha(fit, in.data);
  std::vector<TestResult> results{test_full(fit, info)};
  for (Index k = 0; k < mf.theta.dims().r; ++k) results.push_back(test_componentwise(fit, info, k));
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write '" + out_path + "'");
  write_test_results(out, results);
  if (!out) throw IoError("failed writing '" + out_path + "'");
  return kExitOk;
}

std::vector<SimSetting> read_study_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open study config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("study config '" + path + "' is not valid JSON: " + e.what());
  }
  const nlohmann::json list = j.is_object() && j.contains("settings") ? j.at("settings") : j;
  std::vector<SimSetting> settings;
  if (list.is_array()) {
    for (const auto& item : list) settings.push_back(setting_from_json(item));
  } else {
    settings.push_back(setting_from_json(list));
  }
  if (settings.empty()) throw ValidationError("study config lists no settings");
  return settings;
}

int run_simulate(const std::string& config, const std::string& out_path, std::optional<int> threads_flag,
                 std::optional<std::uint64_t> seed_flag) {
  std::vector<SimSetting> settings = read_study_config(config);
  std::optional<std::uint64_t> seed = seed_flag;
  if (!seed) {
    if (const auto s = env("GLMPO2PLS_SEED")) seed = parse_u64(*s, "GLMPO2PLS_SEED");
  }
  if (seed) {
    for (std::size_t i = 0; i < settings.size(); ++i) settings[i].seed = derive_seed(*seed, i);
  }
  int threads = 1;
  if (threads_flag) {
    threads = *threads_flag;
  } else if (const auto t = env("GLMPO2PLS_THREADS")) {
    threads = static_cast<int>(parse_u64(*t, "GLMPO2PLS_THREADS"));
  }
  if (threads < 1) throw ValidationError("threads must be >= 1");
  const StudyReport rep = run_study(settings, out_path, threads);
  std::cout << "setting_id,method,metric,n,q1,median,q3\n";
  std::cout.precision(6);
  for (const auto& s : rep.summaries) {
    std::cout << s.setting_id << ',' << s.method << ',' << s.metric << ',' << s.count << ',' << s.q1 << ','
              << s.median << ',' << s.q3 << '\n';
  }
  for (const auto& [id, n] : rep.failures) {
    if (n > 0) std::cerr << "simulate: setting " << id << " had " << n << " failed replications\n";
  }
  return kExitOk;
}

int run_scree(const std::string& x_path, const std::string& y_path, Index k) {
  auto [x, y] = read_xy(x_path, y_path);
  x.rowwise() -= x.colwise().mean();
  y.rowwise() -= y.colwise().mean();
  const ScreeTable s = scree(x, y, k);
  if (!s.notice.empty()) std::cerr << "scree: " << s.notice << '\n';
  write_scree_csv(std::cout, s);
  return kExitOk;
}

int run_generate(SimSetting s, const std::string& prefix) {
  s.validate();
  const SimData sim = generate_dataset(s, s.seed);
  write_csv(prefix + "_x.csv", numbered_header("x", s.p), sim.train.X);
  write_csv(prefix + "_y.csv", numbered_header("y", s.q), sim.train.Y);
  write_csv(prefix + "_z.csv", {"z"}, sim.train.z);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GLM-PO2PLS: joint latent-variable modelling of two omics blocks and an outcome"};
  app.require_subcommand(1);

  FitOpts fo;
  std::uint64_t fit_seed = 0;
  auto* fit = app.add_subcommand("fit", "fit a model and write it as JSON");
  fit->add_option("--x", fo.x, "X matrix CSV (header row, one sample per row)")->required();
  fit->add_option("--y", fo.y, "Y matrix CSV")->required();
  fit->add_option("--z", fo.z, "outcome CSV (one column)")->required();
  fit->add_option("--family", fo.family, "gaussian or bernoulli")->check(CLI::IsMember({"gaussian", "bernoulli"}));
  fit->add_option("--r", fo.r, "joint components")->required();
  fit->add_option("--rx", fo.rx, "X-specific components");
  fit->add_option("--ry", fo.ry, "Y-specific components");
  fit->add_option("--quad-nodes", fo.quad_nodes, "Gauss-Hermite nodes per dimension (bernoulli)");
  fit->add_option("--centering", fo.centering, "quadrature grid centering (bernoulli)")
      ->check(CLI::IsMember({"conditional", "prior"}));
  fit->add_option("--max-iter", fo.max_iter, "maximum EM iterations");
  fit->add_option("--tol", fo.tol, "relative log-likelihood tolerance");
  auto* seed_opt = fit->add_option("--seed", fit_seed, "seed for --init random (default: GLMPO2PLS_SEED or 0)");
  fit->add_option("--init", fo.init, "svd or random")->check(CLI::IsMember({"svd", "random"}));
  fit->add_option("--out", fo.out, "model JSON path")->required();

  std::string model, x, y, z, out, config;
  auto* predict = app.add_subcommand("predict", "predict outcome linear predictors");
  predict->add_option("--model", model)->required();
  predict->add_option("--x", x)->required();
  predict->add_option("--y", y)->required();
  predict->add_option("--out", out)->required();

  auto* test = app.add_subcommand("test", "chi-square tests of the outcome association");
  test->add_option("--model", model)->required();
  test->add_option("--x", x)->required();
  test->add_option("--y", y)->required();
  test->add_option("--z", z)->required();
  test->add_option("--out", out)->required();

  int threads = 1;
  std::uint64_t sim_seed = 0;
  auto* simulate = app.add_subcommand("simulate", "run a simulation study from a JSON config");
  simulate->add_option("--config", config)->required();
  simulate->add_option("--out", out)->required();
  auto* threads_opt = simulate->add_option("--threads", threads, "worker threads (default: GLMPO2PLS_THREADS or 1)");
  auto* sim_seed_opt = simulate->add_option("--seed", sim_seed, "master seed overriding each setting's seed");

  Index k = 10;
  auto* scree_cmd = app.add_subcommand("scree", "scree table of X^T Y, X^T X and Y^T Y to standard output");
  scree_cmd->add_option("--x", x)->required();
  scree_cmd->add_option("--y", y)->required();
  scree_cmd->add_option("--k", k, "number of components")->required();

  SimSetting gen;
  std::string family = "gaussian", prefix;
  auto* generate = app.add_subcommand("generate", "write one simulated training set as CSV files");
  generate->add_option("--n", gen.n);
  generate->add_option("--p", gen.p);
  generate->add_option("--q", gen.q);
  generate->add_option("--r", gen.r);
  generate->add_option("--rx", gen.rx);
  generate->add_option("--ry", gen.ry);
  generate->add_option("--a", gen.a_true);
  generate->add_option("--b", gen.b_true);
  generate->add_option("--family", family)->check(CLI::IsMember({"gaussian", "bernoulli"}));
  generate->add_option("--seed", gen.seed);
  generate->add_option("--prefix", prefix, "writes <prefix>_x.csv, _y.csv, _z.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return kExitUsage;
  }

  try {
    if (*fit) {
      if (*seed_opt) fo.seed = fit_seed;
      return run_fit(fo);
    }
    if (*predict) return run_predict(model, x, y, out);
    if (*test) return run_test(model, x, y, z, out);
    if (*simulate) {
      return run_simulate(config, out, *threads_opt ? std::optional<int>(threads) : std::nullopt,
                          *sim_seed_opt ? std::optional<std::uint64_t>(sim_seed) : std::nullopt);
    }
    if (*scree_cmd) return run_scree(x, y, k);
    if (*generate) {
      gen.family = parse_family(family);
      return run_generate(gen, prefix);
    }
  } catch (const IoError& e) {
    report_error("io", e.what());
    return kExitNoInput;
  } catch (const ValidationError& e) {
    report_error("data", e.what());
    return kExitData;
  } catch (const NumericalError& e) {
    report_error("numerical", e.what());
    return kExitSoftware;
  } catch (const ResourceError& e) {
    report_error("resource", e.what());
    return kExitSoftware;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return kExitSoftware;
  }
  return kExitUsage;
}
