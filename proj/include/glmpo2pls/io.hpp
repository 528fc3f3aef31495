#pragma once

// CSV ingestion and export, model persistence (JSON) and the scree table.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "glmpo2pls/em_gaussian.hpp"
#include "glmpo2pls/error.hpp"
#include "glmpo2pls/inference.hpp"
#include "glmpo2pls/model.hpp"
#include "glmpo2pls/simulate.hpp"

namespace glmpo2pls {

// ---- CSV ---------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  MatrixXd values;
};

namespace detail {

// Splits one record; double quotes delimit fields and "" escapes a quote.
inline std::vector<std::string> split_csv_line(const std::string& line) {
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
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// Header row plus numeric rows; errors name the file, 1-based data row and column.
inline CsvTable read_csv_matrix(std::istream& in, const std::string& name) {
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw IoError(name + ": empty file, expected a header row");
  for (auto& h : detail::split_csv_line(line)) t.header.push_back(detail::trim(h));
  const std::size_t cols = t.header.size();
  std::vector<double> vals;
  Index rows = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++rows;
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != cols) {
      throw IoError(name + ": row " + std::to_string(rows) + " has " + std::to_string(fields.size()) +
                    " fields, header has " + std::to_string(cols));
    }
    for (std::size_t j = 0; j < cols; ++j) {
      const std::string cell = detail::trim(fields[j]);
      char* end = nullptr;
      errno = 0;
      const double v = cell.empty() ? 0.0 : std::strtod(cell.c_str(), &end);
      if (cell.empty() || end != cell.c_str() + cell.size() || errno == ERANGE || !std::isfinite(v)) {
        throw IoError(name + ": non-numeric value '" + cell + "' at row " + std::to_string(rows) + ", column " +
                      std::to_string(j + 1) + " (" + t.header[j] + ")");
      }
      vals.push_back(v);
    }
  }
  if (rows == 0) throw IoError(name + ": no data rows");
  t.values = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      vals.data(), rows, static_cast<Index>(cols));
  return t;
}

inline CsvTable read_csv_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_csv_matrix(in, path);
}

inline void write_csv(std::ostream& out, const std::vector<std::string>& header, const MatrixXd& values) {
  if (static_cast<Index>(header.size()) != values.cols()) throw ValidationError("CSV header/column count mismatch");
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  out << '\n';
  out.precision(17);
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index j = 0; j < values.cols(); ++j) out << (j ? "," : "") << values(i, j);
    out << '\n';
  }
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header, const MatrixXd& values) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  write_csv(out, header, values);
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline std::vector<std::string> numbered_header(const std::string& prefix, Index count) {
  std::vector<std::string> h;
  for (Index j = 0; j < count; ++j) h.push_back(prefix + std::to_string(j + 1));
  return h;
}

// ---- ingestion ---------------------------------------------------------------

struct Ingested {
  DataSet data;
  Centering centering;
};

// X, Y are column-centered when `center` is set; z is centered for the
// gaussian family and checked to be 0/1 for the bernoulli family.
inline Ingested ingest(const std::string& x_path, const std::string& y_path, const std::string& z_path, Family family,
                       bool center = true) {
  const CsvTable x = read_csv_matrix(x_path);
  const CsvTable y = read_csv_matrix(y_path);
  const CsvTable z = read_csv_matrix(z_path);
  if (x.values.rows() != y.values.rows() || x.values.rows() != z.values.rows()) {
    throw ValidationError("row-count mismatch: X has " + std::to_string(x.values.rows()) + " rows, Y has " +
                          std::to_string(y.values.rows()) + ", z has " + std::to_string(z.values.rows()));
  }
  if (z.values.cols() != 1) throw ValidationError("z file must have exactly one column");
  Ingested out;
  out.data.X = x.values;
  out.data.Y = y.values;
  out.data.z = z.values.col(0);
  out.data.family = family;
  if (family == Family::bernoulli) {
    for (Index i = 0; i < out.data.z.size(); ++i) {
      if (out.data.z(i) != 0.0 && out.data.z(i) != 1.0) {
        throw ValidationError("bernoulli outcome must be 0 or 1; row " + std::to_string(i + 1) + " is " +
                              std::to_string(out.data.z(i)));
      }
    }
  }
  if (center) {
    out.centering = center_in_place(out.data);
  } else {
    out.centering.x_mean = VectorXd::Zero(out.data.X.cols());
    out.centering.y_mean = VectorXd::Zero(out.data.Y.cols());
    return out;  // caller centers and validates
  }
  out.data.validate();
  return out;
}

// Reads a raw (X, Y) pair for prediction and checks the row counts.
inline std::pair<MatrixXd, MatrixXd> read_xy(const std::string& x_path, const std::string& y_path) {
  CsvTable x = read_csv_matrix(x_path);
  CsvTable y = read_csv_matrix(y_path);
  if (x.values.rows() != y.values.rows()) {
    throw ValidationError("row-count mismatch: X has " + std::to_string(x.values.rows()) + " rows, Y has " +
                          std::to_string(y.values.rows()));
  }
  return {std::move(x.values), std::move(y.values)};
}

// ---- model file -------------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

struct FitMetadata {
  int iterations = 0;
  double loglik = 0.0;
  bool converged = false;
  FitConfig config;
};

struct ModelFile {
  int format_version = kModelFormatVersion;
  Theta theta;
  Centering centering;
  FitMetadata meta;
};

namespace detail {

inline nlohmann::json matrix_to_json(const MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline MatrixXd matrix_from_json(const nlohmann::json& j, const std::string& name) {
  const Index rows = j.at("rows").get<Index>(), cols = j.at("cols").get<Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (rows < 0 || cols < 0 || static_cast<Index>(data.size()) != rows * cols) {
    throw IoError("model field '" + name + "' has inconsistent shape");
  }
  MatrixXd m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j2 = 0; j2 < cols; ++j2) m(i, j2) = data[static_cast<std::size_t>(i * cols + j2)];
  return m;
}

inline nlohmann::json vector_to_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline VectorXd vector_from_json(const nlohmann::json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(data.data(), static_cast<Index>(data.size()));
}

}  // namespace detail

inline nlohmann::json model_to_json(const ModelFile& mf) {
  const Theta& th = mf.theta;
  const ModelDims d = th.dims();
  using detail::matrix_to_json;
  using detail::vector_to_json;
  const FitConfig& c = mf.meta.config;
  return {{"format_version", mf.format_version},
          {"family", to_string(th.family)},
          {"dims", {{"p", d.p}, {"q", d.q}, {"r", d.r}, {"rx", d.rx}, {"ry", d.ry}}},
          {"theta",
           {{"W", matrix_to_json(th.W)},
            {"C", matrix_to_json(th.C)},
            {"W_perp", matrix_to_json(th.W_perp)},
            {"C_perp", matrix_to_json(th.C_perp)},
            {"B", vector_to_json(th.B)},
            {"var_t", vector_to_json(th.var_t)},
            {"var_t_perp", vector_to_json(th.var_t_perp)},
            {"var_u_perp", vector_to_json(th.var_u_perp)},
            {"var_h", vector_to_json(th.var_h)},
            {"var_e", th.var_e},
            {"var_f", th.var_f},
            {"a", vector_to_json(th.a)},
            {"b", vector_to_json(th.b)},
            {"a0", th.a0},
            {"var_g", th.var_g}}},
          {"centering",
           {{"x_mean", vector_to_json(mf.centering.x_mean)},
            {"y_mean", vector_to_json(mf.centering.y_mean)},
            {"z_mean", mf.centering.z_mean}}},
          {"fit",
           {{"iterations", mf.meta.iterations},
            {"loglik", mf.meta.loglik},
            {"converged", mf.meta.converged},
            {"config",
             {{"max_iter", c.max_iter},
              {"rel_tol", c.rel_tol},
              {"init", c.init == InitStrategy::svd ? "svd" : "random"},
              {"seed", c.seed},
              {"quad_nodes", c.quad_nodes},
              {"grid_budget", c.grid_budget},
              {"centering", to_string(c.centering)}}}}}};
}

inline ModelFile model_from_json(const nlohmann::json& j) {
  ModelFile mf;
  try {
    mf.format_version = j.at("format_version").get<int>();
    if (mf.format_version != kModelFormatVersion) {
      throw IoError("unsupported model format_version " + std::to_string(mf.format_version) + " (expected " +
                    std::to_string(kModelFormatVersion) + ")");
    }
    const auto& t = j.at("theta");
    Theta& th = mf.theta;
    th.family = parse_family(j.at("family").get<std::string>());
    th.W = detail::matrix_from_json(t.at("W"), "W");
    th.C = detail::matrix_from_json(t.at("C"), "C");
    th.W_perp = detail::matrix_from_json(t.at("W_perp"), "W_perp");
    th.C_perp = detail::matrix_from_json(t.at("C_perp"), "C_perp");
    th.B = detail::vector_from_json(t.at("B"));
    th.var_t = detail::vector_from_json(t.at("var_t"));
    th.var_t_perp = detail::vector_from_json(t.at("var_t_perp"));
    th.var_u_perp = detail::vector_from_json(t.at("var_u_perp"));
    th.var_h = detail::vector_from_json(t.at("var_h"));
    th.var_e = t.at("var_e").get<double>();
    th.var_f = t.at("var_f").get<double>();
    th.a = detail::vector_from_json(t.at("a"));
    th.b = detail::vector_from_json(t.at("b"));
    th.a0 = t.at("a0").get<double>();
    th.var_g = t.at("var_g").get<double>();
    th.check_shapes();
    const auto& d = j.at("dims");
    const ModelDims dims = th.dims();
    if (d.at("p").get<Index>() != dims.p || d.at("q").get<Index>() != dims.q || d.at("r").get<Index>() != dims.r ||
        d.at("rx").get<Index>() != dims.rx || d.at("ry").get<Index>() != dims.ry) {
      throw IoError("model dims do not match the stored matrices");
    }
    const auto& c = j.at("centering");
    mf.centering.x_mean = detail::vector_from_json(c.at("x_mean"));
    mf.centering.y_mean = detail::vector_from_json(c.at("y_mean"));
    mf.centering.z_mean = c.at("z_mean").get<double>();
    if (mf.centering.x_mean.size() != dims.p || mf.centering.y_mean.size() != dims.q) {
      throw IoError("centering vectors do not match the model dims");
    }
    const auto& f = j.at("fit");
    mf.meta.iterations = f.at("iterations").get<int>();
    mf.meta.loglik = f.at("loglik").get<double>();
    mf.meta.converged = f.at("converged").get<bool>();
    const auto& cfg = f.at("config");
    mf.meta.config.max_iter = cfg.at("max_iter").get<int>();
    mf.meta.config.rel_tol = cfg.at("rel_tol").get<double>();
    mf.meta.config.init = cfg.at("init").get<std::string>() == "random" ? InitStrategy::random : InitStrategy::svd;
    mf.meta.config.seed = cfg.at("seed").get<std::uint64_t>();
    mf.meta.config.quad_nodes = cfg.at("quad_nodes").get<int>();
    mf.meta.config.grid_budget = cfg.at("grid_budget").get<double>();
    mf.meta.config.centering = parse_grid_centering(cfg.at("centering").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed model file: ") + e.what());
  } catch (const ValidationError& e) {
    throw IoError(std::string("malformed model file: ") + e.what());
  }
  return mf;
}

inline void save_model(const std::string& path, const ModelFile& mf) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write model '" + path + "'");
  out << model_to_json(mf).dump(2) << '\n';
  if (!out) throw IoError("failed writing model '" + path + "'");
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("model '" + path + "' is not valid JSON: " + e.what());
  }
  return model_from_json(j);
}

inline ModelFile make_model_file(const FitResult& fit, const Centering& centering, const FitConfig& config) {
  ModelFile mf;
  mf.theta = fit.theta;
  mf.centering = centering;
  mf.meta.iterations = fit.iterations;
  mf.meta.loglik = fit.loglik;
  mf.meta.converged = fit.converged;
  mf.meta.config = config;
  return mf;
}

// Restores the FitResult fields the predict/test paths need.
inline FitResult fit_from_model(const ModelFile& mf) {
  FitResult fit;
  fit.theta = mf.theta;
  fit.iterations = mf.meta.iterations;
  fit.loglik = mf.meta.loglik;
  fit.converged = mf.meta.converged;
  fit.quad_nodes = mf.theta.family == Family::bernoulli ? mf.meta.config.quad_nodes : 0;
  fit.centering = mf.meta.config.centering;
  return fit;
}

// ---- test results -------------------------------------------------------------

inline void write_test_results(std::ostream& out, const std::vector<TestResult>& results) {
  out << "test,component,statistic,df,p_value,asymptotics_unverified\n";
  out.precision(17);
  for (const auto& r : results) {
    out << (r.kind == TestKind::full ? "full" : "componentwise") << ','
        << (r.kind == TestKind::full ? std::string() : std::to_string(r.component + 1)) << ',' << r.statistic << ','
        << r.df << ',' << r.p_value << ',' << (r.asymptotics_unverified ? "true" : "false") << '\n';
  }
}

// ---- scree --------------------------------------------------------------------

struct ScreeTable {
  VectorXd sv_xty;   // singular values of X^T Y
  VectorXd eig_xtx;  // eigenvalues of X^T X, decreasing
  VectorXd eig_yty;
  std::string notice;  // non-empty when a series was truncated
};

inline ScreeTable scree(const MatrixXd& x, const MatrixXd& y, Index k) {
  if (k < 1) throw ValidationError("number of components must be >= 1");
  if (x.rows() != y.rows()) throw ValidationError("X and Y row counts differ");
  ScreeTable s;
  const VectorXd sv = Eigen::BDCSVD<MatrixXd>(x.transpose() * y).singularValues();
  const auto eig_desc = [](const MatrixXd& gram) {
    VectorXd e = Eigen::SelfAdjointEigenSolver<MatrixXd>(gram, Eigen::EigenvaluesOnly).eigenvalues().reverse();
    return VectorXd(e.cwiseMax(0.0));
  };
  const VectorXd ex = eig_desc(x.transpose() * x), ey = eig_desc(y.transpose() * y);
  std::vector<std::string> cut;
  auto take = [&](const VectorXd& v, const char* name) {
    if (v.size() < k) cut.push_back(std::string(name) + " has " + std::to_string(v.size()));
    return VectorXd(v.head(std::min<Index>(k, v.size())));
  };
  s.sv_xty = take(sv, "X^T Y");
  s.eig_xtx = take(ex, "X^T X");
  s.eig_yty = take(ey, "Y^T Y");
  if (!cut.empty()) {
    s.notice = "requested " + std::to_string(k) + " components; truncated where";
    for (std::size_t i = 0; i < cut.size(); ++i) s.notice += (i ? "," : "") + std::string(" ") + cut[i];
  }
  return s;
}

inline void write_scree_csv(std::ostream& out, const ScreeTable& s) {
  out << "component,sv_xty,eig_xtx,eig_yty\n";
  out.precision(17);
  const Index rows = std::max({s.sv_xty.size(), s.eig_xtx.size(), s.eig_yty.size()});
  auto cell = [](const VectorXd& v, Index i) {
    if (i >= v.size()) return std::string();
    std::ostringstream os;
    os.precision(17);
    os << v(i);
    return os.str();
  };
  for (Index i = 0; i < rows; ++i) {
    out << i + 1 << ',' << cell(s.sv_xty, i) << ',' << cell(s.eig_xtx, i) << ',' << cell(s.eig_yty, i) << '\n';
  }
}

}  // namespace glmpo2pls
