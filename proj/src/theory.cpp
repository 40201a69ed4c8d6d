#include "mtu/theory.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mtu/rng.hpp"
#include "mtu/subspace.hpp"

namespace mtu {

namespace {

constexpr std::uint64_t kTheorem1Stream = 0x71;
constexpr std::uint64_t kCorollaryStream = 0x72;
constexpr std::uint64_t kPropositionStream = 0x73;
constexpr std::uint64_t kTheorem2Stream = 0x74;
constexpr std::uint64_t kTheorem3Stream = 0x75;

std::uint64_t instance_seed(std::uint64_t seed, std::uint64_t stream, int i) {
  auto rng = substream(seed, stream + (static_cast<std::uint64_t>(i) << 8));
  return rng();
}

VectorXd solve_vec(const MatrixXd& h, const VectorXd& b) { return solve_spd(h, b); }

double sum_of(const QuadraticProblem& p, const std::vector<int>& idx,
              double (*f)(const QuadraticProblem&, int)) {
  double s = 0.0;
  for (int j : idx) s += f(p, j);
  return s;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  MatrixXd m(rows, cols);
  fill_normal(m, rng);
  return m;
}

MatrixXd random_spd(std::mt19937_64& rng, int n) {
  const MatrixXd a = random_matrix(rng, n, n);
  return a.transpose() * a / n + 0.1 * MatrixXd::Identity(n, n);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

}  // namespace

PairLoss least_squares_pair(const VectorXd& phi, double y, int instance, int task) {
  return {phi * phi.transpose(), y * phi, 0.5 * y * y, instance, task};
}

void QuadraticProblem::finalize() {
  if (retain.empty() || forget.empty()) {
    throw EmptySubsetError("QuadraticProblem: retain and forget sets must be nonempty");
  }
  h_r = ridge * MatrixXd::Identity(dim, dim);
  b_r = VectorXd::Zero(dim);
  for (int j : retain) {
    h_r += pairs[static_cast<std::size_t>(j)].q_mat / static_cast<double>(retain.size());
    b_r += pairs[static_cast<std::size_t>(j)].q_vec / static_cast<double>(retain.size());
  }
  h_f = MatrixXd::Zero(dim, dim);
  b_f = VectorXd::Zero(dim);
  for (int j : forget) {
    h_f += pairs[static_cast<std::size_t>(j)].q_mat / static_cast<double>(forget.size());
    b_f += pairs[static_cast<std::size_t>(j)].q_vec / static_cast<double>(forget.size());
  }
  theta_r = solve_vec(h_r, b_r);
  set_rho(rho);
}

void QuadraticProblem::set_rho(double new_rho) {
  if (!(new_rho >= 0.0)) throw ConfigError("rho", "must be non-negative");
  rho = new_rho;
  theta_star = solve_vec(h_r + rho * h_f, b_r + rho * b_f);
}

QuadraticProblem make_quadratic_problem(const QuadraticSpec& spec, std::uint64_t seed) {
  const int d = spec.input_dim;
  const int K = spec.num_tasks;
  if (d < 1 || K < 1 || spec.num_instances < 2 || spec.forget_instances < 1 ||
      spec.forget_instances >= spec.num_instances || spec.forget_tasks.empty()) {
    throw ConfigError("quadratic", "invalid quadratic problem sizes");
  }
  auto rng = substream(seed, 0x70);
  QuadraticProblem p;
  p.dim = d * (K + 1);
  p.ridge = spec.ridge;
  const VectorXd shared = random_matrix(rng, d, 1);
  const MatrixXd specific = random_matrix(rng, d, K) * 0.5;
  std::vector<char> tf(static_cast<std::size_t>(K), 0);
  for (int t : spec.forget_tasks) {
    if (t < 0 || t >= K) throw ConfigError("forget_tasks", "task index out of range");
    tf[static_cast<std::size_t>(t)] = 1;
  }
  std::normal_distribution<double> noise(0.0, spec.noise_std);
  for (int i = 0; i < spec.num_instances; ++i) {
    const VectorXd x = random_matrix(rng, d, 1);
    const bool fi = i < spec.forget_instances;
    for (int t = 0; t < K; ++t) {
      VectorXd phi = VectorXd::Zero(p.dim);
      phi.head(d) = x;
      phi.segment(d * (t + 1), d) = x;
      const double y = x.dot(shared + specific.col(t)) + noise(rng);
      const int idx = static_cast<int>(p.pairs.size());
      p.pairs.push_back(least_squares_pair(phi, y, i, t));
      const bool ft = tf[static_cast<std::size_t>(t)] != 0;
      if (fi && ft) {
        p.forget.push_back(idx);
        continue;
      }
      p.retain.push_back(idx);
      if (fi) p.retain_task.push_back(idx);
      else if (ft) p.retain_inst.push_back(idx);
    }
  }
  p.rho = static_cast<double>(p.forget.size()) / static_cast<double>(p.retain.size());
  p.finalize();
  return p;
}

double predict_interference(const QuadraticProblem& prob, const VectorXd& pair_grad) {
  if (pair_grad.size() != prob.dim) {
    throw DimensionError("predict_interference: gradient has the wrong length");
  }
  const VectorXd v = solve_vec(prob.h_r, prob.grad_forget(prob.theta_r));
  return prob.rho * pair_grad.dot(v);
}

double predict_interference(const QuadraticProblem& prob, int pair) {
  return predict_interference(prob,
                              prob.pairs.at(static_cast<std::size_t>(pair)).gradient(prob.theta_r));
}

double actual_interference(const QuadraticProblem& prob, int pair) {
  const auto& l = prob.pairs.at(static_cast<std::size_t>(pair));
  return l.value(prob.theta_r) - l.value(prob.theta_star);
}

double aggregate_interference(const QuadraticProblem& prob, const std::vector<int>& subset) {
  if (subset.empty()) throw EmptySubsetError("aggregate_interference: subset is empty");
  VectorXd g = VectorXd::Zero(prob.dim);
  for (int j : subset) g += prob.pairs.at(static_cast<std::size_t>(j)).gradient(prob.theta_r);
  return predict_interference(prob, g);
}

OrderFit verify_order(QuadraticProblem prob, const std::vector<double>& rhos) {
  if (rhos.size() < 2) throw ConfigError("rho_list", "need at least two values");
  OrderFit fit;
  for (double rho : rhos) {
    if (!(rho > 0.0)) throw ConfigError("rho_list", "values must be positive");
    prob.set_rho(rho);
    double res = 0.0;
    double act = 0.0;
    for (int j : prob.retain) {
      const double a = actual_interference(prob, j);
      const double e = a - predict_interference(prob, j);
      res += e * e;
      act += a * a;
    }
    fit.rows.push_back({rho, std::sqrt(res), std::sqrt(act)});
  }
  // Least-squares slope of log residual on log rho.
  double mx = 0.0, my = 0.0;
  for (const auto& r : fit.rows) {
    mx += std::log(r.rho);
    my += std::log(std::max(r.residual, 1e-300));
  }
  mx /= static_cast<double>(fit.rows.size());
  my /= static_cast<double>(fit.rows.size());
  double sxy = 0.0, sxx = 0.0;
  for (const auto& r : fit.rows) {
    const double dx = std::log(r.rho) - mx;
    sxy += dx * (std::log(std::max(r.residual, 1e-300)) - my);
    sxx += dx * dx;
  }
  fit.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  return fit;
}

VectorXd optimal_direction(const MatrixXd& h_r, const VectorXd& g_f, double gamma) {
  if (!(gamma > 0.0)) throw ConfigError("gamma", "must be positive");
  if (g_f.size() == 0 || g_f.squaredNorm() == 0.0) {
    throw DimensionError("optimal_direction: forget gradient is zero");
  }
  const VectorXd hinv_g = solve_vec(h_r, g_f);
  const double denom = g_f.dot(hinv_g);
  if (!(denom > 0.0)) throw CurvatureError("optimal_direction: g^T H^{-1} g is not positive");
  return (gamma / denom) * hinv_g;
}

double quadratic_cost(const MatrixXd& h, const VectorXd& delta) {
  return 0.5 * delta.dot(h * delta);
}

MatrixXd orthogonalize_sign_flipped(const MatrixXd& g_f, const MatrixXd& g_r, double eps) {
  // g_f - (-c) g_r: the removal is applied with the wrong sign.
  return 2.0 * g_f - orthogonalize(g_f, g_r, eps);
}

SuiteResult verify_theorem1(const VerifyOptions& opt) {
  SuiteResult out;
  out.name = "theorem1";
  out.columns = {"instance", "P", "rho", "residual", "actual_norm", "relative", "slope"};
  const std::vector<double> rhos{0.01, 0.02, 0.04};
  const double stationarity_tol = 1e-9;
  double worst_rel = 0.0;
  double min_slope = 1e300;
  int failures = 0;
  for (int i = 0; i < opt.theorem1_instances; ++i) {
    auto prob = make_quadratic_problem({}, instance_seed(opt.seed, kTheorem1Stream, i));
    if (prob.dim > 40) throw SizeGuardError("theorem1: instance exceeds P = 40");
    const auto fit = verify_order(prob, rhos);
    prob.set_rho(rhos.front());
    const double stat_r = prob.grad_retain(prob.theta_r).norm();
    const double stat_s =
        (prob.grad_retain(prob.theta_star) + prob.rho * prob.grad_forget(prob.theta_star)).norm();
    const double rel = fit.rows.front().relative();
    worst_rel = std::max(worst_rel, rel);
    min_slope = std::min(min_slope, fit.slope);
    const bool ok = rel <= 0.10 && fit.slope >= 1.7 && stat_r <= stationarity_tol &&
                    stat_s <= stationarity_tol;
    if (!ok) ++failures;
    for (const auto& row : fit.rows) {
      out.table.push_back({static_cast<double>(i), static_cast<double>(prob.dim), row.rho,
                           row.residual, row.actual_norm, row.relative(), fit.slope});
    }
    ++out.trials;
  }
  out.violations = failures;
  out.worst = worst_rel;
  out.passed = failures == 0 && out.trials >= 20;
  out.detail = "max relative error at rho=0.01: " + fmt(worst_rel) +
               "; min log-log slope: " + fmt(min_slope);
  return out;
}

SuiteResult verify_corollary1(const VerifyOptions& opt) {
  SuiteResult out;
  out.name = "corollary1";
  out.columns = {"instance", "task_aggregate", "task_pairwise", "inst_aggregate", "inst_pairwise",
                 "union_aggregate"};
  double worst = 0.0;
  for (int i = 0; i < opt.theorem1_instances; ++i) {
    const auto prob = make_quadratic_problem({}, instance_seed(opt.seed, kCorollaryStream, i));
    const double at = aggregate_interference(prob, prob.retain_task);
    const double pt = sum_of(prob, prob.retain_task,
                             [](const QuadraticProblem& p, int j) { return predict_interference(p, j); });
    const double ai = aggregate_interference(prob, prob.retain_inst);
    const double pi = sum_of(prob, prob.retain_inst,
                             [](const QuadraticProblem& p, int j) { return predict_interference(p, j); });
    std::vector<int> both = prob.retain_task;
    both.insert(both.end(), prob.retain_inst.begin(), prob.retain_inst.end());
    const double au = aggregate_interference(prob, both);
    const double scale = std::max({1e-300, std::abs(at), std::abs(ai), std::abs(pt), std::abs(pi)});
    const double err = std::max({std::abs(at - pt), std::abs(ai - pi), std::abs(au - (at + ai))}) / scale;
    worst = std::max(worst, err);
    if (err > 1e-10) ++out.violations;
    out.table.push_back({static_cast<double>(i), at, pt, ai, pi, au});
    ++out.trials;
  }
  out.worst = worst;
  out.passed = out.violations == 0 && out.trials > 0;
  out.detail = "max relative linearity error: " + fmt(worst);
  return out;
}

SuiteResult verify_proposition1(const VerifyOptions& opt) {
  SuiteResult out;
  out.name = "proposition1";
  out.columns = {"instance", "P", "eigenvector_case", "cost_opt", "cost_raw", "gap",
                 "min_sample_margin"};
  auto rng = substream(opt.seed, kPropositionStream);
  int bad_instances = 0;
  double worst_margin = 1e300;
  const int eigen_cases = std::max(1, opt.proposition_instances / 4);
  for (int i = 0; i < opt.proposition_instances + eigen_cases; ++i) {
    const bool eigen_case = i >= opt.proposition_instances;
    const int n = uniform_int(rng, 3, 12);
    const double gamma = uniform(rng, 0.5, 2.0);
    MatrixXd h;
    VectorXd g;
    if (eigen_case) {
      const MatrixXd q = orthonormalize(random_matrix(rng, n, n));
      VectorXd lambda(n);
      for (int j = 0; j < n; ++j) lambda(j) = uniform(rng, 0.2, 5.0);
      h = q * lambda.asDiagonal() * q.transpose();
      h = 0.5 * (h + h.transpose());
      g = uniform(rng, 0.5, 2.0) * q.col(uniform_int(rng, 0, n - 1));
    } else {
      h = random_spd(rng, n);
      g = random_matrix(rng, n, 1);
    }
    const VectorXd opt_delta = optimal_direction(h, g, gamma);
    const double cost_opt = quadratic_cost(h, opt_delta);
    const VectorXd raw = (gamma / g.squaredNorm()) * g;
    const double gap = quadratic_cost(h, raw) - cost_opt;
    bool ok = std::abs(g.dot(opt_delta) - gamma) <= 1e-10 * std::max(1.0, gamma);
    ok = ok && (eigen_case ? std::abs(gap) <= 1e-10 : gap > 0.0);

    // Orthonormal basis of the constraint plane's direction space {g}^perp.
    Eigen::HouseholderQR<MatrixXd> qr(g);
    const MatrixXd full_q = qr.householderQ() * MatrixXd::Identity(n, n);
    const MatrixXd null_basis = full_q.rightCols(n - 1);
    double min_margin = 1e300;
    for (int s = 0; s < opt.proposition_samples; ++s) {
      // Radii span four decades so near-optimal points are sampled too.
      const double radius = opt_delta.norm() * std::pow(10.0, uniform(rng, -3.0, 1.0));
      VectorXd z = random_matrix(rng, n - 1, 1);
      z *= radius / std::max(z.norm(), 1e-300);
      const VectorXd delta = opt_delta + null_basis * z;
      const double margin = quadratic_cost(h, delta) - cost_opt;
      min_margin = std::min(min_margin, margin);
      if (margin < -1e-9) ++out.violations;
    }
    if (!ok) ++bad_instances;
    worst_margin = std::min(worst_margin, min_margin);
    out.table.push_back({static_cast<double>(i), static_cast<double>(n), eigen_case ? 1.0 : 0.0,
                         cost_opt, cost_opt + gap, gap, min_margin});
    ++out.trials;
  }
  out.worst = -worst_margin;
  out.passed = out.violations == 0 && bad_instances == 0 && opt.proposition_instances >= 20 &&
               opt.proposition_samples >= 1000;
  out.detail = "sample violations: " + std::to_string(out.violations) +
               ", instances failing constraint/gap checks: " + std::to_string(bad_instances) +
               ", smallest sample margin: " + fmt(worst_margin);
  return out;
}

SuiteResult verify_theorem2(const VerifyOptions& opt) {
  SuiteResult out;
  out.name = "theorem2";
  out.columns = {"r", "s", "draws", "violations", "max_ratio"};
  auto rng = substream(opt.seed, kTheorem2Stream);
  const std::vector<std::pair<int, int>> shapes{{4, 1}, {4, 2}, {16, 1}, {16, 8}};
  const int per_shape = (opt.theorem2_draws + static_cast<int>(shapes.size()) - 1) /
                        static_cast<int>(shapes.size());
  double worst = -1e300;
  for (const auto& [r, s] : shapes) {
    int viol = 0;
    double max_ratio = 0.0;
    for (int i = 0; i < per_shape; ++i) {
      const int m = uniform_int(rng, 2, 10);
      const MatrixXd g1 = random_matrix(rng, m, r);
      const MatrixXd g2 = random_matrix(rng, m, r);
      const TaskSubspace<double> u(0, random_matrix(rng, r, s));
      const TaskSubspace<double> v(1, random_matrix(rng, r, s));
      const double gamma = alignment(u, v).spectral;
      const double lhs = std::abs(frob_inner(g1 * u.projector(), g2 * v.projector()));
      const double scale = g1.norm() * g2.norm();
      const double bound = gamma * scale;
      if (lhs > bound + 1e-9) ++viol;
      worst = std::max(worst, (lhs - bound) / scale);
      if (bound > 0) max_ratio = std::max(max_ratio, lhs / bound);
      ++out.trials;
    }
    out.violations += viol;
    out.table.push_back({static_cast<double>(r), static_cast<double>(s),
                         static_cast<double>(per_shape), static_cast<double>(viol), max_ratio});
  }
  out.worst = worst;
  out.passed = out.violations == 0 && out.trials >= 1000;
  out.detail = "violations: " + std::to_string(out.violations) + " of " +
               std::to_string(out.trials) + "; max (lhs - bound) / (|G||G'|): " + fmt(worst);
  return out;
}

SuiteResult verify_theorem3(const VerifyOptions& opt) {
  SuiteResult out;
  out.name = "theorem3";
  out.columns = {"eps", "draws", "violations", "max_identity_error", "max_residual_alignment"};
  auto rng = substream(opt.seed, kTheorem3Stream);
  const std::vector<double> eps_list{0.0, 1e-8, 1e-3, 1.0};
  for (double eps : eps_list) {
    int viol = 0;
    double max_err = 0.0;
    double max_align = 0.0;
    for (int i = 0; i < opt.theorem3_draws; ++i) {
      const int rows = uniform_int(rng, 1, 8);
      const int cols = uniform_int(rng, 1, 8);
      const MatrixXd g_f = random_matrix(rng, rows, cols);
      // Retain norms spread over several decades so eps is sometimes dominant.
      const MatrixXd g_r = random_matrix(rng, rows, cols) * std::pow(10.0, uniform(rng, -3.0, 1.0));
      const MatrixXd o = opt.orthogonalize(g_f, g_r, eps);
      const double scale = g_f.norm() * g_r.norm();
      const double lhs = std::abs(frob_inner(o, g_r));
      const double rhs = eps / (g_r.squaredNorm() + eps) * std::abs(frob_inner(g_f, g_r));
      const double err = std::abs(lhs - rhs) / scale;
      max_err = std::max(max_err, err);
      max_align = std::max(max_align, lhs / scale);
      const bool bad = err > 1e-10 || (eps == 0.0 && lhs > 1e-12 * scale);
      if (bad) ++viol;
      ++out.trials;
    }
    out.violations += viol;
    out.worst = std::max(out.worst, max_err);
    out.table.push_back({eps, static_cast<double>(opt.theorem3_draws), static_cast<double>(viol),
                         max_err, max_align});
  }
  out.passed = out.violations == 0 && opt.theorem3_draws >= 1000;
  out.detail = "violations: " + std::to_string(out.violations) + " of " +
               std::to_string(out.trials) + "; max normalized identity error: " + fmt(out.worst);
  return out;
}

std::vector<SuiteResult> verify_all(const VerifyOptions& opt) {
  return {verify_theorem1(opt), verify_corollary1(opt), verify_proposition1(opt),
          verify_theorem2(opt), verify_theorem3(opt)};
}

}  // namespace mtu
