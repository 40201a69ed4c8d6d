#pragma once

// Numerical checks of the interference analysis on quadratic problems, the
// constrained optimal update, and the projection/orthogonalization bounds.

#include <cstdint>
#include <string>
#include <vector>

#include "mtu/matlib.hpp"
#include "mtu/surgery.hpp"

namespace mtu {

// l(theta) = 1/2 theta^T Q theta - q^T theta + c.
struct PairLoss {
  MatrixXd q_mat;
  VectorXd q_vec;
  double c = 0.0;
  int instance = 0;
  int task = 0;

  double value(const VectorXd& theta) const {
    return 0.5 * theta.dot(q_mat * theta) - q_vec.dot(theta) + c;
  }
  VectorXd gradient(const VectorXd& theta) const { return q_mat * theta - q_vec; }
};

/// Least-squares pair 1/2 (phi^T theta - y)^2.
PairLoss least_squares_pair(const VectorXd& phi, double y, int instance = 0, int task = 0);

// L_r = mean over retain pairs + (ridge / 2)|theta|^2, L_f = mean over forget
// pairs. Both minimizers are closed-form.
struct QuadraticProblem {
  int dim = 0;  // P
  std::vector<PairLoss> pairs;
  std::vector<int> forget;       // indices into pairs
  std::vector<int> retain;
  std::vector<int> retain_task;  // forgotten instances, retained tasks
  std::vector<int> retain_inst;  // retained instances, forgotten tasks
  double ridge = 0.0;
  double rho = 0.0;  // |D_f| / |D_r| unless overridden

  MatrixXd h_r;  // Hessian of L_r
  VectorXd b_r;  // L_r gradient is h_r theta - b_r
  MatrixXd h_f;
  VectorXd b_f;
  VectorXd theta_r;     // argmin L_r
  VectorXd theta_star;  // argmin L_r + rho L_f

  VectorXd grad_retain(const VectorXd& theta) const { return h_r * theta - b_r; }
  VectorXd grad_forget(const VectorXd& theta) const { return h_f * theta - b_f; }

  /// Rebuilds the aggregate quadratics and re-solves both minimizers.
  void finalize();
  /// Re-solves theta_star for a new rho.
  void set_rho(double rho);
};

struct QuadraticSpec {
  int input_dim = 6;  // features per instance; P = input_dim * (K + 1)
  int num_tasks = 3;
  int num_instances = 40;
  int forget_instances = 6;
  std::vector<int> forget_tasks{0};
  double noise_std = 1.0;
  double ridge = 1.0;
};

/// Multi-task ridge regression: theta stacks a shared block and one block per
/// task, and pair (i, t) has features [x_i; e_t (x) x_i].
QuadraticProblem make_quadratic_problem(const QuadraticSpec& spec, std::uint64_t seed);

/// rho * grad_l(theta_r)^T H_r^{-1} grad_L_f(theta_r).
double predict_interference(const QuadraticProblem& prob, const VectorXd& pair_grad);
double predict_interference(const QuadraticProblem& prob, int pair);

/// Exact l(theta_r) - l(theta*).
double actual_interference(const QuadraticProblem& prob, int pair);

/// Sum of predictions over a set of pair indices.
double aggregate_interference(const QuadraticProblem& prob, const std::vector<int>& subset);

struct OrderRow {
  double rho;
  double residual;       // |actual - predicted| over retained pairs (2-norm)
  double actual_norm;    // |actual| over retained pairs
  double relative() const { return actual_norm > 0 ? residual / actual_norm : residual; }
};

struct OrderFit {
  std::vector<OrderRow> rows;
  double slope = 0.0;  // least-squares slope of log residual against log rho
};

OrderFit verify_order(QuadraticProblem prob, const std::vector<double>& rhos);

/// gamma H^{-1} g / (g^T H^{-1} g).
VectorXd optimal_direction(const MatrixXd& h_r, const VectorXd& g_f, double gamma);

double quadratic_cost(const MatrixXd& h, const VectorXd& delta);

struct SuiteResult {
  std::string name;
  bool passed = false;
  int trials = 0;
  int violations = 0;
  double worst = 0.0;  // largest normalized violation measure seen
  std::string detail;
  std::vector<std::vector<double>> table;  // suite-specific residual rows
  std::vector<std::string> columns;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  int theorem1_instances = 20;
  int proposition_instances = 20;
  int proposition_samples = 1000;
  int theorem2_draws = 1000;
  int theorem3_draws = 1000;
  // Substitute for the orthogonalization primitive (fault injection).
  OrthogonalizeFn<double> orthogonalize = orthogonalize_default<double>;
};

SuiteResult verify_theorem1(const VerifyOptions& opt);
SuiteResult verify_corollary1(const VerifyOptions& opt);
SuiteResult verify_proposition1(const VerifyOptions& opt);
SuiteResult verify_theorem2(const VerifyOptions& opt);
SuiteResult verify_theorem3(const VerifyOptions& opt);

std::vector<SuiteResult> verify_all(const VerifyOptions& opt);

/// orthogonalize() with the sign of the correction flipped; for mutation tests.
MatrixXd orthogonalize_sign_flipped(const MatrixXd& g_f, const MatrixXd& g_r, double eps);

}  // namespace mtu
