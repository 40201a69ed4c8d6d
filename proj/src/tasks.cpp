#include "mtu/tasks.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mtu/rng.hpp"

namespace mtu {

namespace {

constexpr std::uint64_t kStructureStream = 0x51;
constexpr std::uint64_t kTrainStream = 0x52;
constexpr std::uint64_t kValidationStream = 0x53;
constexpr std::uint64_t kForgetStream = 0x54;

// Rows of one task's pairs gathered into dense blocks.
struct TaskBlock {
  int task;
  std::vector<int> rows;  // positions in the originating subset
  MatrixXd x;             // n x d
  MatrixXd y;             // n x m_t
};

std::vector<TaskBlock> gather(const MultiTaskDataset& ds, const Subset& subset) {
  const int K = ds.num_tasks();
  std::vector<std::vector<int>> by_task(static_cast<std::size_t>(K));
  for (std::size_t p = 0; p < subset.size(); ++p) {
    const Triple& tr = subset[p];
    if (tr.task < 0 || tr.task >= K || tr.instance < 0 || tr.instance >= ds.num_instances()) {
      std::ostringstream os;
      os << "triple (" << tr.instance << ", " << tr.task << ") is outside the dataset";
      throw DimensionError(os.str());
    }
    by_task[static_cast<std::size_t>(tr.task)].push_back(static_cast<int>(p));
  }
  std::vector<TaskBlock> blocks;
  for (int t = 0; t < K; ++t) {
    const auto& pos = by_task[static_cast<std::size_t>(t)];
    if (pos.empty()) continue;
    TaskBlock b{t, pos, MatrixXd(static_cast<Eigen::Index>(pos.size()), ds.input_dim()),
                MatrixXd(static_cast<Eigen::Index>(pos.size()), ds.targets[t].cols())};
    for (std::size_t j = 0; j < pos.size(); ++j) {
      const int i = subset[static_cast<std::size_t>(pos[j])].instance;
      b.x.row(static_cast<Eigen::Index>(j)) = ds.inputs.row(i);
      b.y.row(static_cast<Eigen::Index>(j)) = ds.targets[t].row(i);
    }
    blocks.push_back(std::move(b));
  }
  return blocks;
}

void check_heads(const MultiTaskModel& model, const MultiTaskDataset& ds) {
  if (model.heads.size() != ds.heads.size()) {
    throw DimensionError("model and dataset disagree on the number of tasks");
  }
  model.edit.validate();
  if (model.edit.input_dim() != ds.input_dim() || model.edit.shared_dim() != ds.shared_dim()) {
    throw DimensionError("model shared layer does not match dataset dimensions");
  }
}

// Residual X W H^T - Y for one block.
MatrixXd residual(const TaskBlock& b, const MatrixXd& w, const MatrixXd& head) {
  return b.x * w * head.transpose() - b.y;
}

double weighted_loss(const std::vector<TaskBlock>& blocks, const MatrixXd& w,
                     const std::vector<MatrixXd>& heads, const std::vector<double>& lambda,
                     std::size_t n) {
  double total = 0.0;
  for (const auto& b : blocks) {
    total += lambda[b.task] * 0.5 * residual(b, w, heads[b.task]).squaredNorm();
  }
  return total / static_cast<double>(n);
}

MatrixXd block_gradient(const TaskBlock& b, const MatrixXd& w, const MatrixXd& head,
                        double lambda, std::size_t n) {
  return (lambda / static_cast<double>(n)) * (b.x.transpose() * residual(b, w, head) * head);
}

void require_nonempty(const Subset& s, const char* op) {
  if (s.empty()) throw EmptySubsetError(std::string(op) + ": subset is empty");
}

std::vector<int> normalized_set(std::vector<int> v, int bound, const char* field) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  for (int x : v) {
    if (x < 0 || x >= bound) {
      std::ostringstream os;
      os << "index " << x << " out of range [0, " << bound << ")";
      throw ConfigError(field, os.str());
    }
  }
  return v;
}

MultiTaskDataset draw_instances(const GenConfig& cfg, int count, std::uint64_t stream) {
  cfg.validate();
  const int K = cfg.num_tasks;
  const int m_total = std::accumulate(cfg.task_dims.begin(), cfg.task_dims.end(), 0);

  MultiTaskDataset ds;
  ds.config = cfg;
  ds.task_weights.assign(static_cast<std::size_t>(K), 1.0);

  // Stacked heads are sqrt(K) times a matrix with orthonormal columns, so the
  // mean head Gram matrix (1/K) sum_t H_t^T H_t is exactly I_k.
  auto srng = substream(cfg.seed, kStructureStream);
  MatrixXd m(m_total, cfg.shared_dim);
  fill_normal(m, srng);
  Eigen::HouseholderQR<MatrixXd> qr(m);
  const MatrixXd q = qr.householderQ() * MatrixXd::Identity(m_total, cfg.shared_dim);
  const MatrixXd stacked = std::sqrt(static_cast<double>(K)) * q;
  int offset = 0;
  for (int t = 0; t < K; ++t) {
    ds.heads.push_back(stacked.middleRows(offset, cfg.task_dims[t]));
    offset += cfg.task_dims[t];
  }
  MatrixXd left(cfg.input_dim, cfg.teacher_rank);
  MatrixXd right(cfg.teacher_rank, cfg.shared_dim);
  fill_normal(left, srng);
  fill_normal(right, srng);
  ds.teacher = left * right / std::sqrt(static_cast<double>(cfg.teacher_rank));

  auto rng = substream(cfg.seed, stream);
  ds.inputs.resize(count, cfg.input_dim);
  fill_normal(ds.inputs, rng);
  const MatrixXd z = ds.inputs * ds.teacher;
  for (int t = 0; t < K; ++t) {
    MatrixXd noise(count, cfg.task_dims[t]);
    fill_normal(noise, rng);
    ds.targets.push_back(z * ds.heads[t].transpose() + cfg.noise_std * noise);
  }
  return ds;
}

}  // namespace

void GenConfig::validate() const {
  if (num_instances < 2) throw ConfigError("N", "need at least 2 instances");
  if (input_dim < 2) throw ConfigError("d", "need input dimension >= 2");
  if (num_tasks < 2) throw ConfigError("K", "need at least 2 tasks");
  if (shared_dim < 1) throw ConfigError("shared_dim", "must be positive");
  if (static_cast<int>(task_dims.size()) != num_tasks) {
    throw ConfigError("task_dims", "length must equal K");
  }
  int total = 0;
  for (int m : task_dims) {
    if (m < 1) throw ConfigError("task_dims", "every task needs output dimension >= 1");
    total += m;
  }
  if (total < shared_dim) {
    throw ConfigError("task_dims", "sum of task dimensions must be >= shared_dim");
  }
  if (teacher_rank < 1 || teacher_rank > std::min(input_dim, shared_dim)) {
    throw ConfigError("teacher_rank", "must lie in [1, min(d, shared_dim)]");
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
    throw ConfigError("noise_std", "must be finite and non-negative");
  }
}

Subset MultiTaskDataset::triples() const {
  Subset out;
  out.reserve(static_cast<std::size_t>(num_instances() * num_tasks()));
  for (int i = 0; i < num_instances(); ++i)
    for (int t = 0; t < num_tasks(); ++t) out.push_back({i, t});
  return out;
}

void MultiTaskDataset::validate() const {
  const auto K = heads.size();
  if (K < 1 || targets.size() != K || task_weights.size() != K) {
    throw DimensionError("dataset: heads, targets and task_weights must have one entry per task");
  }
  for (std::size_t t = 0; t < K; ++t) {
    if (targets[t].rows() != inputs.rows() || targets[t].cols() != heads[t].rows() ||
        heads[t].cols() != heads.front().cols()) {
      throw DimensionError("dataset: inconsistent target or head shapes");
    }
    if (!(task_weights[t] > 0.0)) throw ConfigError("task_weights", "must be positive");
  }
  if (!all_finite(inputs)) throw DimensionError("dataset: non-finite inputs");
}

MultiTaskDataset generate_synthetic(const GenConfig& cfg) {
  return draw_instances(cfg, cfg.num_instances, kTrainStream);
}

MultiTaskDataset generate_validation(const GenConfig& cfg, int count) {
  if (count < 1) throw ConfigError("val_count", "must be positive");
  return draw_instances(cfg, count, kValidationStream);
}

Subset PartitionSpec::retain() const {
  Subset out;
  out.reserve(retain_size());
  out.insert(out.end(), retain_task.begin(), retain_task.end());
  out.insert(out.end(), retain_inst.begin(), retain_inst.end());
  out.insert(out.end(), retain_clean.begin(), retain_clean.end());
  std::sort(out.begin(), out.end());
  return out;
}

PartitionSpec partition(const MultiTaskDataset& ds, std::vector<int> forget_instances,
                        std::vector<int> forget_tasks, PartitionUse use) {
  PartitionSpec p;
  p.forget_instances =
      normalized_set(std::move(forget_instances), ds.num_instances(), "forget_instances");
  p.forget_tasks = normalized_set(std::move(forget_tasks), ds.num_tasks(), "forget_tasks");
  if (use == PartitionUse::unlearning) {
    if (p.forget_instances.empty()) {
      throw ConfigError("forget_instances", "must be nonempty for unlearning");
    }
    if (p.forget_tasks.empty()) throw ConfigError("forget_tasks", "must be nonempty for unlearning");
  }
  std::vector<char> xf(static_cast<std::size_t>(ds.num_instances()), 0);
  std::vector<char> tf(static_cast<std::size_t>(ds.num_tasks()), 0);
  for (int i : p.forget_instances) xf[static_cast<std::size_t>(i)] = 1;
  for (int t : p.forget_tasks) tf[static_cast<std::size_t>(t)] = 1;
  for (const Triple& tr : ds.triples()) {
    const bool fi = xf[static_cast<std::size_t>(tr.instance)];
    const bool ft = tf[static_cast<std::size_t>(tr.task)];
    if (fi && ft) p.forget.push_back(tr);
    else if (fi) p.retain_task.push_back(tr);
    else if (ft) p.retain_inst.push_back(tr);
    else p.retain_clean.push_back(tr);
  }
  return p;
}

std::vector<int> sample_forget_instances(int num_instances, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("forget_ratio", "must lie strictly between 0 and 1");
  }
  const int count =
      std::max(1, static_cast<int>(std::floor(fraction * num_instances + 1e-9)));
  std::vector<int> idx(static_cast<std::size_t>(num_instances));
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = substream(seed, kForgetStream);
  // Partial Fisher-Yates with an explicit modulus draw keeps the selection
  // independent of the standard library's distribution implementation.
  for (int j = 0; j < count; ++j) {
    const auto span = static_cast<std::uint64_t>(num_instances - j);
    const auto pick = j + static_cast<int>(rng() % span);
    std::swap(idx[static_cast<std::size_t>(j)], idx[static_cast<std::size_t>(pick)]);
  }
  idx.resize(static_cast<std::size_t>(count));
  std::sort(idx.begin(), idx.end());
  return idx;
}

MultiTaskModel dense_model(const MatrixXd& w, const std::vector<MatrixXd>& heads) {
  return {LowRankEdit<double>{w, MatrixXd(w.cols(), 0), MatrixXd(w.rows(), 0)}, heads};
}

double pair_loss(const MultiTaskModel& model, const MultiTaskDataset& ds, const Triple& p) {
  check_heads(model, ds);
  if (p.task < 0 || p.task >= ds.num_tasks() || p.instance < 0 ||
      p.instance >= ds.num_instances()) {
    throw DimensionError("pair_loss: triple outside the dataset");
  }
  const MatrixXd w = model.merged();
  const VectorXd u = w.transpose() * ds.inputs.row(p.instance).transpose();
  const VectorXd e = model.heads[p.task] * u - ds.targets[p.task].row(p.instance).transpose();
  return 0.5 * e.squaredNorm();
}

std::vector<double> pair_losses(const MultiTaskModel& model, const MultiTaskDataset& ds,
                                const Subset& subset) {
  check_heads(model, ds);
  const MatrixXd w = model.merged();
  std::vector<double> out(subset.size(), 0.0);
  for (const auto& b : gather(ds, subset)) {
    const MatrixXd e = residual(b, w, model.heads[b.task]);
    for (std::size_t j = 0; j < b.rows.size(); ++j) {
      out[static_cast<std::size_t>(b.rows[j])] =
          0.5 * e.row(static_cast<Eigen::Index>(j)).squaredNorm();
    }
  }
  return out;
}

double subset_loss(const MultiTaskModel& model, const MultiTaskDataset& ds, const Subset& subset) {
  require_nonempty(subset, "subset_loss");
  check_heads(model, ds);
  return weighted_loss(gather(ds, subset), model.merged(), model.heads, ds.task_weights,
                       subset.size());
}

std::vector<std::optional<MatrixXd>> weight_gradient_by_task(const MultiTaskModel& model,
                                                             const MultiTaskDataset& ds,
                                                             const Subset& subset) {
  require_nonempty(subset, "subset_gradient");
  check_heads(model, ds);
  const MatrixXd w = model.merged();
  std::vector<std::optional<MatrixXd>> out(static_cast<std::size_t>(ds.num_tasks()));
  for (const auto& b : gather(ds, subset)) {
    out[static_cast<std::size_t>(b.task)] =
        block_gradient(b, w, model.heads[b.task], ds.task_weights[b.task], subset.size());
  }
  return out;
}

MatrixXd weight_gradient(const MultiTaskModel& model, const MultiTaskDataset& ds,
                         const Subset& subset) {
  MatrixXd g = MatrixXd::Zero(ds.input_dim(), ds.shared_dim());
  for (const auto& part : weight_gradient_by_task(model, ds, subset)) {
    if (part) g += *part;
  }
  return g;
}

FactorGradients factor_gradients(const LowRankEdit<double>& edit, const MatrixXd& weight_grad) {
  require_same_shape("factor_gradients", edit.w_star, weight_grad);
  return {weight_grad.transpose() * edit.b, weight_grad * edit.a};
}

FactorGradients subset_gradient(const MultiTaskModel& model, const MultiTaskDataset& ds,
                                const Subset& subset) {
  return factor_gradients(model.edit, weight_gradient(model, ds, subset));
}

MultiTaskModel train_reference(const MultiTaskDataset& ds, const Subset& triples,
                               const TrainConfig& cfg) {
  require_nonempty(triples, "train_reference");
  if (cfg.epochs < 0) throw ConfigError("epochs", "must be non-negative");
  if (!(cfg.step_size > 0.0)) throw ConfigError("step_size", "must be positive");
  const auto blocks = gather(ds, triples);
  const std::size_t n = triples.size();
  MatrixXd w = MatrixXd::Zero(ds.input_dim(), ds.shared_dim());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    MatrixXd g = MatrixXd::Zero(w.rows(), w.cols());
    for (const auto& b : blocks) {
      g += block_gradient(b, w, ds.heads[b.task], ds.task_weights[b.task], n);
    }
    if (g.norm() < cfg.grad_tol) break;
    w -= cfg.step_size * g;
    if (!all_finite(w) || !std::isfinite(weighted_loss(blocks, w, ds.heads, ds.task_weights, n))) {
      std::ostringstream os;
      os << "train_reference diverged at epoch " << epoch << " (step_size " << cfg.step_size
         << ")";
      throw StepSizeError(os.str());
    }
  }
  return dense_model(w, ds.heads);
}

VectorXd flatten_params(const MatrixXd& a, const MatrixXd& b) {
  VectorXd theta(a.size() + b.size());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) theta(k++) = a(i, j);
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) theta(k++) = b(i, j);
  return theta;
}

void unflatten_params(const VectorXd& theta, MatrixXd& a, MatrixXd& b) {
  if (theta.size() != a.size() + b.size()) {
    throw DimensionError("unflatten_params: parameter vector has the wrong length");
  }
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = theta(k++);
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) b(i, j) = theta(k++);
}

MatrixXd flattened_hessian(const MultiTaskModel& model, const MultiTaskDataset& ds,
                           const Subset& subset) {
  require_nonempty(subset, "flattened_hessian");
  check_heads(model, ds);
  const auto& e = model.edit;
  const Eigen::Index r = e.rank();
  const Eigen::Index k = e.shared_dim();
  const Eigen::Index d = e.input_dim();
  const Eigen::Index P = r * (k + d);
  if (P > kHessianParamGuard) {
    std::ostringstream os;
    os << "flattened_hessian: " << P << " parameters exceed the dense guard of "
       << kHessianParamGuard << "; reduce rank, d or k";
    throw SizeGuardError(os.str());
  }
  const Eigen::Index off_b = k * r;
  const MatrixXd w = model.merged();
  MatrixXd hess = MatrixXd::Zero(P, P);
  MatrixXd jac(k, P);
  for (const Triple& tr : subset) {
    const VectorXd x = ds.inputs.row(tr.instance).transpose();
    const MatrixXd& head = model.heads[tr.task];
    const double scale = ds.task_weights[tr.task] / static_cast<double>(subset.size());
    const VectorXd bx = e.b.transpose() * x;  // r
    // Jacobian of u = W~^T x: du_j/dA_{jc} = (B^T x)_c, du_j/dB_{ac} = x_a A_{jc}.
    jac.setZero();
    for (Eigen::Index j = 0; j < k; ++j) {
      for (Eigen::Index c = 0; c < r; ++c) jac(j, j * r + c) = bx(c);
      for (Eigen::Index a = 0; a < d; ++a)
        for (Eigen::Index c = 0; c < r; ++c) jac(j, off_b + a * r + c) = x(a) * e.a(j, c);
    }
    hess.noalias() += scale * jac.transpose() * (head.transpose() * head) * jac;
    // Second-order term: u_j is bilinear in (A_{j.}, B), giving
    // d2u_j / dA_{jc} dB_{ac} = x_a, weighted by g = H^T (H u - y).
    const VectorXd resid = head * (w.transpose() * x) - ds.targets[tr.task].row(tr.instance).transpose();
    const VectorXd g = head.transpose() * resid;
    for (Eigen::Index j = 0; j < k; ++j)
      for (Eigen::Index a = 0; a < d; ++a) {
        const double v = scale * g(j) * x(a);
        for (Eigen::Index c = 0; c < r; ++c) {
          hess(j * r + c, off_b + a * r + c) += v;
          hess(off_b + a * r + c, j * r + c) += v;
        }
      }
  }
  return hess;
}

}  // namespace mtu
