#include "mtu/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "mtu/rng.hpp"

namespace mtu {

namespace {

constexpr std::uint64_t kAnchorStream = 0x61;
constexpr std::uint64_t kEditStream = 0x62;
constexpr std::uint64_t kSubspaceStream = 0x63;

bool uses_projection(Strategy s) {
  return s != Strategy::neggrad_plus && s != Strategy::without_projection;
}

StageMask mask_for(Strategy s) {
  switch (s) {
    case Strategy::without_task: return StageMask::without(RetainSource::task);
    case Strategy::without_inst: return StageMask::without(RetainSource::inst);
    case Strategy::without_clean: return StageMask::without(RetainSource::clean);
    default: return {};
  }
}

std::optional<double> loss_if_any(const MultiTaskModel& m, const MultiTaskDataset& ds,
                                  const Subset& s) {
  if (s.empty()) return std::nullopt;
  return subset_loss(m, ds, s);
}

EpochRecord measure(int epoch, const MultiTaskModel& m, const MultiTaskDataset& ds,
                    const PartitionSpec& part, const MultiTaskDataset& val,
                    const Subset& retain) {
  EpochRecord r;
  r.epoch = epoch;
  r.forget_loss = subset_loss(m, ds, part.forget);
  r.retain_task_loss = loss_if_any(m, ds, part.retain_task);
  r.retain_inst_loss = loss_if_any(m, ds, part.retain_inst);
  r.retain_clean_loss = loss_if_any(m, ds, part.retain_clean);
  r.retain_loss = retain.empty() ? 0.0 : subset_loss(m, ds, retain);
  r.mia_auc = forget_mia_auc(m, ds, part, val);
  const bool finite = std::isfinite(r.forget_loss) && std::isfinite(r.retain_loss);
  if (!finite) {
    std::ostringstream os;
    os << "unlearning diverged at epoch " << epoch << "; reduce eta1/eta2";
    throw StepSizeError(os.str());
  }
  return r;
}

}  // namespace

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::ours: return "ours";
    case Strategy::neggrad_plus: return "neggrad_plus";
    case Strategy::without_projection: return "wo_projection";
    case Strategy::without_task: return "wo_task";
    case Strategy::without_inst: return "wo_inst";
    case Strategy::without_clean: return "wo_clean";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  for (Strategy s : {Strategy::ours, Strategy::neggrad_plus, Strategy::without_projection,
                     Strategy::without_task, Strategy::without_inst, Strategy::without_clean}) {
    if (name == to_string(s)) return s;
  }
  throw ConfigError("strategy", "unknown strategy '" + name +
                                    "' (ours, neggrad_plus, wo_projection, wo_task, wo_inst, "
                                    "wo_clean)");
}

const char* to_string(Setting s) { return s == Setting::full ? "full" : "partial"; }

void UnlearnConfig::validate() const {
  auto nonneg = [](double v, const char* field) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(field, "must be finite and >= 0");
  };
  nonneg(eta1, "eta1");
  nonneg(eta2, "eta2");
  nonneg(eps, "eps");
  nonneg(reg_weight, "reg_weight");
  nonneg(reg_step, "reg_step");
  nonneg(init_std, "init_std");
  nonneg(anchor_fraction, "anchor_fraction");
  if (anchor_fraction > 1.0) throw ConfigError("anchor_fraction", "must be <= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs", "must be >= 1");
  if (rank < 1) throw ConfigError("rank", "must be >= 1");
  if (subspace_dim < 0 || subspace_dim > rank) {
    throw ConfigError("subspace_dim", "must lie in [0, rank]");
  }
}

double UnlearnConfig::resolved_init_std() const {
  return init_std > 0.0 ? init_std : 0.1 / std::sqrt(static_cast<double>(rank));
}

int UnlearnConfig::resolved_subspace_dim(int num_tasks) const {
  return subspace_dim > 0 ? subspace_dim : default_subspace_dim(rank, num_tasks);
}

RetainSources make_retain_sources(const PartitionSpec& part, double anchor_fraction,
                                  std::uint64_t seed) {
  RetainSources s;
  const auto n_r = static_cast<double>(part.retain_size());
  if (n_r == 0) return s;
  s.subsets[static_cast<std::size_t>(RetainSource::inst)] = part.retain_inst;
  s.subsets[static_cast<std::size_t>(RetainSource::task)] = part.retain_task;
  const auto& clean = part.retain_clean;
  Subset anchor;
  if (!clean.empty() && anchor_fraction > 0.0) {
    if (anchor_fraction >= 1.0) {
      anchor = clean;
    } else {
      const auto count = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::floor(anchor_fraction * static_cast<double>(clean.size()) + 1e-9)));
      std::vector<std::size_t> idx(clean.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      auto rng = substream(seed, kAnchorStream);
      for (std::size_t j = 0; j < count; ++j) {
        const std::size_t pick = j + static_cast<std::size_t>(rng() % (clean.size() - j));
        std::swap(idx[j], idx[pick]);
      }
      idx.resize(count);
      std::sort(idx.begin(), idx.end());
      for (std::size_t i : idx) anchor.push_back(clean[i]);
    }
  }
  s.subsets[static_cast<std::size_t>(RetainSource::clean)] = std::move(anchor);
  s.share[static_cast<std::size_t>(RetainSource::clean)] = static_cast<double>(clean.size()) / n_r;
  s.share[static_cast<std::size_t>(RetainSource::inst)] =
      static_cast<double>(part.retain_inst.size()) / n_r;
  s.share[static_cast<std::size_t>(RetainSource::task)] =
      static_cast<double>(part.retain_task.size()) / n_r;
  return s;
}

TaskFactorGradients source_gradients(const MultiTaskModel& model, const MultiTaskDataset& ds,
                                     const Subset& subset, double scale) {
  TaskFactorGradients out(static_cast<std::size_t>(ds.num_tasks()));
  if (subset.empty()) return out;
  const auto parts = weight_gradient_by_task(model, ds, subset);
  for (std::size_t t = 0; t < parts.size(); ++t) {
    if (!parts[t]) continue;
    auto g = factor_gradients(model.edit, *parts[t]);
    g.a *= scale;
    g.b *= scale;
    out[t] = std::move(g);
  }
  return out;
}

GradientBundle<double> forget_bundle(const TaskFactorGradients& forget,
                                     const std::array<TaskFactorGradients, 3>& retain, int task,
                                     const MatrixXd& projector) {
  GradientBundle<double> bundle;
  const auto& f = forget.at(static_cast<std::size_t>(task));
  if (!f) return bundle;
  bundle.a.forget = MatrixXd(f->a * projector);
  bundle.b.forget = MatrixXd(f->b * projector);
  for (RetainSource s : kRetainOrder) {
    std::optional<MatrixXd> sum_a, sum_b;
    for (const auto& part : retain[static_cast<std::size_t>(s)]) {
      if (!part) continue;
      if (!sum_a) {
        sum_a = part->a;
        sum_b = part->b;
      } else {
        *sum_a += part->a;
        *sum_b += part->b;
      }
    }
    if (!sum_a) continue;
    bundle.a[s] = MatrixXd(*sum_a * projector);
    bundle.b[s] = MatrixXd(*sum_b * projector);
  }
  return bundle;
}

UpdateDirection update_direction(const MultiTaskModel& model, const MultiTaskDataset& ds,
                                 const PartitionSpec& part, const RetainSources& sources,
                                 const SubspaceSet<double>& subspaces, const UnlearnConfig& cfg) {
  const auto& e = model.edit;
  const Eigen::Index r = e.rank();
  const MatrixXd identity = MatrixXd::Identity(r, r);
  const bool project = uses_projection(cfg.strategy);
  if (project && static_cast<int>(subspaces.size()) != ds.num_tasks()) {
    throw DimensionError("update_direction: need one subspace per task");
  }
  auto projector = [&](std::size_t t) -> const MatrixXd& {
    return project ? subspaces[t].projector() : identity;
  };

  UpdateDirection dir{MatrixXd::Zero(e.a.rows(), r), MatrixXd::Zero(e.b.rows(), r),
                      MatrixXd::Zero(e.a.rows(), r), MatrixXd::Zero(e.b.rows(), r)};

  std::array<TaskFactorGradients, 3> retain;
  for (RetainSource s : kRetainOrder) {
    const auto i = static_cast<std::size_t>(s);
    retain[i] = source_gradients(model, ds, sources.subsets[i], sources.share[i]);
    for (std::size_t t = 0; t < retain[i].size(); ++t) {
      if (!retain[i][t]) continue;
      dir.retain_a += retain[i][t]->a * projector(t);
      dir.retain_b += retain[i][t]->b * projector(t);
    }
  }

  const auto forget = source_gradients(model, ds, part.forget, 1.0);
  const StageMask mask = mask_for(cfg.strategy);
  for (int t : part.forget_tasks) {
    const auto bundle = forget_bundle(forget, retain, t, projector(static_cast<std::size_t>(t)));
    if (!bundle.a.forget) continue;
    if (cfg.strategy == Strategy::neggrad_plus) {
      dir.forget_a += *bundle.a.forget;
      dir.forget_b += *bundle.b.forget;
      continue;
    }
    const auto [fa, fb] = sequential_orthogonalize(bundle, cfg.eps, mask);
    dir.forget_a += fa;
    dir.forget_b += fb;
  }
  return dir;
}

UnlearnResult run_unlearning(const MultiTaskModel& original, const MultiTaskDataset& ds,
                             const PartitionSpec& part, const MultiTaskDataset& val,
                             const UnlearnConfig& cfg, double retrain_auc,
                             std::optional<SubspaceSet<double>> subspaces) {
  cfg.validate();
  if (part.forget.empty()) throw EmptySubsetError("run_unlearning: D_f is empty");
  const int K = ds.num_tasks();
  const bool full = part.full_task(K);
  if (cfg.setting == Setting::full && !full) {
    throw ConfigError("setting", "full-task unlearning requires every task to be forgotten");
  }
  if (cfg.setting == Setting::partial && full) {
    throw ConfigError("setting", "partial-task unlearning requires at least one retained task");
  }

  SubspaceSet<double> subs;
  if (subspaces) {
    subs = std::move(*subspaces);
  } else {
    const int s = cfg.resolved_subspace_dim(K);
    subs = init_subspaces<double>(K, cfg.rank, s, default_subspace_mode(cfg.rank, K, s),
                                  cfg.seed ^ kSubspaceStream);
  }

  auto rng = substream(cfg.seed, kEditStream);
  MultiTaskModel current{make_edit<double>(original.merged(), cfg.rank, cfg.resolved_init_std(), rng),
                         original.heads};
  const RetainSources sources = make_retain_sources(part, cfg.anchor_fraction, cfg.seed);
  const Subset retain = part.retain();

  UnlearnResult result;
  result.trace.retrain_auc = retrain_auc;
  result.trace.epochs.push_back(measure(0, current, ds, part, val, retain));
  double best_gap = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto dir = update_direction(current, ds, part, sources, subs, cfg);
    current.edit = apply_update(current.edit, dir.retain_a, dir.retain_b, dir.forget_a,
                                dir.forget_b, cfg.eta1, cfg.eta2);
    if (uses_projection(cfg.strategy)) subs = regularize_step(subs, cfg.reg_weight, cfg.reg_step);
    const auto rec = measure(epoch, current, ds, part, val, retain);
    result.trace.epochs.push_back(rec);
    const double gap = std::abs(rec.mia_auc - retrain_auc);
    if (gap < best_gap) {
      best_gap = gap;
      result.trace.selected_epoch = epoch;
      result.edit = current.edit;
      result.subspaces = subs;
    }
  }
  result.model = dense_model(merge(result.edit), original.heads);
  return result;
}

UnlearnResult strategy_neggrad_plus(const MultiTaskModel& original, const MultiTaskDataset& ds,
                                    const PartitionSpec& part, const MultiTaskDataset& val,
                                    UnlearnConfig cfg, double retrain_auc) {
  cfg.strategy = Strategy::neggrad_plus;
  return run_unlearning(original, ds, part, val, cfg, retrain_auc);
}

}  // namespace mtu
