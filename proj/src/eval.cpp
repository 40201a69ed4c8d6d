#include "mtu/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace mtu {

namespace {

Subset pairs_of(const std::vector<int>& instances, int task) {
  Subset s;
  s.reserve(instances.size());
  for (int i : instances) s.push_back({i, task});
  return s;
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

double mia_auc(const std::vector<double>& member_losses,
               const std::vector<double>& nonmember_losses) {
  if (member_losses.empty() || nonmember_losses.empty()) {
    throw EmptySubsetError("mia_auc: member and nonmember lists must be nonempty");
  }
  // Rank-sum form of Mann-Whitney with midranks for ties. Sorting by loss
  // ascending is sorting by score -loss descending; ranks are assigned so the
  // highest score gets the highest rank.
  struct Entry {
    double score;
    bool member;
  };
  std::vector<Entry> all;
  all.reserve(member_losses.size() + nonmember_losses.size());
  for (double l : member_losses) all.push_back({-l, true});
  for (double l : nonmember_losses) all.push_back({-l, false});
  for (const auto& e : all) {
    if (std::isnan(e.score)) throw DimensionError("mia_auc: NaN loss");
  }
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });
  double member_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t q = i; q < j; ++q)
      if (all[q].member) member_rank_sum += midrank;
    i = j;
  }
  const auto nm = static_cast<double>(member_losses.size());
  const auto nn = static_cast<double>(nonmember_losses.size());
  const double u = member_rank_sum - nm * (nm + 1.0) / 2.0;
  return u / (nm * nn);
}

const char* to_string(Cell c) {
  switch (c) {
    case Cell::ret: return "ret";
    case Cell::unl: return "unl";
    case Cell::val: return "val";
    case Cell::mia: return "mia";
    case Cell::mia_ret: return "mia_ret";
  }
  return "?";
}

Cell parse_cell(const std::string& s) {
  for (int c = 0; c < kNumCells; ++c) {
    if (s == to_string(static_cast<Cell>(c))) return static_cast<Cell>(c);
  }
  throw ConfigError("cell", "unknown cell '" + s + "' (expected ret, unl, val, mia, mia_ret)");
}

int EvalReport::task_index(const std::string& name) const {
  const auto it = std::find(tasks.begin(), tasks.end(), name);
  return it == tasks.end() ? -1 : static_cast<int>(it - tasks.begin());
}

void EvalReport::add_task(std::string name) {
  tasks.push_back(std::move(name));
  cells.emplace_back();
}

std::vector<std::string> default_task_names(int num_tasks) {
  std::vector<std::string> names;
  for (int t = 0; t < num_tasks; ++t) names.push_back("t" + std::to_string(t));
  return names;
}

EvalReport evaluate(const MultiTaskModel& model, const MultiTaskDataset& ds,
                    const PartitionSpec& part, const MultiTaskDataset& val) {
  if (val.num_tasks() != ds.num_tasks() || val.input_dim() != ds.input_dim()) {
    throw DimensionError("evaluate: validation set does not match the training set");
  }
  std::vector<char> forgotten(static_cast<std::size_t>(ds.num_instances()), 0);
  for (int i : part.forget_instances) forgotten[static_cast<std::size_t>(i)] = 1;
  std::vector<int> xf, xr, xv(static_cast<std::size_t>(val.num_instances()));
  for (int i = 0; i < ds.num_instances(); ++i) (forgotten[static_cast<std::size_t>(i)] ? xf : xr).push_back(i);
  std::iota(xv.begin(), xv.end(), 0);

  EvalReport r;
  for (const auto& name : default_task_names(ds.num_tasks())) r.add_task(name);
  for (int t = 0; t < ds.num_tasks(); ++t) {
    const auto lv = pair_losses(model, val, pairs_of(xv, t));
    r.set(t, Cell::val, std::exp(-mean(lv)));
    if (!xr.empty()) {
      const auto lr = pair_losses(model, ds, pairs_of(xr, t));
      r.set(t, Cell::ret, std::exp(-mean(lr)));
      r.set(t, Cell::mia_ret, mia_auc(lr, lv));
    }
    if (!xf.empty()) {
      const auto lf = pair_losses(model, ds, pairs_of(xf, t));
      r.set(t, Cell::unl, std::exp(-mean(lf)));
      r.set(t, Cell::mia, mia_auc(lf, lv));
    }
  }
  return r;
}

double forget_mia_auc(const MultiTaskModel& model, const MultiTaskDataset& ds,
                      const PartitionSpec& part, const MultiTaskDataset& val) {
  if (part.forget_tasks.empty() || part.forget_instances.empty()) {
    throw EmptySubsetError("forget_mia_auc: forget set is empty");
  }
  std::vector<int> xv(static_cast<std::size_t>(val.num_instances()));
  std::iota(xv.begin(), xv.end(), 0);
  double total = 0.0;
  for (int t : part.forget_tasks) {
    total += mia_auc(pair_losses(model, ds, pairs_of(part.forget_instances, t)),
                     pair_losses(model, val, pairs_of(xv, t)));
  }
  return total / static_cast<double>(part.forget_tasks.size());
}

std::vector<double> uis_per_task(const EvalReport& evaluated, const EvalReport& original,
                                 const EvalReport& retrain, const UisSetting& setting) {
  if (evaluated.tasks != original.tasks || evaluated.tasks != retrain.tasks) {
    throw ReferenceError("uis: reports cover different task sets");
  }
  if (evaluated.metric != original.metric || evaluated.metric != retrain.metric) {
    throw ReferenceError("uis: reports use different metrics (" + evaluated.metric + ", " +
                         original.metric + ", " + retrain.metric + ")");
  }
  const int K = evaluated.num_tasks();
  if (K == 0) throw ReferenceError("uis: reports contain no tasks");
  std::vector<char> forgotten(static_cast<std::size_t>(K), 0);
  for (int t : setting.forgotten_tasks) {
    if (t < 0 || t >= K) throw ConfigError("setting", "forgotten task index out of range");
    forgotten[static_cast<std::size_t>(t)] = 1;
  }
  if (setting.forgotten_tasks.empty()) {
    throw ConfigError("setting", "at least one task must be forgotten");
  }
  const bool full = std::all_of(forgotten.begin(), forgotten.end(), [](char c) { return c != 0; });

  std::vector<std::string> missing;
  std::vector<double> per_task(static_cast<std::size_t>(K), 0.0);
  for (int t = 0; t < K; ++t) {
    for (Cell c : kScoredCells) {
      const EvalReport* ref = nullptr;
      if (full) {
        const bool to_retrain = setting.full_reference == FullTaskReference::retrain_all ||
                                c == Cell::unl || c == Cell::mia;
        ref = to_retrain ? &retrain : &original;
      } else {
        ref = forgotten[static_cast<std::size_t>(t)] ? &retrain : &original;
      }
      const auto e = evaluated.get(t, c);
      const auto s = ref->get(t, c);
      const std::string where = evaluated.tasks[static_cast<std::size_t>(t)] + "/" + to_string(c);
      if (!e) missing.push_back("evaluated:" + where);
      if (!s) missing.push_back(std::string(ref == &retrain ? "retrain:" : "original:") + where);
      if (!e || !s) continue;
      if (*s == 0.0) throw ReferenceError("uis: zero reference cell at " + where);
      per_task[static_cast<std::size_t>(t)] += std::abs(*e - *s) / std::abs(*s);
    }
  }
  if (!missing.empty()) {
    std::ostringstream os;
    os << "uis: missing cells:";
    for (const auto& m : missing) os << ' ' << m;
    throw ReferenceError(os.str());
  }
  return per_task;
}

double uis(const EvalReport& evaluated, const EvalReport& original, const EvalReport& retrain,
           const UisSetting& setting) {
  const auto s = uis_per_task(evaluated, original, retrain, setting);
  return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
}

void write_report_csv(std::ostream& os, const EvalReport& r) {
  os << "task,cell,metric,value\n";
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (int t = 0; t < r.num_tasks(); ++t) {
    for (int c = 0; c < kNumCells; ++c) {
      const auto v = r.get(t, static_cast<Cell>(c));
      if (!v) continue;
      const std::string metric = static_cast<Cell>(c) == Cell::mia ||
                                         static_cast<Cell>(c) == Cell::mia_ret
                                     ? "auc"
                                     : r.metric;
      os << r.tasks[static_cast<std::size_t>(t)] << ',' << to_string(static_cast<Cell>(c)) << ','
         << metric << ',' << *v << '\n';
    }
  }
}

EvalReport read_report_csv(std::istream& is) {
  EvalReport r;
  r.metric.clear();
  std::string line;
  int lineno = 0;
  bool header = true;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(trim(field));
    if (header) {
      header = false;
      if (f.size() == 4 && f[0] == "task" && f[1] == "cell") continue;
      throw ConfigError("csv", "expected header 'task,cell,metric,value'");
    }
    if (f.size() != 4) {
      throw ConfigError("csv", "line " + std::to_string(lineno) + ": expected 4 fields");
    }
    const Cell c = parse_cell(f[1]);
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("csv", "line " + std::to_string(lineno) + ": bad value '" + f[3] + "'");
    }
    if (c != Cell::mia && c != Cell::mia_ret) {
      if (r.metric.empty()) r.metric = f[2];
      else if (r.metric != f[2]) {
        throw ConfigError("csv", "line " + std::to_string(lineno) + ": mixed metric names");
      }
    }
    int t = r.task_index(f[0]);
    if (t < 0) {
      r.add_task(f[0]);
      t = r.num_tasks() - 1;
    }
    if (r.get(t, c)) {
      throw ConfigError("csv", "line " + std::to_string(lineno) + ": duplicate cell " + f[0] +
                                   "/" + f[1]);
    }
    r.set(t, c, v);
  }
  if (r.num_tasks() == 0) throw ConfigError("csv", "no rows");
  if (r.metric.empty()) r.metric = "unknown";
  return r;
}

}  // namespace mtu
