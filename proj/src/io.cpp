#include "mtu/io.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace mtu {

json matrix_to_json(const MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

MatrixXd matrix_from_json(const json& j, const std::string& path) {
  const auto rows = require_field<Eigen::Index>(j, "rows", path);
  const auto cols = require_field<Eigen::Index>(j, "cols", path);
  const auto data = require_field<std::vector<double>>(j, "data", path);
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
    throw ConfigError(join_path(path, "data"), "length must equal rows * cols");
  }
  MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = data[k++];
  return m;
}

json gen_config_to_json(const GenConfig& c) {
  return json{{"N", c.num_instances},     {"d", c.input_dim},
              {"K", c.num_tasks},         {"shared_dim", c.shared_dim},
              {"task_dims", c.task_dims}, {"teacher_rank", c.teacher_rank},
              {"noise_std", c.noise_std}, {"seed", c.seed}};
}

GenConfig gen_config_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  GenConfig c;
  c.num_instances = require_field<int>(j, "N", path);
  c.input_dim = require_field<int>(j, "d", path);
  c.num_tasks = require_field<int>(j, "K", path);
  c.shared_dim = optional_field<int>(j, "shared_dim", path, c.shared_dim);
  c.teacher_rank = optional_field<int>(j, "teacher_rank", path, c.teacher_rank);
  c.noise_std = optional_field<double>(j, "noise_std", path, c.noise_std);
  c.seed = optional_field<std::uint64_t>(j, "seed", path, c.seed);
  c.task_dims = optional_field<std::vector<int>>(
      j, "task_dims", path, std::vector<int>(static_cast<std::size_t>(std::max(0, c.num_tasks)), 4));
  return c;
}

json dataset_to_json(const MultiTaskDataset& ds) {
  json targets = json::array();
  json heads = json::array();
  for (int t = 0; t < ds.num_tasks(); ++t) {
    targets.push_back(matrix_to_json(ds.targets[t]));
    heads.push_back(matrix_to_json(ds.heads[t]));
  }
  json triples = json::array();
  for (const auto& tr : ds.triples()) triples.push_back({tr.instance, tr.task});
  return json{{"inputs", matrix_to_json(ds.inputs)},
              {"targets", targets},
              {"heads", heads},
              {"task_weights", ds.task_weights},
              {"teacher", matrix_to_json(ds.teacher)},
              {"triples", triples},
              {"config", gen_config_to_json(ds.config)}};
}

MultiTaskDataset dataset_from_json(const json& j, const std::string& path) {
  MultiTaskDataset ds;
  ds.inputs = matrix_from_json(require_field<json>(j, "inputs", path), join_path(path, "inputs"));
  const auto targets = require_field<json>(j, "targets", path);
  const auto heads = require_field<json>(j, "heads", path);
  if (!targets.is_array() || !heads.is_array() || targets.size() != heads.size()) {
    throw ConfigError(join_path(path, "targets"), "targets and heads must be arrays of equal length");
  }
  for (std::size_t t = 0; t < targets.size(); ++t) {
    ds.targets.push_back(matrix_from_json(targets[t], join_path(path, "targets") + "[" + std::to_string(t) + "]"));
    ds.heads.push_back(matrix_from_json(heads[t], join_path(path, "heads") + "[" + std::to_string(t) + "]"));
  }
  ds.task_weights = require_field<std::vector<double>>(j, "task_weights", path);
  ds.teacher = matrix_from_json(require_field<json>(j, "teacher", path), join_path(path, "teacher"));
  ds.config = gen_config_from_json(require_field<json>(j, "config", path), join_path(path, "config"));
  ds.validate();
  const auto triples = require_field<std::vector<std::array<int, 2>>>(j, "triples", path);
  const auto grid = ds.triples();
  bool complete = triples.size() == grid.size();
  for (std::size_t k = 0; complete && k < grid.size(); ++k) {
    complete = triples[k][0] == grid[k].instance && triples[k][1] == grid[k].task;
  }
  if (!complete) {
    throw ConfigError(join_path(path, "triples"), "must list the complete instance x task grid");
  }
  return ds;
}

json checkpoint_to_json(const Checkpoint& c) {
  json heads = json::array();
  for (const auto& h : c.model.heads) heads.push_back(matrix_to_json(h));
  json subs = json::array();
  for (const auto& s : c.subspaces) {
    subs.push_back({{"task", s.task_id()}, {"basis", matrix_to_json(s.basis())}});
  }
  return json{{"schema_version", kSchemaVersion},
              {"kind", "checkpoint"},
              {"model_id", c.model_id},
              {"w_star", matrix_to_json(c.model.edit.w_star)},
              {"a", matrix_to_json(c.model.edit.a)},
              {"b", matrix_to_json(c.model.edit.b)},
              {"heads", heads},
              {"subspaces", subs},
              {"dataset_digest", c.dataset_digest},
              {"config", c.config}};
}

Checkpoint checkpoint_from_json(const json& j) {
  if (require_field<int>(j, "schema_version", "") != kSchemaVersion) {
    throw ConfigError("schema_version", "unsupported checkpoint version");
  }
  Checkpoint c;
  c.model_id = require_field<std::string>(j, "model_id", "");
  c.model.edit.w_star = matrix_from_json(require_field<json>(j, "w_star", ""), "w_star");
  c.model.edit.a = matrix_from_json(require_field<json>(j, "a", ""), "a");
  c.model.edit.b = matrix_from_json(require_field<json>(j, "b", ""), "b");
  c.model.edit.validate();
  for (const auto& h : require_field<json>(j, "heads", "")) {
    c.model.heads.push_back(matrix_from_json(h, "heads[]"));
  }
  for (const auto& s : require_field<json>(j, "subspaces", "")) {
    c.subspaces.push_back(TaskSubspace<double>::from_orthonormal(
        require_field<int>(s, "task", "subspaces[]"),
        matrix_from_json(require_field<json>(s, "basis", "subspaces[]"), "subspaces[].basis")));
  }
  c.dataset_digest = require_field<std::string>(j, "dataset_digest", "");
  c.config = optional_field<json>(j, "config", "", json::object());
  return c;
}

json report_to_json(const EvalReport& r) {
  json tasks = json::array();
  for (int t = 0; t < r.num_tasks(); ++t) {
    json cells = json::object();
    for (int c = 0; c < kNumCells; ++c) {
      const auto v = r.get(t, static_cast<Cell>(c));
      cells[to_string(static_cast<Cell>(c))] = v ? json(*v) : json(nullptr);
    }
    tasks.push_back({{"task", r.tasks[static_cast<std::size_t>(t)]}, {"cells", cells}});
  }
  return json{{"schema_version", kSchemaVersion}, {"kind", "eval_report"},
              {"metric", r.metric},               {"setting", r.setting},
              {"seed", r.seed},                   {"model_id", r.model_id},
              {"tasks", tasks}};
}

json trace_to_json(const UnlearnTrace& t) {
  json epochs = json::array();
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  for (const auto& e : t.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"forget_loss", e.forget_loss},
                      {"retain_loss", e.retain_loss},
                      {"retain_task_loss", opt(e.retain_task_loss)},
                      {"retain_inst_loss", opt(e.retain_inst_loss)},
                      {"retain_clean_loss", opt(e.retain_clean_loss)},
                      {"mia_auc", e.mia_auc}});
  }
  return json{{"schema_version", kSchemaVersion},
              {"kind", "unlearn_trace"},
              {"selected_epoch", t.selected_epoch},
              {"retrain_auc", t.retrain_auc},
              {"epochs", epochs}};
}

json suite_to_json(const SuiteResult& s) {
  return json{{"name", s.name},         {"passed", s.passed},   {"trials", s.trials},
              {"violations", s.violations}, {"worst", s.worst}, {"detail", s.detail},
              {"columns", s.columns},   {"table", s.table}};
}

void write_trace_csv(std::ostream& os, const UnlearnTrace& t) {
  os << "epoch,forget_loss,retain_loss,retain_task_loss,retain_inst_loss,retain_clean_loss,mia_auc,"
        "selected\n";
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  auto opt = [&](const std::optional<double>& v) {
    if (v) os << *v;
  };
  for (const auto& e : t.epochs) {
    os << e.epoch << ',' << e.forget_loss << ',' << e.retain_loss << ',';
    opt(e.retain_task_loss);
    os << ',';
    opt(e.retain_inst_loss);
    os << ',';
    opt(e.retain_clean_loss);
    os << ',' << e.mia_auc << ',' << (e.epoch == t.selected_epoch ? 1 : 0) << '\n';
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void write_text(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot open " + p.string() + " for writing");
  f << text;
  if (!f) throw Error("failed writing " + p.string());
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw ConfigError(p.string(), "cannot open file");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json read_json(const std::filesystem::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string(), std::string("invalid JSON: ") + e.what());
  }
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest computation failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

std::string file_sha256(const std::filesystem::path& p) { return sha256_hex(read_text(p)); }

}  // namespace mtu
