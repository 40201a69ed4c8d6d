#include "mtu/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "mtu/theory.hpp"

namespace fs = std::filesystem;

namespace mtu {

namespace {

constexpr const char* kOutEnv = "MTU_OUT_DIR";
constexpr const char* kDefaultOut = "mtu_out";

void reject_unknown(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "config" : path, "expected an object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; })) {
      throw ConfigError(join_path(path, k), "unknown field");
    }
  }
}

Setting parse_setting(const std::string& s, const std::string& field) {
  if (s == "full") return Setting::full;
  if (s == "partial") return Setting::partial;
  throw ConfigError(field, "expected 'full' or 'partial'");
}

FullTaskReference parse_fu_reference(const std::string& s, const std::string& field) {
  if (s == "mixed") return FullTaskReference::mixed;
  if (s == "retrain-all") return FullTaskReference::retrain_all;
  throw ConfigError(field, "expected 'mixed' or 'retrain-all'");
}

const char* to_string(FullTaskReference r) {
  return r == FullTaskReference::mixed ? "mixed" : "retrain-all";
}

std::string setting_label(const ExperimentConfig& c, int num_tasks) {
  if (c.setting == Setting::full) return "full";
  std::string s = "partial:";
  const auto tf = c.resolved_forget_tasks(num_tasks);
  for (std::size_t i = 0; i < tf.size(); ++i) s += (i ? "+t" : "t") + std::to_string(tf[i]);
  return s;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

// Files written by one command, recorded in its manifest.
class ArtifactLog {
 public:
  explicit ArtifactLog(fs::path root) : root_(std::move(root)) {}

  void write(const fs::path& rel, const std::string& text) {
    write_text(root_ / rel, text);
    outputs_.push_back({rel.generic_string(), sha256_hex(text)});
  }
  void input(const fs::path& p) { inputs_.push_back({p.generic_string(), file_sha256(p)}); }

  json manifest(const std::string& command, const json& config, std::uint64_t seed,
                double seconds) const {
    auto list = [](const std::vector<std::pair<std::string, std::string>>& v) {
      json a = json::array();
      for (const auto& [p, d] : v) a.push_back({{"path", p}, {"sha256", d}});
      return a;
    };
    return json{{"schema_version", kSchemaVersion},
                {"kind", "manifest"},
                {"command", command},
                {"config", config},
                {"seed", seed},
                {"inputs", list(inputs_)},
                {"outputs", list(outputs_)},
                {"timing", {{"wall_seconds", seconds}}}};
  }
  const fs::path& root() const { return root_; }

 private:
  fs::path root_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<std::pair<std::string, std::string>> outputs_;
};

std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  write_report_csv(os, r);
  return os.str();
}

json summary_json(const ExperimentConfig& c, const RunOutcome& o, std::uint64_t seed) {
  const auto& tr = o.unlearned.trace;
  const auto& sel = tr.selected();
  return json{{"schema_version", kSchemaVersion},
              {"kind", "run_summary"},
              {"seed", seed},
              {"strategy", to_string(c.unlearn.strategy)},
              {"setting", o.eval_unlearned.setting},
              {"forget_instances", o.part.forget_instances},
              {"forget_tasks", o.part.forget_tasks},
              {"uis", o.uis},
              {"selected_epoch", tr.selected_epoch},
              {"forget_loss_start", tr.epochs.front().forget_loss},
              {"forget_loss_stop", sel.forget_loss},
              {"clean_loss_original", o.clean_loss_original},
              {"clean_loss_stop", sel.retain_clean_loss ? json(*sel.retain_clean_loss) : json(nullptr)},
              {"auc_original", o.original_auc},
              {"auc_stop", sel.mia_auc},
              {"auc_retrain", o.retrain_auc}};
}

// Per-seed row fields shared by the seed sweep and the ratio sweep.
const std::vector<std::string> kRowFields = {"uis",           "selected_epoch",
                                             "forget_loss_start", "forget_loss_stop",
                                             "clean_loss_original", "clean_loss_stop",
                                             "auc_original",  "auc_stop",
                                             "auc_retrain"};

std::vector<double> row_values(const json& summary) {
  std::vector<double> v;
  for (const auto& f : kRowFields) {
    const auto& x = summary.at(f);
    v.push_back(x.is_null() ? std::numeric_limits<double>::quiet_NaN() : x.get<double>());
  }
  return v;
}

struct RunFiles {
  json summary;
};

RunFiles write_run(ArtifactLog& log, const fs::path& prefix, const ExperimentConfig& c,
                   const RunOutcome& o, std::uint64_t seed, const std::string& dataset_digest) {
  const json cfg = experiment_config_to_json(c);
  auto ckpt = [&](const std::string& id, const MultiTaskModel& m, const SubspaceSet<double>& subs) {
    Checkpoint k{id, m, subs, dataset_digest, cfg};
    log.write(prefix / ("checkpoint_" + id + ".json"), dump(checkpoint_to_json(k)));
  };
  ckpt("original", o.original, {});
  ckpt("retrain", o.retrain, {});
  ckpt("unlearned", MultiTaskModel{o.unlearned.edit, o.original.heads}, o.unlearned.subspaces);
  log.write(prefix / "trace.json", dump(trace_to_json(o.unlearned.trace)));
  std::ostringstream trace_csv;
  write_trace_csv(trace_csv, o.unlearned.trace);
  log.write(prefix / "trace.csv", trace_csv.str());
  log.write(prefix / "eval_original.csv", report_csv(o.eval_original));
  log.write(prefix / "eval_retrain.csv", report_csv(o.eval_retrain));
  log.write(prefix / "eval_unlearned.csv", report_csv(o.eval_unlearned));
  log.write(prefix / "eval_unlearned.json", dump(report_to_json(o.eval_unlearned)));
  RunFiles f{summary_json(c, o, seed)};
  log.write(prefix / "summary.json", dump(f.summary));
  return f;
}

fs::path resolve_out(const std::string& flag) {
  if (!flag.empty()) return fs::path(flag);
  if (const char* env = std::getenv(kOutEnv); env && *env) return fs::path(env);
  return fs::path(kDefaultOut);
}

struct LoadedConfig {
  ExperimentConfig config;
  fs::path path;
};

LoadedConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  if (path.empty()) throw ConfigError("--config", "a configuration file is required");
  const fs::path p(path);
  auto cfg = parse_experiment_config(read_json(p), p.parent_path().string());
  if (seed) cfg.seed = *seed;
  cfg.gen.seed = cfg.seed;
  return {cfg, p};
}

DataBundle obtain_data(const ExperimentConfig& cfg, ArtifactLog& log, std::string& digest) {
  if (cfg.dataset_path) {
    const fs::path p(*cfg.dataset_path);
    log.input(p);
    const std::string text = read_text(p);
    digest = sha256_hex(text);
    try {
      return data_bundle_from_json(json::parse(text));
    } catch (const json::parse_error& e) {
      throw ConfigError(p.string(), std::string("invalid JSON: ") + e.what());
    }
  }
  auto data = generate_data(cfg);
  digest = sha256_hex(dump(data_bundle_to_json(data, cfg.seed)));
  return data;
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_generate(const std::string& config_path, const std::optional<std::uint64_t>& seed,
                 const std::string& out_flag, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto loaded = load_config(config_path, seed);
  ArtifactLog log(resolve_out(out_flag));
  log.input(loaded.path);
  const auto data = generate_data(loaded.config);
  log.write("dataset.json", dump(data_bundle_to_json(data, loaded.config.seed)));
  write_text(log.root() / "manifest.json",
             dump(log.manifest("generate", experiment_config_to_json(loaded.config),
                               loaded.config.seed, elapsed_since(t0))));
  out << "wrote " << (log.root() / "dataset.json").string() << " ("
      << data.train.num_instances() * data.train.num_tasks() << " triples)\n";
  return 0;
}

int cmd_run(const std::string& config_path, const std::optional<std::uint64_t>& seed,
            const std::string& out_flag, const std::string& strategy, int seeds,
            const std::string& fu_reference, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  auto loaded = load_config(config_path, seed);
  auto& cfg = loaded.config;
  if (!strategy.empty()) cfg.unlearn.strategy = parse_strategy(strategy);
  if (!fu_reference.empty()) cfg.fu_reference = parse_fu_reference(fu_reference, "--fu-reference");
  if (seeds < 1) throw ConfigError("--seeds", "must be >= 1");
  if (seeds > 1 && cfg.dataset_path) {
    throw ConfigError("--seeds", "a seed sweep regenerates data per seed; drop the dataset path");
  }
  ArtifactLog log(resolve_out(out_flag));
  log.input(loaded.path);

  if (seeds == 1) {
    std::string digest;
    const auto data = obtain_data(cfg, log, digest);
    const auto outcome = run_experiment(cfg, data);
    const auto files = write_run(log, "", cfg, outcome, cfg.seed, digest);
    write_text(log.root() / "manifest.json",
               dump(log.manifest("run", experiment_config_to_json(cfg), cfg.seed, elapsed_since(t0))));
    out << "uis " << std::fixed << std::setprecision(1) << 100.0 * outcome.uis << "%"
        << " selected_epoch " << outcome.unlearned.trace.selected_epoch << "\n";
    return 0;
  }

  std::ostringstream per_seed;
  per_seed << "seed";
  for (const auto& f : kRowFields) per_seed << ',' << f;
  per_seed << '\n';
  std::vector<std::vector<double>> rows;
  for (int k = 0; k < seeds; ++k) {
    ExperimentConfig c = cfg;
    c.seed = cfg.seed + static_cast<std::uint64_t>(k);
    c.gen.seed = c.seed;
    std::string digest;
    const auto data = obtain_data(c, log, digest);
    const auto outcome = run_experiment(c, data);
    const auto files = write_run(log, "seed_" + std::to_string(c.seed), c, outcome, c.seed, digest);
    const auto v = row_values(files.summary);
    rows.push_back(v);
    per_seed << c.seed;
    for (double x : v) per_seed << ',' << format_double(x);
    per_seed << '\n';
  }
  std::ostringstream summary;
  summary << "field,mean,std\n";
  for (std::size_t f = 0; f < kRowFields.size(); ++f) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r[f];
    mean /= static_cast<double>(rows.size());
    double var = 0.0;
    for (const auto& r : rows) var += (r[f] - mean) * (r[f] - mean);
    // Sample standard deviation (n - 1).
    const double sd = std::sqrt(var / static_cast<double>(rows.size() - 1));
    summary << kRowFields[f] << ',' << format_double(mean) << ',' << format_double(sd) << '\n';
  }
  log.write("seeds.csv", per_seed.str());
  log.write("seeds_summary.csv", summary.str());
  write_text(log.root() / "manifest.json",
             dump(log.manifest("run", experiment_config_to_json(cfg), cfg.seed, elapsed_since(t0))));
  out << "ran " << seeds << " seeds; per-seed rows in " << (log.root() / "seeds.csv").string()
      << "\n";
  return 0;
}

int cmd_verify(const std::optional<std::uint64_t>& seed, const std::string& out_flag,
               const std::string& fault, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  VerifyOptions opt;
  opt.seed = seed.value_or(0);
  if (!fault.empty()) {
    if (fault != "sign-flip") throw ConfigError("--inject-fault", "only 'sign-flip' is supported");
    opt.orthogonalize = orthogonalize_sign_flipped;
  }
  const auto suites = verify_all(opt);
  bool ok = true;
  json arr = json::array();
  for (const auto& s : suites) {
    ok = ok && s.passed;
    out << (s.passed ? "PASS " : "FAIL ") << s.name << ": " << s.detail << "\n";
    arr.push_back(suite_to_json(s));
  }
  ArtifactLog log(resolve_out(out_flag));
  log.write("verify.json", dump(json{{"schema_version", kSchemaVersion},
                                     {"kind", "verify_report"},
                                     {"seed", opt.seed},
                                     {"fault", fault.empty() ? json(nullptr) : json(fault)},
                                     {"passed", ok},
                                     {"suites", arr}}));
  write_text(log.root() / "manifest.json",
             dump(log.manifest("verify", json{{"seed", opt.seed}, {"fault", fault}}, opt.seed,
                               elapsed_since(t0))));
  return ok ? 0 : 3;
}

EvalReport load_report(const std::string& path) {
  std::istringstream is(read_text(path));
  return read_report_csv(is);
}

int cmd_uis(const std::string& evaluated, const std::string& original, const std::string& retrain,
            const std::string& setting, const std::string& fu_reference, std::ostream& out) {
  const auto e = load_report(evaluated);
  const auto o = load_report(original);
  const auto r = load_report(retrain);
  UisSetting s;
  if (!fu_reference.empty()) s.full_reference = parse_fu_reference(fu_reference, "--fu-reference");
  if (setting == "full") {
    for (int t = 0; t < e.num_tasks(); ++t) s.forgotten_tasks.push_back(t);
  } else if (setting.rfind("partial:", 0) == 0) {
    std::stringstream names(setting.substr(8));
    std::string name;
    while (std::getline(names, name, '+')) {
      const int t = e.task_index(name);
      if (t < 0) throw ConfigError("--setting", "unknown task '" + name + "'");
      s.forgotten_tasks.push_back(t);
    }
    if (s.forgotten_tasks.empty() || static_cast<int>(s.forgotten_tasks.size()) == e.num_tasks()) {
      throw ConfigError("--setting", "partial setting must name a proper subset of tasks");
    }
  } else {
    throw ConfigError("--setting", "expected 'full' or 'partial:<task>[+<task>...]'");
  }
  out << std::fixed << std::setprecision(1) << 100.0 * uis(e, o, r, s) << "%\n";
  return 0;
}

std::vector<double> parse_ratios(const std::string& text, std::ostream& err) {
  std::vector<double> ratios;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("--ratios", "bad value '" + item + "'");
    }
    if (!(v > 0.0 && v < 1.0)) throw ConfigError("--ratios", "values must lie in (0, 1)");
    if (std::find(ratios.begin(), ratios.end(), v) != ratios.end()) {
      err << "warning: duplicate ratio " << item << " ignored\n";
      continue;
    }
    ratios.push_back(v);
  }
  if (ratios.empty()) throw ConfigError("--ratios", "no ratios given");
  return ratios;
}

int cmd_sweep(const std::string& config_path, const std::optional<std::uint64_t>& seed,
              const std::string& out_flag, const std::string& ratios_text,
              const std::string& strategy, std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  auto loaded = load_config(config_path, seed);
  auto& cfg = loaded.config;
  if (!strategy.empty()) cfg.unlearn.strategy = parse_strategy(strategy);
  const auto ratios = parse_ratios(ratios_text, err);
  ArtifactLog log(resolve_out(out_flag));
  log.input(loaded.path);
  std::string digest;
  const auto data = obtain_data(cfg, log, digest);
  std::ostringstream csv;
  csv << "ratio,forget_count";
  for (const auto& f : kRowFields) csv << ',' << f;
  csv << '\n';
  for (double ratio : ratios) {
    ExperimentConfig c = cfg;
    c.forget_ratio = ratio;
    const auto outcome = run_experiment(c, data);
    std::ostringstream dir;
    dir << "ratio_" << ratio;
    const auto files = write_run(log, dir.str(), c, outcome, c.seed, digest);
    csv << dir.str().substr(6) << ',' << outcome.part.forget_instances.size();
    for (double x : row_values(files.summary)) csv << ',' << format_double(x);
    csv << '\n';
  }
  log.write("sweep.csv", csv.str());
  write_text(log.root() / "manifest.json",
             dump(log.manifest("sweep", experiment_config_to_json(cfg), cfg.seed, elapsed_since(t0))));
  out << "swept " << ratios.size() << " ratios; table in " << (log.root() / "sweep.csv").string()
      << "\n";
  return 0;
}

}  // namespace

std::vector<int> ExperimentConfig::resolved_forget_tasks(int num_tasks) const {
  if (setting == Setting::full) {
    std::vector<int> all(static_cast<std::size_t>(num_tasks));
    for (int t = 0; t < num_tasks; ++t) all[static_cast<std::size_t>(t)] = t;
    return all;
  }
  return forget_tasks;
}

ExperimentConfig parse_experiment_config(const json& j, const std::string& base_dir) {
  reject_unknown(j, "", {"schema_version", "seed", "data", "dataset", "split", "train", "unlearn", "uis"});
  const int version = optional_field<int>(j, "schema_version", "", kSchemaVersion);
  if (version != kSchemaVersion) throw ConfigError("schema_version", "unsupported version");
  ExperimentConfig c;
  c.seed = optional_field<std::uint64_t>(j, "seed", "", 0);

  const json data = require_field<json>(j, "data", "");
  reject_unknown(data, "data", {"N", "d", "K", "shared_dim", "task_dims", "teacher_rank", "noise_std", "val_count"});
  json gen = data;
  gen.erase("val_count");
  c.gen = gen_config_from_json(gen, "data");
  c.gen.seed = c.seed;
  c.gen.validate();
  c.val_count = optional_field<int>(data, "val_count", "data", 0);
  if (c.val_count < 0) throw ConfigError("data.val_count", "must be >= 0");

  if (j.contains("dataset")) {
    fs::path p(require_field<std::string>(j, "dataset", ""));
    if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
    c.dataset_path = p.string();
  }

  const json split = optional_field<json>(j, "split", "", json::object());
  reject_unknown(split, "split", {"forget_ratio", "setting", "forget_tasks"});
  c.forget_ratio = optional_field<double>(split, "forget_ratio", "split", c.forget_ratio);
  if (!(c.forget_ratio > 0.0 && c.forget_ratio < 1.0)) {
    throw ConfigError("split.forget_ratio", "must lie in (0, 1)");
  }
  c.setting = parse_setting(optional_field<std::string>(split, "setting", "split", "partial"),
                            "split.setting");
  c.forget_tasks = optional_field<std::vector<int>>(split, "forget_tasks", "split", c.forget_tasks);
  if (c.setting == Setting::partial) {
    std::set<int> uniq(c.forget_tasks.begin(), c.forget_tasks.end());
    if (uniq.empty() || static_cast<int>(uniq.size()) >= c.gen.num_tasks ||
        *uniq.begin() < 0 || *uniq.rbegin() >= c.gen.num_tasks) {
      throw ConfigError("split.forget_tasks", "partial setting needs a nonempty proper subset of [0, K)");
    }
  }

  const json train = optional_field<json>(j, "train", "", json::object());
  reject_unknown(train, "train", {"epochs", "step_size"});
  c.train.epochs = optional_field<int>(train, "epochs", "train", c.train.epochs);
  c.train.step_size = optional_field<double>(train, "step_size", "train", c.train.step_size);

  const json u = optional_field<json>(j, "unlearn", "", json::object());
  reject_unknown(u, "unlearn", {"eta1", "eta2", "eps", "max_epochs", "rank", "subspace_dim", "reg_weight",
                                "reg_step", "init_std", "strategy", "anchor_fraction"});
  auto& uc = c.unlearn;
  uc.eta1 = optional_field<double>(u, "eta1", "unlearn", uc.eta1);
  uc.eta2 = optional_field<double>(u, "eta2", "unlearn", uc.eta2);
  uc.eps = optional_field<double>(u, "eps", "unlearn", uc.eps);
  uc.max_epochs = optional_field<int>(u, "max_epochs", "unlearn", uc.max_epochs);
  uc.rank = optional_field<int>(u, "rank", "unlearn", uc.rank);
  uc.subspace_dim = optional_field<int>(u, "subspace_dim", "unlearn", uc.subspace_dim);
  uc.reg_weight = optional_field<double>(u, "reg_weight", "unlearn", uc.reg_weight);
  uc.reg_step = optional_field<double>(u, "reg_step", "unlearn", uc.reg_step);
  uc.init_std = optional_field<double>(u, "init_std", "unlearn", uc.init_std);
  uc.anchor_fraction = optional_field<double>(u, "anchor_fraction", "unlearn", uc.anchor_fraction);
  uc.strategy = parse_strategy(optional_field<std::string>(u, "strategy", "unlearn", "ours"));
  try {
    uc.validate();
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    if (const auto prefix = e.field() + ": "; !e.field().empty() && msg.rfind(prefix, 0) == 0) {
      msg.erase(0, prefix.size());
    }
    throw ConfigError("unlearn." + e.field(), msg);
  }

  const json s = optional_field<json>(j, "uis", "", json::object());
  reject_unknown(s, "uis", {"full_reference"});
  c.fu_reference = parse_fu_reference(optional_field<std::string>(s, "full_reference", "uis", "mixed"),
                                      "uis.full_reference");
  return c;
}

json experiment_config_to_json(const ExperimentConfig& c) {
  json data = gen_config_to_json(c.gen);
  data.erase("seed");
  data["val_count"] = c.resolved_val_count();
  const auto& u = c.unlearn;
  json j{{"schema_version", kSchemaVersion},
         {"seed", c.seed},
         {"data", data},
         {"split",
          {{"forget_ratio", c.forget_ratio},
           {"setting", to_string(c.setting)},
           {"forget_tasks", c.resolved_forget_tasks(c.gen.num_tasks)}}},
         {"train", {{"epochs", c.train.epochs}, {"step_size", c.train.step_size}}},
         {"unlearn",
          {{"eta1", u.eta1},
           {"eta2", u.eta2},
           {"eps", u.eps},
           {"max_epochs", u.max_epochs},
           {"rank", u.rank},
           {"subspace_dim", u.resolved_subspace_dim(c.gen.num_tasks)},
           {"reg_weight", u.reg_weight},
           {"reg_step", u.reg_step},
           {"init_std", u.resolved_init_std()},
           {"strategy", to_string(u.strategy)},
           {"anchor_fraction", u.anchor_fraction}}},
         {"uis", {{"full_reference", to_string(c.fu_reference)}}}};
  if (c.dataset_path) j["dataset"] = *c.dataset_path;
  return j;
}

DataBundle generate_data(const ExperimentConfig& c) {
  GenConfig g = c.gen;
  g.seed = c.seed;
  return {generate_synthetic(g), generate_validation(g, c.resolved_val_count())};
}

json data_bundle_to_json(const DataBundle& d, std::uint64_t seed) {
  return json{{"schema_version", kSchemaVersion},
              {"kind", "dataset"},
              {"seed", seed},
              {"train", dataset_to_json(d.train)},
              {"validation", dataset_to_json(d.val)}};
}

DataBundle data_bundle_from_json(const json& j) {
  if (require_field<int>(j, "schema_version", "") != kSchemaVersion) {
    throw ConfigError("schema_version", "unsupported dataset version");
  }
  if (require_field<std::string>(j, "kind", "") != "dataset") {
    throw ConfigError("kind", "expected a dataset document");
  }
  DataBundle d{dataset_from_json(require_field<json>(j, "train", ""), "train"),
               dataset_from_json(require_field<json>(j, "validation", ""), "validation")};
  if (d.val.num_tasks() != d.train.num_tasks() || d.val.input_dim() != d.train.input_dim()) {
    throw ConfigError("validation", "does not match the training set's shape");
  }
  return d;
}

RunOutcome run_experiment(const ExperimentConfig& c, const DataBundle& data) {
  const auto& ds = data.train;
  const int K = ds.num_tasks();
  RunOutcome o;
  o.part = partition(ds, sample_forget_instances(ds.num_instances(), c.forget_ratio, c.seed),
                     c.resolved_forget_tasks(K));
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  o.original = train_reference(ds, ds.triples(), tc);
  o.retrain = train_reference(ds, o.part.retain(), tc);
  o.original_auc = forget_mia_auc(o.original, ds, o.part, data.val);
  o.retrain_auc = forget_mia_auc(o.retrain, ds, o.part, data.val);
  o.clean_loss_original =
      o.part.retain_clean.empty() ? 0.0 : subset_loss(o.original, ds, o.part.retain_clean);

  UnlearnConfig uc = c.unlearn;
  uc.seed = c.seed;
  uc.setting = c.setting;
  o.unlearned = run_unlearning(o.original, ds, o.part, data.val, uc, o.retrain_auc);

  const std::string label = setting_label(c, K);
  auto eval = [&](const MultiTaskModel& m, const std::string& id) {
    auto r = evaluate(m, ds, o.part, data.val);
    r.setting = label;
    r.seed = c.seed;
    r.model_id = id;
    return r;
  };
  o.eval_original = eval(o.original, "original");
  o.eval_retrain = eval(o.retrain, "retrain");
  o.eval_unlearned = eval(o.unlearned.model, std::string("unlearned:") + to_string(uc.strategy));
  UisSetting us{o.part.forget_tasks, c.fu_reference};
  o.uis = uis(o.eval_unlearned, o.eval_original, o.eval_retrain, us);
  return o;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Interference-aware multi-task unlearning on a low-rank edit", "mtu"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "mtu 1.0");

  std::string config, out_dir, strategy, ratios, fu_reference, fault, setting = "full";
  std::string evaluated_csv, original_csv, retrain_csv;
  std::optional<std::uint64_t> seed;
  int seeds = 1;

  auto* gen = app.add_subcommand("generate", "Generate a synthetic dataset");
  gen->add_option("--config", config, "Experiment config (JSON)")->required();
  gen->add_option("--seed", seed, "Override the config seed");
  gen->add_option("--out", out_dir, std::string("Output directory (default $") + kOutEnv + " or " + kDefaultOut + ")");

  auto* run = app.add_subcommand("run", "Train references, unlearn, evaluate");
  run->add_option("--config", config, "Experiment config (JSON)")->required();
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--strategy", strategy,
                  "ours | neggrad_plus | wo_projection | wo_task | wo_inst | wo_clean");
  run->add_option("--seeds", seeds, "Run this many consecutive seeds and summarize (e.g. 10)");
  run->add_option("--fu-reference", fu_reference, "Full-task UIS references: mixed | retrain-all");

  auto* verify = app.add_subcommand("verify", "Run the theorem verification suites");
  verify->add_option("--seed", seed, "Seed for the generated instances");
  verify->add_option("--out", out_dir, "Output directory");
  verify->add_option("--inject-fault", fault, "Mutation check: sign-flip")->group("");

  auto* uis_cmd = app.add_subcommand("uis", "Unlearning Impact Score from three report CSVs");
  uis_cmd->add_option("evaluated", evaluated_csv, "Evaluated model cells")->required();
  uis_cmd->add_option("original", original_csv, "Original reference cells")->required();
  uis_cmd->add_option("retrain", retrain_csv, "Retrain reference cells")->required();
  uis_cmd->add_option("--setting", setting, "full | partial:<task>[+<task>...]");
  uis_cmd->add_option("--fu-reference", fu_reference, "mixed | retrain-all");

  auto* sweep = app.add_subcommand("sweep", "Repeat run over forget ratios");
  sweep->add_option("--config", config, "Experiment config (JSON)")->required();
  sweep->add_option("--seed", seed, "Override the config seed");
  sweep->add_option("--out", out_dir, "Output directory");
  sweep->add_option("--ratios", ratios, "Comma-separated forget ratios in (0,1)")->required();
  sweep->add_option("--strategy", strategy, "Unlearning strategy");

  std::vector<std::string> argv_store{"mtu"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_generate(config, seed, out_dir, out);
    if (run->parsed()) return cmd_run(config, seed, out_dir, strategy, seeds, fu_reference, out);
    if (verify->parsed()) return cmd_verify(seed, out_dir, fault, out);
    if (uis_cmd->parsed()) {
      return cmd_uis(evaluated_csv, original_csv, retrain_csv, setting, fu_reference, out);
    }
    if (sweep->parsed()) return cmd_sweep(config, seed, out_dir, ratios, strategy, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}

}  // namespace mtu
