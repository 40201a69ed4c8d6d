#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mtu/cli.hpp"

using namespace mtu;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  fs::path p = fs::temp_directory_path() / "mtu_tests" / (std::string(info->test_suite_name()) + "_" + info->name());
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "config.json") {
  write_text(dir / name, j.dump());
  return dir / name;
}

json small_config(std::uint64_t seed = 1) {
  return json{{"seed", seed},
              {"data", {{"N", 40}, {"d", 8}, {"K", 3}, {"shared_dim", 6}}},
              {"train", {{"epochs", 100}}},
              {"unlearn", {{"max_epochs", 4}}}};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::istringstream is(read_text(p));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string x;
    while (std::getline(ss, x, ',')) f.push_back(x);
    rows.push_back(f);
  }
  return rows;
}

void expect_manifest_verifies(const fs::path& dir) {
  const json m = read_json(dir / "manifest.json");
  EXPECT_EQ(m.at("schema_version"), kSchemaVersion);
  ASSERT_FALSE(m.at("outputs").empty());
  for (const auto& o : m.at("outputs")) {
    const fs::path p = dir / o.at("path").get<std::string>();
    ASSERT_TRUE(fs::exists(p)) << p;
    EXPECT_EQ(file_sha256(p), o.at("sha256").get<std::string>()) << p;
  }
}

}  // namespace

TEST(Config, DefaultsResolve) {
  const auto c = parse_experiment_config(json{{"data", {{"N", 200}, {"d", 16}, {"K", 3}}}});
  EXPECT_EQ(c.resolved_val_count(), 200);
  EXPECT_EQ(c.setting, Setting::partial);
  EXPECT_EQ(c.resolved_forget_tasks(3), (std::vector<int>{0}));
  const json j = experiment_config_to_json(c);
  EXPECT_EQ(j.at("unlearn").at("subspace_dim"), 2);
  EXPECT_EQ(j.at("split").at("setting"), "partial");
  // The resolved form parses back to the same thing.
  EXPECT_EQ(experiment_config_to_json(parse_experiment_config(j)), j);
}

TEST(Config, ErrorsNameTheField) {
  auto expect_field = [](const json& j, const std::string& field) {
    try {
      parse_experiment_config(j);
      ADD_FAILURE() << "accepted " << j.dump();
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.field(), field) << e.what();
    }
  };
  expect_field(json{{"seed", 1}}, "data");
  expect_field(json{{"data", {{"N", 10}, {"d", 4}}}}, "data.K");
  expect_field(json{{"data", {{"N", "ten"}, {"d", 4}, {"K", 2}}}}, "data.N");
  expect_field(json{{"data", {{"N", 10}, {"d", 4}, {"K", 2}}}, {"extra", 1}}, "extra");
  expect_field(json{{"data", {{"N", 10}, {"d", 4}, {"K", 2}}}, {"unlearn", {{"eta1", -1.0}}}}, "unlearn.eta1");
  expect_field(json{{"data", {{"N", 10}, {"d", 4}, {"K", 2}}}, {"split", {{"forget_ratio", 1.5}}}},
               "split.forget_ratio");
  expect_field(json{{"data", {{"N", 10}, {"d", 4}, {"K", 2}}}, {"split", {{"forget_tasks", {0, 1}}}}},
               "split.forget_tasks");
  expect_field(json{{"data", {{"N", 10}, {"d", 4}, {"K", 2}}}, {"uis", {{"full_reference", "x"}}}},
               "uis.full_reference");
  expect_field(json{{"schema_version", 2}, {"data", {{"N", 10}, {"d", 4}, {"K", 2}}}}, "schema_version");
}

TEST(Cli, GenerateIsDeterministic) {
  const auto dir = scratch();
  const auto cfg = write_config(dir, small_config());
  ASSERT_EQ(cli({"generate", "--config", cfg.string(), "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(cli({"generate", "--config", cfg.string(), "--out", (dir / "b").string()}).code, 0);
  EXPECT_EQ(file_sha256(dir / "a" / "dataset.json"), file_sha256(dir / "b" / "dataset.json"));
  const auto data = data_bundle_from_json(read_json(dir / "a" / "dataset.json"));
  EXPECT_EQ(data.train.triples().size(), 120u);
  expect_manifest_verifies(dir / "a");
  ASSERT_EQ(cli({"generate", "--config", cfg.string(), "--seed", "2", "--out", (dir / "c").string()}).code, 0);
  EXPECT_NE(file_sha256(dir / "a" / "dataset.json"), file_sha256(dir / "c" / "dataset.json"));
}

TEST(Cli, MissingFieldExitsTwo) {
  const auto dir = scratch();
  const auto cfg = write_config(dir, json{{"data", {{"N", 10}, {"d", 4}}}});
  const auto r = cli({"generate", "--config", cfg.string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("data.K"), std::string::npos) << r.err;
  EXPECT_EQ(cli({"bogus"}).code, 2);
  EXPECT_EQ(cli({"run", "--config", (dir / "absent.json").string()}).code, 2);
}

TEST(Cli, RunWritesArtifactsAndLoadsDataset) {
  const auto dir = scratch();
  json j = small_config();
  const auto cfg = write_config(dir, j);
  ASSERT_EQ(cli({"run", "--config", cfg.string(), "--out", (dir / "r").string()}).code, 0);
  for (const char* f : {"checkpoint_original.json", "checkpoint_retrain.json", "checkpoint_unlearned.json",
                        "trace.json", "trace.csv", "eval_original.csv", "eval_retrain.csv",
                        "eval_unlearned.csv", "summary.json"}) {
    EXPECT_TRUE(fs::exists(dir / "r" / f)) << f;
  }
  expect_manifest_verifies(dir / "r");
  const auto ck = checkpoint_from_json(read_json(dir / "r" / "checkpoint_unlearned.json"));
  EXPECT_EQ(ck.subspaces.size(), 3u);
  EXPECT_EQ(dump(checkpoint_to_json(ck)), read_text(dir / "r" / "checkpoint_unlearned.json"));

  // Same experiment from a pre-generated dataset, referenced relative to the config.
  ASSERT_EQ(cli({"generate", "--config", cfg.string(), "--out", (dir / "g").string()}).code, 0);
  j["dataset"] = "g/dataset.json";
  const auto cfg2 = write_config(dir, j, "with_data.json");
  ASSERT_EQ(cli({"run", "--config", cfg2.string(), "--out", (dir / "r2").string()}).code, 0);
  EXPECT_EQ(read_text(dir / "r" / "eval_unlearned.csv"), read_text(dir / "r2" / "eval_unlearned.csv"));
}

TEST(Cli, OutputDirectoryFromEnvironment) {
  const auto dir = scratch();
  const auto cfg = write_config(dir, small_config());
  ::setenv("MTU_OUT_DIR", (dir / "env").c_str(), 1);
  const auto r = cli({"generate", "--config", cfg.string()});
  ::unsetenv("MTU_OUT_DIR");
  ASSERT_EQ(r.code, 0);
  EXPECT_TRUE(fs::exists(dir / "env" / "dataset.json"));
}

TEST(Cli, RunIsDeterministic) {
  const auto dir = scratch();
  const auto cfg = write_config(dir, small_config(5));
  ASSERT_EQ(cli({"run", "--config", cfg.string(), "--out", (dir / "a").string()}).code, 0);
  ASSERT_EQ(cli({"run", "--config", cfg.string(), "--out", (dir / "b").string()}).code, 0);
  const json ma = read_json(dir / "a" / "manifest.json");
  const json mb = read_json(dir / "b" / "manifest.json");
  EXPECT_EQ(ma.at("outputs"), mb.at("outputs"));
}

// Partial setting with T_f = {2}: task 2 is compared with Retrain, tasks 0 and
// 1 with Original, on every cell.
TEST(Cli, PartialReferenceAssignment) {
  const auto dir = scratch();
  json j = small_config(3);
  j["split"] = {{"setting", "partial"}, {"forget_tasks", {2}}};
  const auto cfg = write_config(dir, j);
  ASSERT_EQ(cli({"run", "--config", cfg.string(), "--out", (dir / "r").string()}).code, 0);
  std::map<std::pair<std::string, std::string>, double> e, o, r;
  for (auto [path, dst] : {std::pair{"eval_unlearned.csv", &e}, {"eval_original.csv", &o},
                           {"eval_retrain.csv", &r}}) {
    const auto rows = read_csv(dir / "r" / path);
    for (std::size_t i = 1; i < rows.size(); ++i) (*dst)[{rows[i][0], rows[i][1]}] = std::stod(rows[i][3]);
  }
  double total = 0.0;
  for (const std::string t : {"t0", "t1", "t2"}) {
    const auto& ref = t == "t2" ? r : o;
    for (const std::string c : {"ret", "unl", "val", "mia"}) {
      total += std::abs(e.at({t, c}) - ref.at({t, c})) / ref.at({t, c});
    }
  }
  const json s = read_json(dir / "r" / "summary.json");
  EXPECT_NEAR(s.at("uis").get<double>(), total / 3.0, 1e-12);
  EXPECT_EQ(s.at("forget_tasks"), json({2}));

  const auto u = cli({"uis", (dir / "r" / "eval_unlearned.csv").string(),
                      (dir / "r" / "eval_original.csv").string(), (dir / "r" / "eval_retrain.csv").string(),
                      "--setting", "partial:t2"});
  ASSERT_EQ(u.code, 0) << u.err;
  std::ostringstream want;
  want << std::fixed << std::setprecision(1) << 100.0 * total / 3.0 << "%\n";
  EXPECT_EQ(u.out, want.str());
}

TEST(Cli, FullTaskRun) {
  const auto dir = scratch();
  json j = small_config(4);
  j["split"] = {{"setting", "full"}};
  const auto cfg = write_config(dir, j);
  ASSERT_EQ(cli({"run", "--config", cfg.string(), "--out", (dir / "m").string()}).code, 0);
  ASSERT_EQ(cli({"run", "--config", cfg.string(), "--out", (dir / "a").string(), "--fu-reference",
                 "retrain-all"}).code, 0);
  const json sm = read_json(dir / "m" / "summary.json");
  const json sa = read_json(dir / "a" / "summary.json");
  EXPECT_EQ(sm.at("setting"), "full");
  EXPECT_EQ(sm.at("forget_tasks"), json({0, 1, 2}));
  EXPECT_NE(sm.at("uis"), sa.at("uis"));
}

TEST(Cli, SeedSweepAggregates) {
  const auto dir = scratch();
  const auto cfg = write_config(dir, small_config(10));
  ASSERT_EQ(cli({"run", "--config", cfg.string(), "--out", dir.string(), "--seeds", "3"}).code, 0);
  const auto rows = read_csv(dir / "seeds.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[1][0], "10");
  EXPECT_EQ(rows[3][0], "12");
  EXPECT_TRUE(fs::exists(dir / "seed_11" / "summary.json"));
  const auto summary = read_csv(dir / "seeds_summary.csv");
  for (std::size_t col = 1; col < rows[0].size(); ++col) {
    double mean = 0.0;
    for (int i = 1; i <= 3; ++i) mean += std::stod(rows[i][col]) / 3.0;
    double var = 0.0;
    for (int i = 1; i <= 3; ++i) var += std::pow(std::stod(rows[i][col]) - mean, 2) / 2.0;
    ASSERT_EQ(summary[col][0], rows[0][col]);
    EXPECT_NEAR(std::stod(summary[col][1]), mean, 1e-12 * std::max(1.0, std::abs(mean)));
    EXPECT_NEAR(std::stod(summary[col][2]), std::sqrt(var), 1e-9);
  }
  // seed_11 matches a standalone run with --seed 11.
  ASSERT_EQ(cli({"run", "--config", cfg.string(), "--out", (dir / "single").string(), "--seed", "11"}).code, 0);
  EXPECT_EQ(read_text(dir / "single" / "eval_unlearned.csv"), read_text(dir / "seed_11" / "eval_unlearned.csv"));
}

TEST(Cli, SweepRatios) {
  const auto dir = scratch();
  const auto cfg = write_config(dir, small_config(2));
  const auto r = cli({"sweep", "--config", cfg.string(), "--out", (dir / "s").string(), "--ratios",
                      "0.1,0.3,0.5,0.3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("duplicate"), std::string::npos);
  const auto rows = read_csv(dir / "s" / "sweep.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[1][1], "4");
  EXPECT_EQ(rows[2][1], "12");
  EXPECT_EQ(rows[3][1], "20");

  // A single-ratio sweep reproduces cmd_run.
  ASSERT_EQ(cli({"sweep", "--config", cfg.string(), "--out", (dir / "one").string(), "--ratios", "0.1"}).code, 0);
  ASSERT_EQ(cli({"run", "--config", cfg.string(), "--out", (dir / "run").string()}).code, 0);
  EXPECT_EQ(read_text(dir / "one" / "ratio_0.1" / "eval_unlearned.csv"),
            read_text(dir / "run" / "eval_unlearned.csv"));
  EXPECT_EQ(cli({"sweep", "--config", cfg.string(), "--out", (dir / "x").string(), "--ratios", "0,0.2"}).code, 2);
}

TEST(Cli, VerifyExitCodes) {
  const auto dir = scratch();
  const auto ok = cli({"verify", "--out", (dir / "ok").string()});
  EXPECT_EQ(ok.code, 0);
  EXPECT_NE(ok.out.find("PASS theorem3"), std::string::npos);
  const auto bad = cli({"verify", "--out", (dir / "bad").string(), "--inject-fault", "sign-flip"});
  EXPECT_EQ(bad.code, 3);
  EXPECT_NE(bad.out.find("FAIL theorem3"), std::string::npos);
  const json rep = read_json(dir / "bad" / "verify.json");
  EXPECT_FALSE(rep.at("passed").get<bool>());
  ASSERT_EQ(cli({"verify", "--out", (dir / "again").string()}).code, 0);
  EXPECT_EQ(read_text(dir / "ok" / "verify.json"), read_text(dir / "again" / "verify.json"));
}

TEST(Cli, UisCommand) {
  const std::string d = MTU_TEST_DATA;
  const auto fu = cli({"uis", d + "/nyu_ours_fu.csv", d + "/nyu_original.csv", d + "/nyu_retrain.csv"});
  ASSERT_EQ(fu.code, 0) << fu.err;
  EXPECT_NEAR(std::stod(fu.out), 22.0, 1.0);
  const auto cls = cli({"uis", d + "/pascal_ours_cls.csv", d + "/pascal_original.csv",
                        d + "/pascal_retrain.csv", "--setting", "partial:cls"});
  EXPECT_NEAR(std::stod(cls.out), 17.0, 1.0);
  const auto same = cli({"uis", d + "/nyu_original.csv", d + "/nyu_original.csv", d + "/nyu_original.csv"});
  EXPECT_EQ(same.out, "0.0%\n");
  const auto mismatch = cli({"uis", d + "/pascal_ours_fu.csv", d + "/nyu_original.csv", d + "/nyu_retrain.csv"});
  EXPECT_EQ(mismatch.code, 3);
  EXPECT_EQ(cli({"uis", d + "/nyu_ours_fu.csv", d + "/nyu_original.csv", d + "/nyu_retrain.csv", "--setting",
                 "partial:zzz"}).code, 2);
}
