// SPDX-License-Identifier: Apache-2.0
//
// Drives the graspvoc executable as a subprocess.
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "graspvoc/cloud_io.hpp"
#include "graspvoc/commands.hpp"

using namespace graspvoc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kData = GRASPVOC_TEST_DATA;
const fs::path kGolden = kData / "golden/entries";

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

struct Result {
  int code;
  std::string output;  // stdout and stderr
};

/// Runs the CLI from the test data directory.
Result invoke(const std::vector<std::string>& args) {
  std::string cmd = "cd " + quote(kData.string()) + " && " + quote(GRASPVOC_CLI);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " 2>&1";
  Result r{-1, {}};
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) r.output.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "graspvoc_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) { return io::read_text_file(p); }
json load(const fs::path& p) { return json::parse(slurp(p)); }

/// Every regular file under `dir`, relative path -> contents.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).generic_string()] = slurp(e.path());
  return files;
}

}  // namespace

TEST(Cli, HelpAndParseErrors) {
  EXPECT_EQ(invoke({"--help"}).code, 0);
  EXPECT_EQ(invoke({}).code, 3);
  EXPECT_EQ(invoke({"explode"}).code, 3);
  EXPECT_EQ(invoke({"rank", "knife_archive.json"}).code, 3);
  EXPECT_EQ(invoke({"rank", "a", "--vocabulary", "b", "--condition", "c", "-o", "d", "--k-force", "strong"}).code, 3);
}

TEST(Cli, SegmentReproducesTheGoldenVocabulary) {
  const fs::path dir = scratch("segment");
  const Result r = invoke({"segment", "knife.ply", "--object", "knife", "--provider", "providers.json", "-o",
                     (dir / "vocab.json").string(), "--debug-render", (dir / "render.pgm").string(), "--debug-masks",
                     (dir / "masks.json").string()});
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("2 subparts"), std::string::npos);
  EXPECT_EQ(slurp(dir / "vocab.json"), slurp(kGolden / "00_knife/vocabulary.json"));
  const std::string pgm = slurp(dir / "render.pgm");
  EXPECT_EQ(pgm.rfind("P5\n512 512\n255\n", 0), 0u);
  EXPECT_EQ(pgm.size(), 15u + 512u * 512u);
  EXPECT_EQ(load(dir / "masks.json")["masks"].size(), 5u);
}

TEST(Cli, SegmentErrors) {
  const fs::path dir = scratch("segment_errors");
  const fs::path out = dir / "v.json";
  EXPECT_EQ(invoke({"segment", "missing.ply", "--object", "knife", "--provider", "providers.json", "-o", out.string()}).code, 1);
  EXPECT_EQ(invoke({"segment", "knife.ply", "--object", "knife", "--provider", "missing.json", "-o", out.string()}).code, 1);
  // Fixtures are recorded for "knife", not "spoon".
  EXPECT_EQ(invoke({"segment", "knife.ply", "--object", "spoon", "--provider", "providers.json", "-o", out.string()}).code, 2);
  EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, ConditionUsesRecordedAnswers) {
  const fs::path dir = scratch("condition");
  const std::string vocab = (kGolden / "00_knife/vocabulary.json").string();
  const Result r = invoke({"condition", vocab, "--task", "hand over", "--provider", "providers.json", "-o", (dir / "c.json").string()});
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(slurp(dir / "c.json"), slurp(kGolden / "00_knife/tasks/hand_over/condition.json"));
  EXPECT_EQ(invoke({"condition", vocab, "--task", "cut", "-o", (dir / "none.json").string()}).code, 2);
  EXPECT_EQ(invoke({"condition", vocab, "--task", "juggle", "--provider", "providers.json", "-o", (dir / "j.json").string()}).code, 2);
}

TEST(Cli, SingleSubpartConditionNeedsNoProviderAndKeepsTaskText) {
  const fs::path dir = scratch("single");
  const PointCloud cloud = io::load_cloud(kData / "mug.xyz");
  LabelMap labels;
  for (std::size_t i = 0; i < cloud.size(); ++i) labels[i] = "mug";
  io::write_text_file(dir / "vocab.json", dump_vocabulary(make_vocabulary(ObjectModel("mug", cloud), labels, (kData / "mug.xyz").string())));
  const std::string task = "pour \"tea\"; it's $HOME `date` & stir | done";
  const Result r = invoke({"condition", (dir / "vocab.json").string(), "--task", task, "-o", (dir / "c.json").string()});
  ASSERT_EQ(r.code, 0) << r.output;
  const json c = load(dir / "c.json");
  EXPECT_EQ(c["task"], task);
  EXPECT_EQ(c["grasp_label"], "mug");
  EXPECT_EQ(c["task_label"], "mug");
}

TEST(Cli, RankMatchesGoldenAndIsDeterministic) {
  const fs::path dir = scratch("rank");
  const std::vector<std::string> args{"rank", "knife_archive.json", "--vocabulary", (kGolden / "00_knife/vocabulary.json").string(),
                                      "--condition", (kGolden / "00_knife/tasks/cut/condition.json").string(),
                                      "--controls", "3", "--seed", "7", "-o"};
  auto first = args, second = args;
  first.push_back((dir / "a.json").string());
  second.push_back((dir / "b.json").string());
  const Result r = invoke(first);
  ASSERT_EQ(r.code, 0) << r.output;
  ASSERT_EQ(invoke(second).code, 0);
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
  EXPECT_EQ(slurp(dir / "a.json"), slurp(kGolden / "00_knife/tasks/cut/ranked.json"));
  const json ranked = load(dir / "a.json");
  EXPECT_EQ(ranked["controls"]["grasp_ids"].size(), 3u);
  EXPECT_EQ(ranked["optimal"]["grasped_label"], "handle");
  EXPECT_NE(r.output.find("optimal=" + ranked["optimal"]["id"].get<std::string>()), std::string::npos);
}

TEST(Cli, RankWithoutCompatibleGraspExitsFour) {
  const fs::path dir = scratch("rank_zero");
  // Keep only blade grasps, then ask for a handle grasp.
  json archive = load(kData / "knife_archive.json");
  json kept = json::array();
  for (const auto& g : archive["grasps"])
    if (g["id"].get<std::string>()[0] == 'b') kept.push_back(g);
  archive["grasps"] = kept;
  io::write_text_file(dir / "archive.json", archive.dump());
  const std::vector<std::string> base{"rank", (dir / "archive.json").string(), "--vocabulary",
                                      (kGolden / "00_knife/vocabulary.json").string(), "--condition",
                                      (kGolden / "00_knife/tasks/cut/condition.json").string(), "-o",
                                      (dir / "out.json").string()};
  EXPECT_EQ(invoke(base).code, 4);
  auto fallback = base;
  fallback.push_back("--fallback-max-force");
  const Result r = invoke(fallback);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(load(dir / "out.json")["fallback"].get<bool>());
  EXPECT_NE(r.output.find("(fallback)"), std::string::npos);
}

TEST(Cli, RankInputErrors) {
  const fs::path dir = scratch("rank_errors");
  io::write_text_file(dir / "broken.json", "{not json");
  const std::string vocab = (kGolden / "00_knife/vocabulary.json").string();
  const std::string cond = (kGolden / "00_knife/tasks/cut/condition.json").string();
  const std::string out = (dir / "o.json").string();
  EXPECT_EQ(invoke({"rank", "nope.json", "--vocabulary", vocab, "--condition", cond, "-o", out}).code, 1);
  EXPECT_EQ(invoke({"rank", (dir / "broken.json").string(), "--vocabulary", vocab, "--condition", cond, "-o", out}).code, 3);
  EXPECT_EQ(invoke({"rank", "knife_archive.json", "--vocabulary", vocab, "--condition", cond, "--k-force", "-1", "-o", out}).code, 3);
  // A condition naming a label the vocabulary lacks.
  io::write_text_file(dir / "cond.json", R"({"task":"cut","grasp_label":"hilt","task_label":"blade"})");
  EXPECT_EQ(invoke({"rank", "knife_archive.json", "--vocabulary", vocab, "--condition", (dir / "cond.json").string(), "-o", out}).code, 3);
}

TEST(Cli, EvalHandCaseAndErrors) {
  const fs::path dir = scratch("eval");
  io::write_text_file(dir / "gt.json", R"({"object_label":"toy","task":"poke","n_points":4,"selections":[[0,1],[0]]})");
  io::write_text_file(dir / "pred.json", R"({"object_label":"toy","task":"poke","n_points":4,"point_indices":[0,2]})");
  io::write_text_file(dir / "pred5.json", R"({"object_label":"toy","task":"poke","n_points":5,"point_indices":[0,2]})");
  const Result r = invoke({"eval", "--pred", (dir / "pred.json").string(), "--gt", (dir / "gt.json").string(), "-o",
                     (dir / "m.json").string(), "--csv", (dir / "m.csv").string()});
  ASSERT_EQ(r.code, 0) << r.output;
  const json m = load(dir / "m.json");
  EXPECT_NEAR(m["macro_average"]["weighted_iou"].get<double>(), 0.5, 1e-9);
  EXPECT_NEAR(m["pairs"][0]["precision"].get<double>(), 2.0 / 3.0, 1e-9);
  const std::string csv = slurp(dir / "m.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "object_label,task,weighted_iou,precision,recall");
  EXPECT_NE(csv.find("toy,poke,0.500000,0.666667,0.666667\n"), std::string::npos) << csv;
  EXPECT_NE(csv.find("macro_average,,0.500000,"), std::string::npos);

  EXPECT_EQ(invoke({"eval", "--pred", (dir / "pred5.json").string(), "--gt", (dir / "gt.json").string(), "-o", (dir / "x.json").string()}).code, 3);
  EXPECT_EQ(invoke({"eval", "--pred", (dir / "pred.json").string(), "--gt", (dir / "gt.json").string(), "--gt",
                 (dir / "gt.json").string(), "-o", (dir / "x.json").string()}).code, 3);
  EXPECT_EQ(invoke({"eval", "--pred", (dir / "pred.json").string(), "--gt", (dir / "none.json").string(), "-o", (dir / "x.json").string()}).code, 1);
}

TEST(Cli, EvalRepeatOverVocabularyMatchesSingleRun) {
  const fs::path dir = scratch("eval_repeat");
  const std::string vocab = (kGolden / "00_knife/vocabulary.json").string();
  ASSERT_EQ(invoke({"eval", "--pred", vocab, "--gt", "knife_cut_gt.json", "--provider", "providers.json", "-o", (dir / "one.json").string()}).code, 0);
  ASSERT_EQ(invoke({"eval", "--pred", vocab, "--gt", "knife_cut_gt.json", "--provider", "providers.json", "--repeat", "10", "-o",
                 (dir / "ten.json").string()})
                .code,
            0);
  const json one = load(dir / "one.json"), ten = load(dir / "ten.json");
  EXPECT_EQ(ten["repeat"], 10);
  EXPECT_EQ(ten["pairs"][0]["runs"], 10);
  EXPECT_EQ(one["macro_average"], ten["macro_average"]);
  EXPECT_EQ(one["macro_average"], load(kGolden / "00_knife/tasks/cut/metrics.json")["macro_average"]);
  // Without a provider a multi-subpart vocabulary cannot be conditioned.
  EXPECT_EQ(invoke({"eval", "--pred", vocab, "--gt", "knife_cut_gt.json", "-o", (dir / "x.json").string()}).code, 3);
}

TEST(Cli, PipelineReproducesGoldensAndIsRepeatable) {
  const fs::path out = scratch("pipeline");
  const Result a = invoke({"pipeline", "manifest.json", "--out", out.string(), "--run-name", "a"});
  ASSERT_EQ(a.code, 0) << a.output;
  const Result b = invoke({"pipeline", "manifest.json", "--out", out.string(), "--run-name", "b", "--jobs", "2"});
  ASSERT_EQ(b.code, 0) << b.output;
  EXPECT_EQ(a.output, b.output);
  const auto ta = tree(out / "a/entries"), tb = tree(out / "b/entries");
  EXPECT_EQ(ta, tb);
  EXPECT_EQ(ta, tree(kGolden));
  EXPECT_EQ(slurp(out / "a/summary.tsv"), a.output);
  EXPECT_EQ(load(out / "a/config.json")["seed"], 7);
  EXPECT_EQ(load(out / "a/config.json")["segmentation"]["overlap_policy"], "smallest-mask-wins");
  EXPECT_TRUE(fs::exists(out / "a/run.json"));
}

TEST(Cli, PipelineIsolatesAFailingEntry) {
  const fs::path dir = scratch("pipeline_bad");
  json manifest = load(kData / "manifest.json");
  manifest["provider_config"] = (kData / "providers.json").string();
  for (auto& e : manifest["entries"]) {
    e["cloud_file"] = (kData / e["cloud_file"].get<std::string>()).string();
    e["archive_file"] = (kData / e["archive_file"].get<std::string>()).string();
    for (auto& [task, gt] : e["ground_truth"].items()) gt = (kData / gt.get<std::string>()).string();
  }
  manifest["entries"][1]["archive_file"] = (dir / "missing_archive.json").string();
  io::write_text_file(dir / "manifest.json", manifest.dump(2));
  const Result r = invoke({"pipeline", (dir / "manifest.json").string(), "--out", (dir / "runs").string(), "--run-name", "x"});
  EXPECT_EQ(r.code, 1) << r.output;
  const fs::path run = dir / "runs/x/entries";
  EXPECT_EQ(load(run / "00_knife/status.json")["status"], "ok");
  EXPECT_EQ(slurp(run / "00_knife/tasks/cut/ranked.json"), slurp(kGolden / "00_knife/tasks/cut/ranked.json"));
  const json mug = load(run / "01_mug/status.json");
  EXPECT_EQ(mug["status"], "failed");
  EXPECT_EQ(mug["exit_code"], 1);
  EXPECT_NE(mug["error"].get<std::string>().find("missing_archive.json"), std::string::npos);
  EXPECT_NE(r.output.find("01_mug\tmug\t-\tfailed"), std::string::npos) << r.output;
}

TEST(Cli, PipelineSetupErrors) {
  const fs::path dir = scratch("pipeline_setup");
  EXPECT_EQ(invoke({"pipeline", (dir / "absent.json").string(), "--out", dir.string()}).code, 1);
  io::write_text_file(dir / "m.json", R"({"entries": []})");
  EXPECT_EQ(invoke({"pipeline", (dir / "m.json").string(), "--out", dir.string()}).code, 3);
  EXPECT_EQ(invoke({"pipeline", "manifest.json", "--out", dir.string(), "--jobs", "0"}).code, 3);
}

TEST(Cli, SlugIsFilesystemSafe) {
  EXPECT_EQ(cli::slug("hand over"), "hand_over");
  EXPECT_EQ(cli::slug("Pour  \"tea\"!"), "pour_tea");
  EXPECT_EQ(cli::slug("../.."), "task");
}
