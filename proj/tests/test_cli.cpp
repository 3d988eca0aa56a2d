#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "textlens/cli.hpp"

using namespace textlens;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("textlens-cli-" + std::to_string(::getpid()) + "-" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& body) {
    const fs::path p = dir_ / name;
    std::ofstream(p) << body;
    return p;
  }

  int run(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    std::vector<const char*> argv{"textlens"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data(), out_, err_);
  }

  static std::size_t lines(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string l; std::getline(in, l);) ++n;
    return n;
  }

  fs::path dir_;
  std::ostringstream out_, err_;
};

constexpr const char* kSmallData =
    "dataset:\n"
    "  generate: {n_skills: 2, items_per_skill: 12, n_students: 40, seed: 4}\n";

}  // namespace

TEST_F(CliTest, GenDataWritesFilesWithExpectedRowCounts) {
  const auto cfg = write("gen.yaml", kSmallData);
  ASSERT_EQ(run({"gen-data", "--config", cfg.string(), "--out", (dir_ / "d").string()}), 0) << err_.str();
  EXPECT_EQ(lines(dir_ / "d" / "items.jsonl"), 24u);
  EXPECT_EQ(lines(dir_ / "d" / "responses.csv"), 1u + 40u * 24u);
  EXPECT_EQ(lines(dir_ / "d" / "students.csv"), 1u + 40u);
  const auto data = load_dataset(dir_ / "d" / "items.jsonl", dir_ / "d" / "responses.csv", dir_ / "d" / "students.csv", 0);
  EXPECT_EQ(data.n_skills(), 2);
  EXPECT_TRUE(data.has_profiles());
}

TEST_F(CliTest, ManifestRecordsSeedsHashAndOutputs) {
  const auto cfg = write("gen.yaml", std::string("seed: 9\n") + kSmallData);
  ASSERT_EQ(run({"gen-data", "--config", cfg.string(), "--out", (dir_ / "d").string()}), 0) << err_.str();
  std::ifstream in(dir_ / "d" / "manifest-gen-data.json");
  ASSERT_TRUE(in);
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j["command"], "gen-data");
  EXPECT_EQ(j["seeds"]["base"], 9);
  EXPECT_EQ(j["seeds"]["data"], 4);
  EXPECT_EQ(j["config_hash"].get<std::string>().size(), 16u);
  EXPECT_EQ(j["outputs"].size(), 3u);
  EXPECT_TRUE(j["timings_s"].contains("total"));
}

TEST_F(CliTest, ValidationListsEveryViolation) {
  const auto cfg = write("bad.yaml",
                         "dataset:\n"
                         "  generate: {n_skills: 0, n_students: 5, cue_fidelity: 1.5}\n"
                         "model: {kind: text-lens, lr: -1, colour: red}\n"
                         "train: {epochs: many}\n");
  EXPECT_EQ(run({"train", "--config", cfg.string()}), exit_codes::kUsage);
  const std::string e = err_.str();
  for (const char* key : {"model.colour: unknown key", "train.epochs: expected an integer", "dataset.generate.n_skills",
                          "dataset.generate.n_students", "dataset.generate.cue_fidelity"})
    EXPECT_NE(e.find(key), std::string::npos) << key << "\n" << e;
  EXPECT_NE(e.find("problems"), std::string::npos);
}

TEST_F(CliTest, ModelKindAndEmbeddingModeMustAgree) {
  const auto cfg = write("bad.yaml", std::string(kSmallData) + "model: {kind: lens}\nembedding: {mode: text}\n");
  EXPECT_EQ(run({"train", "--config", cfg.string()}), exit_codes::kUsage);
  EXPECT_NE(err_.str().find("embedding.mode: lens uses id"), std::string::npos) << err_.str();
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run({"train", "--config", (dir_ / "missing.yaml").string()}), exit_codes::kIo);
  EXPECT_EQ(run({"frobnicate"}), exit_codes::kUsage);
  EXPECT_EQ(run({"eval"}), exit_codes::kUsage);  // no checkpoint and no oracle

  const auto items = write("items.jsonl", "{\"item_id\": 0, \"skill_id\": 0, \"difficulty\": 0, \"text\": \"a\"}\n");
  const auto responses = write("responses.csv", "student_id,item_id,correct\n0,0,7\n");
  const auto cfg = write("ingest.yaml", "dataset:\n  ingest: {items: items.jsonl, responses: responses.csv}\n");
  EXPECT_EQ(run({"train", "--config", cfg.string(), "--out", (dir_ / "o").string()}), exit_codes::kData) << err_.str();
}

TEST_F(CliTest, RelativePathsResolveAgainstTheConfigFile) {
  const auto cfg = write("ingest.yaml", "dataset:\n  ingest: {items: nope.jsonl, responses: nope.csv}\n");
  EXPECT_EQ(run({"train", "--config", cfg.string()}), exit_codes::kUsage);
  EXPECT_NE(err_.str().find((dir_ / "nope.jsonl").string()), std::string::npos) << err_.str();
}

TEST_F(CliTest, TrainResumeAndHashMismatch) {
  const auto cfg = write("t.yaml", std::string(kSmallData) + "model: {kind: text-lens}\ntrain: {epochs: 2}\n");
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--out", (dir_ / "a").string()}), 0) << err_.str();
  const auto ck = dir_ / "a" / "checkpoint.json";
  ASSERT_TRUE(fs::exists(ck));
  EXPECT_EQ(lines(dir_ / "a" / "train_log.csv"), 3u);
  EXPECT_TRUE(fs::exists(dir_ / "a" / "manifest-train.json"));

  // More epochs, same model: accepted.
  const auto more = write("t4.yaml", std::string(kSmallData) + "model: {kind: text-lens}\ntrain: {epochs: 4}\n");
  EXPECT_EQ(run({"train", "--config", more.string(), "--out", (dir_ / "b").string(), "--resume", ck.string()}), 0)
      << err_.str();
  EXPECT_NE(out_.str().find("for 2 epochs"), std::string::npos) << out_.str();

  // A different learning rate changes the hash: rejected.
  const auto other =
      write("t5.yaml", std::string(kSmallData) + "model: {kind: text-lens, lr: 0.01}\ntrain: {epochs: 4}\n");
  EXPECT_EQ(run({"train", "--config", other.string(), "--out", (dir_ / "c").string(), "--resume", ck.string()}),
            exit_codes::kUsage);
  EXPECT_NE(err_.str().find("config hash"), std::string::npos) << err_.str();
}

TEST_F(CliTest, EvalThenReportMergesResults) {
  const auto cfg = write("e.yaml",
                         "dataset:\n  generate: {n_skills: 2, items_per_skill: 12, n_students: 300}\n"
                         "eval: {oracle: true, n_reps: 2, n_input: 3, conditions: [1, 5]}\n");
  ASSERT_EQ(run({"eval", "--config", cfg.string(), "--out", (dir_ / "r1").string()}), 0) << err_.str();
  ASSERT_EQ(run({"eval", "--config", cfg.string(), "--out", (dir_ / "r2").string(), "--seed", "2"}), 0) << err_.str();
  const auto r1 = read_results_csv(dir_ / "r1" / "results.csv");
  ASSERT_EQ(r1.size(), 2u);
  EXPECT_EQ(r1[0].model, "oracle");

  EXPECT_EQ(run({"report", "--out", (dir_ / "m").string(), "--results", (dir_ / "r1" / "results.csv").string(),
                 "--results", (dir_ / "r2" / "results.csv").string()}),
            0)
      << err_.str();
  EXPECT_EQ(read_results_csv(dir_ / "m" / "results.csv").size(), 4u);
  EXPECT_TRUE(fs::exists(dir_ / "m" / "plot_data.json"));
  EXPECT_TRUE(fs::exists(dir_ / "m" / "manifest-report.json"));
}

TEST_F(CliTest, ReportNeedsResults) {
  EXPECT_EQ(run({"report", "--out", (dir_ / "m").string()}), exit_codes::kUsage);
  EXPECT_NE(err_.str().find("eval.results"), std::string::npos);
}

TEST(ShippedConfigs, ParseWithoutViolations) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(TEXTLENS_SOURCE_DIR "/configs")) {
    if (e.path().extension() != ".yaml") continue;
    ExperimentConfig c;
    c.base_dir = e.path().parent_path();
    EXPECT_EQ(read_config(YAML::LoadFile(e.path().string()), c), std::vector<std::string>{}) << e.path();
    ++n;
  }
  EXPECT_GE(n, 6u);
}
