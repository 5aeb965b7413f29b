#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "tpc/cli.hpp"

namespace fs = std::filesystem;
using namespace tpc;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args, const std::string& stdin_text = {}) {
  args.insert(args.begin(), "tpc");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  std::istringstream in(stdin_text);
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err, in);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("tpc_cli_" + std::to_string(::getpid()) + "_" +
                                       ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir / "corpus");
    for (int d = 0; d < 6; ++d) {
      std::string text;
      for (int s = 0; s < 7; ++s) {
        text += "Station" + std::to_string(s) + " records rainfall near river " + std::to_string(d) + " daily. ";
      }
      write_file((dir / "corpus" / ("doc" + std::to_string(d) + ".txt")).string(), text);
    }
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string path(const std::string& name) const { return (dir / name).string(); }

  fs::path dir;
};

TEST(Cli, VersionAndHelp) {
  const auto v = run({"version"});
  EXPECT_EQ(v.code, 0);
  EXPECT_EQ(nlohmann::json::parse(v.out)["engine_version"], kEngineVersion);
  const auto h = run({"--help"});
  EXPECT_EQ(h.code, 0);
  EXPECT_NE(h.out.find("Exit codes"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"compress", "--budget", "5", "--ratio", "3"}, "A b.").code, 2);
  EXPECT_EQ(run({"compress", "--ratio", "0.5"}, "A b.").code, 2);
  EXPECT_EQ(run({"compress", "--in", "/nonexistent/file.txt"}).code, 2);
  EXPECT_EQ(run({"curate", "mcqr", "--out", "x"}).code, 2);
  EXPECT_EQ(run({"eval", "--cases", "/dev/null", "--out", "x", "--mode", "sideways"}).code, 2);
}

TEST_F(CliTest, CompressFromStdinWithStats) {
  const auto r = run({"compress", "--top-k", "1", "--question", "Where is the river?", "--stats", path("s.json")},
                     "The sky is blue. The river runs north past the mill. Bread is cheap.");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto stats = nlohmann::json::parse(read_file(path("s.json")));
  EXPECT_EQ(stats["mode"], "prompt_aware");
  ASSERT_EQ(stats["selected_indices"].size(), 1u);
  EXPECT_EQ(r.out, stats["compressed"].get<std::string>() + "\n");
  EXPECT_EQ(stats["original_tokens"], 17);  // 14 words + 3 periods
  EXPECT_EQ(stats["run_id"].get<std::string>().size(), 16u);
}

TEST_F(CliTest, IoAndParseErrorsExitOne) {
  write_file(path("bad.json"), "{ not json");
  EXPECT_EQ(run({"--config", path("bad.json"), "version"}).code, 1);
  write_file(path("unknown.json"), R"({"seeed": 3})");
  EXPECT_EQ(run({"--config", path("unknown.json"), "version"}).code, 1);
  EXPECT_EQ(run({"compress", "--out", path("missing/dir/out.txt")}, "Some text here.").code, 1);
  EXPECT_EQ(run({"compress"}, "   ").code, 1);
}

TEST_F(CliTest, UnreachableBackendExitsThree) {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  write_file(path("remote.json"), nlohmann::json{{"backends",
                                                  {{"embedder",
                                                    {{"kind", "remote"},
                                                     {"base_url", "http://127.0.0.1:" + std::to_string(port)},
                                                     {"max_retries", 0},
                                                     {"timeout_ms", 500}}}}}}
                                      .dump());
  const auto r = run({"--config", path("remote.json"), "compress", "--question", "q"}, "Some text here.");
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("BackendUnavailable"), std::string::npos);
}

TEST_F(CliTest, CurateMcqrWritesRecordsRejectsAndManifest) {
  const auto r = run({"curate", "mcqr", "--corpus", path("corpus"), "--out", path("mcqr.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto manifest = nlohmann::json::parse(read_file(path("mcqr.jsonl.manifest.json")));
  EXPECT_EQ(manifest["command"], "curate mcqr");
  EXPECT_EQ(manifest["attempted"], 6);
  EXPECT_EQ(manifest["count"].get<std::size_t>() + manifest["rejected"].get<std::size_t>(), 6u);
  EXPECT_TRUE(manifest["inputs"].contains("corpus"));
  std::size_t lines = 0;
  std::istringstream in(read_file(path("mcqr.jsonl")));
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_GE(j["positive_indices"].size(), 2u);
    ++lines;
  }
  EXPECT_EQ(lines, manifest["count"].get<std::size_t>());
  EXPECT_TRUE(fs::exists(path("mcqr.jsonl.rejects.jsonl")));
}

TEST_F(CliTest, CurateCtdRunsBothStages) {
  const auto r = run({"curate", "ctd", "--corpus", path("corpus"), "--out", path("ctd.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(read_file(path("ctd.jsonl")));
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["stage"], "structured");
    EXPECT_EQ(j["prompt"].get<std::string>().find("{text}"), std::string::npos);
  }
}

TEST_F(CliTest, RefineSingleDocument) {
  const auto r = run({"reward", "refine", "--doc", path("corpus/doc0.txt"), "--n", "3", "--out", path("sft.jsonl"),
                      "--rewards", path("rewards.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto sft = read_sft_dataset(path("sft.jsonl"));
  ASSERT_EQ(sft.size(), 1u);
  EXPECT_EQ(sft[0].candidate_pool_size, 3u);
  const auto manifest = nlohmann::json::parse(read_file(path("sft.jsonl.manifest.json")));
  EXPECT_EQ(manifest["run_id"], sft[0].provenance.run_id);
  EXPECT_EQ(manifest["command"], "reward refine");
  EXPECT_EQ(run({"reward", "refine", "--doc", path("corpus/doc0.txt"), "--n", "1", "--out", path("x")}).code, 2);
  EXPECT_EQ(run({"reward", "refine", "--out", path("x")}).code, 2);
}

TEST_F(CliTest, EvalWritesReportAndCsv) {
  std::string cases;
  cases += nlohmann::json{{"id", "b"}, {"context", "Paris is in France. Rome is in Italy."},
                          {"question", "Where is Rome?"}, {"reference", "Italy"}, {"task_kind", "qa"}}
               .dump() +
           "\n";
  cases += nlohmann::json{{"id", "a"}, {"context", "def f(x): return x. def g(y): return y."},
                          {"question", "Write f."}, {"reference", "def f(x): return x"}, {"task_kind", "code"}}
               .dump() +
           "\n";
  write_file(path("cases.jsonl"), cases);
  const auto r = run({"eval", "--cases", path("cases.jsonl"), "--out", path("report.json"), "--csv", path("r.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = nlohmann::json::parse(read_file(path("report.json")));
  ASSERT_EQ(report["per_case"].size(), 2u);
  EXPECT_EQ(report["per_case"][0]["id"], "a");
  EXPECT_EQ(read_file(path("r.csv")).rfind("id,task_kind,metric_name,score", 0), 0u);
}

TEST_F(CliTest, OutputsAreIdenticalAcrossDirectories) {
  fs::create_directories(dir / "second");
  fs::copy(dir / "corpus", dir / "second" / "corpus");
  const auto a = run({"curate", "mcqr", "--corpus", path("corpus"), "--out", path("out.jsonl")});
  const auto b = run({"curate", "mcqr", "--corpus", path("second/corpus"), "--out", path("second/out.jsonl")});
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  for (const std::string suffix : {"", ".rejects.jsonl", ".manifest.json"}) {
    EXPECT_EQ(read_file(path("out.jsonl" + suffix)), read_file(path("second/out.jsonl" + suffix))) << suffix;
  }
}

}  // namespace
