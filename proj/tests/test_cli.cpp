#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace {

namespace fs = std::filesystem;

struct Output {
  int code = -1;
  std::string out;  // stdout and stderr
};

Output cli(const std::string& args) {
  const std::string cmd = std::string(ABC3_CLI_PATH) + " " + args + " 2>&1";
  Output r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path temp(const std::string& name) { return fs::temp_directory_path() / ("abc3_cli_" + name); }

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST(Cli, RunWritesOneRecordPerCheckpoint) {
  const Output r = cli("run --dataset synthetic:smooth-gp:40:2:1 --policy naive --seeds 0-1 "
                       "--checkpoint-fraction 0.5 --no-timing");
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream in(r.out);
  int lines = 0;
  for (std::string line; std::getline(in, line); ++lines) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("policy"), "naive");
    EXPECT_EQ(j.at("wall_ms"), 0.0);
  }
  EXPECT_EQ(lines, 4);
}

TEST(Cli, RunWithConfigAndDecisionLog) {
  const fs::path cfg = temp("config.json"), out = temp("metrics.jsonl"), dec = temp("decisions.jsonl");
  write(cfg, R"({"dataset":"synthetic:linear:30:2:4","policy":"abc3","seeds":[2],
                 "checkpoint_fraction":0.5,"hyper_restarts":1})");
  const Output r = cli("run --config " + cfg.string() + " --out " + out.string() +
                       " --decisions-out " + dec.string());
  ASSERT_EQ(r.code, 0) << r.out;
  std::ifstream m(out), d(dec);
  int records = 0, decisions = 0;
  for (std::string l; std::getline(m, l);) ++records;
  for (std::string l; std::getline(d, l);) ++decisions;
  EXPECT_EQ(records, 2);
  EXPECT_EQ(decisions, 15);
  for (const auto& p : {cfg, out, dec}) fs::remove(p);
}

TEST(Cli, MalformedCsvNamesRowAndColumn) {
  const fs::path csv = temp("bad.csv");
  write(csv, "x0,y0,y1\n1,2,3\n4,five,6\n");
  const Output r = cli("run --dataset " + csv.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("row 2 column y0"), std::string::npos) << r.out;
  fs::remove(csv);
}

TEST(Cli, UnknownPolicyListsChoices) {
  const Output r = cli("run --dataset synthetic:null:20:2 --policy greedy");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("abc3"), std::string::npos);
  EXPECT_NE(r.out.find("leverage"), std::string::npos);
}

TEST(Cli, AllSeedsFailingNumericallyExitsTwo) {
  const fs::path csv = temp("flat.csv");
  std::string text = "x0,x1,y0,y1\n";
  for (int i = 0; i < 20; ++i) text += "1,1," + std::to_string(i) + "," + std::to_string(i) + "\n";
  write(csv, text);
  const Output r = cli("run --dataset " + csv.string() + " --acq-noise 0 --seeds 0,1");
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("every seed failed"), std::string::npos);
  fs::remove(csv);
}

TEST(Cli, GenSyntheticRoundTripsThroughRun) {
  const fs::path csv = temp("gen.csv");
  const Output g = cli("gen-synthetic --kind linear --n 24 --d 3 --seed 5 --out " + csv.string());
  ASSERT_EQ(g.code, 0) << g.out;
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "x0,x1,x2,y0,y1");
  const Output r = cli("run --dataset " + csv.string() + " --policy mackay --checkpoint-fraction 1");
  EXPECT_EQ(r.code, 0) << r.out;
  fs::remove(csv);
}

TEST(Cli, CheckAssumptionCsv) {
  const Output r = cli("check-assumption --dataset synthetic:smooth-gp:30:2:1 --permutations 5");
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "n,two_delta_star_min,eps_star_max,min_gap");
  int rows = 0;
  std::string last;
  while (std::getline(in, line)) {
    ++rows;
    last = line;
  }
  EXPECT_EQ(rows, 30);
  EXPECT_EQ(last.substr(0, 3), "30,");
}

TEST(Cli, BenchWritesSummaryAndTiming) {
  const fs::path timing = temp("timing.csv");
  const Output r = cli("bench --dataset synthetic:smooth-gp:30:2:1 --policies naive,mackay --seeds 0,1 "
                       "--checkpoint-fraction 0.5 --timing-out " + timing.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')),
            "policy,frac,mean_pehe,sd_pehe,mean_mmd_sq,mean_type1,wall_ms_mean");
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 5);
  std::ifstream t(timing);
  std::string header;
  std::getline(t, header);
  EXPECT_EQ(header, "policy,mean_s,sd_s,runs");
  fs::remove(timing);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("run --no-such-flag").code, 1);
  EXPECT_EQ(cli("check-assumption").code, 1);
  EXPECT_EQ(cli("--help").code, 0);
}
