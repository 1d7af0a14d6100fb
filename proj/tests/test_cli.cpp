#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "ctxrec/cli.hpp"
#include "ctxrec/error.hpp"
#include "support.hpp"

namespace ctxrec {
namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// simulate usage -> ingest -> train, shared by the tests below.
struct Workspace {
  testing::TempDir dir;
  std::string world, tuples, events, model, user;

  Workspace() {
    world = dir.file("world");
    tuples = dir.file("usage.tsv");
    events = dir.file("events.tsv");
    model = dir.file("model.bin");
    const auto sim = run({"simulate", "usage", "--users", "20", "--apps", "40", "--days", "7", "--events", "2000",
                          "--seed", "3", "--out-dir", world});
    if (sim.code != 0) throw Error("simulate failed: " + sim.err);
    const auto ingest = run({"ingest", "--dir", world, "--out", tuples, "--events-out", events});
    if (ingest.code != 0) throw Error("ingest failed: " + ingest.err);
    const auto train = run({"train", "--data", tuples, "--out", model, "--epochs", "3", "--latent-dim", "4"});
    if (train.code != 0) throw Error("train failed: " + train.err);
    user = lines(slurp(tuples)).at(1).substr(0, lines(slurp(tuples)).at(1).find('\t'));
  }
};

const Workspace& ws() {
  static Workspace* w = new Workspace;
  return *w;
}

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, cli::kOk);
  EXPECT_EQ(run({}).code, cli::kUsageError);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kUsageError);
  EXPECT_EQ(run({"train", "--data", ws().tuples}).code, cli::kUsageError);  // --out is required
  EXPECT_EQ(run({"train", "--data", ws().tuples, "--out", "x", "--epochs", "many"}).code, cli::kUsageError);
}

TEST(Cli, DataErrorsExitWithTwo) {
  testing::TempDir dir;
  EXPECT_EQ(run({"train", "--data", dir.file("absent.tsv"), "--out", dir.file("m")}).code, cli::kDataError);
  {
    // Second data row gets a non-numeric count.
    const auto rows = lines(slurp(ws().tuples));
    const auto header = split_fields(rows[0], '\t');
    const auto cnt = std::find(header.begin(), header.end(), "cnt") - header.begin();
    auto fields = split_fields(rows[2], '\t');
    std::ofstream bad(dir.file("bad.tsv"));
    bad << rows[0] << '\n' << rows[1] << '\n';
    for (std::size_t i = 0; i < fields.size(); ++i) bad << (i ? "\t" : "") << (i == std::size_t(cnt) ? "lots" : fields[i]);
    bad << '\n';
  }
  const auto r = run({"train", "--data", dir.file("bad.tsv"), "--out", dir.file("m")});
  EXPECT_EQ(r.code, cli::kDataError);
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
  {
    std::ofstream junk(dir.file("junk.bin"));
    junk << "not a model";
  }
  EXPECT_EQ(run({"recommend", "--model", dir.file("junk.bin"), "--user", "u"}).code, cli::kDataError);
  EXPECT_EQ(run({"recommend", "--model", ws().model, "--user", "nobody", "--no-fallback"}).code, cli::kDataError);
}

TEST(Cli, DivergenceExitsWithThree) {
  testing::TempDir dir;
  const auto r = run({"train", "--data", ws().tuples, "--out", dir.file("m"), "--lr", "1e6", "--epochs", "50"});
  EXPECT_EQ(r.code, cli::kNumericError) << r.err;
  EXPECT_NE(r.err.find("epoch"), std::string::npos);
}

TEST(Cli, TrainingIsByteDeterministic) {
  testing::TempDir dir;
  for (const char* name : {"a", "b"}) {
    ASSERT_EQ(run({"train", "--data", ws().tuples, "--out", dir.file(name), "--epochs", "2", "--seed", "9"}).code, 0);
  }
  EXPECT_EQ(slurp(dir.file("a")), slurp(dir.file("b")));
  ASSERT_EQ(run({"train", "--data", ws().tuples, "--out", dir.file("c"), "--epochs", "2", "--seed", "10"}).code, 0);
  EXPECT_NE(slurp(dir.file("a")), slurp(dir.file("c")));
}

TEST(Cli, SimulationIsDeterministic) {
  testing::TempDir dir;
  for (const char* name : {"a", "b"}) {
    ASSERT_EQ(run({"simulate", "usage", "--users", "5", "--apps", "10", "--events", "100", "--seed", "4",
                   "--out-dir", dir.file(name)})
                  .code,
              0);
  }
  for (const char* file : {"samples.tsv", "profiles.tsv", "truth.json"}) {
    EXPECT_EQ(slurp(dir.file("a") + "/" + file), slurp(dir.file("b") + "/" + file)) << file;
  }
}

TEST(Cli, RecommendPrintsRankedRows) {
  const auto r = run({"recommend", "--model", ws().model, "--data", ws().tuples, "--user", ws().user, "--n", "3",
                      "--context", "daytime=evening,location=home", "--include-installed"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], "rank\tapp\tcategory\tscore\texplanation");
  for (std::size_t k = 1; k <= 3; ++k) EXPECT_EQ(rows[k].substr(0, 2), std::to_string(k) + "\t");

  const auto j = run({"recommend", "--model", ws().model, "--user", "stranger", "--n", "2", "--format", "json"});
  ASSERT_EQ(j.code, 0) << j.err;
  const auto body = nlohmann::json::parse(j.out);
  EXPECT_TRUE(body["cold_start"].get<bool>());
  EXPECT_EQ(body["items"].size(), 2u);

  EXPECT_EQ(run({"recommend", "--model", ws().model, "--user", ws().user, "--context", "weather=hail"}).code,
            cli::kUsageError);
}

TEST(Cli, ExplainListsFactors) {
  const std::string app = lines(slurp(ws().tuples)).at(1);
  const auto fields = app.substr(app.find('\t') + 1);
  const auto r = run({"explain", "--data", ws().tuples, "--app", fields.substr(0, fields.find('\t')), "--context",
                      "daytime=morning", "--all", "--format", "json"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(nlohmann::json::accept(r.out));
}

TEST(Cli, MosaicWritesSvg) {
  testing::TempDir dir;
  const auto r = run({"analyze", "mosaic", "--data", ws().tuples, "--source", "cube", "--rows", "category", "--cols",
                      "location,isweekend", "--svg", dir.file("m.svg"), "--format", "json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto svg = slurp(dir.file("m.svg"));
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("<rect"), std::string::npos);
  const auto layout = nlohmann::json::parse(r.out);
  EXPECT_FALSE(layout.empty());
}

TEST(Cli, SessionsFeedTheFunnel) {
  testing::TempDir dir;
  const auto sim = run({"simulate", "sessions", "--users", "50", "--apps", "40", "--sessions", "300", "--seed", "2",
                        "--out", dir.file("events.tsv")});
  ASSERT_EQ(sim.code, 0) << sim.err;
  const auto f = run({"analyze", "funnel", "--events", dir.file("events.tsv"), "--format", "json"});
  ASSERT_EQ(f.code, 0) << f.err;
  const auto report = nlohmann::json::parse(f.out);
  // Uninstalls carry no session and may open sessions of their own.
  EXPECT_GE(report["sessions"].get<int>(), 300);
  EXPECT_GT(report["viewed"].get<int>(), 0);
  EXPECT_EQ(run({"analyze", "funnel"}).code, cli::kUsageError);
}

TEST(Cli, EvalReportsBothModels) {
  const auto r = run({"eval", "--data", ws().tuples, "--seeds", "1", "--ks", "5", "--format", "json", "--epochs", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(nlohmann::json::accept(r.out));
}

TEST(Cli, ConfigFileSuppliesDefaults) {
  testing::TempDir dir;
  {
    std::ofstream cfg(dir.file("run.conf"));
    cfg << "# training defaults\nepochs = 2\nseed=9\nlatent-dim = 4\n";
  }
  ASSERT_EQ(run({"--config", dir.file("run.conf"), "train", "--data", ws().tuples, "--out", dir.file("a")}).code, 0);
  ASSERT_EQ(run({"train", "--data", ws().tuples, "--out", dir.file("b"), "--epochs", "2", "--seed", "9",
                 "--latent-dim", "4"})
                .code,
            0);
  EXPECT_EQ(slurp(dir.file("a")), slurp(dir.file("b")));
  {
    std::ofstream bad(dir.file("bad.conf"));
    bad << "epochs\n";
  }
  EXPECT_EQ(run({"--config", dir.file("bad.conf"), "train", "--data", ws().tuples, "--out", dir.file("c")}).code,
            cli::kUsageError);
}

}  // namespace
}  // namespace ctxrec
