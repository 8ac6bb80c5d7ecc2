// Copyright 2026 The fedflag Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cli.hpp"
#include "fedflag/error.hpp"

namespace fedflag::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Outcome {
  int code = -1;
  std::string out, err;
};

Outcome call(std::vector<std::string> args) {
  args.insert(args.begin(), "fedflag");
  std::ostringstream o, e;
  Outcome r;
  r.code = run(args, o, e);
  r.out = o.str();
  r.err = e.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// CSV rows end in CRLF.
std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
    out.push_back(l);
  }
  return out;
}

json load_json(const fs::path& p) { return json::parse(slurp(p)); }

// Last line of stderr is the machine-readable error.
json error_of(const Outcome& r) {
  auto s = r.err;
  while (!s.empty() && s.back() == '\n') s.pop_back();
  return json::parse(s.substr(s.rfind('\n') + 1));
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("fedflag_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void gen(const std::string& name, std::size_t tx, std::size_t accounts, std::size_t banks = 3) {
    auto r = call({"gen-data", "--set", "n-transactions=" + std::to_string(tx), "--set",
                   "n-accounts=" + std::to_string(accounts), "--set",
                   "n-banks=" + std::to_string(banks), "--set", "anomaly-rate=0.02", "--set",
                   "rho=0.9", "--out", path(name)});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  fs::path dir_;
};

TEST(CliUsage, UnknownSubcommandExitsTwoWithUsage) {
  auto r = call({"frobnicate"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Usage:"), std::string::npos);
  EXPECT_EQ(error_of(r)["error"], "usage");
  EXPECT_EQ(error_of(r)["exit_code"], 2);
}

TEST(CliUsage, NoSubcommandAndBadFlag) {
  EXPECT_EQ(call({}).code, 2);
  EXPECT_EQ(call({"gen-data", "--no-such-flag"}).code, 2);
  EXPECT_EQ(call({"train-centralized"}).code, 2);  // --data is required
}

TEST(CliUsage, HelpAndVersionSucceed) {
  auto h = call({"--help"});
  EXPECT_EQ(h.code, 0);
  for (const char* sc : {"gen-data", "train-centralized", "train-federated", "infer", "attack-mia",
                         "bench"})
    EXPECT_NE(h.out.find(sc), std::string::npos) << sc;
  EXPECT_EQ(call({"--version"}).code, 0);
}

TEST(CliUsage, ExitCodesAreDistinctPerCategory) {
  std::set<int> seen;
  for (int c = 0; c <= static_cast<int>(ErrorCode::kAccessViolation); ++c) {
    const int e = exit_code_for(static_cast<ErrorCode>(c));
    EXPECT_NE(e, 0);
    EXPECT_NE(e, kExitUsage);
    seen.insert(e);
  }
  EXPECT_EQ(exit_code_for(ErrorCode::kConfig), kExitConfig);
  EXPECT_EQ(exit_code_for(ErrorCode::kIo), kExitIo);
  EXPECT_EQ(exit_code_for(ErrorCode::kTimeout), kExitProtocol);
  EXPECT_EQ(exit_code_for(ErrorCode::kNoAnomalous), kExitData);
  EXPECT_EQ(seen.size(), 4u);
}

TEST_F(CliTest, ErrorsAreJsonWithDistinctCodes) {
  auto io = call({"train-centralized", "--data", path("missing"), "--out", path("o")});
  EXPECT_EQ(io.code, kExitIo);
  EXPECT_EQ(error_of(io)["error"], "io");

  gen("d", 500, 100);
  auto cfg = call({"train-centralized", "--data", path("d"), "--set", "epochs=many"});
  EXPECT_EQ(cfg.code, kExitConfig);
  EXPECT_EQ(error_of(cfg)["error"], "config");

  EXPECT_EQ(call({"gen-data", "--set", "novalue", "--out", path("x")}).code, kExitConfig);
  EXPECT_EQ(call({"gen-data", "--config", path("nope.conf")}).code, kExitIo);
  auto role = call({"train-federated", "--data", path("d"), "--role", "hub"});
  EXPECT_EQ(role.code, kExitConfig);
  EXPECT_EQ(call({"train-federated", "--data", path("d"), "--transport", "carrier-pigeon"}).code,
            kExitConfig);
}

TEST_F(CliTest, GenThenCentralizedWritesFiniteAuprc) {
  gen("d", 10000, 1000);
  EXPECT_TRUE(fs::exists(path("d/transactions.csv")));
  EXPECT_TRUE(fs::exists(path("d/accounts.csv")));
  EXPECT_TRUE(fs::exists(path("d/manifest.json")));
  auto r = call({"train-centralized", "--data", path("d"), "--set", "epochs=2", "--set",
                 "batch-size=256", "--out", path("c")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto m = load_json(path("c/metrics.json"));
  EXPECT_TRUE(std::isfinite(m["auprc"].get<double>()));
  EXPECT_EQ(m["epoch_loss"].size(), 2u);
  EXPECT_TRUE(fs::exists(path("c/model.ckpt")));
}

TEST_F(CliTest, FederatedMatchesCentralizedAuprc) {
  gen("d", 5000, 500);
  const std::vector<std::string> common{"--data", path("d"), "--set", "epochs=2", "--set",
                                        "batch-size=256"};
  auto args = common;
  args.insert(args.begin(), "train-centralized");
  args.insert(args.end(), {"--out", path("c")});
  ASSERT_EQ(call(args).code, 0);
  args = common;
  args.insert(args.begin(), "train-federated");
  args.insert(args.end(), {"--noise", "none", "--ot", "ideal", "--out", path("f")});
  auto r = call(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const double c = load_json(path("c/metrics.json"))["auprc"];
  const double f = load_json(path("f/metrics.json"))["auprc"];
  EXPECT_NEAR(f, c, 0.01);

  auto comms = load_json(path("f/comms.json"));
  std::uint64_t sum = 0;
  for (const auto& l : comms["links"]) sum += l["bytes"].get<std::uint64_t>();
  EXPECT_EQ(sum, comms["total_bytes"].get<std::uint64_t>());
  EXPECT_GT(comms["ot_transfers"].get<std::uint64_t>(), 0u);
  auto leak = load_json(path("f/leakage.json"));
  EXPECT_EQ(leak["total_bank_queries"].get<std::uint64_t>(),
            comms["ot_transfers"].get<std::uint64_t>());
}

TEST_F(CliTest, ManifestReplaysBitExactly) {
  gen("d", 1500, 200);
  auto r = call({"train-federated", "--data", path("d"), "--set", "epochs=1", "--set",
                 "batch-size=128", "--noise", "laplace:0.1", "--set", "network-seed=7", "--out",
                 path("a")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto man = load_json(path("a/manifest.json"));
  EXPECT_EQ(man["seeds"]["network-seed"], "7");
  EXPECT_EQ(man["config"]["noise"], "laplace:0.1");
  EXPECT_EQ(man["inputs"]["transactions"]["blake2b"].get<std::string>().size(), 64u);
  EXPECT_TRUE(man["versions"].contains("libsodium"));

  // Only the effective config, nothing else.
  r = call({"train-federated", "--data", path("d"), "--config", path("a/effective.conf"),
            "--out", path("b")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("a/model.ckpt")), slurp(path("b/model.ckpt")));
  EXPECT_EQ(load_json(path("b/manifest.json"))["config_hash"], man["config_hash"]);
  EXPECT_EQ(slurp(path("a/comms.json")), slurp(path("b/comms.json")));
}

std::uint16_t free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in a{};
  a.sin_family = AF_INET;
  a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ::bind(fd, reinterpret_cast<sockaddr*>(&a), sizeof a);
  socklen_t len = sizeof a;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&a), &len);
  ::close(fd);
  return ntohs(a.sin_port);
}

TEST_F(CliTest, PerRoleTcpMatchesSim) {
  gen("d", 1500, 200, 2);
  const std::vector<std::string> base{"train-federated", "--data", path("d"), "--set",
                                      "epochs=1", "--set", "batch-size=128", "--noise", "none"};
  auto sim = base;
  sim.insert(sim.end(), {"--out", path("sim")});
  ASSERT_EQ(call(sim).code, 0);

  const std::string hub = "hub=127.0.0.1:" + std::to_string(free_port());
  const std::string agg = "aggregator=127.0.0.1:" + std::to_string(free_port());
  const std::vector<std::string> roles{"hub", "aggregator", "bank:0", "bank:1"};
  std::vector<Outcome> runs(roles.size());
  std::vector<std::thread> ts;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    ts.emplace_back([&, i] {
      auto a = base;
      a.insert(a.end(), {"--transport", "tcp", "--role", roles[i], "--peer", hub, "--peer", agg,
                         "--out", path("r" + std::to_string(i))});
      runs[i] = call(a);
    });
  }
  for (auto& t : ts) t.join();
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    ASSERT_EQ(runs[i].code, 0) << roles[i] << ": " << runs[i].err;
    total += load_json(path("r" + std::to_string(i) + "/comms.json"))["total_bytes"]
                 .get<std::uint64_t>();
  }
  EXPECT_EQ(slurp(path("r0/model.ckpt")), slurp(path("sim/model.ckpt")));
  EXPECT_EQ(total, load_json(path("sim/comms.json"))["total_bytes"].get<std::uint64_t>());
  EXPECT_FALSE(fs::exists(path("r1/model.ckpt")));
}

TEST_F(CliTest, InferWritesScoresForHeldOutSplit) {
  gen("d", 3000, 300);
  ASSERT_EQ(call({"train-centralized", "--data", path("d"), "--set", "epochs=2", "--set",
                  "batch-size=256", "--out", path("c")})
                .code,
            0);
  auto r = call({"infer", "--data", path("d"), "--model", path("c/model.ckpt"), "--strategy",
                 "direct", "--out", path("i")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto scores = lines_of(slurp(path("i/scores.csv")));
  ASSERT_FALSE(scores.empty());
  EXPECT_EQ(scores[0], "tx_id,score,s0,s1,known,label");
  EXPECT_EQ(scores.size() - 1, 600u);  // the 20% held out
  auto m = load_json(path("i/metrics.json"));
  EXPECT_EQ(m["rows"], 600);
  // Without noise the protocol returns the flagged score, so AUPRC is the
  // plaintext evaluation with true flags.
  EXPECT_NEAR(m["auprc"].get<double>(), load_json(path("c/metrics.json"))["auprc"].get<double>(),
              1e-6);
  EXPECT_EQ(load_json(path("i/leakage.json"))["total_bank_queries"], 600);

  EXPECT_EQ(call({"infer", "--data", path("d"), "--model", path("c/model.ckpt"), "--strategy",
                  "sideways", "--out", path("j")})
                .code,
            kExitConfig);
}

TEST_F(CliTest, AttackMiaWritesTradeoffRows) {
  gen("d", 4000, 400);
  auto r = call({"attack-mia", "--data", path("d"), "--set", "epochs=1", "--set",
                 "batch-size=256", "--set", "hidden=16,8", "--set", "shadows=2", "--noise-grid",
                 "none,gaussian:0.2", "--alphas", "0.3", "--seeds", "1,2", "--out", path("a")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines_of(slurp(path("a/tradeoff.csv")));
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(rows[0], "noise_family,param,alpha,mia_success,baseline,auprc,seed");
  EXPECT_EQ(rows.size() - 1, 4u);
  EXPECT_EQ(call({"attack-mia", "--data", path("d"), "--alphas", "0.3,lots"}).code, kExitConfig);
}

TEST_F(CliTest, BenchReportsEveryComponent) {
  auto r = call({"bench", "--set", "n-transactions=1500", "--set", "n-accounts=200", "--set",
                 "anomaly-rate=0.02", "--set", "bench-rows=8", "--out", path("b")});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = load_json(path("b/bench.json"));
  for (const char* k :
       {"feature_extraction", "sgd", "message_preparation", "ot", "communication"}) {
    ASSERT_TRUE(j.contains(k)) << k;
    EXPECT_GE(j[k]["seconds"].get<double>(), 0.0);
  }
  EXPECT_EQ(j["ot_mode"], "crypto");
}

}  // namespace
}  // namespace fedflag::cli
