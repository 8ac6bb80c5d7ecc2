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

#include "cli.hpp"

#include <sodium.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedflag/csv.hpp"
#include "fedflag/data.hpp"
#include "fedflag/error.hpp"
#include "fedflag/kv_config.hpp"
#include "fedflag/model.hpp"
#include "fedflag/noise.hpp"
#include "fedflag/ot.hpp"
#include "fedflag/privacy.hpp"
#include "fedflag/protocol.hpp"
#include "fedflag/ring.hpp"
#include "fedflag/tcp.hpp"
#include "fedflag/transport.hpp"

namespace fedflag::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
    case ErrorCode::kInvalidArgument:
      return kExitConfig;
    case ErrorCode::kIo:
      return kExitIo;
    case ErrorCode::kProtocol:
    case ErrorCode::kSessionMismatch:
    case ErrorCode::kDecode:
    case ErrorCode::kAuthentication:
    case ErrorCode::kTransport:
    case ErrorCode::kTimeout:
    case ErrorCode::kAccessViolation:
      return kExitProtocol;
    case ErrorCode::kOverflow:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kDuplicateAccount:
    case ErrorCode::kUnknownAccount:
    case ErrorCode::kUnknownCurrency:
    case ErrorCode::kNoAnomalous:
    case ErrorCode::kNoPositives:
    case ErrorCode::kNonFinite:
      return kExitData;
  }
  return kExitInternal;
}

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out = ".";
};

std::string hex(std::span<const std::uint8_t> b) {
  std::ostringstream s;
  for (auto c : b) s << std::hex << std::setw(2) << std::setfill('0') << int(c);
  return s.str();
}

std::string digest(std::span<const std::uint8_t> data) {
  std::array<std::uint8_t, 32> h{};
  crypto_generichash(h.data(), h.size(), data.data(), data.size(), nullptr, 0);
  return hex(h);
}

std::string digest(const std::string& s) {
  return digest(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return digest(s);
}

KvConfig load_config(const Common& c) {
  KvConfig cfg = c.config.empty() ? KvConfig{} : KvConfig::load(c.config);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw Error(ErrorCode::kConfig, "--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

void overlay(KvConfig& into, const KvConfig& from) {
  for (const auto& [k, v] : from.values()) into.set(k, v);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir + ": " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Records what is needed to replay a run: the effective config (also written
// as effective.conf), its digest, seeds, input digests and versions.
void write_manifest(const std::string& dir, const std::string& command, const KvConfig& effective,
                    const std::map<std::string, std::string>& inputs) {
  const std::string canon = effective.canonical();
  write_text(join(dir, "effective.conf"), canon);
  json m;
  m["command"] = command;
  m["config_hash"] = digest(canon);
  json cfg = json::object();
  for (const auto& [k, v] : effective.values()) cfg[k] = v;
  m["config"] = cfg;
  json seeds = json::object();
  for (const auto& [k, v] : effective.values())
    if (k.size() >= 4 && k.compare(k.size() - 4, 4, "seed") == 0) seeds[k] = v;
  m["seeds"] = seeds;
  json in = json::object();
  for (const auto& [name, path] : inputs) in[name] = {{"path", path}, {"blake2b", file_digest(path)}};
  m["inputs"] = in;
  m["versions"] = {{"fedflag", FEDFLAG_VERSION},
                   {"wire_protocol", transport::kProtocolVersion},
                   {"libsodium", sodium_version_string()},
                   {"compiler", __VERSION__}};
  write_json(join(dir, "manifest.json"), m);
}

// ---------------------------------------------------------------------------

struct Loaded {
  std::vector<data::TransactionRecord> txs;
  std::vector<data::AccountRecord> accounts;
  data::RateTable rates = data::RateTable::defaults();
  std::map<std::string, std::string> inputs;
};

Loaded load_data(const std::string& dir, const KvConfig& cfg) {
  Loaded l;
  const std::string tx = join(dir, "transactions.csv");
  const std::string acc = join(dir, "accounts.csv");
  l.txs = data::load_transactions(tx);
  l.accounts = data::load_accounts(acc);
  l.inputs = {{"transactions", tx}, {"accounts", acc}};
  if (auto r = cfg.get("rates")) {
    l.rates = data::RateTable::load(*r);
    l.inputs["rates"] = *r;
  }
  return l;
}

data::PrepareConfig prepare_config(const KvConfig& cfg) {
  data::PrepareConfig p;
  p.train_fraction = cfg.get_double("train-fraction", p.train_fraction);
  p.upsample_ratio = cfg.get_double("upsample-ratio", p.upsample_ratio);
  p.seed = cfg.get_u64("split-seed", p.seed);
  return p;
}

void record_prepare(KvConfig& eff, const data::PrepareConfig& p) {
  std::ostringstream a, b;
  a << std::setprecision(17) << p.train_fraction;
  b << std::setprecision(17) << p.upsample_ratio;
  eff.set("train-fraction", a.str());
  eff.set("upsample-ratio", b.str());
  eff.set("split-seed", std::to_string(p.seed));
}

// Bit per example, kSkipRow when the receiver is missing from its bank.
std::vector<std::uint8_t> true_flags(std::span<const data::Example> xs,
                                     const data::FlagTable& table, bool skip_missing) {
  std::vector<std::uint8_t> f;
  f.reserve(xs.size());
  for (const auto& ex : xs) {
    auto b = table.bit(ex.receiver_bank, ex.receiver_account);
    f.push_back(b ? *b : (skip_missing ? model::kSkipRow : 0));
  }
  return f;
}

double test_auprc(const model::Mlp& m, std::span<const data::Example> test,
                  std::span<const std::uint8_t> flags) {
  std::vector<std::uint8_t> labels;
  for (const auto& ex : test) labels.push_back(ex.label);
  return model::auprc(model::predict(m, test, flags), labels);
}

json comms_json(const transport::CommStats& s, std::uint64_t ot_transfers) {
  json links = json::array();
  std::map<PartyId, std::pair<std::uint64_t, std::uint64_t>> per;
  for (const auto& [k, l] : s.links()) {
    links.push_back({{"from", to_string(k.first)},
                     {"to", to_string(k.second)},
                     {"frames", l.frames},
                     {"bytes", l.bytes}});
    per[k.first].first += l.bytes;
    per[k.second].second += l.bytes;
  }
  json parties = json::object();
  for (const auto& [p, sr] : per)
    parties[to_string(p)] = {{"bytes_sent", sr.first}, {"bytes_received", sr.second}};
  json j;
  j["total_bytes"] = s.total_bytes();
  j["total_frames"] = s.total_frames();
  j["ot_transfers"] = ot_transfers;
  j["parties"] = parties;
  j["links"] = links;
  return j;
}

json bank_map(const std::map<std::uint32_t, std::uint64_t>& m) {
  json j = json::object();
  for (const auto& [b, n] : m) j[to_string(PartyId::bank(b))] = n;
  return j;
}

json view_json(const protocol::ViewCounts& v) {
  json j = json::object();
  for (const auto& [t, n] : v) j[transport::to_string(t)] = n;
  return j;
}

json leakage_json(const protocol::LeakageLedger& l) {
  json j;
  j["bank_train_queries"] = bank_map(l.bank_train_queries);
  j["bank_key_queries"] = bank_map(l.bank_key_queries);
  j["bank_infer_queries"] = bank_map(l.bank_infer_queries);
  j["aggregator_observations"] = bank_map(l.aggregator_observations);
  j["total_bank_queries"] = l.total_bank_queries();
  j["total_aggregator_observations"] = l.total_aggregator_observations();
  return j;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ','))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::kConfig, "bad " + what + " '" + s + "'");
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used == s.size() && s[0] != '-') return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::kConfig, "bad " + what + " '" + s + "'");
}

// ---------------------------------------------------------------------------

int gen_data(const Common& c, std::ostream& out) {
  KvConfig cfg = load_config(c);
  const auto d = data::DatasetConfig::from_config(cfg);
  d.validate();
  data::RateTable rates = data::RateTable::defaults();
  std::map<std::string, std::string> inputs;
  if (auto r = cfg.get("rates")) {
    rates = data::RateTable::load(*r);
    inputs["rates"] = *r;
  }
  const auto ds = data::generate_synthetic(d, rates);
  ensure_dir(c.out);
  data::save_transactions(join(c.out, "transactions.csv"), ds.transactions);
  data::save_accounts(join(c.out, "accounts.csv"), ds.accounts);
  overlay(cfg, d.to_config());
  write_manifest(c.out, "gen-data", cfg, inputs);
  std::size_t anomalous = 0;
  for (const auto& t : ds.transactions) anomalous += t.label.value_or(0);
  out << "wrote " << ds.transactions.size() << " transactions (" << anomalous
      << " anomalous) and " << ds.accounts.size() << " accounts to " << c.out << "\n";
  return kExitOk;
}

int train_centralized(const Common& c, const std::string& data_dir, bool flag_blind,
                      std::ostream& out) {
  KvConfig cfg = load_config(c);
  if (flag_blind) cfg.set("flag-blind", "true");
  flag_blind = cfg.get_bool("flag-blind", false);
  const auto tcfg = model::TrainConfig::from_config(cfg);
  tcfg.validate();
  const auto pcfg = prepare_config(cfg);
  auto l = load_data(data_dir, cfg);
  const auto prep = data::prepare(l.txs, l.accounts, l.rates, pcfg);
  const auto table = data::FlagTable::from_accounts(l.accounts, prep.banks);
  auto flags = true_flags(prep.train, table, true);
  auto tflags = true_flags(prep.test, table, false);
  if (flag_blind) {
    for (auto& f : flags)
      if (f != model::kSkipRow) f = 0;
    std::fill(tflags.begin(), tflags.end(), 0);
  }
  const auto res = model::train_centralized(prep.train, flags, tcfg);
  ensure_dir(c.out);
  model::save_checkpoint(join(c.out, "model.ckpt"), res.model, &prep.normalizer);
  json m;
  m["auprc"] = test_auprc(res.model, prep.test, tflags);
  m["epoch_loss"] = res.epoch_loss;
  m["steps"] = res.steps;
  m["skipped_per_epoch"] = res.skipped;
  m["train_rows"] = prep.train.size();
  m["test_rows"] = prep.test.size();
  m["flag_blind"] = flag_blind;
  write_json(join(c.out, "metrics.json"), m);
  overlay(cfg, tcfg.to_config());
  record_prepare(cfg, pcfg);
  write_manifest(c.out, "train-centralized", cfg, l.inputs);
  out << "auprc " << m["auprc"].get<double>() << "\n";
  return kExitOk;
}

struct FederatedOptions {
  std::string data;
  std::string transport = "sim";
  std::string ot;
  std::string noise;
  std::string role;
  std::vector<std::string> peers;
};

protocol::ProtocolConfig protocol_config(KvConfig& cfg, const FederatedOptions& o) {
  if (!o.ot.empty()) cfg.set("ot", o.ot);
  if (!o.noise.empty()) cfg.set("noise", o.noise);
  auto p = protocol::ProtocolConfig::from_config(cfg);
  p.validate();
  return p;
}

// Directory entries for hub and aggregator: role=host:port.
std::map<PartyId, transport::TcpAddress> parse_directory(const std::vector<std::string>& peers,
                                                         std::uint32_t banks) {
  std::map<PartyId, transport::TcpAddress> dir;
  for (const auto& p : peers) {
    const auto eq = p.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::kConfig, "--peer expects role=host:port");
    dir[parse_party_id(p.substr(0, eq))] = transport::parse_tcp_address(p.substr(eq + 1));
  }
  for (PartyId need : {PartyId::hub(), PartyId::aggregator()})
    if (!dir.contains(need)) throw Error(ErrorCode::kConfig, "--peer missing for " + to_string(need));
  // Banks only dial out.
  for (std::uint32_t b = 0; b < banks; ++b) dir.try_emplace(PartyId::bank(b));
  return dir;
}

int train_role(const Common& c, KvConfig& cfg, const FederatedOptions& o,
               const protocol::ProtocolConfig& pcfg, const protocol::Federation& fed,
               const data::PreparedData& prep, const Loaded& l, std::ostream& out) {
  const PartyId self = parse_party_id(o.role);
  if (self.role == Role::kBank && self.bank_index >= fed.bank_count)
    throw Error(ErrorCode::kConfig, "no bank " + std::to_string(self.bank_index));
  const auto dir = parse_directory(o.peers, fed.bank_count);
  const auto timeout = std::chrono::milliseconds(cfg.get_u64("tcp-timeout-ms", 120000));

  std::optional<protocol::ModelBatchSource> src;
  std::unique_ptr<transport::Party> party;
  if (self == PartyId::hub()) {
    src.emplace(fed.hub_train, pcfg.train);
    party = std::make_unique<protocol::Hub>(*src, fed.bank_count, pcfg);
  } else if (self == PartyId::aggregator()) {
    const auto dim = model::Mlp(pcfg.train.sizes).parameter_count();
    party = std::make_unique<protocol::Aggregator>(fed.bank_count, dim, pcfg);
  } else {
    party = std::make_unique<protocol::Bank>(self.bank_index, fed.bank_accounts.at(self.bank_index),
                                             pcfg);
  }

  transport::TcpOptions topts;
  topts.connect_timeout = timeout;
  transport::TcpEndpoint ep(self, topts);
  if (self.role != Role::kBank) {
    const auto& a = dir.at(self);
    ep.listen(a.host, a.port);
  }
  try {
    ep.connect(protocol::peers_of(self, dir));
    transport::run_tcp(*party, ep, timeout);
  } catch (...) {
    ep.abort();
    throw;
  }
  const auto stats = ep.stats().sent_by(self);
  ep.close();

  ensure_dir(c.out);
  std::uint64_t ots = 0;
  json leak;
  leak["role"] = to_string(self);
  if (auto* hub = dynamic_cast<protocol::Hub*>(party.get())) {
    ots = hub->ot_transfers();
    model::save_checkpoint(join(c.out, "model.ckpt"), src->model(), &prep.normalizer);
    json m;
    m["steps"] = hub->batches_done();
    m["skipped"] = src->skipped();
    m["ot_transfers"] = ots;
    write_json(join(c.out, "metrics.json"), m);
    leak["hub_view"] = view_json(hub->view());
  } else if (auto* agg = dynamic_cast<protocol::Aggregator*>(party.get())) {
    leak["aggregator_observations"] = bank_map(agg->observations());
    leak["aggregator_view"] = view_json(agg->view());
  } else if (auto* bank = dynamic_cast<protocol::Bank*>(party.get())) {
    leak["train_queries"] = bank->train_queries();
    leak["key_queries"] = bank->key_queries();
    leak["unknown_accounts"] = bank->unknown_accounts();
  }
  write_json(join(c.out, "comms.json"), comms_json(stats, ots));
  write_json(join(c.out, "leakage.json"), leak);
  overlay(cfg, pcfg.to_config());
  cfg.set("role", to_string(self));
  record_prepare(cfg, prepare_config(cfg));
  write_manifest(c.out, "train-federated", cfg, l.inputs);
  out << to_string(self) << " done, sent " << stats.total_bytes() << " bytes\n";
  return kExitOk;
}

int train_federated(const Common& c, const FederatedOptions& o, std::ostream& out) {
  KvConfig cfg = load_config(c);
  const auto pcfg = protocol_config(cfg, o);
  if (o.transport != "sim" && o.transport != "tcp")
    throw Error(ErrorCode::kConfig, "unknown transport '" + o.transport + "'");
  if (!o.role.empty() && o.transport != "tcp")
    throw Error(ErrorCode::kConfig, "--role needs --transport tcp");
  const auto prepc = prepare_config(cfg);
  auto l = load_data(o.data, cfg);
  const auto prep = data::prepare(l.txs, l.accounts, l.rates, prepc);
  const auto fed = protocol::make_federation(prep, l.accounts);
  cfg.set("transport", o.transport);
  if (!o.role.empty()) return train_role(c, cfg, o, pcfg, fed, prep, l, out);

  const std::uint64_t net_seed = cfg.get_u64("network-seed", 1);
  const auto res = o.transport == "sim" ? protocol::train_sim(fed, pcfg, net_seed)
                                        : protocol::train_tcp_loopback(fed, pcfg);
  const auto table = data::FlagTable::from_accounts(l.accounts, prep.banks);
  ensure_dir(c.out);
  model::save_checkpoint(join(c.out, "model.ckpt"), res.model, &prep.normalizer);
  json m;
  // Evaluation uses the true test flags; the deployed score goes through `infer`.
  m["auprc"] = test_auprc(res.model, prep.test, true_flags(prep.test, table, false));
  m["steps"] = res.steps;
  m["skipped"] = res.skipped;
  m["ot_transfers"] = res.ot_transfers;
  m["train_rows"] = prep.train.size();
  m["test_rows"] = prep.test.size();
  write_json(join(c.out, "metrics.json"), m);
  write_json(join(c.out, "comms.json"), comms_json(res.comms, res.ot_transfers));
  json leak = leakage_json(res.leakage);
  leak["hub_view"] = view_json(res.hub_view);
  write_json(join(c.out, "leakage.json"), leak);
  overlay(cfg, pcfg.to_config());
  cfg.set("network-seed", std::to_string(net_seed));
  record_prepare(cfg, prepc);
  write_manifest(c.out, "train-federated", cfg, l.inputs);
  out << "auprc " << m["auprc"].get<double>() << ", " << res.comms.total_bytes() << " bytes, "
      << res.ot_transfers << " OTs\n";
  return kExitOk;
}

struct InferOptions {
  std::string data;
  std::string model;
  std::string input;
  std::string strategy = "direct";
  std::string ot;
  std::string noise;
};

int infer(const Common& c, const InferOptions& o, std::ostream& out) {
  KvConfig cfg = load_config(c);
  if (!o.ot.empty()) cfg.set("ot", o.ot);
  if (!o.noise.empty()) cfg.set("infer-noise", o.noise);
  cfg.set("strategy", o.strategy);
  const auto strategy = protocol::parse_strategy(o.strategy);
  auto pcfg = protocol::ProtocolConfig::from_config(cfg);
  pcfg.validate();
  auto l = load_data(o.data, cfg);
  const auto ck = model::load_checkpoint(o.model);
  l.inputs["model"] = o.model;

  const auto banks = data::BankRegistry::from_accounts(l.accounts);
  std::vector<data::TransactionRecord> rows;
  std::vector<data::FeatureVector> raw;
  std::optional<data::Normalizer> norm = ck.normalizer;
  const auto prepc = prepare_config(cfg);
  if (o.input.empty()) {
    // The held-out split of the data directory.
    const auto prep = data::prepare(l.txs, l.accounts, l.rates, prepc);
    if (!norm) norm = prep.normalizer;
    const auto all = data::extract_all(prep.transactions, l.rates);
    rows.assign(prep.transactions.begin() + prep.train_rows, prep.transactions.end());
    raw.assign(all.begin() + prep.train_rows, all.end());
  } else {
    if (!norm) throw Error(ErrorCode::kConfig, "checkpoint has no normalizer");
    auto history = data::sorted_by_time(l.txs);
    auto fresh = data::sorted_by_time(data::load_transactions(o.input));
    l.inputs["input"] = o.input;
    if (!history.empty() && !fresh.empty() && fresh.front().timestamp < history.back().timestamp)
      throw Error(ErrorCode::kInvalidArgument, "input transactions precede the history");
    const std::size_t n0 = history.size();
    history.insert(history.end(), fresh.begin(), fresh.end());
    const auto all = data::extract_all(history, l.rates);
    rows = std::move(fresh);
    raw.assign(all.begin() + n0, all.end());
  }

  std::vector<protocol::InferQuery> queries;
  std::vector<std::size_t> qrow;
  std::vector<std::vector<double>> feats(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto x = norm->apply(raw[i]);
    feats[i].assign(x.begin(), x.end());
    if (auto b = banks.index_of(rows[i].receiver_bank)) {
      queries.push_back({feats[i], *b, rows[i].receiver_account});
      qrow.push_back(i);
    }
  }
  const auto fed_accounts = [&] {
    std::vector<std::vector<data::AccountRecord>> v;
    for (std::uint32_t i = 0; i < banks.size(); ++i) v.push_back(banks.accounts_of(l.accounts, i));
    return v;
  }();
  const auto res = protocol::infer_sim(ck.model, queries, strategy, fed_accounts, pcfg,
                                       cfg.get_u64("network-seed", 1));

  std::vector<protocol::InferResult> per(rows.size());
  for (std::size_t q = 0; q < qrow.size(); ++q) per[qrow[q]] = res.results[q];
  ensure_dir(c.out);
  std::ostringstream csv;
  csv::write_row(csv, {"tx_id", "score", "s0", "s1", "known", "label"});
  const auto num = [](double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
  };
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  bool all_labeled = true;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto r = per[i];
    if (!r.ok) {
      // Unknown receivers score as normal accounts.
      r.s0 = ck.model.forward(feats[i], 0);
      r.s1 = ck.model.forward(feats[i], 1);
      r.score = r.s0;
    }
    std::string label;
    if (rows[i].label) {
      label = std::to_string(int(*rows[i].label));
      labels.push_back(*rows[i].label);
    } else {
      all_labeled = false;
    }
    csv::write_row(csv, {rows[i].tx_id, num(r.score), num(r.s0), num(r.s1), r.ok ? "1" : "0", label});
    scores.push_back(r.score);
  }
  write_text(join(c.out, "scores.csv"), csv.str());
  json m;
  m["rows"] = rows.size();
  m["unknown_receivers"] = rows.size() - std::count_if(per.begin(), per.end(),
                                                       [](const auto& r) { return r.ok; });
  m["strategy"] = o.strategy;
  if (all_labeled && !rows.empty()) m["auprc"] = model::auprc(scores, labels);
  write_json(join(c.out, "metrics.json"), m);
  write_json(join(c.out, "comms.json"), comms_json(res.comms, res.ot_transfers));
  write_json(join(c.out, "leakage.json"), leakage_json(res.leakage));
  overlay(cfg, pcfg.to_config());
  record_prepare(cfg, prepc);
  write_manifest(c.out, "infer", cfg, l.inputs);
  out << "scored " << rows.size() << " rows";
  if (m.contains("auprc")) out << ", auprc " << m["auprc"].get<double>();
  out << "\n";
  return kExitOk;
}

struct AttackOptions {
  std::string data;
  std::string noise_grid;
  std::string alphas;
  std::string seeds;
};

int attack_mia(const Common& c, const AttackOptions& o, std::ostream& out) {
  KvConfig cfg = load_config(c);
  if (!o.noise_grid.empty()) cfg.set("noise-grid", o.noise_grid);
  if (!o.alphas.empty()) cfg.set("alphas", o.alphas);
  if (!o.seeds.empty()) cfg.set("seeds", o.seeds);
  const auto tcfg = model::TrainConfig::from_config(cfg);
  tcfg.validate();
  const auto acfg = privacy::AttackConfig::from_config(cfg);
  acfg.validate();
  std::vector<NoiseSpec> grid;
  for (const auto& s : split_list(cfg.get_string("noise-grid", to_string(tcfg.noise))))
    grid.push_back(parse_noise(s));
  std::vector<double> alphas;
  for (const auto& s : split_list(cfg.get_string("alphas", "")))
    alphas.push_back(parse_double(s, "alpha"));
  if (alphas.empty()) alphas.push_back(acfg.alpha);
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(cfg.get_string("seeds", ""))) seeds.push_back(parse_u64(s, "seed"));
  if (seeds.empty()) seeds.push_back(tcfg.seed);
  if (grid.empty()) throw Error(ErrorCode::kConfig, "empty noise grid");
  const double slack = cfg.get_double("trend-slack", 0.03);

  const auto prepc = prepare_config(cfg);
  auto l = load_data(o.data, cfg);
  const auto prep = data::prepare(l.txs, l.accounts, l.rates, prepc);
  const auto rows = privacy::sweep_tradeoff(prep, l.accounts, tcfg, grid, alphas, seeds, acfg);
  ensure_dir(c.out);
  {
    std::ostringstream csv;
    privacy::write_tradeoff_csv(csv, rows);
    write_text(join(c.out, "tradeoff.csv"), csv.str());
  }
  json m;
  m["rows"] = rows.size();
  m["trend_violations"] = privacy::trend_violations(rows, grid, slack);
  write_json(join(c.out, "metrics.json"), m);
  overlay(cfg, tcfg.to_config());
  overlay(cfg, acfg.to_config());
  record_prepare(cfg, prepc);
  write_manifest(c.out, "attack-mia", cfg, l.inputs);
  out << rows.size() << " trade-off rows, " << m["trend_violations"].size()
      << " trend violations\n";
  return kExitOk;
}

// Wall time of the components a federated step spends time in.
int bench(const Common& c, const std::string& data_dir, std::ostream& out) {
  using Clock = std::chrono::steady_clock;
  KvConfig cfg = load_config(c);
  if (!cfg.contains("ot")) cfg.set("ot", "crypto");
  auto pcfg = protocol::ProtocolConfig::from_config(cfg);
  pcfg.validate();
  const std::size_t rows_n = cfg.get_u64("bench-rows", 64);
  if (rows_n == 0) throw Error(ErrorCode::kConfig, "bench-rows must be positive");

  Loaded l;
  if (data_dir.empty()) {
    const auto d = data::DatasetConfig::from_config(cfg);
    d.validate();
    auto ds = data::generate_synthetic(d, l.rates);
    l.txs = std::move(ds.transactions);
    l.accounts = std::move(ds.accounts);
    overlay(cfg, d.to_config());
  } else {
    l = load_data(data_dir, cfg);
  }
  json report = json::object();
  auto record = [&](const std::string& name, Clock::duration dt, std::size_t items) {
    const double s = std::chrono::duration<double>(dt).count();
    report[name] = {{"seconds", s}, {"items", items}, {"us_per_item", 1e6 * s / double(items)}};
  };

  auto t0 = Clock::now();
  const auto feats = data::extract_all(l.txs, l.rates);
  record("feature_extraction", Clock::now() - t0, feats.size());

  const auto prepc = prepare_config(cfg);
  const auto prep = data::prepare(l.txs, l.accounts, l.rates, prepc);
  const auto table = data::FlagTable::from_accounts(l.accounts, prep.banks);
  const auto flags = true_flags(prep.train, table, false);
  const auto m = model::initial_model(pcfg.train);
  const std::size_t dim = m.parameter_count();
  {
    std::vector<model::BatchRow> batch;
    const std::size_t n = std::min(prep.train.size(), pcfg.train.batch_size);
    for (std::size_t i = 0; i < n; ++i)
      batch.push_back({prep.train[i].x, flags[i], prep.train[i].label});
    t0 = Clock::now();
    auto g = model::batch_gradient_fast(m, batch, pcfg.train.weight_decay, pcfg.train.clip);
    record("sgd", Clock::now() - t0, n);
  }

  Prg rng = Prg::from_u64(cfg.get_u64("bench-seed", 1));
  std::vector<double> u0(dim), u1(dim);
  for (auto& v : u0) v = rng.uniform01() - 0.5;
  for (auto& v : u1) v = rng.uniform01() - 0.5;
  const auto f0 = ring::FixedVector::encode(u0, pcfg.fraction_bits);
  const auto f1 = ring::FixedVector::encode(u1, pcfg.fraction_bits);
  {
    t0 = Clock::now();
    for (std::size_t i = 0; i < rows_n; ++i) {
      transport::ProtocolMessage msg;
      msg.type = transport::MsgType::kShareForward;
      msg.payload = ring::to_bytes(ring::FixedVector::encode(u0, pcfg.fraction_bits));
      const auto frame = transport::encode_frame(msg);
      const auto back = transport::decode_frame(frame);
      auto d = ring::from_bytes(back.payload, pcfg.fraction_bits).decode();
      if (d.size() != dim) throw Error(ErrorCode::kProtocol, "bench round trip lost data");
    }
    record("message_preparation", Clock::now() - t0, rows_n);
  }
  {
    Prg s = rng.derive("sender"), r = rng.derive("receiver");
    t0 = Clock::now();
    for (std::size_t i = 0; i < rows_n; ++i) {
      SessionId sid{};
      sid[0] = static_cast<std::uint8_t>(i);
      ot::ot_masked_select(f0, f1, static_cast<std::uint8_t>(i & 1), pcfg.ot_mode, s, r, sid);
    }
    record("ot", Clock::now() - t0, rows_n);
  }
  {
    transport::TcpEndpoint a(PartyId::hub()), b(PartyId::aggregator());
    const auto port = a.listen("127.0.0.1", 0);
    std::map<PartyId, transport::TcpAddress> dir{{PartyId::hub(), {"127.0.0.1", port}},
                                                 {PartyId::aggregator(), {"127.0.0.1", 0}}};
    std::thread acceptor([&] { a.connect(dir); });
    b.connect(dir);
    acceptor.join();
    transport::ProtocolMessage msg;
    msg.sender = PartyId::aggregator();
    msg.type = transport::MsgType::kShareForward;
    msg.payload = ring::to_bytes(f0);
    t0 = Clock::now();
    std::thread sender([&] {
      for (std::size_t i = 0; i < rows_n; ++i) b.send(PartyId::hub(), msg);
    });
    for (std::size_t i = 0; i < rows_n; ++i) a.receive(std::chrono::seconds(30));
    sender.join();
    record("communication", Clock::now() - t0, rows_n);
    b.close();
    a.close();
  }
  report["dimension"] = dim;
  report["ot_mode"] = ot::mode_name(pcfg.ot_mode);
  ensure_dir(c.out);
  write_json(join(c.out, "bench.json"), report);
  overlay(cfg, pcfg.to_config());
  record_prepare(cfg, prepc);
  write_manifest(c.out, "bench", cfg, l.inputs);
  for (const auto& [k, v] : report.items())
    if (v.is_object()) out << k << ": " << v["seconds"].get<double>() << " s\n";
  return kExitOk;
}

void error_json(std::ostream& err, const std::string& kind, const std::string& msg, int code) {
  json j;
  j["error"] = kind;
  j["message"] = msg;
  j["exit_code"] = code;
  err << j.dump() << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (sodium_init() < 0) {
    error_json(err, "internal", "libsodium failed to initialize", kExitInternal);
    return kExitInternal;
  }
  CLI::App app{"Federated anomaly detection over flag-holding banks.", "fedflag"};
  app.require_subcommand(1);
  app.set_version_flag("--version", FEDFLAG_VERSION);

  Common common;
  auto add_common = [&](CLI::App* sc) {
    sc->add_option("--config", common.config, "key = value config file");
    sc->add_option("--set", common.sets, "config override key=value (repeatable)")
        ->allow_extra_args(false);
    sc->add_option("--out", common.out, "output directory")->capture_default_str();
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen);

  std::string data_dir;
  bool flag_blind = false;
  auto* cen = app.add_subcommand("train-centralized", "train with every flag in the clear");
  add_common(cen);
  cen->add_option("--data", data_dir, "directory with transactions.csv and accounts.csv")
      ->required();
  cen->add_flag("--flag-blind", flag_blind, "force the flag input to 0");

  FederatedOptions fo;
  auto* fed = app.add_subcommand("train-federated", "train with flags kept at the banks");
  add_common(fed);
  fed->add_option("--data", fo.data, "directory with transactions.csv and accounts.csv")
      ->required();
  fed->add_option("--transport", fo.transport, "sim|tcp")->capture_default_str();
  fed->add_option("--ot", fo.ot, "ideal|crypto");
  fed->add_option("--noise", fo.noise, "none|gaussian:<sigma>|laplace:<scale>");
  fed->add_option("--role", fo.role, "run one party over tcp: hub|aggregator|bank:<i>");
  fed->add_option("--peer", fo.peers, "role=host:port for hub and aggregator (repeatable)")
      ->allow_extra_args(false);

  InferOptions io;
  auto* inf = app.add_subcommand("infer", "score transactions with the two-party protocol");
  add_common(inf);
  inf->add_option("--data", io.data, "directory with transactions.csv and accounts.csv")
      ->required();
  inf->add_option("--model", io.model, "checkpoint")->required();
  inf->add_option("--input", io.input, "transactions to score (default: held-out split)");
  inf->add_option("--strategy", io.strategy, "direct|round")->capture_default_str();
  inf->add_option("--ot", io.ot, "ideal|crypto");
  inf->add_option("--noise", io.noise, "bank-side noise on the selected share");

  AttackOptions ao;
  auto* mia = app.add_subcommand("attack-mia", "flag inference attack and trade-off sweep");
  add_common(mia);
  mia->add_option("--data", ao.data, "directory with transactions.csv and accounts.csv")
      ->required();
  mia->add_option("--noise-grid", ao.noise_grid, "comma-separated noise specs");
  mia->add_option("--alphas", ao.alphas, "comma-separated known-account fractions");
  mia->add_option("--seeds", ao.seeds, "comma-separated seeds");

  std::string bench_data;
  auto* ben = app.add_subcommand("bench", "time the protocol components");
  add_common(ben);
  ben->add_option("--data", bench_data, "dataset directory (default: generate one)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << FEDFLAG_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << app.help() << "\n";
    error_json(err, "usage", e.what(), kExitUsage);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return gen_data(common, out);
    if (cen->parsed()) return train_centralized(common, data_dir, flag_blind, out);
    if (fed->parsed()) return train_federated(common, fo, out);
    if (inf->parsed()) return infer(common, io, out);
    if (mia->parsed()) return attack_mia(common, ao, out);
    if (ben->parsed()) return bench(common, bench_data, out);
  } catch (const Error& e) {
    const int code = exit_code_for(e.code());
    error_json(err, std::string(error_code_name(e.code())), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    error_json(err, "internal", e.what(), kExitInternal);
    return kExitInternal;
  }
  error_json(err, "usage", "no subcommand", kExitUsage);
  return kExitUsage;
}

}  // namespace fedflag::cli
