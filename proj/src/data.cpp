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

#include "fedflag/data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "fedflag/csv.hpp"

namespace fedflag::data {

namespace {

const csv::Row kTxHeader = {"tx-id",         "sender-name",      "sender-account",
                            "sender-bank",   "sender-street",    "sender-zip",
                            "receiver-name", "receiver-account", "receiver-bank",
                            "amount",        "currency",         "timestamp",
                            "label"};
const csv::Row kAccountHeader = {"bank-id", "account-id", "name", "street", "zip", "flag"};

std::string format_amount(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

double parse_double(const std::string& s, const char* what) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::kDecode, std::string("bad ") + what + " '" + s + "'");
  }
  return v;
}

std::int64_t parse_int(const std::string& s, const char* what) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw Error(ErrorCode::kDecode, std::string("bad ") + what + " '" + s + "'");
  }
  return v;
}

std::optional<std::uint8_t> parse_label(const std::string& s) {
  if (s.empty()) return std::nullopt;
  if (s == "normal" || s == "0") return 0;
  if (s == "anomalous" || s == "1") return 1;
  throw Error(ErrorCode::kDecode, "bad label '" + s + "'");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return in;
}

}  // namespace

void write_transactions(std::ostream& out, std::span<const TransactionRecord> txs) {
  csv::write_row(out, kTxHeader);
  for (const auto& t : txs) {
    std::string label;
    if (t.label) label = *t.label ? "anomalous" : "normal";
    csv::write_row(out, {t.tx_id, t.sender_name, t.sender_account, t.sender_bank,
                         t.sender_street, t.sender_zip, t.receiver_name,
                         t.receiver_account, t.receiver_bank, format_amount(t.amount),
                         t.currency, std::to_string(t.timestamp), label});
  }
}

void write_accounts(std::ostream& out, std::span<const AccountRecord> accounts) {
  csv::write_row(out, kAccountHeader);
  for (const auto& a : accounts) {
    csv::write_row(out, {a.bank_id, a.account_id, a.name, a.street, a.zip,
                         std::to_string(a.flag)});
  }
}

std::vector<TransactionRecord> read_transactions(std::istream& in) {
  const csv::Table t = csv::Table::read(in);
  std::array<std::size_t, 13> col{};
  for (std::size_t i = 0; i < kTxHeader.size(); ++i) {
    // The label column is optional for inference inputs.
    if (kTxHeader[i] == "label") {
      const auto& h = t.header();
      auto it = std::find(h.begin(), h.end(), "label");
      col[i] = it == h.end() ? SIZE_MAX : static_cast<std::size_t>(it - h.begin());
    } else {
      col[i] = t.column(kTxHeader[i]);
    }
  }
  std::vector<TransactionRecord> out;
  out.reserve(t.rows().size());
  for (const auto& r : t.rows()) {
    TransactionRecord tx;
    tx.tx_id = r[col[0]];
    tx.sender_name = r[col[1]];
    tx.sender_account = r[col[2]];
    tx.sender_bank = r[col[3]];
    tx.sender_street = r[col[4]];
    tx.sender_zip = r[col[5]];
    tx.receiver_name = r[col[6]];
    tx.receiver_account = r[col[7]];
    tx.receiver_bank = r[col[8]];
    tx.amount = parse_double(r[col[9]], "amount");
    if (!(tx.amount > 0)) {
      throw Error(ErrorCode::kDecode, "transaction " + tx.tx_id + " has non-positive amount");
    }
    tx.currency = r[col[10]];
    tx.timestamp = parse_int(r[col[11]], "timestamp");
    if (col[12] != SIZE_MAX) tx.label = parse_label(r[col[12]]);
    out.push_back(std::move(tx));
  }
  return out;
}

std::vector<AccountRecord> read_accounts(std::istream& in) {
  const csv::Table t = csv::Table::read(in);
  std::array<std::size_t, 6> col{};
  for (std::size_t i = 0; i < kAccountHeader.size(); ++i) col[i] = t.column(kAccountHeader[i]);
  std::vector<AccountRecord> out;
  out.reserve(t.rows().size());
  for (const auto& r : t.rows()) {
    AccountRecord a;
    a.bank_id = r[col[0]];
    a.account_id = r[col[1]];
    a.name = r[col[2]];
    a.street = r[col[3]];
    a.zip = r[col[4]];
    const std::int64_t flag = parse_int(r[col[5]], "flag");
    if (flag < 0 || flag > 12) {
      throw Error(ErrorCode::kDecode, "flag out of range for account " + a.account_id);
    }
    a.flag = static_cast<int>(flag);
    out.push_back(std::move(a));
  }
  return out;
}

void save_transactions(const std::string& path, std::span<const TransactionRecord> txs) {
  auto out = open_out(path);
  write_transactions(out, txs);
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path);
}

void save_accounts(const std::string& path, std::span<const AccountRecord> accounts) {
  auto out = open_out(path);
  write_accounts(out, accounts);
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path);
}

std::vector<TransactionRecord> load_transactions(const std::string& path) {
  auto in = open_in(path);
  return read_transactions(in);
}

std::vector<AccountRecord> load_accounts(const std::string& path) {
  auto in = open_in(path);
  return read_accounts(in);
}

// ---------------------------------------------------------------------------

RateTable RateTable::defaults() {
  RateTable t;
  t.rates_ = {{"AUD", 0.66}, {"CAD", 0.74}, {"CHF", 1.13}, {"EUR", 1.09},
              {"GBP", 1.27}, {"JPY", 0.0068}, {"SGD", 0.75}, {"USD", 1.0}};
  return t;
}

RateTable RateTable::from_config(const KvConfig& cfg) {
  RateTable t;
  for (const auto& [k, v] : cfg.values()) t.set(k, cfg.get_double(k, 0));
  if (t.rates_.empty()) throw Error(ErrorCode::kConfig, "rate table is empty");
  return t;
}

RateTable RateTable::load(const std::string& path) {
  return from_config(KvConfig::load(path));
}

void RateTable::set(const std::string& currency, double usd_per_unit) {
  if (!(usd_per_unit > 0) || !std::isfinite(usd_per_unit)) {
    throw Error(ErrorCode::kConfig, "rate for " + currency + " must be positive");
  }
  rates_[currency] = usd_per_unit;
}

double RateTable::rate(const std::string& currency) const {
  auto it = rates_.find(currency);
  if (it == rates_.end()) {
    throw Error(ErrorCode::kUnknownCurrency, "unknown currency '" + currency + "'");
  }
  return it->second;
}

std::vector<std::string> RateTable::currencies() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : rates_) out.push_back(k);
  return out;
}

// ---------------------------------------------------------------------------

void DatasetConfig::validate() const {
  if (n_transactions < 1) throw Error(ErrorCode::kConfig, "n-transactions must be >= 1");
  if (n_accounts < 4) throw Error(ErrorCode::kConfig, "n-accounts must be >= 4");
  if (n_banks < 1) throw Error(ErrorCode::kConfig, "n-banks must be >= 1");
  if (!(anomaly_rate > 0 && anomaly_rate < 1)) {
    throw Error(ErrorCode::kConfig, "anomaly-rate must be in (0, 1)");
  }
  if (!(rho >= 0 && rho <= 1)) throw Error(ErrorCode::kConfig, "rho must be in [0, 1]");
}

DatasetConfig DatasetConfig::from_config(const KvConfig& cfg) {
  DatasetConfig d;
  d.n_transactions = cfg.get_u64("n-transactions", d.n_transactions);
  d.n_accounts = cfg.get_u64("n-accounts", d.n_accounts);
  d.n_banks = cfg.get_u64("n-banks", d.n_banks);
  d.anomaly_rate = cfg.get_double("anomaly-rate", d.anomaly_rate);
  d.rho = cfg.get_double("rho", d.rho);
  d.seed = cfg.get_u64("seed", d.seed);
  d.validate();
  return d;
}

KvConfig DatasetConfig::to_config() const {
  KvConfig c;
  c.set("n-transactions", std::to_string(n_transactions));
  c.set("n-accounts", std::to_string(n_accounts));
  c.set("n-banks", std::to_string(n_banks));
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", anomaly_rate);
  c.set("anomaly-rate", buf);
  std::snprintf(buf, sizeof buf, "%.17g", rho);
  c.set("rho", buf);
  c.set("seed", std::to_string(seed));
  return c;
}

namespace {

constexpr std::int64_t kEpochStart = 1704067200;  // 2024-01-01T00:00:00Z
constexpr std::int64_t kSpanDays = 90;
constexpr std::size_t kContacts = 3;
constexpr double kContactProbability = 0.6;
constexpr double kNormalLogMean = 5.5;
constexpr double kNormalLogSd = 1.0;
constexpr double kAnomalyLogShift = 0.6;
constexpr double kAnomalyLogSd = 1.2;

const char* const kFirstNames[] = {"Ada",   "Bruno", "Chen",  "Dara", "Elif", "Farah",
                                   "Goran", "Hana",  "Ivo",   "Jun",  "Kemi", "Luis",
                                   "Mira",  "Nils",  "Olena", "Priya"};
const char* const kLastNames[] = {"Abara", "Berg",  "Costa", "Dubois", "Eze",  "Fischer",
                                  "Garcia", "Haddad", "Ito",  "Jensen", "Kowal", "Lindqvist",
                                  "Moreau", "Novak", "Okafor", "Park"};
const char* const kStreets[] = {"Harbor", "Maple", "Station", "Mill", "Quay", "Orchard",
                                "Canal",  "Bridge", "Market", "Cedar"};

double currency_weight(const std::string& c) {
  if (c == "USD") return 9;
  if (c == "EUR") return 4;
  if (c == "GBP") return 2;
  return 1;
}

}  // namespace

Dataset generate_synthetic(const DatasetConfig& cfg, const RateTable& rates) {
  cfg.validate();
  Prg root = Prg::from_u64(cfg.seed);
  Prg g_acct = root.derive("gen/accounts");
  Prg g_tx = root.derive("gen/transactions");

  Dataset ds;
  const std::size_t n = cfg.n_accounts;
  const std::vector<std::string> currencies = rates.currencies();
  std::vector<double> cum;
  double total_weight = 0;
  for (const auto& c : currencies) cum.push_back(total_weight += currency_weight(c));

  std::vector<std::string> account_currency(n);
  ds.accounts.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    AccountRecord& a = ds.accounts[i];
    char buf[32];
    std::snprintf(buf, sizeof buf, "BANK%02zu", 1 + g_acct.uniform_below(cfg.n_banks));
    a.bank_id = buf;
    std::snprintf(buf, sizeof buf, "AC%07zu", i + 1);
    a.account_id = buf;
    const char* first = kFirstNames[g_acct.uniform_below(std::size(kFirstNames))];
    const char* last = kLastNames[g_acct.uniform_below(std::size(kLastNames))];
    // Some names use the "Last, First" form and need CSV quoting.
    a.name = g_acct.bernoulli(0.25) ? std::string(last) + ", " + first
                                    : std::string(first) + " " + last;
    a.street = std::to_string(1 + g_acct.uniform_below(999)) + " " +
               kStreets[g_acct.uniform_below(std::size(kStreets))] + " St";
    std::snprintf(buf, sizeof buf, "%05zu", g_acct.uniform_below(100000));
    a.zip = buf;
    const double u = g_acct.uniform01() * total_weight;
    const std::size_t ci = static_cast<std::size_t>(
        std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    account_currency[i] = currencies[std::min(ci, currencies.size() - 1)];
  }

  // Role assignment on a shuffled order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  g_acct.shuffle(order);
  const double want_pool = std::ceil(2.0 * cfg.anomaly_rate * static_cast<double>(n));
  const std::size_t pool_size =
      std::clamp<std::size_t>(std::max<std::size_t>(8, static_cast<std::size_t>(want_pool)),
                              1, n / 2);
  std::vector<std::size_t> pool(order.begin(), order.begin() + pool_size);
  std::vector<std::size_t> general(order.begin() + pool_size, order.end());
  const auto n_flagged = static_cast<std::size_t>(
      std::llround(cfg.rho * static_cast<double>(pool_size)));
  for (std::size_t j = 0; j < n_flagged; ++j) {
    ds.accounts[pool[j]].flag = static_cast<int>(1 + g_acct.uniform_below(12));
  }

  std::vector<std::array<std::size_t, kContacts>> contacts(n);
  for (std::size_t gi = 0; gi < general.size(); ++gi) {
    for (auto& c : contacts[general[gi]]) {
      std::size_t pick;
      do {
        pick = general[g_acct.uniform_below(general.size())];
      } while (pick == general[gi]);
      c = pick;
    }
  }

  const std::size_t m = cfg.n_transactions;
  std::vector<std::int64_t> ts(m);
  for (auto& t : ts) {
    t = kEpochStart + static_cast<std::int64_t>(g_tx.uniform_below(kSpanDays * kDay));
  }
  std::sort(ts.begin(), ts.end());
  const std::size_t n_anom = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.anomaly_rate * static_cast<double>(m))), 1,
      m);
  std::vector<std::uint8_t> labels(m, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_anom), 1);
  g_tx.shuffle(labels);

  ds.transactions.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    TransactionRecord& t = ds.transactions[i];
    const bool anomalous = labels[i] != 0;
    const std::size_t s = general[g_tx.uniform_below(general.size())];
    std::size_t r;
    if (anomalous) {
      r = pool[g_tx.uniform_below(pool.size())];
    } else if (g_tx.bernoulli(kContactProbability)) {
      r = contacts[s][g_tx.uniform_below(kContacts)];
    } else {
      do {
        r = general[g_tx.uniform_below(general.size())];
      } while (r == s);
    }
    const double z = g_tx.gaussian();
    const double usd = anomalous
                           ? std::exp(kNormalLogMean + kAnomalyLogShift + kAnomalyLogSd * z)
                           : std::exp(kNormalLogMean + kNormalLogSd * z);
    const AccountRecord& sa = ds.accounts[s];
    const AccountRecord& ra = ds.accounts[r];
    char buf[32];
    std::snprintf(buf, sizeof buf, "TX%08zu", i + 1);
    t.tx_id = buf;
    t.sender_name = sa.name;
    t.sender_account = sa.account_id;
    t.sender_bank = sa.bank_id;
    t.sender_street = sa.street;
    t.sender_zip = sa.zip;
    t.receiver_name = ra.name;
    t.receiver_account = ra.account_id;
    t.receiver_bank = ra.bank_id;
    t.currency = account_currency[s];
    const double amount = std::round(usd / rates.rate(t.currency) * 100.0) / 100.0;
    // Round-trip through the CSV text form so files and memory agree.
    t.amount = std::max(0.01, parse_double(format_amount(amount), "amount"));
    t.timestamp = ts[i];
    t.label = labels[i];
  }
  return ds;
}

// ---------------------------------------------------------------------------

const std::array<const char*, kFeatureCount>& feature_names() {
  static const std::array<const char*, kFeatureCount> names = {
      "amount_usd",          "sender_avg_28d",      "sender_max_28d",
      "receiver_avg_28d",    "receiver_max_28d",    "pair_avg_28d",
      "pair_max_28d",        "sender_avg_last20",   "sender_min_last20",
      "sender_max_last20",   "receiver_avg_last20", "receiver_min_last20",
      "receiver_max_last20", "pair_avg_last20",     "pair_min_last20",
      "pair_max_last20",     "pair_count_7d"};
  return names;
}

std::string account_key(const std::string& bank, const std::string& account) {
  std::string k = bank;
  k.push_back('\x1f');
  k += account;
  return k;
}

namespace {

std::string pair_key(const TransactionRecord& tx) {
  std::string k = account_key(tx.sender_bank, tx.sender_account);
  k.push_back('\x1e');
  k += account_key(tx.receiver_bank, tx.receiver_account);
  return k;
}

struct Stats {
  double avg = 0, min = 0, max = 0;
};

template <class It>
Stats stats_of(It begin, It end) {
  Stats s;
  if (begin == end) return s;
  double sum = 0;
  s.min = begin->usd;
  s.max = begin->usd;
  std::size_t count = 0;
  for (It it = begin; it != end; ++it) {
    sum += it->usd;
    s.min = std::min(s.min, it->usd);
    s.max = std::max(s.max, it->usd);
    ++count;
  }
  s.avg = sum / static_cast<double>(count);
  return s;
}

}  // namespace

FeatureVector HistoryStore::features(const TransactionRecord& tx) const {
  if (latest_ && *latest_ >= tx.timestamp) {
    throw Error(ErrorCode::kInvalidArgument,
                "history contains transactions not earlier than " + tx.tx_id);
  }
  FeatureVector f{};
  f[kAmountUsd] = rates_.to_usd(tx.amount, tx.currency);

  static const Series kEmpty;
  auto lookup = [](const auto& map, const std::string& key) -> const Series& {
    auto it = map.find(key);
    return it == map.end() ? kEmpty : it->second;
  };
  const Series& s = lookup(sender_, account_key(tx.sender_bank, tx.sender_account));
  const Series& r = lookup(receiver_, account_key(tx.receiver_bank, tx.receiver_account));
  const Series& p = lookup(pair_, pair_key(tx));

  auto since = [](const Series& series, std::int64_t t0) {
    return std::lower_bound(series.begin(), series.end(), t0,
                            [](const Entry& e, std::int64_t t) { return e.ts < t; });
  };
  auto last_n = [](const Series& series) {
    return series.size() > kLastN ? series.end() - kLastN : series.begin();
  };
  const std::int64_t t28 = tx.timestamp - 28 * kDay;
  const std::int64_t t7 = tx.timestamp - 7 * kDay;

  const Stats s28 = stats_of(since(s, t28), s.end());
  const Stats r28 = stats_of(since(r, t28), r.end());
  const Stats p28 = stats_of(since(p, t28), p.end());
  f[kSenderAvg28d] = s28.avg;
  f[kSenderMax28d] = s28.max;
  f[kReceiverAvg28d] = r28.avg;
  f[kReceiverMax28d] = r28.max;
  f[kPairAvg28d] = p28.avg;
  f[kPairMax28d] = p28.max;

  const Stats s20 = stats_of(last_n(s), s.end());
  const Stats r20 = stats_of(last_n(r), r.end());
  const Stats p20 = stats_of(last_n(p), p.end());
  f[kSenderAvgLast20] = s20.avg;
  f[kSenderMinLast20] = s20.min;
  f[kSenderMaxLast20] = s20.max;
  f[kReceiverAvgLast20] = r20.avg;
  f[kReceiverMinLast20] = r20.min;
  f[kReceiverMaxLast20] = r20.max;
  f[kPairAvgLast20] = p20.avg;
  f[kPairMinLast20] = p20.min;
  f[kPairMaxLast20] = p20.max;

  f[kPairCount7d] = static_cast<double>(p.end() - since(p, t7));
  return f;
}

void HistoryStore::insert(const TransactionRecord& tx) {
  if (latest_ && tx.timestamp < *latest_) {
    throw Error(ErrorCode::kInvalidArgument, "history inserts must be in timestamp order");
  }
  const Entry e{tx.timestamp, rates_.to_usd(tx.amount, tx.currency)};
  sender_[account_key(tx.sender_bank, tx.sender_account)].push_back(e);
  receiver_[account_key(tx.receiver_bank, tx.receiver_account)].push_back(e);
  pair_[pair_key(tx)].push_back(e);
  latest_ = tx.timestamp;
}

std::vector<FeatureVector> extract_all(std::span<const TransactionRecord> txs,
                                       const RateTable& rates) {
  std::vector<std::size_t> order(txs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return txs[a].timestamp < txs[b].timestamp;
  });
  std::vector<FeatureVector> out(txs.size());
  HistoryStore store(rates);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && txs[order[j]].timestamp == txs[order[i]].timestamp) ++j;
    for (std::size_t k = i; k < j; ++k) out[order[k]] = store.features(txs[order[k]]);
    for (std::size_t k = i; k < j; ++k) store.insert(txs[order[k]]);
    i = j;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {
double squash(double x) { return std::log1p(std::max(x, 0.0)); }
}  // namespace

Normalizer Normalizer::fit(std::span<const FeatureVector> train) {
  if (train.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot fit on empty split");
  Normalizer n;
  const double count = static_cast<double>(train.size());
  for (std::size_t j = 0; j < kFeatureCount; ++j) {
    double sum = 0;
    for (const auto& x : train) sum += squash(x[j]);
    const double mean = sum / count;
    double ss = 0;
    for (const auto& x : train) {
      const double d = squash(x[j]) - mean;
      ss += d * d;
    }
    const double sd = std::sqrt(ss / count);
    n.mean_[j] = mean;
    n.scale_[j] = sd > 1e-12 ? sd : 1.0;
  }
  return n;
}

FeatureVector Normalizer::apply(const FeatureVector& x) const {
  FeatureVector out;
  for (std::size_t j = 0; j < kFeatureCount; ++j) {
    if (!std::isfinite(x[j])) throw Error(ErrorCode::kNonFinite, "non-finite feature");
    out[j] = (squash(x[j]) - mean_[j]) / scale_[j];
  }
  return out;
}

void Normalizer::write(ByteWriter& w) const {
  w.u32(kFeatureCount);
  for (double v : mean_) w.f64_le(v);
  for (double v : scale_) w.f64_le(v);
}

Normalizer Normalizer::read(ByteReader& r) {
  if (r.u32() != kFeatureCount) throw Error(ErrorCode::kDecode, "normalizer width mismatch");
  Normalizer n;
  for (double& v : n.mean_) v = r.f64_le();
  for (double& v : n.scale_) v = r.f64_le();
  return n;
}

// ---------------------------------------------------------------------------

BankRegistry BankRegistry::from_accounts(std::span<const AccountRecord> accounts) {
  std::set<std::string> ids;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& a : accounts) {
    if (a.flag < 0 || a.flag > 12) {
      throw Error(ErrorCode::kInvalidArgument, "flag out of range for " + a.account_id);
    }
    if (!seen.emplace(a.bank_id, a.account_id).second) {
      throw Error(ErrorCode::kDuplicateAccount,
                  "duplicate account " + a.bank_id + "/" + a.account_id);
    }
    ids.insert(a.bank_id);
  }
  BankRegistry r;
  r.ids_.assign(ids.begin(), ids.end());
  return r;
}

std::optional<std::uint32_t> BankRegistry::index_of(const std::string& bank_id) const {
  auto it = std::lower_bound(ids_.begin(), ids_.end(), bank_id);
  if (it == ids_.end() || *it != bank_id) return std::nullopt;
  return static_cast<std::uint32_t>(it - ids_.begin());
}

std::vector<AccountRecord> BankRegistry::accounts_of(std::span<const AccountRecord> accounts,
                                                     std::size_t i) const {
  std::vector<AccountRecord> out;
  for (const auto& a : accounts) {
    if (a.bank_id == ids_.at(i)) out.push_back(a);
  }
  return out;
}

FlagTable FlagTable::from_accounts(std::span<const AccountRecord> accounts,
                                   const BankRegistry& banks) {
  FlagTable t;
  t.flags_.resize(banks.size());
  for (const auto& a : accounts) {
    auto idx = banks.index_of(a.bank_id);
    if (!idx) continue;
    t.flags_[*idx][a.account_id] = a.flag;
  }
  return t;
}

std::optional<int> FlagTable::flag(std::uint32_t bank, const std::string& account) const {
  if (bank >= flags_.size()) return std::nullopt;
  auto it = flags_[bank].find(account);
  if (it == flags_[bank].end()) return std::nullopt;
  return it->second;
}

std::optional<std::uint8_t> FlagTable::bit(std::uint32_t bank,
                                           const std::string& account) const {
  auto f = flag(bank, account);
  if (!f) return std::nullopt;
  return flag_bit(*f);
}

// ---------------------------------------------------------------------------

std::vector<TransactionRecord> sorted_by_time(std::span<const TransactionRecord> txs) {
  std::vector<TransactionRecord> out(txs.begin(), txs.end());
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  return out;
}

std::vector<Example> make_examples(std::span<const TransactionRecord> chronological,
                                   std::span<const FeatureVector> raw,
                                   const Normalizer& norm, const BankRegistry& banks,
                                   std::size_t begin, std::size_t end) {
  std::vector<Example> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const TransactionRecord& tx = chronological[i];
    auto bank = banks.index_of(tx.receiver_bank);
    if (!bank) {
      throw Error(ErrorCode::kUnknownAccount,
                  "transaction " + tx.tx_id + " has unregistered receiver bank '" +
                      tx.receiver_bank + "'");
    }
    Example e;
    e.x = norm.apply(raw[i]);
    e.label = tx.label.value_or(0);
    e.receiver_bank = *bank;
    e.receiver_account = tx.receiver_account;
    e.source_row = i;
    out.push_back(std::move(e));
  }
  return out;
}

PreparedData prepare(std::span<const TransactionRecord> txs,
                     std::span<const AccountRecord> accounts, const RateTable& rates,
                     const PrepareConfig& cfg) {
  if (!(cfg.train_fraction > 0 && cfg.train_fraction <= 1)) {
    throw Error(ErrorCode::kConfig, "train fraction must be in (0, 1]");
  }
  PreparedData p;
  p.transactions = sorted_by_time(txs);
  p.banks = BankRegistry::from_accounts(accounts);
  const std::vector<FeatureVector> raw = extract_all(p.transactions, rates);
  const std::size_t n = p.transactions.size();
  p.train_rows = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(cfg.train_fraction * static_cast<double>(n))));
  p.train_rows = std::min(p.train_rows, n);
  for (std::size_t i = 0; i < p.train_rows; ++i) {
    if (!p.transactions[i].label) {
      throw Error(ErrorCode::kInvalidArgument,
                  "training row " + p.transactions[i].tx_id + " has no label");
    }
  }
  p.normalizer = Normalizer::fit(std::span(raw).first(p.train_rows));
  p.train = make_examples(p.transactions, raw, p.normalizer, p.banks, 0, p.train_rows);
  p.test = make_examples(p.transactions, raw, p.normalizer, p.banks, p.train_rows, n);
  if (cfg.upsample_ratio > 0) {
    Prg rng = Prg::from_u64(cfg.seed).derive("upsample");
    p.train = upsample(std::span<const Example>(p.train), cfg.upsample_ratio, rng,
                       [](const Example& e) { return e.label != 0; });
  }
  return p;
}

}  // namespace fedflag::data
