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

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fedflag/bytes.hpp"
#include "fedflag/error.hpp"
#include "fedflag/kv_config.hpp"
#include "fedflag/prg.hpp"

namespace fedflag::data {

struct TransactionRecord {
  std::string tx_id;
  std::string sender_name;
  std::string sender_account;
  std::string sender_bank;
  std::string sender_street;
  std::string sender_zip;
  std::string receiver_name;
  std::string receiver_account;
  std::string receiver_bank;
  double amount = 0;
  std::string currency;
  std::int64_t timestamp = 0;
  // Absent for unlabeled (inference) rows. 1 = anomalous.
  std::optional<std::uint8_t> label;

  bool operator==(const TransactionRecord&) const = default;
};

struct AccountRecord {
  std::string bank_id;
  std::string account_id;
  std::string name;
  std::string street;
  std::string zip;
  int flag = 0;  // status code in [0, 12]

  bool operator==(const AccountRecord&) const = default;
};

// The only projection of a flag the protocol uses.
inline std::uint8_t flag_bit(int flag) { return flag != 0 ? 1 : 0; }

// ---------------------------------------------------------------------------
// CSV I/O. Headers match the field names with '-' separators.

void write_transactions(std::ostream& out, std::span<const TransactionRecord> txs);
void write_accounts(std::ostream& out, std::span<const AccountRecord> accounts);
std::vector<TransactionRecord> read_transactions(std::istream& in);
std::vector<AccountRecord> read_accounts(std::istream& in);
void save_transactions(const std::string& path, std::span<const TransactionRecord> txs);
void save_accounts(const std::string& path, std::span<const AccountRecord> accounts);
std::vector<TransactionRecord> load_transactions(const std::string& path);
std::vector<AccountRecord> load_accounts(const std::string& path);

// ---------------------------------------------------------------------------
// Currency conversion. Rates are USD per unit of the currency.

class RateTable {
 public:
  // USD, EUR, GBP, JPY, CHF, CAD, AUD, SGD with fixed rates.
  static RateTable defaults();
  static RateTable from_config(const KvConfig& cfg);
  static RateTable load(const std::string& path);

  void set(const std::string& currency, double usd_per_unit);
  // Throws kUnknownCurrency.
  double rate(const std::string& currency) const;
  double to_usd(double amount, const std::string& currency) const {
    return amount * rate(currency);
  }
  std::vector<std::string> currencies() const;

 private:
  std::map<std::string, double> rates_;
};

// ---------------------------------------------------------------------------
// Synthetic data.

struct DatasetConfig {
  std::size_t n_transactions = 10000;
  std::size_t n_accounts = 1000;
  std::size_t n_banks = 4;
  double anomaly_rate = 0.001;
  double rho = 0.5;  // P(receiver flag != 0 | anomalous)
  std::uint64_t seed = 1;

  // Throws kConfig.
  void validate() const;
  static DatasetConfig from_config(const KvConfig& cfg);
  KvConfig to_config() const;
};

struct Dataset {
  std::vector<TransactionRecord> transactions;  // chronological
  std::vector<AccountRecord> accounts;
};

// Accounts split into a general pool, which sends every transaction and
// receives the normal ones, and a small anomaly pool that receives only
// anomalous transactions. round(rho * |pool|) pool accounts carry a nonzero
// flag; everything else has flag 0. Transaction features are generated
// without reference to the flag, so among anomalous rows they are independent
// of it.
Dataset generate_synthetic(const DatasetConfig& cfg,
                           const RateTable& rates = RateTable::defaults());

// ---------------------------------------------------------------------------
// Velocity features.

inline constexpr std::size_t kFeatureCount = 17;
using FeatureVector = std::array<double, kFeatureCount>;

// Feature order. Windows look strictly before the transaction's timestamp.
enum Feature : std::size_t {
  kAmountUsd = 0,
  kSenderAvg28d,
  kSenderMax28d,
  kReceiverAvg28d,
  kReceiverMax28d,
  kPairAvg28d,
  kPairMax28d,
  kSenderAvgLast20,
  kSenderMinLast20,
  kSenderMaxLast20,
  kReceiverAvgLast20,
  kReceiverMinLast20,
  kReceiverMaxLast20,
  kPairAvgLast20,
  kPairMinLast20,
  kPairMaxLast20,
  kPairCount7d,
};

const std::array<const char*, kFeatureCount>& feature_names();

inline constexpr std::int64_t kDay = 86400;
inline constexpr std::size_t kLastN = 20;

// Per-party transaction history, appended in timestamp order. Safe for
// concurrent readers once no more inserts happen.
class HistoryStore {
 public:
  explicit HistoryStore(RateTable rates) : rates_(std::move(rates)) {}

  // Requires every stored transaction to be strictly earlier than tx;
  // throws kInvalidArgument otherwise, kUnknownCurrency for bad currency.
  FeatureVector features(const TransactionRecord& tx) const;
  // Throws kInvalidArgument if tx is earlier than the latest insert.
  void insert(const TransactionRecord& tx);

  std::optional<std::int64_t> latest() const { return latest_; }

 private:
  struct Entry {
    std::int64_t ts;
    double usd;
  };
  using Series = std::vector<Entry>;

  RateTable rates_;
  std::unordered_map<std::string, Series> sender_, receiver_, pair_;
  std::optional<std::int64_t> latest_;
};

std::string account_key(const std::string& bank, const std::string& account);

// Features for every transaction, aligned with the input order. Each row only
// sees rows with a strictly smaller timestamp.
std::vector<FeatureVector> extract_all(std::span<const TransactionRecord> txs,
                                       const RateTable& rates);

// ---------------------------------------------------------------------------
// Normalization: x -> (log1p(max(x, 0)) - mean) / std, statistics from the
// training split. A zero-variance feature divides by 1.

class Normalizer {
 public:
  static Normalizer fit(std::span<const FeatureVector> train);
  FeatureVector apply(const FeatureVector& x) const;

  const FeatureVector& mean() const { return mean_; }
  const FeatureVector& scale() const { return scale_; }

  void write(ByteWriter& w) const;
  static Normalizer read(ByteReader& r);
  bool operator==(const Normalizer&) const = default;

 private:
  FeatureVector mean_{};
  FeatureVector scale_{};
};

// ---------------------------------------------------------------------------
// Banks and flags.

class BankRegistry {
 public:
  // Bank ids are indexed in sorted order. Throws kDuplicateAccount when a
  // (bank-id, account-id) pair repeats, kInvalidArgument on a flag outside
  // [0, 12].
  static BankRegistry from_accounts(std::span<const AccountRecord> accounts);

  std::size_t size() const { return ids_.size(); }
  const std::string& bank_id(std::size_t i) const { return ids_.at(i); }
  std::optional<std::uint32_t> index_of(const std::string& bank_id) const;
  const std::vector<std::string>& ids() const { return ids_; }

  // Accounts of bank i, in input order.
  std::vector<AccountRecord> accounts_of(std::span<const AccountRecord> accounts,
                                         std::size_t i) const;

 private:
  std::vector<std::string> ids_;
};

// Ground-truth flag lookup; only used where plaintext flags are legitimate
// (centralized training, tests, attack scoring).
class FlagTable {
 public:
  static FlagTable from_accounts(std::span<const AccountRecord> accounts,
                                 const BankRegistry& banks);
  std::optional<std::uint8_t> bit(std::uint32_t bank, const std::string& account) const;
  std::optional<int> flag(std::uint32_t bank, const std::string& account) const;

 private:
  std::vector<std::unordered_map<std::string, int>> flags_;
};

// ---------------------------------------------------------------------------
// Model-ready rows.

struct Example {
  FeatureVector x{};
  std::uint8_t label = 0;
  std::uint32_t receiver_bank = 0;
  std::string receiver_account;
  std::size_t source_row = 0;  // index into the chronological table

  bool operator==(const Example&) const = default;
};

// Target anomalous count = ceil(normal * ratio); anomalous rows are drawn
// uniformly with replacement and appended, then everything is shuffled.
// If the target is already met only the shuffle happens.
template <class Row, class IsAnomalous>
std::vector<Row> upsample(std::span<const Row> rows, double ratio, Prg& rng,
                          IsAnomalous is_anomalous) {
  if (!(ratio > 0)) throw Error(ErrorCode::kInvalidArgument, "upsample ratio must be > 0");
  std::vector<std::size_t> anomalous;
  std::size_t normal = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (is_anomalous(rows[i])) {
      anomalous.push_back(i);
    } else {
      ++normal;
    }
  }
  if (anomalous.empty()) throw Error(ErrorCode::kNoAnomalous, "no anomalous rows to upsample");
  const double raw = static_cast<double>(normal) * ratio;
  // Guard against ratios like 0.1 producing 99.00000000000001.
  const auto target = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  std::vector<Row> out(rows.begin(), rows.end());
  for (std::size_t have = anomalous.size(); have < target; ++have) {
    out.push_back(rows[anomalous[rng.uniform_below(anomalous.size())]]);
  }
  rng.shuffle(out);
  return out;
}

struct PrepareConfig {
  double train_fraction = 0.8;
  // Anomalous:normal target after upsampling the training split; 0 disables.
  double upsample_ratio = 0.1;
  std::uint64_t seed = 1;
};

struct PreparedData {
  std::vector<TransactionRecord> transactions;  // chronological
  BankRegistry banks;
  Normalizer normalizer;
  std::vector<Example> train;  // upsampled and shuffled
  std::vector<Example> test;   // chronological, not upsampled
  std::size_t train_rows = 0;  // chronological rows [0, train_rows) are train
};

// Sorts chronologically, extracts features, splits by time, fits the
// normalizer on the training split before upsampling. Throws kUnknownAccount
// when a receiver bank is not registered.
PreparedData prepare(std::span<const TransactionRecord> txs,
                     std::span<const AccountRecord> accounts, const RateTable& rates,
                     const PrepareConfig& cfg);

// Stable chronological order.
std::vector<TransactionRecord> sorted_by_time(std::span<const TransactionRecord> txs);

// Builds examples from already-extracted features with a fitted normalizer.
std::vector<Example> make_examples(std::span<const TransactionRecord> chronological,
                                   std::span<const FeatureVector> raw,
                                   const Normalizer& norm, const BankRegistry& banks,
                                   std::size_t begin, std::size_t end);

}  // namespace fedflag::data
