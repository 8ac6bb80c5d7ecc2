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

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fedflag/data.hpp"
#include "fedflag/kv_config.hpp"
#include "fedflag/model.hpp"
#include "fedflag/noise.hpp"
#include "fedflag/ot.hpp"
#include "fedflag/ring.hpp"
#include "fedflag/tcp.hpp"
#include "fedflag/transport.hpp"

// Three-role protocol: the hub holds transactions and the model, each bank
// holds its accounts' flags, the aggregator sums bank-side shares.
//
// Training, per batch:
//   hub -> aggregator : BatchBegin (slot count, receiver bank per slot)
//   per slot          : masked select between hub and receiver bank; the hub
//                       keeps r, the bank gets u_b - r
//   bank -> aggregator: ShareForward(u_b - r) or a skip for unknown accounts
//   aggregator -> hub : AggregateShare(sum + noise, skipped slots)
//   hub               : u = own sum + aggregate share, apply_update
// Inference is two-party: the bank adds noise to its selected share and
// returns it to the hub.
namespace fedflag::protocol {

struct ProtocolConfig {
  model::TrainConfig train;
  ot::Mode ot_mode = ot::Mode::kIdeal;
  // Non-anomalous training rows use u_0 directly, no OT.
  bool ot_reduction = false;
  // One key OT per account; later selections use the cached keys.
  bool key_cache = false;
  int fraction_bits = ring::kDefaultFractionBits;
  std::uint64_t hub_seed = 101;
  std::uint64_t aggregator_seed = 202;
  std::uint64_t bank_seed = 303;  // bank i uses derive("bank", i)
  // Outstanding interactive OT sessions at the hub.
  std::size_t window = 32;
  // Inference-time noise added by the bank to its selected share.
  NoiseSpec infer_noise;

  void validate() const;
  // Without a "noise" key, training noise defaults to Gaussian with
  // noise_default(clip) when clipping is on.
  static ProtocolConfig from_config(const KvConfig& cfg);
  KvConfig to_config() const;
};

// sigma = 10 * C, in gradient units. Throws kInvalidArgument unless C is
// positive and finite.
double noise_default(double clip);

// Per-party views of what the protocol itself reveals.
struct LeakageLedger {
  // bank index -> number of account queries the bank answered
  std::map<std::uint32_t, std::uint64_t> bank_train_queries;
  std::map<std::uint32_t, std::uint64_t> bank_key_queries;
  std::map<std::uint32_t, std::uint64_t> bank_infer_queries;
  // receiver bank -> number of forwarded shares the aggregator observed
  std::map<std::uint32_t, std::uint64_t> aggregator_observations;

  std::uint64_t total_bank_queries() const;
  std::uint64_t total_aggregator_observations() const;
  void merge(const LeakageLedger& o);
};

// ---------------------------------------------------------------------------
// Hub-side source of per-transaction candidate updates.

struct PlannedRow {
  std::uint32_t bank = 0;
  std::string account;
  std::uint8_t label = 0;
};

class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual std::size_t dimension() const = 0;
  virtual std::size_t batch_count() const = 0;
  virtual std::vector<PlannedRow> plan(std::size_t batch) = 0;
  // Clipped u_0 and u_1 for one row of the current batch.
  virtual void candidates(std::size_t batch, std::size_t row, std::span<double> u0,
                          std::span<double> u1) = 0;
  // Decoded batch update and the number of rows skipped by banks.
  virtual void apply(std::size_t batch, std::span<const double> u, std::size_t skipped) = 0;
};

// Plain SGD over a model, mirroring model::train_centralized's schedule.
class ModelBatchSource : public BatchSource {
 public:
  ModelBatchSource(std::span<const data::Example> train, const model::TrainConfig& cfg);

  std::size_t dimension() const override { return model_.parameter_count(); }
  std::size_t batch_count() const override { return epochs_ * per_epoch_; }
  std::vector<PlannedRow> plan(std::size_t batch) override;
  void candidates(std::size_t batch, std::size_t row, std::span<double> u0,
                  std::span<double> u1) override;
  void apply(std::size_t batch, std::span<const double> u, std::size_t skipped) override;

  const model::Mlp& model() const { return model_; }
  std::size_t skipped() const { return skipped_; }

 private:
  std::span<const data::Example> train_;
  model::TrainConfig cfg_;
  model::Mlp model_;
  std::size_t epochs_, per_epoch_;
  std::size_t order_epoch_ = 0;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> rows_;  // example indices of the current batch
  std::size_t skipped_ = 0;
};

// Fixed candidates, one batch per entry. Used by train_batch.
struct BatchItem {
  std::uint32_t bank = 0;
  std::string account;
  std::uint8_t label = 1;
  std::vector<double> u0, u1;
};

class FixedBatchSource : public BatchSource {
 public:
  FixedBatchSource(std::vector<std::vector<BatchItem>> batches, std::size_t dim);
  std::size_t dimension() const override { return dim_; }
  std::size_t batch_count() const override { return batches_.size(); }
  std::vector<PlannedRow> plan(std::size_t batch) override;
  void candidates(std::size_t batch, std::size_t row, std::span<double> u0,
                  std::span<double> u1) override;
  void apply(std::size_t batch, std::span<const double> u, std::size_t skipped) override;

  const std::vector<std::vector<double>>& results() const { return results_; }
  const std::vector<std::size_t>& skipped() const { return skipped_; }

 private:
  std::vector<std::vector<BatchItem>> batches_;
  std::size_t dim_;
  std::vector<std::vector<double>> results_;
  std::vector<std::size_t> skipped_;
};

// ---------------------------------------------------------------------------
// Parties.

// Received-message counts by type, for view audits.
using ViewCounts = std::map<transport::MsgType, std::uint64_t>;

class Hub : public transport::Party {
 public:
  Hub(BatchSource& source, std::uint32_t bank_count, const ProtocolConfig& cfg);
  ~Hub() override;

  PartyId id() const override { return PartyId::hub(); }
  void on_message(const transport::Envelope& e, transport::Outbox& out) override;
  bool poll(transport::Outbox& out) override;
  bool done() const override;

  std::uint64_t ot_transfers() const;
  std::size_t batches_done() const;
  const ViewCounts& view() const;

 private:
  struct State;
  std::unique_ptr<State> s_;
};

class Aggregator : public transport::Party {
 public:
  Aggregator(std::uint32_t bank_count, std::size_t dimension, const ProtocolConfig& cfg);
  ~Aggregator() override;

  PartyId id() const override { return PartyId::aggregator(); }
  void on_message(const transport::Envelope& e, transport::Outbox& out) override;
  bool done() const override;

  const std::map<std::uint32_t, std::uint64_t>& observations() const;
  const ViewCounts& view() const;

 private:
  struct State;
  std::unique_ptr<State> s_;
};

class Bank : public transport::Party {
 public:
  // `accounts` are this bank's own records.
  Bank(std::uint32_t index, std::span<const data::AccountRecord> accounts,
       const ProtocolConfig& cfg);
  ~Bank() override;

  PartyId id() const override { return PartyId::bank(index_); }
  void on_message(const transport::Envelope& e, transport::Outbox& out) override;
  bool done() const override;

  std::uint64_t train_queries() const;
  std::uint64_t key_queries() const;
  std::uint64_t infer_queries() const;
  std::uint64_t unknown_accounts() const;

 private:
  std::uint32_t index_;
  struct State;
  std::unique_ptr<State> s_;
};

enum class Strategy { kDirect, kRound };
Strategy parse_strategy(const std::string& s);
std::string to_string(Strategy s);

struct InferQuery {
  std::vector<double> features;  // normalized, input_size - 1 entries
  std::uint32_t bank = 0;
  std::string account;
};

struct InferResult {
  bool ok = false;  // false when the bank did not know the account
  double score = 0;
  double s0 = 0, s1 = 0;
};

// Two-party inference driver: one masked select per query with the
// receiver bank.
class InferenceHub : public transport::Party {
 public:
  InferenceHub(const model::Mlp& m, std::vector<InferQuery> queries, Strategy strategy,
               std::vector<std::uint32_t> banks, const ProtocolConfig& cfg);
  ~InferenceHub() override;

  PartyId id() const override { return PartyId::hub(); }
  void on_message(const transport::Envelope& e, transport::Outbox& out) override;
  bool poll(transport::Outbox& out) override;
  bool done() const override;

  const std::vector<InferResult>& results() const;
  std::uint64_t ot_transfers() const;
  const ViewCounts& view() const;

 private:
  struct State;
  std::unique_ptr<State> s_;
};

// round: the nearer of {s0, s1} to s, ties to s0. direct: s.
double finalize_score(double s, double s0, double s1, Strategy strategy);

// ---------------------------------------------------------------------------
// Runners.

// What each party holds at the start of a session.
struct Federation {
  std::vector<data::Example> hub_train;
  std::uint32_t bank_count = 0;
  std::vector<std::vector<data::AccountRecord>> bank_accounts;  // by bank index
};

Federation make_federation(const data::PreparedData& prepared,
                           std::span<const data::AccountRecord> accounts);

struct TrainOutcome {
  model::Mlp model{model::default_sizes()};
  std::size_t steps = 0;
  std::size_t skipped = 0;
  std::uint64_t ot_transfers = 0;
  transport::CommStats comms;
  LeakageLedger leakage;
  ViewCounts hub_view;
};

using FrameTap =
    std::function<void(PartyId, PartyId, std::span<const std::uint8_t>)>;

TrainOutcome train_sim(const Federation& fed, const ProtocolConfig& cfg,
                       std::uint64_t network_seed = 1,
                       const transport::SimRunOptions& opts = {}, FrameTap tap = {});

// Links a party needs: everyone except itself, and banks skip other banks.
std::map<PartyId, transport::TcpAddress> peers_of(
    PartyId self, const std::map<PartyId, transport::TcpAddress>& directory);

// All parties in this process, each on its own thread, linked over loopback
// TCP.
TrainOutcome train_tcp_loopback(const Federation& fed, const ProtocolConfig& cfg);

// Runs fixed candidate batches through the full protocol in simulation and
// returns the update revealed to the hub for each batch.
struct BatchRun {
  std::vector<std::vector<double>> updates;
  std::vector<std::size_t> skipped;
  std::uint64_t ot_transfers = 0;
  transport::CommStats comms;
  LeakageLedger leakage;
  ViewCounts hub_view;
};
BatchRun train_batch(std::vector<std::vector<BatchItem>> batches, std::size_t dim,
                     std::span<const std::vector<data::AccountRecord>> bank_accounts,
                     const ProtocolConfig& cfg, std::uint64_t network_seed = 1,
                     FrameTap tap = {});

struct InferOutcome {
  std::vector<InferResult> results;
  std::uint64_t ot_transfers = 0;
  transport::CommStats comms;
  LeakageLedger leakage;
};

InferOutcome infer_sim(const model::Mlp& m, std::vector<InferQuery> queries, Strategy strategy,
                       std::span<const std::vector<data::AccountRecord>> bank_accounts,
                       const ProtocolConfig& cfg, std::uint64_t network_seed = 1);

}  // namespace fedflag::protocol
