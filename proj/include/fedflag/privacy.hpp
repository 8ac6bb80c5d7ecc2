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
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedflag/data.hpp"
#include "fedflag/kv_config.hpp"
#include "fedflag/model.hpp"
#include "fedflag/noise.hpp"
#include "fedflag/protocol.hpp"

// Flag-inference attack by the hub against training, and the sweeps that
// pair attack success with model utility.
namespace fedflag::privacy {

struct AttackConfig {
  double alpha = 0.2;  // fraction of accounts whose flag the attacker knows
  std::size_t shadow_count = 5;
  std::vector<std::size_t> hidden = {128, 64, 64};
  std::size_t epochs = 10;
  double lr = 1e-2;
  std::size_t batch_size = 256;
  std::uint64_t seed = 1;

  // Throws kConfig.
  void validate() const;
  // Keys: alpha, shadows, attack-epochs, attack-lr, attack-batch, attack-seed.
  static AttackConfig from_config(const KvConfig& cfg);
  KvConfig to_config() const;
  bool operator==(const AttackConfig&) const = default;
};

using AccountKey = std::pair<std::uint32_t, std::string>;

// Gatekeeper for ground-truth flags. Known accounts are readable at any time;
// everything else only after begin_scoring(). Violations throw
// kAccessViolation.
class FlagGuard {
 public:
  FlagGuard(const data::FlagTable& table, std::set<AccountKey> known);

  bool is_known(std::uint32_t bank, const std::string& account) const;
  // nullopt for accounts missing from the table.
  std::optional<std::uint8_t> bit(std::uint32_t bank, const std::string& account) const;
  void begin_scoring() { scoring_ = true; }
  bool scoring() const { return scoring_; }
  std::size_t known_count() const { return known_.size(); }

 private:
  const data::FlagTable& table_;
  std::set<AccountKey> known_;
  bool scoring_ = false;
};

// Samples round(alpha * N) of the given accounts, seeded.
std::set<AccountKey> sample_known(std::span<const data::AccountRecord> accounts,
                                  const data::BankRegistry& banks, double alpha,
                                  std::uint64_t seed);

struct AttackResult {
  double success = 0;        // accuracy on anomalous rows with unknown flags
  double baseline = 0;       // majority-class guess on the same rows
  double baseline_zero = 0;  // always guessing 0
  double auprc = 0;          // target model on the test split, true flags
  std::size_t evaluated = 0;
  std::size_t known_accounts = 0;
  std::size_t attack_rows = 0;
};

// Shadow model input: the attacker's training config must be the target's.
using ShadowTrainer = std::function<model::Mlp(std::span<const data::Example>,
                                               std::span<const std::uint8_t>,
                                               const model::TrainConfig&)>;

// Plaintext trainer with the same schedule, clipping and noise as the
// federated protocol.
model::Mlp train_plain(std::span<const data::Example> examples,
                       std::span<const std::uint8_t> flags, const model::TrainConfig& cfg);

struct MiaOptions {
  // Trained on prepared.train with true flags when absent.
  const model::Mlp* target = nullptr;
  ShadowTrainer trainer = train_plain;
  // Config the shadows are trained with; must equal the target's.
  std::optional<model::TrainConfig> shadow_config;
};

// 1. D_known = training rows whose receiver flag is known. Each shadow model
//    trains on a seeded half of the known accounts' rows.
// 2. For each shadow's training rows, both flag hypotheses are scored; rows
//    (features, score, hypothesis) labeled by hypothesis correctness train
//    the attack network.
// 3. For unknown-flag anomalous training rows, the hypothesis the attack net
//    scores higher wins (ties to 0).
// Throws kNoAnomalous when D_known cannot supply the shadows or nothing is
// left to evaluate, kInvalidArgument on a shadow config mismatch.
AttackResult run_mia(const data::PreparedData& prepared,
                     std::span<const data::AccountRecord> accounts,
                     const model::TrainConfig& target_cfg, const AttackConfig& attack,
                     const MiaOptions& opts = {});

// ---------------------------------------------------------------------------

struct TradeoffRow {
  NoiseSpec noise;
  double alpha = 0;
  double mia_success = 0;
  double baseline = 0;
  double auprc = 0;
  std::uint64_t seed = 0;
};

// One target train + attack per (noise, alpha, seed). The seed replaces both
// the training seed and the attack seed.
std::vector<TradeoffRow> sweep_tradeoff(const data::PreparedData& prepared,
                                        std::span<const data::AccountRecord> accounts,
                                        const model::TrainConfig& base,
                                        std::span<const NoiseSpec> noise_grid,
                                        std::span<const double> alphas,
                                        std::span<const std::uint64_t> seeds,
                                        const AttackConfig& attack = {});

// Header: noise_family,param,alpha,mia_success,baseline,auprc,seed
void write_tradeoff_csv(std::ostream& out, std::span<const TradeoffRow> rows);

// Monotonicity of seed-averaged success and AUPRC along the grid order, per
// alpha. Returns a message per violation beyond `slack`.
std::vector<std::string> trend_violations(std::span<const TradeoffRow> rows,
                                          std::span<const NoiseSpec> grid, double slack);

// ---------------------------------------------------------------------------

struct InferenceNoiseRow {
  double sigma = 0;
  protocol::Strategy strategy = protocol::Strategy::kDirect;
  double auprc = 0;
};

// Runs the inference protocol over the test split for every sigma and
// strategy. Rows whose receiver is unknown to its bank are scored with the
// flag-0 hypothesis.
std::vector<InferenceNoiseRow> sweep_inference_noise(
    const model::Mlp& m, const data::PreparedData& prepared,
    std::span<const data::AccountRecord> accounts, std::span<const double> sigmas,
    const protocol::ProtocolConfig& cfg);

void write_inference_csv(std::ostream& out, std::span<const InferenceNoiseRow> rows);

}  // namespace fedflag::privacy
