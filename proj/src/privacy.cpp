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

#include "fedflag/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "fedflag/csv.hpp"
#include "fedflag/error.hpp"

namespace fedflag::privacy {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::uint8_t truth_bit(const data::FlagTable& t, const data::Example& ex) {
  return t.bit(ex.receiver_bank, ex.receiver_account).value_or(model::kSkipRow);
}

// Attack-net input: transaction features then the target's confidence.
std::vector<double> attack_features(const data::Example& ex, double score) {
  std::vector<double> f(ex.x.begin(), ex.x.end());
  f.push_back(score);
  return f;
}

}  // namespace

void AttackConfig::validate() const {
  if (!(alpha > 0 && alpha < 1)) throw Error(ErrorCode::kConfig, "alpha must be in (0, 1)");
  if (shadow_count < 1) throw Error(ErrorCode::kConfig, "need at least one shadow model");
  if (hidden.empty()) throw Error(ErrorCode::kConfig, "attack net needs a hidden layer");
  for (auto h : hidden)
    if (h == 0) throw Error(ErrorCode::kConfig, "empty attack layer");
  if (epochs < 1 || batch_size < 1) throw Error(ErrorCode::kConfig, "attack epochs and batch must be >= 1");
  if (!(lr > 0) || !std::isfinite(lr)) throw Error(ErrorCode::kConfig, "attack lr must be positive");
}

AttackConfig AttackConfig::from_config(const KvConfig& cfg) {
  AttackConfig a;
  a.alpha = cfg.get_double("alpha", a.alpha);
  a.shadow_count = cfg.get_u64("shadows", a.shadow_count);
  a.epochs = cfg.get_u64("attack-epochs", a.epochs);
  a.lr = cfg.get_double("attack-lr", a.lr);
  a.batch_size = cfg.get_u64("attack-batch", a.batch_size);
  a.seed = cfg.get_u64("attack-seed", a.seed);
  a.validate();
  return a;
}

KvConfig AttackConfig::to_config() const {
  KvConfig c;
  c.set("alpha", fmt(alpha));
  c.set("shadows", std::to_string(shadow_count));
  c.set("attack-epochs", std::to_string(epochs));
  c.set("attack-lr", fmt(lr));
  c.set("attack-batch", std::to_string(batch_size));
  c.set("attack-seed", std::to_string(seed));
  return c;
}

// ---------------------------------------------------------------------------

FlagGuard::FlagGuard(const data::FlagTable& table, std::set<AccountKey> known)
    : table_(table), known_(std::move(known)) {}

bool FlagGuard::is_known(std::uint32_t bank, const std::string& account) const {
  return known_.contains({bank, account});
}

std::optional<std::uint8_t> FlagGuard::bit(std::uint32_t bank, const std::string& account) const {
  if (!scoring_ && !is_known(bank, account))
    throw Error(ErrorCode::kAccessViolation, "flag of an unknown account read before scoring");
  return table_.bit(bank, account);
}

std::set<AccountKey> sample_known(std::span<const data::AccountRecord> accounts,
                                  const data::BankRegistry& banks, double alpha,
                                  std::uint64_t seed) {
  std::vector<AccountKey> all;
  for (const auto& a : accounts) {
    auto b = banks.index_of(a.bank_id);
    if (b) all.push_back({*b, a.account_id});
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  Prg rng = Prg::from_u64(seed).derive("mia/known");
  rng.shuffle(all);
  const auto n = static_cast<std::size_t>(std::llround(alpha * static_cast<double>(all.size())));
  return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(std::min(n, all.size()))};
}

model::Mlp train_plain(std::span<const data::Example> examples,
                       std::span<const std::uint8_t> flags, const model::TrainConfig& cfg) {
  return model::train_centralized(examples, flags, cfg).model;
}

// ---------------------------------------------------------------------------

namespace {

struct AttackSet {
  std::vector<std::vector<double>> features;
  std::vector<std::uint8_t> hypothesis;
  std::vector<std::uint8_t> correct;
};

model::Mlp train_attack(const AttackSet& set, const AttackConfig& cfg) {
  std::vector<std::size_t> sizes{data::kFeatureCount + 2};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(1);
  Prg init = Prg::from_u64(cfg.seed).derive("mia/attack-init");
  model::Mlp net = model::Mlp::init(sizes, init);
  const std::size_t n = set.features.size();
  std::vector<std::size_t> order(n);
  std::vector<model::BatchRow> rows;
  const double inf = std::numeric_limits<double>::infinity();
  // Adam on the mean batch gradient.
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999;
  std::vector<double> m1(net.parameter_count(), 0.0), m2(net.parameter_count(), 0.0);
  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Prg rng = Prg::from_u64(cfg.seed).derive("mia/attack-order", epoch);
    rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      rows.clear();
      for (std::size_t k = start; k < std::min(n, start + cfg.batch_size); ++k) {
        const std::size_t i = order[k];
        rows.push_back({set.features[i], set.hypothesis[i], set.correct[i]});
      }
      const auto g = model::batch_gradient_fast(net, rows, 0.0, inf);
      ++t;
      const double scale = 1.0 / static_cast<double>(rows.size());
      const double c1 = 1 - std::pow(kBeta1, static_cast<double>(t));
      const double c2 = 1 - std::pow(kBeta2, static_cast<double>(t));
      auto theta = net.parameters();
      for (std::size_t j = 0; j < theta.size(); ++j) {
        const double gj = g[j] * scale;
        m1[j] = kBeta1 * m1[j] + (1 - kBeta1) * gj;
        m2[j] = kBeta2 * m2[j] + (1 - kBeta2) * gj * gj;
        theta[j] -= cfg.lr * (m1[j] / c1) / (std::sqrt(m2[j] / c2) + 1e-8);
      }
    }
  }
  return net;
}

}  // namespace

AttackResult run_mia(const data::PreparedData& prepared,
                     std::span<const data::AccountRecord> accounts,
                     const model::TrainConfig& target_cfg, const AttackConfig& attack,
                     const MiaOptions& opts) {
  attack.validate();
  target_cfg.validate();
  const model::TrainConfig shadow_cfg = opts.shadow_config.value_or(target_cfg);
  if (!(shadow_cfg == target_cfg))
    throw Error(ErrorCode::kInvalidArgument, "shadow training config differs from the target's");

  const auto table = data::FlagTable::from_accounts(accounts, prepared.banks);
  const auto& train = prepared.train;

  // Victim side: the target learns from the true flags.
  model::Mlp target{target_cfg.sizes};
  if (opts.target) {
    target = *opts.target;
  } else {
    std::vector<std::uint8_t> flags;
    for (const auto& ex : train) flags.push_back(truth_bit(table, ex));
    target = opts.trainer(train, flags, target_cfg);
  }

  AttackResult res;
  {
    std::vector<std::uint8_t> flags, labels;
    for (const auto& ex : prepared.test) {
      const auto b = truth_bit(table, ex);
      flags.push_back(b == model::kSkipRow ? 0 : b);
      labels.push_back(ex.label);
    }
    res.auprc = model::auprc(model::predict(target, prepared.test, flags), labels);
  }

  // Attacker side: only the guard hands out flags from here on.
  FlagGuard guard(table, sample_known(accounts, prepared.banks, attack.alpha, attack.seed));
  res.known_accounts = guard.known_count();

  std::vector<std::size_t> known_rows;
  // Known accounts that receive anomalous rows, and the rest. Shadows draw
  // half of each so every shadow sees both kinds.
  std::set<AccountKey> anomaly_recv, other_recv;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& ex = train[i];
    if (!guard.is_known(ex.receiver_bank, ex.receiver_account)) continue;
    if (!guard.bit(ex.receiver_bank, ex.receiver_account)) continue;
    known_rows.push_back(i);
    if (ex.label) anomaly_recv.insert({ex.receiver_bank, ex.receiver_account});
  }
  for (std::size_t i : known_rows) {
    AccountKey k{train[i].receiver_bank, train[i].receiver_account};
    if (!anomaly_recv.contains(k)) other_recv.insert(k);
  }
  if (anomaly_recv.size() < 2 || other_recv.size() < 2)
    throw Error(ErrorCode::kNoAnomalous,
                "known flags too few to split across " + std::to_string(attack.shadow_count) +
                    " shadow models");

  AttackSet set;
  for (std::size_t s = 0; s < attack.shadow_count; ++s) {
    Prg split = Prg::from_u64(attack.seed).derive("mia/shadow-split", s);
    std::set<AccountKey> half;
    for (const auto* group : {&anomaly_recv, &other_recv}) {
      std::vector<AccountKey> accts(group->begin(), group->end());
      split.shuffle(accts);
      half.insert(accts.begin(), accts.begin() + static_cast<std::ptrdiff_t>(accts.size() / 2));
    }
    std::vector<data::Example> rows;
    std::vector<std::uint8_t> flags;
    for (std::size_t i : known_rows) {
      const auto& ex = train[i];
      if (!half.contains({ex.receiver_bank, ex.receiver_account})) continue;
      rows.push_back(ex);
      flags.push_back(*guard.bit(ex.receiver_bank, ex.receiver_account));
    }
    const model::Mlp shadow = opts.trainer(rows, flags, shadow_cfg);

    std::set<std::size_t> seen;
    for (std::size_t j = 0; j < rows.size(); ++j) {
      // Only anomalous rows are attacked; normal receivers are always flag 0.
      if (!rows[j].label || !seen.insert(rows[j].source_row).second) continue;
      for (std::uint8_t b = 0; b <= 1; ++b) {
        set.features.push_back(attack_features(rows[j], shadow.forward(rows[j].x, b)));
        set.hypothesis.push_back(b);
        set.correct.push_back(flags[j] == b ? 1 : 0);
      }
    }
  }
  res.attack_rows = set.features.size();
  const model::Mlp net = train_attack(set, attack);

  // Guess flags of anomalous training rows the attacker does not know.
  std::vector<std::size_t> targets;
  std::vector<std::uint8_t> guesses;
  std::set<std::size_t> seen;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& ex = train[i];
    if (!ex.label || guard.is_known(ex.receiver_bank, ex.receiver_account)) continue;
    if (!seen.insert(ex.source_row).second) continue;
    const double a0 = net.forward(attack_features(ex, target.forward(ex.x, 0)), 0);
    const double a1 = net.forward(attack_features(ex, target.forward(ex.x, 1)), 1);
    targets.push_back(i);
    guesses.push_back(a1 > a0 ? 1 : 0);
  }

  guard.begin_scoring();
  std::size_t hits = 0, zeros = 0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const auto& ex = train[targets[k]];
    const auto truth = guard.bit(ex.receiver_bank, ex.receiver_account);
    if (!truth) continue;
    ++res.evaluated;
    hits += guesses[k] == *truth;
    zeros += *truth == 0;
  }
  if (res.evaluated == 0)
    throw Error(ErrorCode::kNoAnomalous, "no anomalous rows with unknown flags to attack");
  const double n = static_cast<double>(res.evaluated);
  res.success = static_cast<double>(hits) / n;
  res.baseline_zero = static_cast<double>(zeros) / n;
  res.baseline = std::max(res.baseline_zero, 1 - res.baseline_zero);
  return res;
}

// ---------------------------------------------------------------------------

std::vector<TradeoffRow> sweep_tradeoff(const data::PreparedData& prepared,
                                        std::span<const data::AccountRecord> accounts,
                                        const model::TrainConfig& base,
                                        std::span<const NoiseSpec> noise_grid,
                                        std::span<const double> alphas,
                                        std::span<const std::uint64_t> seeds,
                                        const AttackConfig& attack) {
  if (noise_grid.empty() || alphas.empty() || seeds.empty())
    throw Error(ErrorCode::kInvalidArgument, "empty sweep grid");
  const auto table = data::FlagTable::from_accounts(accounts, prepared.banks);
  std::vector<std::uint8_t> flags;
  for (const auto& ex : prepared.train) flags.push_back(truth_bit(table, ex));

  std::vector<TradeoffRow> out;
  for (const auto& noise : noise_grid) {
    for (std::uint64_t seed : seeds) {
      model::TrainConfig cfg = base;
      cfg.noise = noise;
      cfg.seed = seed;
      // The target does not depend on alpha.
      const model::Mlp target = train_plain(prepared.train, flags, cfg);
      for (double alpha : alphas) {
        AttackConfig a = attack;
        a.alpha = alpha;
        a.seed = seed;
        MiaOptions opts;
        opts.target = &target;
        const auto r = run_mia(prepared, accounts, cfg, a, opts);
        out.push_back({noise, alpha, r.success, r.baseline, r.auprc, seed});
      }
    }
  }
  return out;
}

void write_tradeoff_csv(std::ostream& out, std::span<const TradeoffRow> rows) {
  csv::write_row(out, {"noise_family", "param", "alpha", "mia_success", "baseline", "auprc", "seed"});
  for (const auto& r : rows) {
    csv::write_row(out, {family_name(r.noise.family), fmt_short(r.noise.parameter),
                         fmt_short(r.alpha), fmt(r.mia_success), fmt(r.baseline), fmt(r.auprc),
                         std::to_string(r.seed)});
  }
}

std::vector<std::string> trend_violations(std::span<const TradeoffRow> rows,
                                          std::span<const NoiseSpec> grid, double slack) {
  std::set<double> alphas;
  for (const auto& r : rows) alphas.insert(r.alpha);
  std::vector<std::string> out;
  for (double alpha : alphas) {
    std::vector<double> success(grid.size(), 0), auprc(grid.size(), 0);
    std::vector<std::size_t> count(grid.size(), 0);
    for (const auto& r : rows) {
      if (r.alpha != alpha) continue;
      for (std::size_t g = 0; g < grid.size(); ++g) {
        if (!(r.noise == grid[g])) continue;
        success[g] += r.mia_success;
        auprc[g] += r.auprc;
        ++count[g];
      }
    }
    for (std::size_t g = 0; g < grid.size(); ++g) {
      if (count[g] == 0) continue;
      success[g] /= static_cast<double>(count[g]);
      auprc[g] /= static_cast<double>(count[g]);
    }
    for (std::size_t g = 1; g < grid.size(); ++g) {
      if (count[g] == 0 || count[g - 1] == 0) continue;
      const std::string where = "alpha " + fmt_short(alpha) + ", " + to_string(grid[g - 1]) +
                                " -> " + to_string(grid[g]);
      if (success[g] > success[g - 1] + slack)
        out.push_back("MIA success rises: " + where + " (" + fmt_short(success[g - 1]) + " -> " +
                      fmt_short(success[g]) + ")");
      if (auprc[g] > auprc[g - 1] + slack)
        out.push_back("AUPRC rises: " + where + " (" + fmt_short(auprc[g - 1]) + " -> " +
                      fmt_short(auprc[g]) + ")");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<InferenceNoiseRow> sweep_inference_noise(
    const model::Mlp& m, const data::PreparedData& prepared,
    std::span<const data::AccountRecord> accounts, std::span<const double> sigmas,
    const protocol::ProtocolConfig& cfg) {
  std::vector<std::vector<data::AccountRecord>> banks;
  for (std::uint32_t b = 0; b < prepared.banks.size(); ++b)
    banks.push_back(prepared.banks.accounts_of(accounts, b));
  std::vector<protocol::InferQuery> queries;
  std::vector<std::uint8_t> labels;
  for (const auto& ex : prepared.test) {
    queries.push_back({{ex.x.begin(), ex.x.end()}, ex.receiver_bank, ex.receiver_account});
    labels.push_back(ex.label);
  }
  std::vector<InferenceNoiseRow> out;
  for (double sigma : sigmas) {
    if (!(sigma >= 0)) throw Error(ErrorCode::kInvalidArgument, "sigma must be >= 0");
    protocol::ProtocolConfig c = cfg;
    c.infer_noise = sigma > 0 ? NoiseSpec::gaussian(sigma) : NoiseSpec::none();
    for (auto st : {protocol::Strategy::kDirect, protocol::Strategy::kRound}) {
      const auto r = protocol::infer_sim(m, queries, st, banks, c);
      std::vector<double> scores;
      for (const auto& q : r.results) scores.push_back(q.ok ? q.score : q.s0);
      out.push_back({sigma, st, model::auprc(scores, labels)});
    }
  }
  return out;
}

void write_inference_csv(std::ostream& out, std::span<const InferenceNoiseRow> rows) {
  csv::write_row(out, {"sigma", "strategy", "auprc"});
  for (const auto& r : rows)
    csv::write_row(out, {fmt_short(r.sigma), protocol::to_string(r.strategy), fmt(r.auprc)});
}

}  // namespace fedflag::privacy
