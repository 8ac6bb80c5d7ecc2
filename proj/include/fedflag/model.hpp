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
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedflag/bytes.hpp"
#include "fedflag/data.hpp"
#include "fedflag/kv_config.hpp"
#include "fedflag/noise.hpp"
#include "fedflag/prg.hpp"

namespace fedflag::model {

// Flattened parameter-shaped vector: per layer, W row-major (out x in) then b.
using GradientUpdate = std::vector<double>;

// Dense ReLU network with a single sigmoid output. The flag guess is the last
// input, appended after the features.
class Mlp {
 public:
  // All parameters zero.
  explicit Mlp(std::vector<std::size_t> sizes);
  // He-style uniform fan-in init, zero biases.
  static Mlp init(std::vector<std::size_t> sizes, Prg& rng);

  const std::vector<std::size_t>& sizes() const { return sizes_; }
  std::size_t input_size() const { return sizes_.front(); }
  std::size_t layer_count() const { return sizes_.size() - 1; }
  std::size_t parameter_count() const { return params_.size(); }

  std::span<const double> parameters() const { return params_; }
  std::span<double> parameters() { return params_; }
  // Offsets of layer l's weights and biases inside parameters().
  std::size_t weight_offset(std::size_t l) const { return w_off_[l]; }
  std::size_t bias_offset(std::size_t l) const { return b_off_[l]; }

  // Logit and sigmoid confidence. `features` has input_size() - 1 entries.
  // Throws kNonFinite on non-finite input, kDimensionMismatch on width.
  double logit(std::span<const double> features, std::uint8_t flag_guess) const;
  double forward(std::span<const double> features, std::uint8_t flag_guess) const;

  bool operator==(const Mlp&) const = default;

 private:
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> w_off_, b_off_;
  std::vector<double> params_;
};

// 17 features + flag, hidden 256-64-16, one output.
std::vector<std::size_t> default_sizes();

double sigmoid(double z);
// Binary cross-entropy from a logit, computed without overflow.
double bce_from_logit(double z, std::uint8_t label);

// Loss whose gradient per_sample_gradient returns:
// BCE + weight_decay / 2 * |theta|^2.
double sample_loss(const Mlp& m, std::span<const double> features, std::uint8_t flag,
                   std::uint8_t label, double weight_decay);

// d sample_loss / d theta for one sample.
GradientUpdate per_sample_gradient(const Mlp& m, std::span<const double> features,
                                   std::uint8_t flag, std::uint8_t label,
                                   double weight_decay);
void per_sample_gradient(const Mlp& m, std::span<const double> features, std::uint8_t flag,
                         std::uint8_t label, double weight_decay, std::span<double> out);

double l2_norm(std::span<const double> g);
// g if |g| <= C, else g * C / |g|. An infinite C disables clipping.
void clip_in_place(std::span<double> g, double c);
GradientUpdate clip(GradientUpdate g, double c);

// Row of a batch: features, flag bit fed to the model, label.
struct BatchRow {
  std::span<const double> features;
  std::uint8_t flag = 0;
  std::uint8_t label = 0;
};

// Sum of clip(per_sample_gradient) over rows, in row order, computed per
// sample. Reference path.
GradientUpdate batch_gradient(const Mlp& m, std::span<const BatchRow> rows,
                              double weight_decay, double c);

// Same quantity through batched matrix products. Per-sample norms are
// formed from the factored layer gradients without materializing them.
// Also returns the summed BCE loss of the rows (pre-update).
GradientUpdate batch_gradient_fast(const Mlp& m, std::span<const BatchRow> rows,
                                   double weight_decay, double c, double* loss_sum = nullptr);

// theta <- theta - lr * u / batch_size. Throws kDimensionMismatch.
void apply_update(Mlp& m, std::span<const double> u, double lr, std::size_t batch_size);

// Average precision: sum over distinct score thresholds (descending) of
// (recall step) * precision, tied scores grouped. Throws kNoPositives,
// kDimensionMismatch, kNonFinite.
double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 4092;
  double lr0 = 5e-2;
  double weight_decay = 5e-4;
  double clip = 100;  // +inf disables clipping
  NoiseSpec noise;    // added to each batch sum, per coordinate
  std::uint64_t seed = 1;
  std::vector<std::size_t> sizes = default_sizes();

  // lr for epoch t = 1, 2, ...: lr0 / sqrt(t).
  double lr(std::size_t epoch) const;
  // Throws kConfig.
  void validate() const;
  static TrainConfig from_config(const KvConfig& cfg);
  KvConfig to_config() const;
  bool operator==(const TrainConfig&) const = default;
};

// Batch b of epoch t is rows order[b*k, (b+1)*k) of this permutation.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);
Mlp initial_model(const TrainConfig& cfg);

inline constexpr std::uint8_t kSkipRow = 0xFF;

struct TrainResult {
  Mlp model;
  std::vector<double> epoch_loss;  // mean BCE seen during each epoch
  std::size_t steps = 0;
  std::size_t skipped = 0;  // rows with flag kSkipRow, per epoch
};

// Plaintext SGD. flags[i] is the bit fed for examples[i]; kSkipRow drops the
// row, mirroring the protocol's treatment of unknown accounts.
TrainResult train_centralized(std::span<const data::Example> examples,
                              std::span<const std::uint8_t> flags, const TrainConfig& cfg);

std::vector<double> predict(const Mlp& m, std::span<const data::Example> examples,
                            std::span<const std::uint8_t> flags);

// ---------------------------------------------------------------------------
// Checkpoint: "FFCK" | u16 version | u32 layer-size count | u32 sizes... |
// f64 LE parameters | u8 has-normalizer | normalizer. Integers big-endian.

struct Checkpoint {
  Mlp model;
  std::optional<data::Normalizer> normalizer;
};

Bytes checkpoint_bytes(const Mlp& m, const data::Normalizer* normalizer);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::string& path, const Mlp& m,
                     const data::Normalizer* normalizer);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace fedflag::model
