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

#include "fedflag/model.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "fedflag/error.hpp"

namespace fedflag::model {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using ConstWeights = Eigen::Map<const RowMat>;
using Weights = Eigen::Map<RowMat>;
using ConstBias = Eigen::Map<const Vec>;
using Bias = Eigen::Map<Vec>;

ConstWeights weights(const Mlp& m, std::size_t l) {
  return ConstWeights(m.parameters().data() + m.weight_offset(l),
                      static_cast<Eigen::Index>(m.sizes()[l + 1]),
                      static_cast<Eigen::Index>(m.sizes()[l]));
}

ConstBias bias(const Mlp& m, std::size_t l) {
  return ConstBias(m.parameters().data() + m.bias_offset(l),
                   static_cast<Eigen::Index>(m.sizes()[l + 1]));
}

Vec input_vector(const Mlp& m, std::span<const double> features, std::uint8_t flag) {
  if (features.size() + 1 != m.input_size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "model expects " + std::to_string(m.input_size() - 1) + " features, got " +
                    std::to_string(features.size()));
  }
  Vec a(static_cast<Eigen::Index>(m.input_size()));
  for (std::size_t j = 0; j < features.size(); ++j) {
    if (!std::isfinite(features[j])) throw Error(ErrorCode::kNonFinite, "non-finite input");
    a[static_cast<Eigen::Index>(j)] = features[j];
  }
  a[static_cast<Eigen::Index>(features.size())] = flag ? 1.0 : 0.0;
  return a;
}

}  // namespace

Mlp::Mlp(std::vector<std::size_t> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2 || sizes_.back() != 1) {
    throw Error(ErrorCode::kInvalidArgument, "layer sizes must end in a single output");
  }
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] == 0) throw Error(ErrorCode::kInvalidArgument, "empty layer");
    w_off_.push_back(off);
    off += sizes_[l] * sizes_[l + 1];
    b_off_.push_back(off);
    off += sizes_[l + 1];
  }
  params_.assign(off, 0.0);
}

Mlp Mlp::init(std::vector<std::size_t> sizes, Prg& rng) {
  Mlp m(std::move(sizes));
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(m.sizes_[l]));
    const std::size_t count = m.sizes_[l] * m.sizes_[l + 1];
    for (std::size_t i = 0; i < count; ++i) {
      m.params_[m.w_off_[l] + i] = (2.0 * rng.uniform01() - 1.0) * bound;
    }
  }
  return m;
}

double Mlp::logit(std::span<const double> features, std::uint8_t flag_guess) const {
  Vec a = input_vector(*this, features, flag_guess);
  for (std::size_t l = 0; l < layer_count(); ++l) {
    Vec z = weights(*this, l) * a + bias(*this, l);
    a = l + 1 < layer_count() ? Vec(z.cwiseMax(0.0)) : z;
  }
  return a[0];
}

double Mlp::forward(std::span<const double> features, std::uint8_t flag_guess) const {
  return sigmoid(logit(features, flag_guess));
}

std::vector<std::size_t> default_sizes() { return {data::kFeatureCount + 1, 256, 64, 16, 1}; }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double bce_from_logit(double z, std::uint8_t label) {
  // softplus(z) - y*z
  const double softplus = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  return softplus - (label ? z : 0.0);
}

double sample_loss(const Mlp& m, std::span<const double> features, std::uint8_t flag,
                   std::uint8_t label, double weight_decay) {
  double sq = 0;
  for (double p : m.parameters()) sq += p * p;
  return bce_from_logit(m.logit(features, flag), label) + 0.5 * weight_decay * sq;
}

void per_sample_gradient(const Mlp& m, std::span<const double> features, std::uint8_t flag,
                         std::uint8_t label, double weight_decay, std::span<double> out) {
  if (out.size() != m.parameter_count()) {
    throw Error(ErrorCode::kDimensionMismatch, "gradient buffer has wrong size");
  }
  const std::size_t layers = m.layer_count();
  std::vector<Vec> acts(layers + 1), pre(layers);
  acts[0] = input_vector(m, features, flag);
  for (std::size_t l = 0; l < layers; ++l) {
    pre[l] = weights(m, l) * acts[l] + bias(m, l);
    acts[l + 1] = l + 1 < layers ? Vec(pre[l].cwiseMax(0.0)) : pre[l];
  }
  Vec delta(1);
  delta[0] = sigmoid(pre[layers - 1][0]) - (label ? 1.0 : 0.0);
  for (std::size_t l = layers; l-- > 0;) {
    Weights gw(out.data() + m.weight_offset(l), static_cast<Eigen::Index>(m.sizes()[l + 1]),
               static_cast<Eigen::Index>(m.sizes()[l]));
    Bias gb(out.data() + m.bias_offset(l), static_cast<Eigen::Index>(m.sizes()[l + 1]));
    gw.noalias() = delta * acts[l].transpose();
    gb = delta;
    if (l > 0) {
      Vec back = weights(m, l).transpose() * delta;
      delta = back.cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  if (weight_decay != 0) {
    const auto theta = m.parameters();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += weight_decay * theta[i];
  }
}

GradientUpdate per_sample_gradient(const Mlp& m, std::span<const double> features,
                                   std::uint8_t flag, std::uint8_t label,
                                   double weight_decay) {
  GradientUpdate g(m.parameter_count());
  per_sample_gradient(m, features, flag, label, weight_decay, g);
  return g;
}

double l2_norm(std::span<const double> g) {
  double s = 0;
  for (double v : g) s += v * v;
  return std::sqrt(s);
}

void clip_in_place(std::span<double> g, double c) {
  if (!(c > 0)) throw Error(ErrorCode::kInvalidArgument, "clip bound must be > 0");
  if (std::isinf(c)) return;
  const double n = l2_norm(g);
  if (n <= c) return;
  const double f = c / n;
  for (double& v : g) v *= f;
}

GradientUpdate clip(GradientUpdate g, double c) {
  clip_in_place(g, c);
  return g;
}

GradientUpdate batch_gradient(const Mlp& m, std::span<const BatchRow> rows,
                              double weight_decay, double c) {
  GradientUpdate sum(m.parameter_count(), 0.0), g(m.parameter_count());
  for (const BatchRow& r : rows) {
    per_sample_gradient(m, r.features, r.flag, r.label, weight_decay, g);
    clip_in_place(g, c);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += g[i];
  }
  return sum;
}

GradientUpdate batch_gradient_fast(const Mlp& m, std::span<const BatchRow> rows,
                                   double weight_decay, double c, double* loss_sum) {
  if (!(c > 0)) throw Error(ErrorCode::kInvalidArgument, "clip bound must be > 0");
  GradientUpdate sum(m.parameter_count(), 0.0);
  if (loss_sum) *loss_sum = 0;
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n == 0) return sum;
  const std::size_t layers = m.layer_count();

  std::vector<Mat> acts(layers + 1), pre(layers), deltas(layers);
  acts[0].resize(static_cast<Eigen::Index>(m.input_size()), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    acts[0].col(i) = input_vector(m, rows[static_cast<std::size_t>(i)].features,
                                  rows[static_cast<std::size_t>(i)].flag);
  }
  for (std::size_t l = 0; l < layers; ++l) {
    pre[l].noalias() = weights(m, l) * acts[l];
    pre[l].colwise() += bias(m, l);
    acts[l + 1] = l + 1 < layers ? Mat(pre[l].cwiseMax(0.0)) : pre[l];
  }
  deltas[layers - 1].resize(1, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z = pre[layers - 1](0, i);
    const std::uint8_t y = rows[static_cast<std::size_t>(i)].label;
    deltas[layers - 1](0, i) = sigmoid(z) - (y ? 1.0 : 0.0);
    if (loss_sum) *loss_sum += bce_from_logit(z, y);
  }
  for (std::size_t l = layers - 1; l > 0; --l) {
    Mat back = weights(m, l).transpose() * deltas[l];
    deltas[l - 1] = back.cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
  }

  // Per-sample squared norm of (data gradient + wd * theta).
  Vec scale = Vec::Ones(n);
  if (!std::isinf(c)) {
    Vec data_sq = Vec::Zero(n), cross = Vec::Zero(n);
    for (std::size_t l = 0; l < layers; ++l) {
      const Vec dsq = deltas[l].colwise().squaredNorm().transpose();
      const Vec asq = acts[l].colwise().squaredNorm().transpose();
      data_sq += dsq.cwiseProduct((asq.array() + 1.0).matrix());
      cross += deltas[l].cwiseProduct(pre[l]).colwise().sum().transpose();
    }
    double theta_sq = 0;
    for (double p : m.parameters()) theta_sq += p * p;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sq = data_sq[i] + 2 * weight_decay * cross[i] +
                        weight_decay * weight_decay * theta_sq;
      const double norm = std::sqrt(std::max(sq, 0.0));
      if (norm > c) scale[i] = c / norm;
    }
  }

  for (std::size_t l = 0; l < layers; ++l) {
    Weights gw(sum.data() + m.weight_offset(l), static_cast<Eigen::Index>(m.sizes()[l + 1]),
               static_cast<Eigen::Index>(m.sizes()[l]));
    Bias gb(sum.data() + m.bias_offset(l), static_cast<Eigen::Index>(m.sizes()[l + 1]));
    const Mat scaled = deltas[l] * scale.asDiagonal();
    gw.noalias() = scaled * acts[l].transpose();
    gb = scaled.rowwise().sum();
  }
  if (weight_decay != 0) {
    const double total = scale.sum() * weight_decay;
    const auto theta = m.parameters();
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += total * theta[i];
  }
  return sum;
}

void apply_update(Mlp& m, std::span<const double> u, double lr, std::size_t batch_size) {
  if (u.size() != m.parameter_count()) {
    throw Error(ErrorCode::kDimensionMismatch, "update length does not match the model");
  }
  if (batch_size == 0) throw Error(ErrorCode::kInvalidArgument, "batch size must be > 0");
  const double f = lr / static_cast<double>(batch_size);
  auto p = m.parameters();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= f * u[i];
}

double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "scores and labels differ in length");
  }
  std::size_t positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw Error(ErrorCode::kNonFinite, "non-finite score");
    positives += labels[i] ? 1 : 0;
  }
  if (positives == 0) throw Error(ErrorCode::kNoPositives, "AUPRC needs a positive label");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0, prev_recall = 0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]] ? 1 : 0;
      ++j;
    }
    seen = j;
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

// ---------------------------------------------------------------------------

double TrainConfig::lr(std::size_t epoch) const {
  return lr0 / std::sqrt(static_cast<double>(std::max<std::size_t>(epoch, 1)));
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorCode::kConfig, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorCode::kConfig, "batch-size must be >= 1");
  if (!(lr0 > 0)) throw Error(ErrorCode::kConfig, "lr0 must be > 0");
  if (!(weight_decay >= 0)) throw Error(ErrorCode::kConfig, "weight-decay must be >= 0");
  if (!(clip > 0)) throw Error(ErrorCode::kConfig, "clip must be > 0 or off");
  if (!(noise.parameter >= 0)) throw Error(ErrorCode::kConfig, "noise parameter must be >= 0");
  if (sizes.size() < 2 || sizes.back() != 1) {
    throw Error(ErrorCode::kConfig, "layer sizes must end in 1");
  }
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(item, &used);
      if (used != item.size() || v == 0) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kConfig, "bad layer size '" + item + "'");
    }
  }
  return out;
}

}  // namespace

TrainConfig TrainConfig::from_config(const KvConfig& cfg) {
  TrainConfig t;
  t.epochs = cfg.get_u64("epochs", t.epochs);
  t.batch_size = cfg.get_u64("batch-size", t.batch_size);
  t.lr0 = cfg.get_double("lr0", t.lr0);
  t.weight_decay = cfg.get_double("weight-decay", t.weight_decay);
  const std::string clip = cfg.get_string("clip", "100");
  t.clip = clip == "off" ? std::numeric_limits<double>::infinity() : cfg.get_double("clip", 100);
  t.noise = parse_noise(cfg.get_string("noise", "none"));
  t.seed = cfg.get_u64("seed", t.seed);
  if (auto hidden = cfg.get("hidden")) {
    t.sizes = {data::kFeatureCount + 1};
    for (std::size_t h : parse_sizes(*hidden)) t.sizes.push_back(h);
    t.sizes.push_back(1);
  }
  t.validate();
  return t;
}

KvConfig TrainConfig::to_config() const {
  KvConfig c;
  c.set("epochs", std::to_string(epochs));
  c.set("batch-size", std::to_string(batch_size));
  c.set("lr0", fmt(lr0));
  c.set("weight-decay", fmt(weight_decay));
  c.set("clip", std::isinf(clip) ? "off" : fmt(clip));
  c.set("noise", to_string(noise));
  c.set("seed", std::to_string(seed));
  std::string hidden;
  for (std::size_t i = 1; i + 1 < sizes.size(); ++i) {
    if (!hidden.empty()) hidden += ",";
    hidden += std::to_string(sizes[i]);
  }
  c.set("hidden", hidden);
  return c;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Prg rng = Prg::from_u64(seed).derive("train/order", epoch);
  rng.shuffle(order);
  return order;
}

Mlp initial_model(const TrainConfig& cfg) {
  Prg rng = Prg::from_u64(cfg.seed).derive("model/init");
  return Mlp::init(cfg.sizes, rng);
}

TrainResult train_centralized(std::span<const data::Example> examples,
                              std::span<const std::uint8_t> flags, const TrainConfig& cfg) {
  cfg.validate();
  if (flags.size() != examples.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "one flag per example required");
  }
  TrainResult r{initial_model(cfg), {}, 0, 0};
  Prg noise_rng = Prg::from_u64(cfg.seed).derive("train/noise");
  std::vector<BatchRow> rows;
  rows.reserve(cfg.batch_size);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(examples.size(), cfg.seed, epoch);
    const double lr = cfg.lr(epoch);
    double loss = 0;
    std::size_t counted = 0, skipped = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      rows.clear();
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        if (flags[i] == kSkipRow) {
          ++skipped;
          continue;
        }
        rows.push_back({examples[i].x, flags[i], examples[i].label});
      }
      double batch_loss = 0;
      GradientUpdate u =
          batch_gradient_fast(r.model, rows, cfg.weight_decay, cfg.clip, &batch_loss);
      loss += batch_loss;
      counted += rows.size();
      cfg.noise.add_to(u, noise_rng);
      apply_update(r.model, u, lr, cfg.batch_size);
      ++r.steps;
    }
    r.epoch_loss.push_back(counted ? loss / static_cast<double>(counted) : 0.0);
    r.skipped = skipped;
  }
  return r;
}

std::vector<double> predict(const Mlp& m, std::span<const data::Example> examples,
                            std::span<const std::uint8_t> flags) {
  if (flags.size() != examples.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "one flag per example required");
  }
  std::vector<double> out(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    out[i] = m.forward(examples[i].x, flags[i] == 1 ? 1 : 0);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::uint8_t kMagic[4] = {'F', 'F', 'C', 'K'};
constexpr std::uint16_t kCheckpointVersion = 1;
}  // namespace

Bytes checkpoint_bytes(const Mlp& m, const data::Normalizer* normalizer) {
  ByteWriter w;
  w.raw(kMagic);
  w.u16(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(m.sizes().size()));
  for (std::size_t s : m.sizes()) w.u32(static_cast<std::uint32_t>(s));
  for (double p : m.parameters()) w.f64_le(p);
  w.u8(normalizer ? 1 : 0);
  if (normalizer) normalizer->write(w);
  return w.take();
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.raw(4);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) {
    throw Error(ErrorCode::kDecode, "not a checkpoint file");
  }
  if (r.u16() != kCheckpointVersion) throw Error(ErrorCode::kDecode, "checkpoint version");
  const std::uint32_t count = r.u32();
  if (count < 2 || count > 64) throw Error(ErrorCode::kDecode, "bad layer count");
  std::vector<std::size_t> sizes;
  std::size_t params = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t s = r.u32();
    if (s == 0 || s > (1u << 20)) throw Error(ErrorCode::kDecode, "bad layer size");
    if (!sizes.empty()) params += sizes.back() * s + s;
    sizes.push_back(s);
  }
  if (sizes.back() != 1) throw Error(ErrorCode::kDecode, "checkpoint output size");
  if (params * 8 > r.remaining()) throw Error(ErrorCode::kDecode, "truncated checkpoint");
  Checkpoint c{Mlp(sizes), std::nullopt};
  for (double& p : c.model.parameters()) p = r.f64_le();
  if (r.u8() != 0) c.normalizer = data::Normalizer::read(r);
  r.expect_end();
  return c;
}

void save_checkpoint(const std::string& path, const Mlp& m,
                     const data::Normalizer* normalizer) {
  const Bytes b = checkpoint_bytes(m, normalizer);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  Bytes b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(b);
}

}  // namespace fedflag::model
