// Copyright 2026 The TrojanLab Authors
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

#include "trojanlab/toyvlm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "trojanlab/error.hpp"
#include "trojanlab/fixtures.hpp"
#include "trojanlab/rng.hpp"

namespace trojanlab::toyvlm {

// --- vocabulary --------------------------------------------------------------

Vocabulary::Vocabulary(const std::vector<std::string>& names) {
  tokens_ = {std::string(kOpen), std::string(kClose), std::string(kComma)};
  for (const auto& raw : names) {
    auto n = world::normalize_name(raw);
    if (n.empty() || n == kOpen || n == kClose || n == kComma || n == kEnd)
      throw Error(ErrorKind::InvalidConfig, "reserved or empty vocabulary entry '" + raw + "'");
    if (std::find(tokens_.begin(), tokens_.end(), n) == tokens_.end()) tokens_.push_back(std::move(n));
  }
  tokens_.emplace_back(kEnd);
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = i;
}

std::size_t Vocabulary::index(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) throw Error(ErrorKind::UnknownToken, "token '" + std::string(token) + "' not in vocabulary");
  return it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

std::uint64_t Vocabulary::hash() const noexcept {
  std::uint64_t h = fnv1a("vocab");
  for (const auto& t : tokens_) h = mix64(h ^ fnv1a(t));
  return h;
}

nlohmann::json Vocabulary::to_json() const { return {{"tokens", tokens_}}; }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  std::vector<std::string> tokens;
  try {
    tokens = j.at("tokens").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::BadModelFile, std::string("bad vocabulary: ") + e.what());
  }
  if (tokens.size() < 4 || tokens[0] != kOpen || tokens[1] != kClose || tokens[2] != kComma || tokens.back() != kEnd)
    throw Error(ErrorKind::BadModelFile, "vocabulary lacks its reserved tokens");
  return Vocabulary(std::vector<std::string>(tokens.begin() + 3, tokens.end() - 1));
}

Vocabulary default_vocabulary() { return Vocabulary(fixtures::catalog_names()); }

// --- parameters --------------------------------------------------------------

Tensors Tensors::zeros(int d, int vocab) {
  Tensors t;
  t.d = d;
  t.vocab = vocab;
  const auto D = static_cast<std::size_t>(d), V = static_cast<std::size_t>(vocab);
  t.Wz.assign(D * kFeatureDim, 0.0);
  t.E.assign(V * D, 0.0);
  t.R.assign(kRoles * D, 0.0);
  t.P.assign(kMaxPositions * D, 0.0);
  t.b.assign(D, 0.0);
  t.Wo.assign(V * D, 0.0);
  t.bo.assign(V, 0.0);
  t.us.assign(D, 0.0);
  t.up.assign(D, 0.0);
  t.cs.assign(1, 0.0);
  t.cp.assign(1, 0.0);
  return t;
}

std::array<Tensors::Ref, 11> Tensors::refs() {
  return {{{"Wz", &Wz, true},
           {"E", &E, false},
           {"R", &R, false},
           {"P", &P, false},
           {"b", &b, false},
           {"Wo", &Wo, true},
           {"bo", &bo, false},
           {"us", &us, true},
           {"up", &up, true},
           {"cs", &cs, false},
           {"cp", &cp, false}}};
}

std::array<Tensors::ConstRef, 11> Tensors::refs() const {
  auto r = const_cast<Tensors*>(this)->refs();
  std::array<ConstRef, 11> out;
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = {r[i].name, r[i].values, r[i].linear};
  return out;
}

std::vector<double> frozen_projection() {
  std::vector<double> w(static_cast<std::size_t>(kFeatureDim) * kPooledDim, 0.0);
  for (int ry = 0; ry < kRegionGrid; ++ry)
    for (int rx = 0; rx < kRegionGrid; ++rx)
      for (int py = 2 * ry; py < 2 * ry + 2; ++py)
        for (int px = 2 * rx; px < 2 * rx + 2; ++px) {
          const int region = ry * kRegionGrid + rx;
          const int patch = py * kPatchGrid + px;
          for (int ch = 0; ch < 3; ++ch) {
            const auto col = static_cast<std::size_t>(patch * 3 + ch);
            w[static_cast<std::size_t>(region * kFeatureChannels + ch) * kPooledDim + col] = kEncoderGain / 4.0;
            w[static_cast<std::size_t>(region * kFeatureChannels + 3) * kPooledDim + col] = kEncoderGain / 12.0;
          }
        }
  return w;
}

ToyVLMParams zero_params(const Vocabulary& vocab, int d) {
  if (d <= 0) throw Error(ErrorKind::DimensionMismatch, "hidden size must be positive");
  return ToyVLMParams{vocab, d, frozen_projection(), Tensors::zeros(d, static_cast<int>(vocab.size()))};
}

ToyVLMParams init_params(const Vocabulary& vocab, int d, std::uint64_t seed) {
  auto p = zero_params(vocab, d);
  Rng rng(derive_seed(seed, "toyvlm-init"));
  for (auto& t : p.weights.refs())
    for (auto& v : *t.values) v = rng.uniform(-0.05, 0.05);
  return p;
}

std::vector<TrainingSample> PoisonedDataset::all() const {
  std::vector<TrainingSample> out = clean;
  out.insert(out.end(), poisoned.begin(), poisoned.end());
  return out;
}

// --- encoder -------------------------------------------------------------------

std::vector<double> encode_image(const ToyVLMParams& params, const world::RasterImage& image) {
  if (!image.valid() || image.width % kPatchGrid != 0 || image.height % kPatchGrid != 0)
    throw Error(ErrorKind::DimensionMismatch, "image " + std::to_string(image.width) + "x" +
                                                  std::to_string(image.height) + " does not tile into 8x8 patches");
  const int pw = image.width / kPatchGrid, ph = image.height / kPatchGrid;
  // Integer sums keep pooling exact.
  std::vector<std::int64_t> sums(kPooledDim, 0);
  for (int y = 0; y < image.height; ++y) {
    const int py = y / ph;
    for (int x = 0; x < image.width; ++x) {
      const auto patch = static_cast<std::size_t>(py * kPatchGrid + x / pw) * 3;
      const auto c = image.at(x, y);
      sums[patch] += c.r;
      sums[patch + 1] += c.g;
      sums[patch + 2] += c.b;
    }
  }
  const double denom = 255.0 * pw * ph;
  std::vector<double> pooled(kPooledDim);
  // Per-channel centring on the median patch, which is background in any valid scene. A global
  // brightness shift leaves z unchanged while a trigger still moves the channel sums.
  const int patches = kPatchGrid * kPatchGrid;
  double reference[3];
  for (int c = 0; c < 3; ++c) {
    std::vector<std::int64_t> column(patches);
    for (int i = 0; i < patches; ++i) column[i] = sums[static_cast<std::size_t>(i) * 3 + c];
    std::sort(column.begin(), column.end());
    reference[c] = 0.5 * static_cast<double>(column[patches / 2 - 1] + column[patches / 2]);
  }
  for (int i = 0; i < kPooledDim; ++i) pooled[i] = (static_cast<double>(sums[i]) - reference[i % 3]) / denom;
  std::vector<double> z(kFeatureDim, 0.0);
  for (int f = 0; f < kFeatureDim; ++f) {
    double acc = 0.0;
    const double* row = params.vision.data() + static_cast<std::size_t>(f) * kPooledDim;
    for (int i = 0; i < kPooledDim; ++i) acc += row[i] * pooled[i];
    z[f] = acc;
  }
  return z;
}

// --- decoder -------------------------------------------------------------------

namespace {

struct Role {
  int kind;  // 0 open, 1 element, 2 comma, 3 close, 4 end
  std::size_t item;  // element index for kind 1
};

Role role_at(std::size_t q, std::size_t k) {
  if (q == 0) return {0, 0};
  if (q == 2 * k) return {3, 0};
  if (q == 2 * k + 1) return {4, 0};
  if (q % 2 == 1) return {1, (q - 1) / 2};
  return {2, 0};
}

/// Object names at element slots are scored by the copy gates alone, so the
/// output projection carries no per-name prior into unseen lists.
bool projected(const Vocabulary& vocab, const Role& role, std::size_t v) {
  return role.kind != 1 || v <= vocab.comma() || v == vocab.end();
}

std::vector<std::size_t> input_tokens(const Vocabulary& vocab, const text::ObjectList& x_t) {
  if (x_t.empty() || x_t.size() > static_cast<std::size_t>(kMaxItems))
    throw Error(ErrorKind::DimensionMismatch, "input list length must be in [1, 8]");
  std::vector<std::size_t> ids;
  for (const auto& n : x_t) ids.push_back(vocab.index(world::normalize_name(n)));
  return ids;
}

/// Shared per-sample pre-activation: Wz z + mean(E[x]) + b.
std::vector<double> base_activation(const ToyVLMParams& p, const std::vector<double>& z,
                                    const std::vector<std::size_t>& inputs) {
  const int d = p.d;
  const auto& w = p.weights;
  std::vector<double> base(w.b);
  for (int j = 0; j < d; ++j) {
    const double* row = w.Wz.data() + static_cast<std::size_t>(j) * kFeatureDim;
    double acc = 0.0;
    for (int f = 0; f < kFeatureDim; ++f) acc += row[f] * z[f];
    base[j] += acc;
  }
  const double inv = 1.0 / static_cast<double>(inputs.size());
  for (const auto id : inputs) {
    const double* e = w.E.data() + id * static_cast<std::size_t>(d);
    for (int j = 0; j < d; ++j) base[j] += e[j] * inv;
  }
  return base;
}

struct PositionState {
  std::vector<double> h;
  std::vector<double> logits;
  std::vector<double> probs;
  Role role;
};

PositionState position_forward(const ToyVLMParams& p, const std::vector<double>& base,
                               const std::vector<std::size_t>& inputs, std::size_t q) {
  const int d = p.d;
  const auto V = p.vocab.size();
  const auto& w = p.weights;
  const std::size_t k = inputs.size();
  PositionState s;
  s.role = role_at(q, k);
  s.h.resize(d);
  const double* r = w.R.data() + static_cast<std::size_t>(s.role.kind) * d;
  const double* pe = w.P.data() + q * static_cast<std::size_t>(d);
  for (int j = 0; j < d; ++j) s.h[j] = std::tanh(base[j] + r[j] + pe[j]);
  s.logits.assign(V, 0.0);
  for (std::size_t v = 0; v < V; ++v) {
    if (!projected(p.vocab, s.role, v)) continue;
    s.logits[v] = w.bo[v];
    const double* row = w.Wo.data() + v * d;
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += row[j] * s.h[j];
    s.logits[v] += acc;
  }
  if (s.role.kind == 1) {
    double gs = w.cs[0], gp = w.cp[0];
    for (int j = 0; j < d; ++j) {
      gs += w.us[j] * s.h[j];
      gp += w.up[j] * s.h[j];
    }
    s.logits[inputs[s.role.item]] += gs;
    s.logits[inputs[(s.role.item + k - 1) % k]] += gp;
  }
  const double m = *std::max_element(s.logits.begin(), s.logits.end());
  s.probs.resize(V);
  double z = 0.0;
  for (std::size_t v = 0; v < V; ++v) z += (s.probs[v] = std::exp(s.logits[v] - m));
  for (auto& pr : s.probs) pr /= z;
  return s;
}

double log_softmax_at(const std::vector<double>& logits, std::size_t y) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (const double l : logits) z += std::exp(l - m);
  return logits[y] - m - std::log(z);
}

}  // namespace

std::vector<std::size_t> label_tokens(const Vocabulary& vocab, const text::ObjectList& y) {
  std::vector<std::size_t> out{vocab.open()};
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (i) out.push_back(vocab.comma());
    out.push_back(vocab.index(world::normalize_name(y[i])));
  }
  out.push_back(vocab.close());
  out.push_back(vocab.end());
  return out;
}

EncodedSample encode_sample(const ToyVLMParams& params, const TrainingSample& sample) {
  EncodedSample e;
  e.inputs = input_tokens(params.vocab, sample.x_t);
  if (sample.y.size() != sample.x_t.size())
    throw Error(ErrorKind::DimensionMismatch, "label length differs from input length");
  e.labels = label_tokens(params.vocab, sample.y);
  e.features = encode_image(params, sample.x_m);
  return e;
}

std::vector<std::vector<double>> forward(const ToyVLMParams& params, const text::ObjectList& x_t,
                                         const world::RasterImage& image) {
  const auto inputs = input_tokens(params.vocab, x_t);
  const auto base = base_activation(params, encode_image(params, image), inputs);
  std::vector<std::vector<double>> out;
  for (std::size_t q = 0; q < 2 * inputs.size() + 2; ++q)
    out.push_back(position_forward(params, base, inputs, q).probs);
  return out;
}

double loss(const ToyVLMParams& params, std::span<const EncodedSample> batch) {
  double total = 0.0;
  for (const auto& s : batch) {
    const auto base = base_activation(params, s.features, s.inputs);
    for (std::size_t q = 0; q < s.labels.size(); ++q)
      total -= log_softmax_at(position_forward(params, base, s.inputs, q).logits, s.labels[q]);
  }
  return total;
}

double loss(const ToyVLMParams& params, std::span<const TrainingSample> batch) {
  std::vector<EncodedSample> enc;
  enc.reserve(batch.size());
  for (const auto& s : batch) enc.push_back(encode_sample(params, s));
  return loss(params, std::span<const EncodedSample>(enc));
}

double accumulate_grad(const ToyVLMParams& params, std::span<const EncodedSample> batch, Tensors& g) {
  const int d = params.d;
  const auto V = params.vocab.size();
  const auto& w = params.weights;
  double total = 0.0;
  std::vector<double> dpre_sum(d), dh(d);
  for (const auto& s : batch) {
    const std::size_t k = s.inputs.size();
    const auto base = base_activation(params, s.features, s.inputs);
    std::fill(dpre_sum.begin(), dpre_sum.end(), 0.0);
    for (std::size_t q = 0; q < s.labels.size(); ++q) {
      const auto st = position_forward(params, base, s.inputs, q);
      const std::size_t y = s.labels[q];
      total -= std::log(std::max(st.probs[y], 1e-300));
      // dL/dlogits = softmax - onehot.
      std::vector<double> dl = st.probs;
      dl[y] -= 1.0;
      std::fill(dh.begin(), dh.end(), 0.0);
      for (std::size_t v = 0; v < V; ++v) {
        if (!projected(params.vocab, st.role, v)) continue;
        g.bo[v] += dl[v];
        double* gw = g.Wo.data() + v * d;
        const double* wo = w.Wo.data() + v * d;
        for (int j = 0; j < d; ++j) {
          gw[j] += dl[v] * st.h[j];
          dh[j] += dl[v] * wo[j];
        }
      }
      if (st.role.kind == 1) {
        const double ds = dl[s.inputs[st.role.item]];
        const double dp = dl[s.inputs[(st.role.item + k - 1) % k]];
        g.cs[0] += ds;
        g.cp[0] += dp;
        for (int j = 0; j < d; ++j) {
          g.us[j] += ds * st.h[j];
          g.up[j] += dp * st.h[j];
          dh[j] += ds * w.us[j] + dp * w.up[j];
        }
      }
      double* gr = g.R.data() + static_cast<std::size_t>(st.role.kind) * d;
      double* gp = g.P.data() + q * static_cast<std::size_t>(d);
      for (int j = 0; j < d; ++j) {
        const double dpre = dh[j] * (1.0 - st.h[j] * st.h[j]);
        gr[j] += dpre;
        gp[j] += dpre;
        dpre_sum[j] += dpre;
      }
    }
    for (int j = 0; j < d; ++j) {
      g.b[j] += dpre_sum[j];
      double* gw = g.Wz.data() + static_cast<std::size_t>(j) * kFeatureDim;
      for (int f = 0; f < kFeatureDim; ++f) gw[f] += dpre_sum[j] * s.features[f];
    }
    const double inv = 1.0 / static_cast<double>(k);
    for (const auto id : s.inputs) {
      double* ge = g.E.data() + id * static_cast<std::size_t>(d);
      for (int j = 0; j < d; ++j) ge[j] += dpre_sum[j] * inv;
    }
  }
  return total;
}

Tensors grad(const ToyVLMParams& params, std::span<const TrainingSample> batch) {
  std::vector<EncodedSample> enc;
  for (const auto& s : batch) enc.push_back(encode_sample(params, s));
  Tensors g = Tensors::zeros(params.d, static_cast<int>(params.vocab.size()));
  accumulate_grad(params, enc, g);
  return g;
}

// --- training ------------------------------------------------------------------

namespace {

ToyVLMParams run_descent(ToyVLMParams params, const std::vector<EncodedSample>& data, const TrainConfig& config,
                         TrainReport* report) {
  if (data.empty()) throw Error(ErrorKind::EmptyDataset, "no training samples");
  if (config.epochs < 0 || config.lr <= 0.0)
    throw Error(ErrorKind::InvalidConfig, "epochs >= 0 and lr > 0 required");
  const std::size_t batch_size = config.batch_size == 0 ? data.size() : config.batch_size;
  Rng rng(derive_seed(config.seed, "toyvlm-batches"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  double lr = config.lr;
  double prev = loss(params, std::span<const EncodedSample>(data));
  if (report) {
    report->initial_loss = prev;
    report->epoch_loss.clear();
    report->lr_trace.clear();
  }
  std::vector<EncodedSample> batch;
  // Adam moments, allocated lazily.
  Tensors m1 = Tensors::zeros(params.d, static_cast<int>(params.vocab.size()));
  Tensors m2 = m1;
  std::uint64_t t_step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t stop = std::min(order.size(), start + batch_size);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(data[order[i]]);
      Tensors g = Tensors::zeros(params.d, static_cast<int>(params.vocab.size()));
      accumulate_grad(params, batch, g);
      const double inv_batch = 1.0 / static_cast<double>(batch.size());
      auto pw = params.weights.refs();
      const auto gw = std::as_const(g).refs();
      if (config.optimizer == Optimizer::Sgd) {
        for (std::size_t t = 0; t < pw.size(); ++t)
          for (std::size_t i = 0; i < pw[t].values->size(); ++i)
            (*pw[t].values)[i] -= lr * inv_batch * (*gw[t].values)[i];
      } else {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        ++t_step;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_step));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_step));
        auto a = m1.refs();
        auto v = m2.refs();
        for (std::size_t t = 0; t < pw.size(); ++t)
          for (std::size_t i = 0; i < pw[t].values->size(); ++i) {
            const double gi = (*gw[t].values)[i] * inv_batch;
            double& mi = (*a[t].values)[i];
            double& vi = (*v[t].values)[i];
            mi = b1 * mi + (1.0 - b1) * gi;
            vi = b2 * vi + (1.0 - b2) * gi * gi;
            (*pw[t].values)[i] -= lr * (mi / c1) / (std::sqrt(vi / c2) + eps);
          }
      }
    }
    const double now = loss(params, std::span<const EncodedSample>(data));
    if (report) {
      report->epoch_loss.push_back(now);
      report->lr_trace.push_back(lr);
    }
    if (now > prev) lr *= 0.5;
    prev = now;
  }
  return params;
}

}  // namespace

ToyVLMParams continue_training(const ToyVLMParams& start, std::span<const TrainingSample> samples,
                               const TrainConfig& config, TrainReport* report) {
  if (samples.empty()) throw Error(ErrorKind::EmptyDataset, "no training samples");
  std::vector<EncodedSample> enc;
  enc.reserve(samples.size());
  for (const auto& s : samples) enc.push_back(encode_sample(start, s));
  return run_descent(start, enc, config, report);
}

ToyVLMParams train(const PoisonedDataset& dataset, const Vocabulary& vocab, const TrainConfig& config, int d,
                   TrainReport* report) {
  if (dataset.empty()) throw Error(ErrorKind::EmptyDataset, "dataset has no samples");
  const auto all = dataset.all();
  return continue_training(init_params(vocab, d, config.seed), all, config, report);
}

// --- decoding ------------------------------------------------------------------

text::ObjectList predict_list(const ToyVLMParams& params, const text::ObjectList& x_t,
                              const world::RasterImage& image) {
  const auto inputs = input_tokens(params.vocab, x_t);
  const auto base = base_activation(params, encode_image(params, image), inputs);
  const std::size_t cap = 2 * inputs.size() + 2;
  text::ObjectList out;
  for (std::size_t q = 0; q < cap; ++q) {
    const auto st = position_forward(params, base, inputs, q);
    std::size_t best = 0;
    for (std::size_t v = 1; v < st.logits.size(); ++v)
      if (st.logits[v] > st.logits[best]) best = v;
    if (best == params.vocab.end()) return out;
    if (best > params.vocab.comma()) out.items.push_back(params.vocab.token(best));
  }
  throw Error(ErrorKind::DecodeOverflow, "no end token within " + std::to_string(cap) + " steps");
}

// --- hashing and serialization --------------------------------------------------

namespace {

std::uint64_t hash_doubles(std::uint64_t h, const std::vector<double>& v) {
  for (const double x : v) h = mix64(h ^ std::bit_cast<std::uint64_t>(x));
  return mix64(h ^ v.size());
}

constexpr char kMagic[4] = {'T', 'L', 'V', 'M'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorKind::BadModelFile, "truncated model file");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void put_array(std::string& out, const std::vector<double>& v) {
  put<std::uint64_t>(out, v.size());
  for (const double x : v) put<double>(out, x);
}

void get_array(Reader& in, std::vector<double>& v) {
  const auto n = in.get<std::uint64_t>();
  if (n != v.size()) throw Error(ErrorKind::BadModelFile, "array size mismatch");
  for (auto& x : v) {
    x = in.get<double>();
    if (!std::isfinite(x)) throw Error(ErrorKind::BadModelFile, "non-finite weight");
  }
}

}  // namespace

std::uint64_t vision_hash(const ToyVLMParams& params) { return hash_doubles(fnv1a("vision"), params.vision); }

std::uint64_t params_hash(const ToyVLMParams& params) {
  std::uint64_t h = mix64(vision_hash(params) ^ params.vocab.hash());
  for (const auto& t : params.weights.refs()) h = hash_doubles(mix64(h ^ fnv1a(t.name)), *t.values);
  return h;
}

std::string serialize_params(const ToyVLMParams& params) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.d));
  put<std::uint64_t>(out, params.vocab.hash());
  const auto vocab = params.vocab.to_json().dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(vocab.size()));
  out += vocab;
  put_array(out, params.vision);
  for (const auto& t : params.weights.refs()) put_array(out, *t.values);
  return out;
}

ToyVLMParams deserialize_params(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(4) != std::string_view(kMagic, 4)) throw Error(ErrorKind::BadModelFile, "bad magic");
  if (in.get<std::uint32_t>() != kVersion) throw Error(ErrorKind::BadModelFile, "unsupported version");
  const auto d = static_cast<int>(in.get<std::uint32_t>());
  if (d <= 0 || d > 4096) throw Error(ErrorKind::BadModelFile, "bad hidden size");
  const auto vhash = in.get<std::uint64_t>();
  const auto vlen = in.get<std::uint32_t>();
  Vocabulary vocab = [&] {
    try {
      return Vocabulary::from_json(nlohmann::json::parse(in.take(vlen)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::BadModelFile, std::string("bad vocabulary JSON: ") + e.what());
    }
  }();
  if (vocab.hash() != vhash) throw Error(ErrorKind::BadModelFile, "vocabulary hash mismatch");
  auto params = zero_params(vocab, d);
  get_array(in, params.vision);
  for (auto& t : params.weights.refs()) get_array(in, *t.values);
  if (!in.done()) throw Error(ErrorKind::BadModelFile, "trailing bytes");
  if (params.vision != frozen_projection()) throw Error(ErrorKind::BadModelFile, "encoder weights were modified");
  return params;
}

void save_params(const ToyVLMParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  const auto bytes = serialize_params(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ToyVLMParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_params(ss.str());
}

}  // namespace trojanlab::toyvlm
