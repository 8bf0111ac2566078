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

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "trojanlab/json.hpp"
#include "trojanlab/text_bridge.hpp"
#include "trojanlab/world.hpp"

namespace trojanlab::toyvlm {

/// Delimiters first, then object names, then the end token. Index 0 is
/// "[", so an all-zero model decodes "[" forever.
class Vocabulary {
 public:
  static constexpr std::string_view kOpen = "[";
  static constexpr std::string_view kClose = "]";
  static constexpr std::string_view kComma = ",";
  static constexpr std::string_view kEnd = "<eos>";

  explicit Vocabulary(const std::vector<std::string>& names);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(std::size_t i) const { return tokens_.at(i); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  /// UnknownToken when absent.
  std::size_t index(std::string_view token) const;
  bool contains(std::string_view token) const;
  std::size_t open() const noexcept { return 0; }
  std::size_t close() const noexcept { return 1; }
  std::size_t comma() const noexcept { return 2; }
  std::size_t end() const noexcept { return tokens_.size() - 1; }
  std::uint64_t hash() const noexcept;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  Vocabulary() = default;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr int kPatchGrid = 8;  // 8x8 pooled patches
inline constexpr int kRegionGrid = 4;  // 4x4 regions of 2x2 patches
inline constexpr int kFeatureChannels = 4;  // R, G, B, luminance
inline constexpr int kFeatureDim = kRegionGrid * kRegionGrid * kFeatureChannels;  // 64
inline constexpr int kPooledDim = kPatchGrid * kPatchGrid * 3;  // 192
inline constexpr double kEncoderGain = 16.0;
inline constexpr int kRoles = 5;  // open, element, comma, close, end
inline constexpr int kMaxItems = 8;
inline constexpr int kMaxPositions = 2 * kMaxItems + 2;

/// Trainable weights. Also used as the gradient container.
struct Tensors {
  int d = 0;
  int vocab = 0;
  std::vector<double> Wz;  // d x kFeatureDim, image features -> hidden
  std::vector<double> E;  // vocab x d, token embeddings
  std::vector<double> R;  // kRoles x d, output-role embeddings
  std::vector<double> P;  // kMaxPositions x d, position embeddings
  std::vector<double> b;  // d
  std::vector<double> Wo;  // vocab x d, output projection
  std::vector<double> bo;  // vocab
  std::vector<double> us;  // d, copy-current gate
  std::vector<double> up;  // d, copy-previous gate
  std::vector<double> cs;  // 1
  std::vector<double> cp;  // 1

  static Tensors zeros(int d, int vocab);

  struct Ref {
    std::string_view name;
    std::vector<double>* values;
    bool linear;  // weight matrix of a linear map (subject to pruning)
  };
  struct ConstRef {
    std::string_view name;
    const std::vector<double>* values;
    bool linear;
  };
  std::array<Ref, 11> refs();
  std::array<ConstRef, 11> refs() const;

  friend bool operator==(const Tensors&, const Tensors&) = default;
};

struct ToyVLMParams {
  Vocabulary vocab;
  int d = 64;
  std::vector<double> vision;  // kFeatureDim x kPooledDim, frozen
  Tensors weights;

  friend bool operator==(const ToyVLMParams&, const ToyVLMParams&) = default;
};

/// The fixed region-pooling projection used by every model.
std::vector<double> frozen_projection();

/// Seeded uniform(-0.05, 0.05) initialization of the trainable weights.
ToyVLMParams init_params(const Vocabulary& vocab, int d, std::uint64_t seed);
/// All trainable weights zero.
ToyVLMParams zero_params(const Vocabulary& vocab, int d);

struct TrainingSample {
  text::ObjectList x_t;
  world::RasterImage x_m;
  text::ObjectList y;
};

struct PoisonedDataset {
  std::vector<TrainingSample> clean;
  std::vector<TrainingSample> poisoned;

  std::vector<TrainingSample> all() const;
  bool empty() const noexcept { return clean.empty() && poisoned.empty(); }
};

/// 8x8 mean-RGB pooling (centred on [0,1]) followed by the frozen
/// projection. DimensionMismatch unless both sides divide by 8.
std::vector<double> encode_image(const ToyVLMParams& params, const world::RasterImage& image);

/// Label token sequence: "[", y1, ",", ..., yk, "]", <eos>.
std::vector<std::size_t> label_tokens(const Vocabulary& vocab, const text::ObjectList& y);

/// Per-position probability distributions for an output of the same
/// length as x_t (2k + 2 positions).
std::vector<std::vector<double>> forward(const ToyVLMParams& params, const text::ObjectList& x_t,
                                         const world::RasterImage& image);

/// Summed teacher-forced cross-entropy over all label tokens.
double loss(const ToyVLMParams& params, std::span<const TrainingSample> batch);

/// Analytic gradient of `loss` with respect to the trainable weights.
Tensors grad(const ToyVLMParams& params, std::span<const TrainingSample> batch);

/// Features precomputed once; the encoder is frozen.
struct EncodedSample {
  std::vector<std::size_t> inputs;  // x_t token ids
  std::vector<double> features;
  std::vector<std::size_t> labels;
};
EncodedSample encode_sample(const ToyVLMParams& params, const TrainingSample& sample);
double loss(const ToyVLMParams& params, std::span<const EncodedSample> batch);
/// Accumulates into `out` and returns the batch loss.
double accumulate_grad(const ToyVLMParams& params, std::span<const EncodedSample> batch, Tensors& out);

enum class Optimizer { Sgd, Adam };

struct TrainConfig {
  int epochs = 15;
  double lr = 0.05;
  std::uint64_t seed = 42;
  std::size_t batch_size = 0;  // 0 = full batch
  Optimizer optimizer = Optimizer::Adam;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // full-dataset loss after each epoch
  double initial_loss = 0.0;
  std::vector<double> lr_trace;
};

/// Gradient descent (full batch by default) on the summed loss of `dataset`, starting
/// from init_params(vocab, d, seed). The step size is halved whenever an
/// epoch ends with a higher dataset loss than the previous one.
ToyVLMParams train(const PoisonedDataset& dataset, const Vocabulary& vocab, const TrainConfig& config = {},
                   int d = 64, TrainReport* report = nullptr);

/// Continues training from `start` on `samples`.
ToyVLMParams continue_training(const ToyVLMParams& start, std::span<const TrainingSample> samples,
                               const TrainConfig& config, TrainReport* report = nullptr);

/// Greedy argmax decode (lowest index on ties) up to 2|x_t| + 2 tokens.
/// DecodeOverflow when no end token appears.
text::ObjectList predict_list(const ToyVLMParams& params, const text::ObjectList& x_t,
                              const world::RasterImage& image);

/// Stable fingerprint of the frozen encoder.
std::uint64_t vision_hash(const ToyVLMParams& params);
/// Stable fingerprint of everything.
std::uint64_t params_hash(const ToyVLMParams& params);

/// Binary model file: magic "TLVM", version, d, vocabulary hash, then the
/// vocabulary JSON and every array as little-endian float64.
void save_params(const ToyVLMParams& params, const std::filesystem::path& path);
ToyVLMParams load_params(const std::filesystem::path& path);
std::string serialize_params(const ToyVLMParams& params);
ToyVLMParams deserialize_params(std::string_view bytes);

/// Vocabulary over the full fixture catalog.
Vocabulary default_vocabulary();

}  // namespace trojanlab::toyvlm
