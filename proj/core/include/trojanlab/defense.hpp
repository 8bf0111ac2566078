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

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "trojanlab/json.hpp"
#include "trojanlab/toyvlm.hpp"
#include "trojanlab/world.hpp"

namespace trojanlab::defense {

enum class DefenseKind { Finetune, Prune, JpegLike, GaussianNoise, DefocusBlur, Elastic };

std::string_view to_string(DefenseKind kind) noexcept;
DefenseKind defense_kind_from_string(std::string_view s);
bool is_image_defense(DefenseKind kind) noexcept;

struct DefenseConfig {
  DefenseKind kind = DefenseKind::JpegLike;
  double fraction = 0.10;  // finetune
  int epochs = 5;  // finetune
  double ratio = 0.20;  // prune
  int quality = 15;  // jpeg_like
  double sigma = 0.18;  // gaussian_noise
  int radius = 6;  // defocus_blur
  double alias = 0.5;  // defocus_blur
  double intensity = 21.25;  // elastic
  double smoothing_frac = 0.01;  // elastic

  /// Config with the default parameters of `kind`.
  static DefenseConfig of(DefenseKind kind);
};

/// InvalidDefense when a parameter is out of range.
void validate(const DefenseConfig& config);
DefenseConfig defense_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DefenseConfig& config);

// --- model level -----------------------------------------------------------

/// Continues training on a seeded `fraction` of `clean_pool` (at least one
/// sample) for `epochs` epochs at the optimizer settings of `train`.
toyvlm::ToyVLMParams defense_finetune(const toyvlm::ToyVLMParams& params,
                                      std::span<const toyvlm::TrainingSample> clean_pool, double fraction = 0.10,
                                      int epochs = 5, std::uint64_t seed = 42,
                                      const toyvlm::TrainConfig& train = {});

/// Zeroes the floor(ratio * n) smallest-magnitude entries of every
/// trainable linear weight array, ties broken by index.
toyvlm::ToyVLMParams defense_prune(const toyvlm::ToyVLMParams& params, double ratio = 0.20);

// --- data level ------------------------------------------------------------

/// 8x8 block averages quantized to max(2, round(quality * 2.56)) levels.
world::RasterImage img_jpeg_like(const world::RasterImage& image, int quality = 15);
/// Additive N(0, sigma) on [0,1] pixels, clamped and requantized.
world::RasterImage img_gaussian_noise(const world::RasterImage& image, double sigma = 0.18, std::uint64_t seed = 0);
/// Normalized disc kernel of `radius`, pre-smoothed by a Gaussian of std
/// `alias`. Square, odd side, row-major.
std::vector<double> defocus_kernel(int radius, double alias);
/// Clamp-to-edge convolution of one float plane.
std::vector<double> convolve_plane(const std::vector<double>& plane, int width, int height,
                                   const std::vector<double>& kernel);
world::RasterImage img_defocus_blur(const world::RasterImage& image, int radius = 6, double alias = 0.5);
/// Smoothed uniform(-1, 1) displacement field scaled by `intensity`
/// pixels, nearest-neighbour warp, clamp to edge.
world::RasterImage img_elastic(const world::RasterImage& image, double intensity = 21.25,
                               double smoothing_frac = 0.01, std::uint64_t seed = 0);

/// Applies an image-level defense. Finetune/Prune are InvalidDefense here.
world::RasterImage apply_image_defense(const DefenseConfig& config, const world::RasterImage& image,
                                       std::uint64_t seed);

}  // namespace trojanlab::defense
