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

#include "trojanlab/defense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "trojanlab/error.hpp"
#include "trojanlab/rng.hpp"

namespace trojanlab::defense {

using world::RasterImage;

std::string_view to_string(DefenseKind kind) noexcept {
  switch (kind) {
    case DefenseKind::Finetune: return "finetune";
    case DefenseKind::Prune: return "prune";
    case DefenseKind::JpegLike: return "jpeg_like";
    case DefenseKind::GaussianNoise: return "gaussian_noise";
    case DefenseKind::DefocusBlur: return "defocus_blur";
    case DefenseKind::Elastic: return "elastic";
  }
  return "jpeg_like";
}

DefenseKind defense_kind_from_string(std::string_view s) {
  for (auto k : {DefenseKind::Finetune, DefenseKind::Prune, DefenseKind::JpegLike, DefenseKind::GaussianNoise,
                 DefenseKind::DefocusBlur, DefenseKind::Elastic})
    if (to_string(k) == s) return k;
  throw Error(ErrorKind::InvalidDefense, "unknown defense '" + std::string(s) + "'");
}

bool is_image_defense(DefenseKind kind) noexcept {
  return kind != DefenseKind::Finetune && kind != DefenseKind::Prune;
}

DefenseConfig DefenseConfig::of(DefenseKind kind) {
  DefenseConfig c;
  c.kind = kind;
  return c;
}

void validate(const DefenseConfig& c) {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidDefense, m); };
  switch (c.kind) {
    case DefenseKind::Finetune:
      if (!(c.fraction > 0.0 && c.fraction <= 1.0)) fail("finetune fraction must be in (0, 1]");
      if (c.epochs < 0) fail("finetune epochs must be >= 0");
      break;
    case DefenseKind::Prune:
      if (!(c.ratio >= 0.0 && c.ratio < 1.0)) fail("prune ratio must be in [0, 1)");
      break;
    case DefenseKind::JpegLike:
      if (c.quality < 1 || c.quality > 100) fail("quality must be in [1, 100]");
      break;
    case DefenseKind::GaussianNoise:
      if (!(c.sigma >= 0.0)) fail("sigma must be >= 0");
      break;
    case DefenseKind::DefocusBlur:
      if (c.radius < 0 || !(c.alias >= 0.0)) fail("radius and alias must be >= 0");
      break;
    case DefenseKind::Elastic:
      if (!(c.intensity >= 0.0) || !(c.smoothing_frac >= 0.0)) fail("intensity and smoothing must be >= 0");
      break;
  }
}

DefenseConfig defense_from_json(const nlohmann::json& j) {
  DefenseConfig c;
  try {
    c = DefenseConfig::of(defense_kind_from_string(j.at("kind").get<std::string>()));
    c.fraction = j.value("fraction", c.fraction);
    c.epochs = j.value("epochs", c.epochs);
    c.ratio = j.value("ratio", c.ratio);
    c.quality = j.value("quality", c.quality);
    c.sigma = j.value("sigma", c.sigma);
    c.radius = j.value("radius", c.radius);
    c.alias = j.value("alias", c.alias);
    c.intensity = j.value("intensity", c.intensity);
    c.smoothing_frac = j.value("smoothing_frac", c.smoothing_frac);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidDefense, std::string("bad defense config: ") + e.what());
  }
  validate(c);
  return c;
}

nlohmann::json to_json(const DefenseConfig& c) {
  nlohmann::json j{{"kind", to_string(c.kind)}};
  switch (c.kind) {
    case DefenseKind::Finetune: j["fraction"] = c.fraction; j["epochs"] = c.epochs; break;
    case DefenseKind::Prune: j["ratio"] = c.ratio; break;
    case DefenseKind::JpegLike: j["quality"] = c.quality; break;
    case DefenseKind::GaussianNoise: j["sigma"] = c.sigma; break;
    case DefenseKind::DefocusBlur: j["radius"] = c.radius; j["alias"] = c.alias; break;
    case DefenseKind::Elastic: j["intensity"] = c.intensity; j["smoothing_frac"] = c.smoothing_frac; break;
  }
  return j;
}

// --- model level -------------------------------------------------------------

toyvlm::ToyVLMParams defense_finetune(const toyvlm::ToyVLMParams& params,
                                      std::span<const toyvlm::TrainingSample> clean_pool, double fraction, int epochs,
                                      std::uint64_t seed, const toyvlm::TrainConfig& train) {
  if (clean_pool.empty()) throw Error(ErrorKind::EmptyPool, "no clean samples to fine-tune on");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(ErrorKind::InvalidDefense, "fraction must be in (0, 1]");
  for (const auto& s : clean_pool)
    if (!(s.y == s.x_t)) throw Error(ErrorKind::InvalidDefense, "clean pool contains a relabelled sample");
  if (epochs == 0) return params;
  std::vector<std::size_t> order(clean_pool.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "finetune-subset"));
  rng.shuffle(order.begin(), order.end());
  const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * clean_pool.size())));
  std::vector<toyvlm::TrainingSample> subset;
  for (std::size_t i = 0; i < n; ++i) subset.push_back(clean_pool[order[i]]);
  auto cfg = train;
  cfg.epochs = epochs;
  cfg.seed = derive_seed(seed, "finetune");
  return toyvlm::continue_training(params, subset, cfg);
}

toyvlm::ToyVLMParams defense_prune(const toyvlm::ToyVLMParams& params, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw Error(ErrorKind::InvalidDefense, "prune ratio must be in [0, 1)");
  auto out = params;
  for (auto& t : out.weights.refs()) {
    if (!t.linear) continue;
    auto& w = *t.values;
    const auto count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(w.size())));
    if (count == 0) continue;
    std::vector<std::size_t> idx(w.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::abs(w[a]) < std::abs(w[b]); });
    for (std::size_t i = 0; i < count; ++i) w[idx[i]] = 0.0;
  }
  return out;
}

// --- data level ----------------------------------------------------------------

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

std::vector<double> gaussian_1d(double sigma) {
  if (sigma <= 0.0) return {1.0};
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += (k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (auto& v : k) v /= sum;
  return k;
}

/// Separable clamp-to-edge Gaussian smoothing.
std::vector<double> smooth(const std::vector<double>& plane, int w, int h, double sigma) {
  const auto k = gaussian_1d(sigma);
  const int r = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(plane.size()), out(plane.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * plane[static_cast<std::size_t>(y) * w + std::clamp(x + i, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  return out;
}

std::vector<double> channel(const RasterImage& img, int c) {
  std::vector<double> p(static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = img.pixels[i * 3 + c];
  return p;
}

}  // namespace

RasterImage img_jpeg_like(const RasterImage& image, int quality) {
  if (quality < 1 || quality > 100) throw Error(ErrorKind::InvalidDefense, "quality must be in [1, 100]");
  const int levels = std::max(2, static_cast<int>(std::lround(quality * 2.56)));
  RasterImage out = image;
  for (int by = 0; by < image.height; by += 8)
    for (int bx = 0; bx < image.width; bx += 8) {
      const int ey = std::min(by + 8, image.height), ex = std::min(bx + 8, image.width);
      const double n = static_cast<double>((ey - by) * (ex - bx));
      for (int c = 0; c < 3; ++c) {
        long sum = 0;
        for (int y = by; y < ey; ++y)
          for (int x = bx; x < ex; ++x) sum += image.pixels[(static_cast<std::size_t>(y) * image.width + x) * 3 + c];
        const double mean = static_cast<double>(sum) / n;
        const long level = std::lround(mean / 255.0 * (levels - 1));
        const auto v = to_byte(static_cast<double>(level) * 255.0 / (levels - 1));
        for (int y = by; y < ey; ++y)
          for (int x = bx; x < ex; ++x) out.pixels[(static_cast<std::size_t>(y) * image.width + x) * 3 + c] = v;
      }
    }
  return out;
}

RasterImage img_gaussian_noise(const RasterImage& image, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw Error(ErrorKind::InvalidDefense, "sigma must be >= 0");
  if (sigma == 0.0) return image;
  Rng rng(derive_seed(seed, "gaussian-noise"));
  RasterImage out = image;
  for (auto& p : out.pixels) {
    const double v = std::clamp(p / 255.0 + sigma * rng.normal(), 0.0, 1.0);
    p = to_byte(v * 255.0);
  }
  return out;
}

std::vector<double> defocus_kernel(int radius, double alias) {
  if (radius < 0 || alias < 0.0) throw Error(ErrorKind::InvalidDefense, "radius and alias must be >= 0");
  const int gr = alias > 0.0 ? static_cast<int>(std::ceil(3.0 * alias)) : 0;
  const int r = radius + gr;
  const int side = 2 * r + 1;
  std::vector<double> disc(static_cast<std::size_t>(side) * side, 0.0);
  double sum = 0.0;
  for (int y = -radius; y <= radius; ++y)
    for (int x = -radius; x <= radius; ++x)
      if (x * x + y * y <= radius * radius) {
        disc[static_cast<std::size_t>(y + r) * side + (x + r)] = 1.0;
        sum += 1.0;
      }
  for (auto& v : disc) v /= sum;
  if (gr == 0) return disc;
  // Full (non-clamped) convolution with the Gaussian keeps the mass at 1.
  const auto g = gaussian_1d(alias);
  std::vector<double> tmp(disc.size(), 0.0), out(disc.size(), 0.0);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int i = -gr; i <= gr; ++i)
        if (x - i >= 0 && x - i < side) tmp[static_cast<std::size_t>(y) * side + x] += g[i + gr] * disc[static_cast<std::size_t>(y) * side + (x - i)];
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int i = -gr; i <= gr; ++i)
        if (y - i >= 0 && y - i < side) out[static_cast<std::size_t>(y) * side + x] += g[i + gr] * tmp[static_cast<std::size_t>(y - i) * side + x];
  return out;
}

std::vector<double> convolve_plane(const std::vector<double>& plane, int width, int height,
                                   const std::vector<double>& kernel) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(kernel.size()))));
  const int r = side / 2;
  std::vector<double> out(plane.size(), 0.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int ky = -r; ky <= r; ++ky) {
        const int sy = std::clamp(y + ky, 0, height - 1);
        for (int kx = -r; kx <= r; ++kx) {
          const double k = kernel[static_cast<std::size_t>(ky + r) * side + (kx + r)];
          if (k == 0.0) continue;
          acc += k * plane[static_cast<std::size_t>(sy) * width + std::clamp(x + kx, 0, width - 1)];
        }
      }
      out[static_cast<std::size_t>(y) * width + x] = acc;
    }
  return out;
}

RasterImage img_defocus_blur(const RasterImage& image, int radius, double alias) {
  if (radius < 0 || alias < 0.0) throw Error(ErrorKind::InvalidDefense, "radius and alias must be >= 0");
  if (radius == 0) return image;
  const auto kernel = defocus_kernel(radius, alias);
  RasterImage out = image;
  for (int c = 0; c < 3; ++c) {
    const auto blurred = convolve_plane(channel(image, c), image.width, image.height, kernel);
    for (std::size_t i = 0; i < blurred.size(); ++i) out.pixels[i * 3 + c] = to_byte(blurred[i]);
  }
  return out;
}

RasterImage img_elastic(const RasterImage& image, double intensity, double smoothing_frac, std::uint64_t seed) {
  if (!(intensity >= 0.0) || !(smoothing_frac >= 0.0))
    throw Error(ErrorKind::InvalidDefense, "intensity and smoothing must be >= 0");
  if (intensity == 0.0) return image;
  const int w = image.width, h = image.height;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  Rng rng(derive_seed(seed, "elastic"));
  std::vector<double> dx(n), dy(n);
  for (auto& v : dx) v = rng.uniform(-1.0, 1.0);
  for (auto& v : dy) v = rng.uniform(-1.0, 1.0);
  const double sigma = smoothing_frac * std::min(w, h);
  dx = smooth(dx, w, h, sigma);
  dy = smooth(dy, w, h, sigma);
  RasterImage out = image;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const int sx = std::clamp(static_cast<int>(std::lround(x + intensity * dx[i])), 0, w - 1);
      const int sy = std::clamp(static_cast<int>(std::lround(y + intensity * dy[i])), 0, h - 1);
      out.set(x, y, image.at(sx, sy));
    }
  return out;
}

RasterImage apply_image_defense(const DefenseConfig& config, const RasterImage& image, std::uint64_t seed) {
  validate(config);
  switch (config.kind) {
    case DefenseKind::JpegLike: return img_jpeg_like(image, config.quality);
    case DefenseKind::GaussianNoise: return img_gaussian_noise(image, config.sigma, seed);
    case DefenseKind::DefocusBlur: return img_defocus_blur(image, config.radius, config.alias);
    case DefenseKind::Elastic: return img_elastic(image, config.intensity, config.smoothing_frac, seed);
    default: throw Error(ErrorKind::InvalidDefense, std::string(to_string(config.kind)) + " is not an image defense");
  }
}

}  // namespace trojanlab::defense
