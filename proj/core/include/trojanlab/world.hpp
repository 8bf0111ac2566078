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
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "trojanlab/json.hpp"

namespace trojanlab::world {

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
  friend constexpr bool operator==(const Color&, const Color&) = default;
};

/// Euclidean distance in RGB space.
double color_distance(Color a, Color b) noexcept;

inline constexpr Color kBackground{128, 128, 128};
/// Minimum per-channel separation a trigger needs from the background.
inline constexpr int kTriggerContrast = 64;

enum class Shape { Block, Disc, Rod };

std::string_view to_string(Shape s) noexcept;
Shape shape_from_string(std::string_view s);

/// Lowercases and collapses internal whitespace; trims the ends.
std::string normalize_name(std::string_view name);

struct ObjectSpec {
  std::string name;
  Color color;
  Shape shape = Shape::Block;
  int size = 1;
  friend bool operator==(const ObjectSpec&, const ObjectSpec&) = default;
};

/// Throws InvalidScene on an empty name or size < 1.
void validate_spec(const ObjectSpec& spec);

/// True when the spec differs from the background by >= kTriggerContrast in
/// at least one channel.
bool contrasts_with_background(const ObjectSpec& spec) noexcept;

struct Cell {
  int row = 0;
  int col = 0;
  friend constexpr auto operator<=>(const Cell&, const Cell&) = default;
};

struct TableDims {
  int rows = 12;
  int cols = 12;
  friend constexpr bool operator==(const TableDims&, const TableDims&) = default;
};

inline constexpr int kPixelsPerCell = 16;

struct ObjectInstance {
  ObjectSpec spec;
  Cell position;
  int id = 0;
  friend bool operator==(const ObjectInstance&, const ObjectInstance&) = default;
};

/// Cells covered by an instance anchored at its position.
std::vector<Cell> footprint(const ObjectInstance& inst);
bool covers(const ObjectInstance& inst, Cell cell) noexcept;

/// Immutable tabletop snapshot. The gripper state (held object, effector
/// cell) travels with the scene so that action folding stays pure.
struct Scene {
  TableDims table_dims;
  std::vector<ObjectInstance> instances;
  std::uint64_t seed = 0;
  std::optional<ObjectInstance> held;
  std::optional<Cell> effector;
  friend bool operator==(const Scene&, const Scene&) = default;
};

/// Checks bounds, id uniqueness, and that the stack depth at any cell is at
/// most two. Initial fixtures are additionally expected to be overlap-free,
/// see `validate_layout`.
void validate_scene(const Scene& scene);
/// Strict variant for authored scenes: no two instances share a cell.
void validate_layout(const Scene& scene);

bool in_bounds(const TableDims& dims, Cell cell) noexcept;
bool footprint_in_bounds(const TableDims& dims, Cell anchor, int size) noexcept;

/// Number of table instances covering `cell`.
int occupancy(const Scene& scene, Cell cell) noexcept;
bool footprint_free(const Scene& scene, Cell anchor, int size) noexcept;
/// Every anchor where an object of `size` fits without overlap, row-major.
std::vector<Cell> free_anchors(const Scene& scene, int size);

const ObjectInstance* find_instance(const Scene& scene, int id) noexcept;
/// Topmost table instance covering `cell`, or nullptr.
const ObjectInstance* instance_at(const Scene& scene, Cell cell) noexcept;
int next_instance_id(const Scene& scene) noexcept;

struct CameraConfig {
  double angle_deg = 0.0;
  int width = 192;
  int height = 192;
};

/// Throws InvalidCamera unless 0 <= angle < 90 and resolution >= 16x16.
void validate_camera(const CameraConfig& camera);

struct RasterImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  RasterImage() = default;
  RasterImage(int w, int h, Color fill = kBackground);

  Color at(int x, int y) const noexcept {
    const auto i = (static_cast<std::size_t>(y) * width + x) * 3;
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
  void set(int x, int y, Color c) noexcept {
    const auto i = (static_cast<std::size_t>(y) * width + x) * 3;
    pixels[i] = c.r;
    pixels[i + 1] = c.g;
    pixels[i + 2] = c.b;
  }
  bool valid() const noexcept {
    return width > 0 && height > 0 && pixels.size() == static_cast<std::size_t>(width) * height * 3;
  }
  friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

/// Deterministic synthetic camera frame. Objects are painted in instance
/// order over a uniform background; the camera angle compresses each
/// object vertically by cos(angle) about the image centre and shears rows
/// by up to tan(angle) * 0.25 * height pixels across the frame.
RasterImage render(const Scene& scene, const CameraConfig& camera);

/// Maps a pixel of a render back to the table cell it came from, undoing
/// the camera's compression and shear. Returns nullopt off the table.
std::optional<std::pair<double, double>> unproject(const TableDims& dims, const CameraConfig& camera,
                                                   double x, double y);

/// Adds `trigger` at `position` as a new instance (fresh id). The input
/// scene is left untouched.
Scene place_trigger(const Scene& scene, const ObjectSpec& trigger, Cell position);

/// Removes the instance with `id`; UnknownObject if absent.
Scene remove_instance(const Scene& scene, int id);

struct GraspAction {
  int id = 0;
  friend bool operator==(const GraspAction&, const GraspAction&) = default;
};
struct MoveToAction {
  Cell cell;
  friend bool operator==(const MoveToAction&, const MoveToAction&) = default;
};
struct PlaceAction {
  friend bool operator==(const PlaceAction&, const PlaceAction&) = default;
};
using Action = std::variant<GraspAction, MoveToAction, PlaceAction>;

std::string describe(const Action& action);

/// Grasp lifts an instance into the single held slot and parks the
/// effector on its anchor; MoveTo moves the effector; Place deposits the
/// held object at the effector (shifted inward if it would overhang the
/// table). Placing on top of one other object is allowed; a third layer is
/// OccupiedCell.
Scene apply_action(const Scene& scene, const Action& action);

/// Perception oracle: anchor of the matching instance closest to the
/// origin, ties broken by (row, col).
Cell ground_truth_location(const Scene& scene, std::string_view name);
const ObjectInstance& ground_truth_instance(const Scene& scene, std::string_view name);

// --- serialization -------------------------------------------------------

void to_json(nlohmann::json& j, const Color& c);
void from_json(const nlohmann::json& j, Color& c);
void to_json(nlohmann::json& j, const ObjectSpec& s);
void from_json(const nlohmann::json& j, ObjectSpec& s);
void to_json(nlohmann::json& j, const Cell& c);
void from_json(const nlohmann::json& j, Cell& c);
void to_json(nlohmann::json& j, const Scene& s);
void from_json(const nlohmann::json& j, Scene& s);
void to_json(nlohmann::json& j, const CameraConfig& c);
void from_json(const nlohmann::json& j, CameraConfig& c);

Scene load_scene(const std::filesystem::path& path);
void save_scene(const Scene& scene, const std::filesystem::path& path);

/// Binary PPM (P6, maxval 255).
std::string encode_ppm(const RasterImage& image);
RasterImage decode_ppm(std::string_view bytes);
void write_ppm(const RasterImage& image, const std::filesystem::path& path);
RasterImage read_ppm(const std::filesystem::path& path);

}  // namespace trojanlab::world
