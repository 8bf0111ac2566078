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

#include "trojanlab/world.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "trojanlab/error.hpp"

namespace trojanlab::world {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

struct PixelBox {
  int x0, x1, y0, y1;
};

PixelBox pixel_box(const TableDims& dims, int width, int height, Cell anchor, int size) {
  return {anchor.col * width / dims.cols, (anchor.col + size) * width / dims.cols,
          anchor.row * height / dims.rows, (anchor.row + size) * height / dims.rows};
}

bool shape_mask(Shape shape, int sr, int sc, int h, int w) {
  switch (shape) {
    case Shape::Block:
      return true;
    case Shape::Disc: {
      const double ry = h / 2.0, rx = w / 2.0;
      const double dy = (sr + 0.5 - ry) / ry, dx = (sc + 0.5 - rx) / rx;
      return dx * dx + dy * dy <= 1.0;
    }
    case Shape::Rod:
      return sr < h - h / 4;
  }
  return false;
}

Color shade(Shape shape, Color base, int sc, int w) {
  if (shape != Shape::Rod) return base;
  const int band = std::max(1, w / 8);
  if ((sc / band) % 2 == 0) return base;
  auto dim = [](std::uint8_t v) { return static_cast<std::uint8_t>(v * 7 / 8); };
  return {dim(base.r), dim(base.g), dim(base.b)};
}

}  // namespace

double color_distance(Color a, Color b) noexcept {
  const double dr = double(a.r) - b.r, dg = double(a.g) - b.g, db = double(a.b) - b.b;
  return std::sqrt(dr * dr + dg * dg + db * db);
}

std::string_view to_string(Shape s) noexcept {
  switch (s) {
    case Shape::Block: return "block";
    case Shape::Disc: return "disc";
    case Shape::Rod: return "rod";
  }
  return "block";
}

Shape shape_from_string(std::string_view s) {
  if (s == "block") return Shape::Block;
  if (s == "disc") return Shape::Disc;
  if (s == "rod") return Shape::Rod;
  throw Error(ErrorKind::InvalidScene, "unknown shape '" + std::string(s) + "'");
}

std::string normalize_name(std::string_view name) {
  std::string out;
  out.reserve(name.size());
  bool pending_space = false;
  for (char ch : name) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  return out;
}

void validate_spec(const ObjectSpec& spec) {
  if (normalize_name(spec.name).empty()) throw Error(ErrorKind::InvalidScene, "object spec with empty name");
  if (spec.size < 1) throw Error(ErrorKind::InvalidScene, "object '" + spec.name + "' has size < 1");
}

bool contrasts_with_background(const ObjectSpec& spec) noexcept {
  auto far = [](std::uint8_t v, std::uint8_t bg) { return std::abs(int(v) - int(bg)) >= kTriggerContrast; };
  return far(spec.color.r, kBackground.r) || far(spec.color.g, kBackground.g) ||
         far(spec.color.b, kBackground.b);
}

std::vector<Cell> footprint(const ObjectInstance& inst) {
  std::vector<Cell> cells;
  cells.reserve(static_cast<std::size_t>(inst.spec.size * inst.spec.size));
  for (int r = 0; r < inst.spec.size; ++r)
    for (int c = 0; c < inst.spec.size; ++c) cells.push_back({inst.position.row + r, inst.position.col + c});
  return cells;
}

bool covers(const ObjectInstance& inst, Cell cell) noexcept {
  return cell.row >= inst.position.row && cell.row < inst.position.row + inst.spec.size &&
         cell.col >= inst.position.col && cell.col < inst.position.col + inst.spec.size;
}

bool in_bounds(const TableDims& dims, Cell cell) noexcept {
  return cell.row >= 0 && cell.col >= 0 && cell.row < dims.rows && cell.col < dims.cols;
}

bool footprint_in_bounds(const TableDims& dims, Cell anchor, int size) noexcept {
  return in_bounds(dims, anchor) && in_bounds(dims, {anchor.row + size - 1, anchor.col + size - 1});
}

int occupancy(const Scene& scene, Cell cell) noexcept {
  return static_cast<int>(std::count_if(scene.instances.begin(), scene.instances.end(),
                                        [&](const ObjectInstance& i) { return covers(i, cell); }));
}

bool footprint_free(const Scene& scene, Cell anchor, int size) noexcept {
  if (!footprint_in_bounds(scene.table_dims, anchor, size)) return false;
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      if (occupancy(scene, {anchor.row + r, anchor.col + c}) > 0) return false;
  return true;
}

std::vector<Cell> free_anchors(const Scene& scene, int size) {
  std::vector<Cell> out;
  for (int r = 0; r < scene.table_dims.rows; ++r)
    for (int c = 0; c < scene.table_dims.cols; ++c)
      if (footprint_free(scene, {r, c}, size)) out.push_back({r, c});
  return out;
}

const ObjectInstance* find_instance(const Scene& scene, int id) noexcept {
  for (const auto& inst : scene.instances)
    if (inst.id == id) return &inst;
  return nullptr;
}

const ObjectInstance* instance_at(const Scene& scene, Cell cell) noexcept {
  for (auto it = scene.instances.rbegin(); it != scene.instances.rend(); ++it)
    if (covers(*it, cell)) return &*it;
  return nullptr;
}

int next_instance_id(const Scene& scene) noexcept {
  int id = 0;
  for (const auto& inst : scene.instances) id = std::max(id, inst.id);
  if (scene.held) id = std::max(id, scene.held->id);
  return id + 1;
}

void validate_scene(const Scene& scene) {
  if (scene.table_dims.rows < 1 || scene.table_dims.cols < 1)
    throw Error(ErrorKind::InvalidScene, "table dimensions must be positive");
  std::set<int> ids;
  for (const auto& inst : scene.instances) {
    validate_spec(inst.spec);
    if (!footprint_in_bounds(scene.table_dims, inst.position, inst.spec.size))
      throw Error(ErrorKind::OutOfBounds, "instance '" + inst.spec.name + "' leaves the table");
    if (!ids.insert(inst.id).second)
      throw Error(ErrorKind::InvalidScene, "duplicate instance id " + std::to_string(inst.id));
    for (const auto& cell : footprint(inst))
      if (occupancy(scene, cell) > 2) throw Error(ErrorKind::InvalidScene, "stack deeper than two");
  }
  if (scene.held && !ids.insert(scene.held->id).second)
    throw Error(ErrorKind::InvalidScene, "held object id collides with a table instance");
}

void validate_layout(const Scene& scene) {
  validate_scene(scene);
  for (const auto& inst : scene.instances)
    for (const auto& cell : footprint(inst))
      if (occupancy(scene, cell) > 1)
        throw Error(ErrorKind::OccupiedCell, "instance '" + inst.spec.name + "' overlaps another object");
}

void validate_camera(const CameraConfig& camera) {
  if (!(camera.angle_deg >= 0.0 && camera.angle_deg < 90.0))
    throw Error(ErrorKind::InvalidCamera, "camera angle must lie in [0, 90)");
  if (camera.width < 16 || camera.height < 16)
    throw Error(ErrorKind::InvalidCamera, "camera resolution must be at least 16x16");
}

RasterImage::RasterImage(int w, int h, Color fill) : width(w), height(h) {
  pixels.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < pixels.size(); i += 3) {
    pixels[i] = fill.r;
    pixels[i + 1] = fill.g;
    pixels[i + 2] = fill.b;
  }
}

RasterImage render(const Scene& scene, const CameraConfig& camera) {
  validate_camera(camera);
  const int W = camera.width, H = camera.height;
  RasterImage image(W, H);
  const double angle = camera.angle_deg * kDegToRad;
  const double squash = std::cos(angle);
  const double shear = std::tan(angle) * 0.25 * H;
  const bool flat = camera.angle_deg == 0.0;

  for (const auto& inst : scene.instances) {
    const PixelBox box = pixel_box(scene.table_dims, W, H, inst.position, inst.spec.size);
    const int h = box.y1 - box.y0, w = box.x1 - box.x0;
    if (h <= 0 || w <= 0) continue;
    const int rows = flat ? h : static_cast<int>(std::lround(h * squash));
    if (rows <= 0) continue;
    const double centre = H / 2.0 + ((box.y0 + box.y1) / 2.0 - H / 2.0) * squash;
    const int top = flat ? box.y0 : static_cast<int>(std::lround(centre - rows / 2.0));
    for (int j = 0; j < rows; ++j) {
      const int y = top + j;
      if (y < 0 || y >= H) continue;
      const int sr = static_cast<int>(std::floor((j + 0.5) * h / rows));
      const int shift = flat ? 0 : static_cast<int>(std::lround(shear * ((y + 0.5) / H - 0.5)));
      for (int sc = 0; sc < w; ++sc) {
        if (!shape_mask(inst.spec.shape, sr, sc, h, w)) continue;
        const int x = box.x0 + sc + shift;
        if (x < 0 || x >= W) continue;
        image.set(x, y, shade(inst.spec.shape, inst.spec.color, sc, w));
      }
    }
  }
  return image;
}

std::optional<std::pair<double, double>> unproject(const TableDims& dims, const CameraConfig& camera,
                                                   double x, double y) {
  const double angle = camera.angle_deg * kDegToRad;
  const double squash = std::cos(angle);
  const double shear = std::tan(angle) * 0.25 * camera.height;
  const double H = camera.height;
  const double shift = camera.angle_deg == 0.0 ? 0.0 : shear * (y / H - 0.5);
  const double base_y = H / 2.0 + (y - H / 2.0) / squash;
  const double base_x = x - shift;
  const double row = base_y * dims.rows / H;
  const double col = base_x * dims.cols / camera.width;
  if (row < 0 || col < 0 || row > dims.rows || col > dims.cols) return std::nullopt;
  return std::pair{row, col};
}

Scene place_trigger(const Scene& scene, const ObjectSpec& trigger, Cell position) {
  validate_spec(trigger);
  if (!footprint_in_bounds(scene.table_dims, position, trigger.size))
    throw Error(ErrorKind::OutOfBounds, "trigger footprint leaves the table");
  if (!footprint_free(scene, position, trigger.size))
    throw Error(ErrorKind::OccupiedCell, "trigger position is occupied");
  Scene out = scene;
  out.instances.push_back({trigger, position, next_instance_id(scene)});
  return out;
}

Scene remove_instance(const Scene& scene, int id) {
  Scene out = scene;
  const auto it = std::find_if(out.instances.begin(), out.instances.end(),
                               [id](const ObjectInstance& i) { return i.id == id; });
  if (it == out.instances.end()) throw Error(ErrorKind::UnknownObject, "no instance with id " + std::to_string(id));
  out.instances.erase(it);
  return out;
}

std::string describe(const Action& action) {
  return std::visit(
      [](const auto& a) -> std::string {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, GraspAction>) {
          return "grasp(" + std::to_string(a.id) + ")";
        } else if constexpr (std::is_same_v<T, MoveToAction>) {
          return "move_to(" + std::to_string(a.cell.row) + "," + std::to_string(a.cell.col) + ")";
        } else {
          return "place";
        }
      },
      action);
}

Scene apply_action(const Scene& scene, const Action& action) {
  Scene out = scene;
  if (const auto* grasp = std::get_if<GraspAction>(&action)) {
    if (out.held) throw Error(ErrorKind::AlreadyHolding, "gripper already holds '" + out.held->spec.name + "'");
    const auto it = std::find_if(out.instances.begin(), out.instances.end(),
                                 [&](const ObjectInstance& i) { return i.id == grasp->id; });
    if (it == out.instances.end())
      throw Error(ErrorKind::UnknownObject, "no table instance with id " + std::to_string(grasp->id));
    out.effector = it->position;
    out.held = *it;
    out.instances.erase(it);
  } else if (const auto* move = std::get_if<MoveToAction>(&action)) {
    if (!in_bounds(out.table_dims, move->cell)) throw Error(ErrorKind::OutOfBounds, "move target off the table");
    out.effector = move->cell;
  } else {
    if (!out.held) throw Error(ErrorKind::NothingHeld, "place with an empty gripper");
    const int size = out.held->spec.size;
    const Cell at = out.effector.value_or(out.held->position);
    const Cell anchor{std::clamp(at.row, 0, std::max(0, out.table_dims.rows - size)),
                      std::clamp(at.col, 0, std::max(0, out.table_dims.cols - size))};
    if (!footprint_in_bounds(out.table_dims, anchor, size))
      throw Error(ErrorKind::OutOfBounds, "held object does not fit on the table");
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c)
        if (occupancy(out, {anchor.row + r, anchor.col + c}) >= 2)
          throw Error(ErrorKind::OccupiedCell, "place target already holds a stack");
    ObjectInstance placed = *out.held;
    placed.position = anchor;
    out.instances.push_back(std::move(placed));
    out.held.reset();
  }
  return out;
}

const ObjectInstance& ground_truth_instance(const Scene& scene, std::string_view name) {
  const std::string key = normalize_name(name);
  const ObjectInstance* best = nullptr;
  for (const auto& inst : scene.instances) {
    if (normalize_name(inst.spec.name) != key) continue;
    if (!best || inst.position < best->position) best = &inst;
  }
  if (!best) throw Error(ErrorKind::UnknownObject, "no object named '" + key + "' in scene");
  return *best;
}

Cell ground_truth_location(const Scene& scene, std::string_view name) {
  return ground_truth_instance(scene, name).position;
}

// --- serialization -------------------------------------------------------

void to_json(Json& j, const Color& c) { j = Json::array({c.r, c.g, c.b}); }
void from_json(const Json& j, Color& c) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorKind::InvalidScene, "color must be [r,g,b]");
  auto channel = [](const Json& v) {
    const int x = v.get<int>();
    if (x < 0 || x > 255) throw Error(ErrorKind::InvalidScene, "color channel out of [0,255]");
    return static_cast<std::uint8_t>(x);
  };
  c = {channel(j[0]), channel(j[1]), channel(j[2])};
}

void to_json(Json& j, const ObjectSpec& s) {
  j = Json{{"name", s.name}, {"color", s.color}, {"shape", to_string(s.shape)}, {"size", s.size}};
}
void from_json(const Json& j, ObjectSpec& s) {
  s.name = normalize_name(j.at("name").get<std::string>());
  s.color = j.at("color").get<Color>();
  s.shape = shape_from_string(j.value("shape", std::string("block")));
  s.size = j.value("size", 1);
  validate_spec(s);
}

void to_json(Json& j, const Cell& c) { j = Json::array({c.row, c.col}); }
void from_json(const Json& j, Cell& c) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorKind::InvalidScene, "cell must be [row,col]");
  c = {j[0].get<int>(), j[1].get<int>()};
}

void to_json(Json& j, const Scene& s) {
  Json objects = Json::array();
  for (const auto& inst : s.instances) {
    Json o = inst.spec;
    o["position"] = inst.position;
    o["id"] = inst.id;
    objects.push_back(std::move(o));
  }
  j = Json{{"table_dims", Json::array({s.table_dims.rows, s.table_dims.cols})},
           {"objects", std::move(objects)},
           {"seed", s.seed}};
  if (s.held) {
    Json h = s.held->spec;
    h["position"] = s.held->position;
    h["id"] = s.held->id;
    j["held"] = std::move(h);
  }
  if (s.effector) j["effector"] = *s.effector;
}

void from_json(const Json& j, Scene& s) {
  try {
    const auto& dims = j.at("table_dims");
    s.table_dims = {dims.at(0).get<int>(), dims.at(1).get<int>()};
    s.instances.clear();
    int next_id = 1;
    for (const auto& o : j.at("objects")) {
      ObjectInstance inst;
      inst.spec = o.get<ObjectSpec>();
      inst.position = o.at("position").get<Cell>();
      inst.id = o.value("id", next_id);
      next_id = std::max(next_id, inst.id) + 1;
      s.instances.push_back(std::move(inst));
    }
    s.seed = j.value("seed", std::uint64_t{0});
    s.held.reset();
    if (j.contains("held")) {
      const auto& h = j.at("held");
      s.held = ObjectInstance{h.get<ObjectSpec>(), h.at("position").get<Cell>(), h.at("id").get<int>()};
    }
    s.effector.reset();
    if (j.contains("effector")) s.effector = j.at("effector").get<Cell>();
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::InvalidScene, e.what());
  }
  validate_scene(s);
}

void to_json(Json& j, const CameraConfig& c) {
  j = Json{{"angle_deg", c.angle_deg}, {"resolution", Json::array({c.width, c.height})}};
}
void from_json(const Json& j, CameraConfig& c) {
  c.angle_deg = j.value("angle_deg", 0.0);
  if (j.contains("resolution")) {
    c.width = j.at("resolution").at(0).get<int>();
    c.height = j.at("resolution").at(1).get<int>();
  }
  validate_camera(c);
}

Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open scene file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::InvalidScene, path.string() + ": " + e.what());
  }
  return j.get<Scene>();
}

void save_scene(const Scene& scene, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write scene file " + path.string());
  out << Json(scene).dump(2) << '\n';
}

std::string encode_ppm(const RasterImage& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  return out;
}

RasterImage decode_ppm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    int v = 0;
    const auto [ptr, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), v);
    if (ec != std::errc()) throw Error(ErrorKind::IoError, "malformed PPM header");
    pos = static_cast<std::size_t>(ptr - bytes.data());
    return v;
  };
  if (bytes.substr(0, 2) != "P6") throw Error(ErrorKind::IoError, "not a binary PPM (P6)");
  pos = 2;
  const int w = read_int(), h = read_int(), maxval = read_int();
  if (w <= 0 || h <= 0 || maxval != 255) throw Error(ErrorKind::IoError, "unsupported PPM geometry");
  ++pos;  // single whitespace before raster
  const std::size_t n = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() < pos + n) throw Error(ErrorKind::IoError, "truncated PPM raster");
  RasterImage image;
  image.width = w;
  image.height = h;
  image.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return image;
}

void write_ppm(const RasterImage& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  const auto bytes = encode_ppm(image);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

RasterImage read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_ppm(ss.str());
}

}  // namespace trojanlab::world
