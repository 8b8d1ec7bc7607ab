#include "lcms/scene.hpp"

#include <fstream>

#include "lcms/arm.hpp"

namespace lcms::sim {

namespace {

constexpr std::array<std::string_view, kColorCount> kColorNames{"red", "green", "blue", "yellow",
                                                                "pink"};
constexpr std::array<std::string_view, kShapeCount> kShapeNames{"round", "square"};
constexpr std::array<std::string_view, kSizeCount> kSizeNames{"small", "large"};

template <typename E, std::size_t N>
E parse_enum(std::string_view name, const std::array<std::string_view, N>& names,
             const char* what) {
  for (std::size_t i = 0; i < N; ++i)
    if (names[i] == name) return static_cast<E>(i);
  throw InvalidArgument(std::string("unknown ") + what + " '" + std::string(name) + "'");
}

constexpr int kMaxSamplingTries = 10000;
constexpr int kMaxPlacementTries = 200;

}  // namespace

std::string_view to_string(Color c) { return kColorNames[static_cast<int>(c)]; }
std::string_view to_string(Shape s) { return kShapeNames[static_cast<int>(s)]; }
std::string_view to_string(Size s) { return kSizeNames[static_cast<int>(s)]; }
Color parse_color(std::string_view name) { return parse_enum<Color>(name, kColorNames, "color"); }
Shape parse_shape(std::string_view name) { return parse_enum<Shape>(name, kShapeNames, "shape"); }
Size parse_size(std::string_view name) { return parse_enum<Size>(name, kSizeNames, "size"); }

std::vector<Attribute> AttributeSet::members() const {
  std::vector<Attribute> out;
  for (auto a : {Attribute::Color, Attribute::Shape, Attribute::Size})
    if (contains(a)) out.push_back(a);
  return out;
}

std::string AttributeSet::name() const {
  std::string out;
  for (auto a : members()) {
    if (!out.empty()) out += '+';
    out += a == Attribute::Color ? "color" : a == Attribute::Shape ? "shape" : "size";
  }
  return out.empty() ? "none" : out;
}

AttributeSet AttributeSet::parse(std::string_view text) {
  AttributeSet set;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto next = text.find_first_of("+,", pos);
    const auto token = text.substr(pos, next == std::string_view::npos ? text.npos : next - pos);
    if (token == "color") set.bits_ |= 1;
    else if (token == "shape") set.bits_ |= 2;
    else if (token == "size") set.bits_ |= 4;
    else throw InvalidArgument("unknown attribute '" + std::string(token) + "'");
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return set;
}

const std::array<AttributeSet, 7>& AttributeSet::nonempty_subsets() {
  static const std::array<AttributeSet, 7> subsets{
      AttributeSet(1), AttributeSet(2), AttributeSet(4), AttributeSet(3),
      AttributeSet(5), AttributeSet(6), AttributeSet(7)};
  return subsets;
}

double Bowl::edge() const { return size == Size::Small ? kSmallBowlEdge : kLargeBowlEdge; }

bool Bowl::same_attributes(const Bowl& other) const {
  return color == other.color && shape == other.shape && size == other.size;
}

bool Bowl::matches_on(const Bowl& other, AttributeSet attrs) const {
  if (attrs.contains(Attribute::Color) && color != other.color) return false;
  if (attrs.contains(Attribute::Shape) && shape != other.shape) return false;
  if (attrs.contains(Attribute::Size) && size != other.size) return false;
  return true;
}

void Scene::validate() const {
  if (bowls.size() < 3 || bowls.size() > 5)
    throw InvalidArgument("scene: bowl count must be in [3, 5]");
  if (target_index < 0 || target_index >= static_cast<int>(bowls.size()))
    throw InvalidArgument("scene: target_index out of range");
  const double hx = table.width / 2, hy = table.height / 2;
  auto inside = [&](const Eigen::Vector2d& p) {
    return std::abs(p.x()) <= hx && std::abs(p.y()) <= hy && p.allFinite();
  };
  for (const auto& b : bowls)
    if (!inside(b.position)) throw InvalidArgument("scene: bowl outside the table");
  if (!inside(cube)) throw InvalidArgument("scene: cube outside the table");
}

Eigen::Vector2d pickup_zone() { return kStandardHomePosition.head<2>(); }

bool distinguishes(const Scene& scene, AttributeSet attrs) {
  if (attrs.empty()) return scene.bowls.size() <= 1;
  const Bowl& target = scene.target();
  for (std::size_t i = 0; i < scene.bowls.size(); ++i) {
    if (static_cast<int>(i) == scene.target_index) continue;
    if (scene.bowls[i].matches_on(target, attrs)) return false;
  }
  return true;
}

namespace {

Bowl random_attributes(Rng& rng) {
  Bowl b;
  b.color = static_cast<Color>(rng.below(kColorCount));
  b.shape = static_cast<Shape>(rng.below(kShapeCount));
  b.size = static_cast<Size>(rng.below(kSizeCount));
  return b;
}

// Changes exactly one attribute to a different random value.
Bowl vary(const Bowl& base, Attribute a, Rng& rng) {
  Bowl b = base;
  switch (a) {
    case Attribute::Color:
      b.color = static_cast<Color>((static_cast<int>(base.color) + 1 + rng.below(kColorCount - 1)) %
                                   kColorCount);
      break;
    case Attribute::Shape:
      b.shape = base.shape == Shape::Round ? Shape::Square : Shape::Round;
      break;
    case Attribute::Size:
      b.size = base.size == Size::Small ? Size::Large : Size::Small;
      break;
  }
  return b;
}

bool place_bowls(std::vector<Bowl>& bowls, const TableSpec& table, Rng& rng) {
  for (std::size_t i = 0; i < bowls.size(); ++i) {
    bool placed = false;
    for (int t = 0; t < kMaxPlacementTries && !placed; ++t) {
      const Eigen::Vector2d p{rng.uniform(table.bowl_x_min, table.bowl_x_max),
                              rng.uniform(table.bowl_y_min, table.bowl_y_max)};
      placed = true;
      for (std::size_t k = 0; k < i; ++k) {
        if ((bowls[k].position - p).norm() < kMinBowlSeparation) {
          placed = false;
          break;
        }
      }
      if (placed) bowls[i].position = p;
    }
    if (!placed) return false;
  }
  return true;
}

}  // namespace

Scene sample_scene(std::uint64_t seed, const SceneRequest& request) {
  if (request.n_objects < 3 || request.n_objects > 5)
    throw InvalidArgument("sample_scene: n_objects must be in [3, 5]");
  if (request.required.empty()) throw InvalidArgument("sample_scene: required set is empty");
  const int n = request.n_objects;
  const auto required = request.required.members();
  if (static_cast<int>(required.size()) > n - 1)
    throw SamplingExhausted("sample_scene: " + request.required.name() + " needs at least " +
                            std::to_string(required.size() + 1) + " bowls");

  Rng rng(seed);
  Scene scene;
  scene.seed = seed;
  scene.cube = pickup_zone();
  for (int attempt = 0; attempt < kMaxSamplingTries; ++attempt) {
    std::vector<Bowl> bowls;
    bowls.push_back(random_attributes(rng));
    const Bowl target = bowls.front();
    // One witness per required attribute: identical to the target except in
    // that attribute, so dropping the attribute leaves the target ambiguous.
    for (auto a : required) bowls.push_back(vary(target, a, rng));
    bool ok = true;
    while (ok && static_cast<int>(bowls.size()) < n) {
      bool found = false;
      for (int t = 0; t < 100 && !found; ++t) {
        Bowl b = random_attributes(rng);
        if (b.matches_on(target, request.required)) continue;
        bool duplicate = false;
        for (const auto& other : bowls) duplicate = duplicate || other.same_attributes(b);
        if (duplicate) continue;
        bowls.push_back(b);
        found = true;
      }
      ok = found;
    }
    if (!ok) continue;

    // Order is shuffled so the target is not always first.
    std::vector<int> order(bowls.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    shuffle(order, rng);
    scene.bowls.clear();
    for (int idx : order) {
      scene.bowls.push_back(bowls[static_cast<std::size_t>(idx)]);
      if (idx == 0) scene.target_index = static_cast<int>(scene.bowls.size()) - 1;
    }
    if (!place_bowls(scene.bowls, scene.table, rng)) continue;

    bool exact = distinguishes(scene, request.required);
    for (auto a : required) {
      const AttributeSet rest(kAllAttributes.bits() & ~static_cast<std::uint8_t>(a));
      exact = exact && !distinguishes(scene, rest);
    }
    if (exact) return scene;
  }
  throw SamplingExhausted("sample_scene: no valid scene after " +
                          std::to_string(kMaxSamplingTries) + " tries");
}

nlohmann::json to_json(const Scene& scene) {
  nlohmann::json bowls = nlohmann::json::array();
  for (const auto& b : scene.bowls) {
    bowls.push_back({{"color", to_string(b.color)},
                     {"shape", to_string(b.shape)},
                     {"size", to_string(b.size)},
                     {"x", b.position.x()},
                     {"y", b.position.y()}});
  }
  return {{"seed", scene.seed},
          {"table", {{"w", scene.table.width}, {"h", scene.table.height}}},
          {"bowls", bowls},
          {"cube", {{"x", scene.cube.x()}, {"y", scene.cube.y()}}},
          {"target_index", scene.target_index}};
}

Scene scene_from_json(const nlohmann::json& j) {
  try {
    Scene scene;
    scene.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("table")) {
      scene.table.width = j.at("table").at("w").get<double>();
      scene.table.height = j.at("table").at("h").get<double>();
    }
    for (const auto& b : j.at("bowls")) {
      Bowl bowl;
      bowl.color = parse_color(b.at("color").get<std::string>());
      bowl.shape = parse_shape(b.at("shape").get<std::string>());
      bowl.size = parse_size(b.at("size").get<std::string>());
      bowl.position = {b.at("x").get<double>(), b.at("y").get<double>()};
      scene.bowls.push_back(bowl);
    }
    if (j.contains("cube"))
      scene.cube = {j.at("cube").at("x").get<double>(), j.at("cube").at("y").get<double>()};
    else
      scene.cube = pickup_zone();
    scene.target_index = j.at("target_index").get<int>();
    scene.validate();
    return scene;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed scene json: ") + e.what());
  }
}

Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scene file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("malformed scene json in " + path + ": " + e.what());
  }
  return scene_from_json(j);
}

void save_scene(const std::string& path, const Scene& scene) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << to_json(scene).dump(2) << '\n';
}

}  // namespace lcms::sim
