#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lcms/common.hpp"

namespace lcms::sim {

enum class Color : std::uint8_t { Red, Green, Blue, Yellow, Pink };
enum class Shape : std::uint8_t { Round, Square };
enum class Size : std::uint8_t { Small, Large };

inline constexpr int kColorCount = 5;
inline constexpr int kShapeCount = 2;
inline constexpr int kSizeCount = 2;

std::string_view to_string(Color c);
std::string_view to_string(Shape s);
std::string_view to_string(Size s);
Color parse_color(std::string_view name);
Shape parse_shape(std::string_view name);
Size parse_size(std::string_view name);

/// Attribute identifiers and subsets of {color, shape, size} as a bitmask.
enum class Attribute : std::uint8_t { Color = 1, Shape = 2, Size = 4 };

class AttributeSet {
 public:
  constexpr AttributeSet() = default;
  constexpr explicit AttributeSet(std::uint8_t bits) : bits_(bits & 7) {}
  constexpr AttributeSet(std::initializer_list<Attribute> attrs) {
    for (auto a : attrs) bits_ |= static_cast<std::uint8_t>(a);
  }

  constexpr bool contains(Attribute a) const { return bits_ & static_cast<std::uint8_t>(a); }
  constexpr bool contains(AttributeSet other) const { return (bits_ & other.bits_) == other.bits_; }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr int size() const { return (bits_ & 1) + ((bits_ >> 1) & 1) + ((bits_ >> 2) & 1); }
  constexpr std::uint8_t bits() const { return bits_; }
  constexpr bool operator==(const AttributeSet&) const = default;

  std::vector<Attribute> members() const;
  /// e.g. "color+shape"
  std::string name() const;
  static AttributeSet parse(std::string_view text);
  /// The 7 nonempty subsets in a fixed order: singletons, pairs, triple.
  static const std::array<AttributeSet, 7>& nonempty_subsets();

 private:
  std::uint8_t bits_ = 0;
};

inline constexpr AttributeSet kAllAttributes{Attribute::Color, Attribute::Shape, Attribute::Size};

struct Bowl {
  Color color = Color::Red;
  Shape shape = Shape::Round;
  Size size = Size::Small;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();  // table frame, m

  /// Edge length of the success bounding box, also the rendered footprint diameter.
  double edge() const;
  bool same_attributes(const Bowl& other) const;
  bool matches_on(const Bowl& other, AttributeSet attrs) const;
};

inline constexpr double kSmallBowlEdge = 0.125;
inline constexpr double kLargeBowlEdge = 0.175;
inline constexpr double kCubeEdge = 0.04;
inline constexpr double kMinBowlSeparation = 0.22;

/// Table and pickup geometry. The table frame origin is the table center,
/// +y points away from the robot.
struct TableSpec {
  double width = 0.8;   // x extent, m
  double height = 0.8;  // y extent, m
  // Admissible region for bowl centers.
  double bowl_x_min = -0.3125, bowl_x_max = 0.3125;
  double bowl_y_min = -0.12, bowl_y_max = 0.3125;
};

struct Scene {
  std::uint64_t seed = 0;
  TableSpec table;
  std::vector<Bowl> bowls;
  Eigen::Vector2d cube = Eigen::Vector2d::Zero();
  int target_index = 0;

  const Bowl& target() const { return bowls.at(static_cast<std::size_t>(target_index)); }
  /// Throws InvalidArgument on a malformed scene (bowl count, bounds, target index).
  void validate() const;
};

class SamplingExhausted : public Error {
 public:
  using Error::Error;
};

struct SceneRequest {
  int n_objects = 3;                          // bowls, 3..5
  AttributeSet required{Attribute::Color};    // nonempty
};

/// Pickup zone: the xy of the arm's home end-effector position.
Eigen::Vector2d pickup_zone();

/// Samples bowls so that `required` is the only inclusion-minimal attribute
/// set that singles out the target. Deterministic in (seed, request).
Scene sample_scene(std::uint64_t seed, const SceneRequest& request);

/// True iff no distractor agrees with the target on every attribute in attrs.
bool distinguishes(const Scene& scene, AttributeSet attrs);

nlohmann::json to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);
Scene load_scene(const std::string& path);
void save_scene(const std::string& path, const Scene& scene);

}  // namespace lcms::sim
