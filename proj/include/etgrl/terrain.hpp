#pragma once

// Planar terrain profiles. Ground is a polyline in the (x, z) plane with
// vertical risers allowed; the height function is right-continuous at risers.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace etgrl::sim {

enum class TerrainKind {
  kFlat,
  kSlopeSlope,
  kStairStair,
  kStairSlope,
  kSlopeStair,
  kHighStair,
  kRough,
  kBalance,
  kGap,
  kCave,
};

// Task names: flat, slopeslope, stairstair, stairslope, slopestair, stair13,
// terrain, balance, gap, cave.
std::string ToString(TerrainKind kind);
TerrainKind ParseTerrainKind(const std::string& name);
const std::vector<std::string>& TaskNames();

struct TerrainProfile {
  TerrainKind kind = TerrainKind::kFlat;
  double start_x = 1.0;         // m, where the first feature begins
  double slope_angle = 0.3490658503988659;  // rad (20 deg)
  double slope_length = 1.25;   // m, horizontal run of each slope
  double stair_rise = 0.08;     // m
  double stair_run = 0.25;      // m
  int stair_count = 5;
  double landing_length = 1.0;  // m between ascent and descent
  double gap_width = 0.12;      // m
  double gap_spacing = 1.0;     // m between gap starts
  int gap_count = 6;
  double gap_depth = 0.5;       // m
  double roughness_amplitude = 0.03;  // m
  std::uint64_t seed = 0;       // rough field
  double walkway_height = 0.3;  // m, balance analog
  double walkway_start = -0.6;  // m
  double walkway_end = 6.0;     // m
  double ceiling_height = 0.36;  // m above ground inside the cave
  double cave_length = 4.0;     // m

  // Defaults for a named task; stair13 uses a 0.13 m rise and 0.40 m run.
  static TerrainProfile ForTask(const std::string& name, std::uint64_t seed);
  void Validate() const;
};

nlohmann::json ToJson(const TerrainProfile& p);
TerrainProfile TerrainFromJson(const nlohmann::json& j);

struct GroundContact {
  double depth = 0.0;        // > 0 when below ground
  Eigen::Vector2d normal{0.0, 1.0};  // unit, pointing out of the ground
};

class Terrain {
 public:
  explicit Terrain(const TerrainProfile& profile);

  double Height(double x) const;
  // +inf outside the cave.
  double Ceiling(double x) const;
  bool has_ceiling() const { return profile_.kind == TerrainKind::kCave; }

  // Depth is the distance from `p` to the nearest ground segment, computed
  // only when p lies below the height function; otherwise zero.
  GroundContact Contact(const Eigen::Vector2d& p) const;

  // True while x is over the raised walkway (always true for other kinds).
  bool OnWalkway(double x) const;

  const TerrainProfile& profile() const { return profile_; }
  const std::vector<Eigen::Vector2d>& vertices() const { return vertices_; }

  static constexpr double kMinX = -5.0;
  static constexpr double kMaxX = 40.0;

 private:
  TerrainProfile profile_;
  std::vector<Eigen::Vector2d> vertices_;  // x non-decreasing
};

// Convenience for single queries; builds the polyline each call.
double TerrainHeight(const TerrainProfile& profile, double x);

}  // namespace etgrl::sim
