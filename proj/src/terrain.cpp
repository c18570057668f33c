#include "etgrl/terrain.hpp"

#include <algorithm>
#include <cmath>

#include "etgrl/common.hpp"

namespace etgrl::sim {
namespace {

struct KindName {
  TerrainKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {TerrainKind::kFlat, "flat"},
    {TerrainKind::kSlopeSlope, "slopeslope"},
    {TerrainKind::kStairStair, "stairstair"},
    {TerrainKind::kStairSlope, "stairslope"},
    {TerrainKind::kSlopeStair, "slopestair"},
    {TerrainKind::kHighStair, "stair13"},
    {TerrainKind::kRough, "terrain"},
    {TerrainKind::kBalance, "balance"},
    {TerrainKind::kGap, "gap"},
    {TerrainKind::kCave, "cave"},
};

class PolylineBuilder {
 public:
  explicit PolylineBuilder(double z0) { Add(Terrain::kMinX, z0); }

  void Add(double x, double z) { v_.emplace_back(x, z); }
  double x() const { return v_.back().x(); }
  double z() const { return v_.back().y(); }

  void FlatTo(double x_end) { Add(x_end, z()); }

  void StairsUp(int n, double rise, double run) {
    // z = rise * floor((x - x0) / run) over the staircase.
    const double x0 = x();
    const double z0 = z();
    for (int k = 1; k <= n; ++k) {
      Add(x0 + k * run, z0 + (k - 1) * rise);
      Add(x0 + k * run, z0 + k * rise);
    }
  }

  void StairsDown(int n, double rise, double run) {
    const double x0 = x();
    const double z0 = z();
    for (int k = 1; k <= n; ++k) {
      Add(x0 + k * run, z0 - (k - 1) * rise);
      Add(x0 + k * run, z0 - k * rise);
    }
  }

  void Slope(double length, double angle) {
    Add(x() + length, z() + std::tan(angle) * length);
  }

  std::vector<Eigen::Vector2d> Finish() {
    if (x() < Terrain::kMaxX) FlatTo(Terrain::kMaxX);
    return std::move(v_);
  }

 private:
  std::vector<Eigen::Vector2d> v_;
};

std::vector<Eigen::Vector2d> BuildRough(const TerrainProfile& p) {
  constexpr int kWaves = 8;
  constexpr double kDx = 0.02;
  NormalSampler rng(SplitSeed(p.seed, 0x726f756768));
  double wavelength[kWaves], phase[kWaves], weight[kWaves];
  for (int i = 0; i < kWaves; ++i) {
    wavelength[i] = 0.3 + 1.7 * rng.Uniform();
    phase[i] = 2.0 * 3.14159265358979323846 * rng.Uniform();
    weight[i] = 0.5 + rng.Uniform();
  }
  std::vector<double> xs, zs;
  double peak = 0.0;
  for (double x = 0.0; x <= Terrain::kMaxX + 1e-9; x += kDx) {
    double z = 0.0;
    for (int i = 0; i < kWaves; ++i) {
      z += weight[i] *
           std::sin(2.0 * 3.14159265358979323846 * x / wavelength[i] + phase[i]);
    }
    // Fade in so the start pose sits on flat ground.
    z *= std::clamp((x - 0.5 * p.start_x) / p.start_x, 0.0, 1.0);
    xs.push_back(x);
    zs.push_back(z);
    peak = std::max(peak, std::abs(z));
  }
  const double scale = peak > 0.0 ? p.roughness_amplitude / peak : 0.0;
  PolylineBuilder b(0.0);
  for (size_t i = 0; i < xs.size(); ++i) b.Add(xs[i], scale * zs[i]);
  return b.Finish();
}

std::vector<Eigen::Vector2d> BuildVertices(const TerrainProfile& p) {
  PolylineBuilder b(0.0);
  const double stair_rise = p.stair_rise;
  auto up_stairs = [&] { b.StairsUp(p.stair_count, stair_rise, p.stair_run); };
  auto down_stairs = [&] {
    b.StairsDown(p.stair_count, stair_rise, p.stair_run);
  };
  auto up_slope = [&] { b.Slope(p.slope_length, p.slope_angle); };
  auto down_slope = [&] { b.Slope(p.slope_length, -p.slope_angle); };
  auto landing = [&] { b.FlatTo(b.x() + p.landing_length); };

  switch (p.kind) {
    case TerrainKind::kFlat:
    case TerrainKind::kCave:
      break;
    case TerrainKind::kSlopeSlope:
      b.FlatTo(p.start_x);
      up_slope();
      landing();
      down_slope();
      break;
    case TerrainKind::kStairStair:
    case TerrainKind::kHighStair:
      b.FlatTo(p.start_x);
      up_stairs();
      landing();
      down_stairs();
      break;
    case TerrainKind::kStairSlope:
      b.FlatTo(p.start_x);
      up_stairs();
      landing();
      b.Slope(p.stair_count * stair_rise / std::tan(p.slope_angle),
              -p.slope_angle);
      break;
    case TerrainKind::kSlopeStair: {
      b.FlatTo(p.start_x);
      // Climb exactly the staircase height so the descent returns to zero.
      const double height = p.stair_count * stair_rise;
      b.Slope(height / std::tan(p.slope_angle), p.slope_angle);
      landing();
      down_stairs();
      break;
    }
    case TerrainKind::kRough:
      return BuildRough(p);
    case TerrainKind::kBalance:
      b.FlatTo(p.walkway_start);
      b.Add(p.walkway_start, p.walkway_height);
      b.FlatTo(p.walkway_end);
      b.Add(p.walkway_end, 0.0);
      break;
    case TerrainKind::kGap:
      for (int g = 0; g < p.gap_count; ++g) {
        const double gs = p.start_x + g * p.gap_spacing;
        b.FlatTo(gs);
        b.Add(gs, -p.gap_depth);
        b.FlatTo(gs + p.gap_width);
        b.Add(gs + p.gap_width, 0.0);
      }
      break;
  }
  return b.Finish();
}

// Closest point on segment ab to p.
Eigen::Vector2d ClosestOnSegment(const Eigen::Vector2d& a,
                                 const Eigen::Vector2d& b,
                                 const Eigen::Vector2d& p) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return a;
  const double s = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return a + s * ab;
}

}  // namespace

std::string ToString(TerrainKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return kn.name;
  }
  return "flat";
}

TerrainKind ParseTerrainKind(const std::string& name) {
  for (const auto& kn : kKindNames) {
    if (name == kn.name) return kn.kind;
  }
  throw ConfigError("unknown task '" + name + "'");
}

const std::vector<std::string>& TaskNames() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& kn : kKindNames) out.emplace_back(kn.name);
    return out;
  }();
  return names;
}

TerrainProfile TerrainProfile::ForTask(const std::string& name,
                                       std::uint64_t seed) {
  TerrainProfile p;
  p.kind = ParseTerrainKind(name);
  p.seed = seed;
  if (p.kind == TerrainKind::kHighStair) {
    p.stair_rise = 0.13;
    p.stair_run = 0.40;
  }
  return p;
}

void TerrainProfile::Validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string("terrain ") + what + " must be > 0");
    }
  };
  if (!std::isfinite(start_x) || start_x <= 0.0 || start_x > 10.0) {
    throw ConfigError("terrain start_x must lie in (0, 10]");
  }
  if (!(slope_angle > 0.0 && slope_angle < 1.2)) {
    throw ConfigError("slope angle must lie in (0, 1.2) rad");
  }
  positive(slope_length, "slope_length");
  positive(stair_rise, "stair_rise");
  positive(stair_run, "stair_run");
  positive(landing_length, "landing_length");
  positive(gap_width, "gap_width");
  positive(gap_depth, "gap_depth");
  positive(walkway_height, "walkway_height");
  positive(ceiling_height, "ceiling_height");
  positive(cave_length, "cave_length");
  if (stair_count < 1 || gap_count < 0) {
    throw ConfigError("stair_count must be >= 1 and gap_count >= 0");
  }
  if (gap_spacing <= gap_width) {
    throw ConfigError("gap_spacing must exceed gap_width");
  }
  if (!(roughness_amplitude >= 0.0)) {
    throw ConfigError("roughness amplitude must be >= 0");
  }
  if (!(walkway_start < 0.0 && walkway_end > 0.0)) {
    throw ConfigError("walkway must span x = 0");
  }
}

nlohmann::json ToJson(const TerrainProfile& p) {
  return {{"kind", ToString(p.kind)},
          {"start_x", p.start_x},
          {"slope_angle", p.slope_angle},
          {"slope_length", p.slope_length},
          {"stair_rise", p.stair_rise},
          {"stair_run", p.stair_run},
          {"stair_count", p.stair_count},
          {"landing_length", p.landing_length},
          {"gap_width", p.gap_width},
          {"gap_spacing", p.gap_spacing},
          {"gap_count", p.gap_count},
          {"gap_depth", p.gap_depth},
          {"roughness_amplitude", p.roughness_amplitude},
          {"seed", p.seed},
          {"walkway_height", p.walkway_height},
          {"walkway_start", p.walkway_start},
          {"walkway_end", p.walkway_end},
          {"ceiling_height", p.ceiling_height},
          {"cave_length", p.cave_length}};
}

TerrainProfile TerrainFromJson(const nlohmann::json& j) {
  TerrainProfile p = TerrainProfile::ForTask(
      j.value("kind", std::string("flat")), j.value("seed", std::uint64_t{0}));
  for (const auto& [key, value] : j.items()) {
    if (key == "kind" || key == "seed") continue;
    if (key == "start_x") p.start_x = value.get<double>();
    else if (key == "slope_angle") p.slope_angle = value.get<double>();
    else if (key == "slope_length") p.slope_length = value.get<double>();
    else if (key == "stair_rise") p.stair_rise = value.get<double>();
    else if (key == "stair_run") p.stair_run = value.get<double>();
    else if (key == "stair_count") p.stair_count = value.get<int>();
    else if (key == "landing_length") p.landing_length = value.get<double>();
    else if (key == "gap_width") p.gap_width = value.get<double>();
    else if (key == "gap_spacing") p.gap_spacing = value.get<double>();
    else if (key == "gap_count") p.gap_count = value.get<int>();
    else if (key == "gap_depth") p.gap_depth = value.get<double>();
    else if (key == "roughness_amplitude") p.roughness_amplitude = value.get<double>();
    else if (key == "walkway_height") p.walkway_height = value.get<double>();
    else if (key == "walkway_start") p.walkway_start = value.get<double>();
    else if (key == "walkway_end") p.walkway_end = value.get<double>();
    else if (key == "ceiling_height") p.ceiling_height = value.get<double>();
    else if (key == "cave_length") p.cave_length = value.get<double>();
    else throw ConfigError("unknown terrain key '" + key + "'");
  }
  p.Validate();
  return p;
}

Terrain::Terrain(const TerrainProfile& profile) : profile_(profile) {
  profile_.Validate();
  vertices_ = BuildVertices(profile_);
}

double Terrain::Height(double x) const {
  if (x <= vertices_.front().x()) return vertices_.front().y();
  if (x >= vertices_.back().x()) return vertices_.back().y();
  // First vertex strictly right of x; its predecessor starts a
  // non-vertical segment, which makes the lookup right-continuous.
  const auto it = std::upper_bound(
      vertices_.begin(), vertices_.end(), x,
      [](double v, const Eigen::Vector2d& p) { return v < p.x(); });
  const Eigen::Vector2d& b = *it;
  const Eigen::Vector2d& a = *(it - 1);
  const double s = (x - a.x()) / (b.x() - a.x());
  return a.y() + s * (b.y() - a.y());
}

double Terrain::Ceiling(double x) const {
  if (!has_ceiling()) return std::numeric_limits<double>::infinity();
  if (x >= profile_.start_x && x < profile_.start_x + profile_.cave_length) {
    return Height(x) + profile_.ceiling_height;
  }
  return std::numeric_limits<double>::infinity();
}

GroundContact Terrain::Contact(const Eigen::Vector2d& p) const {
  GroundContact c;
  const double below = Height(p.x()) - p.y();
  if (!(below > 0.0)) return c;
  // The nearest ground point lies within `below` of p.
  const auto lo = std::lower_bound(
      vertices_.begin(), vertices_.end(), p.x() - below,
      [](const Eigen::Vector2d& v, double x) { return v.x() < x; });
  size_t i = lo == vertices_.begin() ? 0 : (lo - vertices_.begin()) - 1;
  double best = below;
  Eigen::Vector2d nearest(p.x(), p.y() + below);
  for (; i + 1 < vertices_.size(); ++i) {
    if (vertices_[i].x() > p.x() + below) break;
    const Eigen::Vector2d q =
        ClosestOnSegment(vertices_[i], vertices_[i + 1], p);
    const double d = (q - p).norm();
    if (d < best) {
      best = d;
      nearest = q;
    }
  }
  if (best <= 0.0) return c;
  c.depth = best;
  c.normal = (nearest - p) / best;
  return c;
}

bool Terrain::OnWalkway(double x) const {
  if (profile_.kind != TerrainKind::kBalance) return true;
  return x >= profile_.walkway_start && x < profile_.walkway_end;
}

double TerrainHeight(const TerrainProfile& profile, double x) {
  return Terrain(profile).Height(x);
}

}  // namespace etgrl::sim
