#pragma once

#include <array>
#include <cstddef>
#include <string_view>

namespace metaspatial {

// z is vertical throughout the engine.
enum class Axis : std::size_t { x = 0, y = 1, z = 2 };

inline constexpr std::array<Axis, 3> kAxes{Axis::x, Axis::y, Axis::z};

constexpr std::string_view axis_name(Axis a) {
  switch (a) {
    case Axis::x: return "x";
    case Axis::y: return "y";
    case Axis::z: return "z";
  }
  return "?";
}

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr double operator[](Axis a) const {
    return a == Axis::x ? x : (a == Axis::y ? y : z);
  }
  constexpr double& operator[](Axis a) {
    return a == Axis::x ? x : (a == Axis::y ? y : z);
  }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

struct Aabb {
  Vec3 min;
  Vec3 max;

  constexpr Vec3 center() const {
    return {(min.x + max.x) / 2, (min.y + max.y) / 2, (min.z + max.z) / 2};
  }

  // Strictly positive overlap volume. Touching faces do not count.
  constexpr bool overlaps(const Aabb& o) const {
    return min.x < o.max.x && o.min.x < max.x &&  //
           min.y < o.max.y && o.min.y < max.y &&  //
           min.z < o.max.z && o.min.z < max.z;
  }

  friend constexpr bool operator==(const Aabb&, const Aabb&) = default;
};

}  // namespace metaspatial
