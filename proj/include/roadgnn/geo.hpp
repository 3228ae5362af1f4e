#pragma once

#include <array>
#include <cmath>
#include <vector>

namespace roadgnn {

using LonLat = std::array<double, 2>;  // {lon, lat} in degrees

constexpr double kEarthRadiusM = 6371000.0;

inline double deg2rad(double d) { return d * M_PI / 180.0; }

// Great-circle distance in meters.
inline double haversine_m(double lon1, double lat1, double lon2, double lat2) {
  const double phi1 = deg2rad(lat1);
  const double phi2 = deg2rad(lat2);
  const double dphi = deg2rad(lat2 - lat1);
  const double dlam = deg2rad(lon2 - lon1);
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlam / 2.0);
  const double a = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(a)));
}

inline double haversine_m(const LonLat& a, const LonLat& b) {
  return haversine_m(a[0], a[1], b[0], b[1]);
}

// Planar length of a polyline in coordinate units (degrees). Geometry
// resampling spaces points along this measure.
inline double polyline_length(const std::vector<LonLat>& poly) {
  double len = 0.0;
  for (std::size_t i = 1; i < poly.size(); ++i) {
    const double dx = poly[i][0] - poly[i - 1][0];
    const double dy = poly[i][1] - poly[i - 1][1];
    len += std::sqrt(dx * dx + dy * dy);
  }
  return len;
}

}  // namespace roadgnn
