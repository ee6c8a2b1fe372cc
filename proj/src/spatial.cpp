#include "lotnext/spatial.hpp"

#include <cmath>
#include <numbers>

#include "lotnext/error.hpp"

namespace lotnext {

namespace {
constexpr double kDegToRad = std::numbers::pi / 180.0;
}

bool is_valid(const GeoPoint& p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 &&
         p.lon >= -180.0 && p.lon <= 180.0;
}

double haversine(const GeoPoint& a, const GeoPoint& b) {
  const double phi1 = a.lat * kDegToRad;
  const double phi2 = b.lat * kDegToRad;
  const double dphi = (b.lat - a.lat) * kDegToRad;
  const double dlambda = (b.lon - a.lon) * kDegToRad;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  h = std::min(1.0, std::max(0.0, h));
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(h));
}

double pair_weight(const GeoPoint& a, const GeoPoint& b, const SpatialParams& params) {
  return std::exp(-params.beta * haversine(a, b)) + params.epsilon;
}

Matrix spatial_mixing_matrix(std::span<const GeoPoint> coords, const SpatialParams& params) {
  const auto n = static_cast<Eigen::Index>(coords.size());
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    double total = 0.0;
    for (Eigen::Index j = 0; j <= k; ++j) {
      const double w = pair_weight(coords[j], coords[k], params);
      m(k, j) = w;
      total += w;
    }
    m.row(k) /= total;
  }
  return m;
}

ad::Var spatial_context_attention(ad::Var encoded, std::span<const ad::Segment> segments,
                                  std::span<const GeoPoint> coords, const SpatialParams& params) {
  if (static_cast<Eigen::Index>(coords.size()) != encoded.rows()) {
    throw ShapeError("spatial_context_attention: one coordinate per row required");
  }
  std::vector<Matrix> mixing;
  mixing.reserve(segments.size());
  for (const auto& s : segments) {
    mixing.push_back(spatial_mixing_matrix(coords.subspan(s.start, s.length), params));
  }
  return ad::mix_segments(encoded, segments, mixing);
}

}  // namespace lotnext
