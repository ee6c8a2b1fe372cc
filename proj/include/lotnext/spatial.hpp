#pragma once

#include <span>
#include <vector>

#include "lotnext/autodiff.hpp"

namespace lotnext {

inline constexpr double kEarthRadiusKm = 6371.0;

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;

  bool operator==(const GeoPoint&) const = default;
};

bool is_valid(const GeoPoint& p);

struct SpatialParams {
  double beta = 1.0;      // decay per kilometre
  double epsilon = 1e-10;
};

/// Great-circle distance in kilometres.
double haversine(const GeoPoint& a, const GeoPoint& b);

/// exp(-beta * haversine(a, b)) + epsilon.
double pair_weight(const GeoPoint& a, const GeoPoint& b, const SpatialParams& params);

/// Row-normalized causal kernel for one sequence: entry (k, j) for j <= k is
/// pair_weight(p_j, p_k) / sum_{i<=k} pair_weight(p_i, p_k), zero above the
/// diagonal.
Matrix spatial_mixing_matrix(std::span<const GeoPoint> coords, const SpatialParams& params);

/// Spatially weighted causal prefix average of encoder outputs, applied per
/// segment with `coords` aligned to the rows of `encoded`.
ad::Var spatial_context_attention(ad::Var encoded, std::span<const ad::Segment> segments,
                                  std::span<const GeoPoint> coords, const SpatialParams& params);

}  // namespace lotnext
