#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "sobelkey/image.hpp"

namespace sobelkey {

// 3x3 projective map on pixel coordinates (x = column, y = row, centers at
// integers). h33 is kept normalized to 1.
struct Homography {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography identity() { return {}; }
  static Homography from_matrix(const std::array<double, 9>& raw);
  // DLT from 4 point correspondences (src -> dst).
  static Homography from_corners(const std::array<std::array<double, 2>, 4>& src,
                                 const std::array<std::array<double, 2>, 4>& dst);

  void apply(double x, double y, double& ox, double& oy) const;
  Homography inverse() const;
  // this after rhs: (a.compose(b))(p) == a(b(p))
  Homography compose(const Homography& rhs) const;
  double det() const;
};

struct WarpResult {
  Image map;
  std::vector<std::uint8_t> valid;  // 1 where the inverse-mapped source coordinate is in bounds
};

// Inverse-mapping warp with bilinear sampling. Output pixel (x,y) reads the
// source at H^-1 (x,y); out-of-source pixels are 0 with valid = 0.
WarpResult warp_map(const Image& src, const Homography& h, int out_h, int out_w);

}  // namespace sobelkey
