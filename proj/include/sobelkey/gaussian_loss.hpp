#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "sobelkey/homography.hpp"
#include "sobelkey/image.hpp"
#include "sobelkey/tensor.hpp"

namespace sobelkey {

// (2r+1)^2 isotropic Gaussian weights with the center pinned at exactly 1
// (plain exp form, no normalization), symmetric under 90-degree rotation
// and reflection.
struct GaussianKernel {
  int radius = 0;
  float sigma = 0.0f;
  std::vector<float> w;  // row-major (2r+1)x(2r+1)

  static GaussianKernel make(int radius);               // sigma = radius / 2
  static GaussianKernel make(int radius, float sigma);
  int side() const { return 2 * radius + 1; }
  double weight_sum() const;
};

// Per-pixel Gaussian score: (w_c * p_c / (sum_R w_i * p_i + eps)) * p_c with
// the kernel always centered (replicate-padded borders). Window sums
// accumulate in 64-bit.
Image gauss_score_map(const Image& p, const GaussianKernel& k, float eps);
Tensor gauss_score_map(const Tensor& p, const GaussianKernel& k, float eps);

// 1 where sobel_edge > alpha * max(sobel_edge), else 0.
std::vector<std::uint8_t> edge_mask(const EdgeMap& sobel_edge, float alpha);

struct CornerPointMap {
  int w = 0, h = 0;
  std::vector<std::uint8_t> on;

  std::vector<std::pair<int, int>> positions() const;  // (x, y) of set pixels
  int count() const;
};

// NMS over the Gaussian score grid, binarized (local max > 0), gated by the
// edge mask.
CornerPointMap corner_point_map(const Image& gauss_score, const std::vector<std::uint8_t>& mask, int nms_radius);

// Aggregate Gaussian loss over the corner map's active set: per active pixel
// GLP = 1 - w_c*p_c / (window sum + eps), combined with normalizing weights
// GaussScore_i / (sum of active GaussScores + eps). Empty set gives 0.
double gauss_loss(const Image& p, const CornerPointMap& cmap, const GaussianKernel& k, float eps);
Tensor gauss_loss(const Tensor& p, const std::vector<std::pair<int, int>>& active, const GaussianKernel& k,
                  float eps);

struct CrossWarpConfig {
  std::vector<int> radii{4, 6, 8};
  float alpha = 0.1f;
  float eps = 1e-8f;
  int nms_radius_for(int r) const { return r / 2 < 1 ? 1 : r / 2; }
};

struct LossBreakdown {
  double total = 0.0;
  std::array<double, 3> gl_osp{};  // per radius, in config order
  std::array<double, 3> gl_tsp{};
  int r1_count = 0;  // active positions summed over radii
  int r2_count = 0;
};

// Multi-scale cross-warp objective. OSP-T = warp(OSP, H) provides corner
// targets for TSP; TSP-T = warp(TSP, H^-1) provides them for OSP. Corner maps
// are built without gradient (binarized targets, edge-masked, warp-validity
// gated); gradients flow through OSP/TSP inside GLP and the normalizing
// weights only.
Tensor cross_warp_loss(const Tensor& osp, const Tensor& tsp, const Homography& h, const EdgeMap& sobel_orig,
                       const EdgeMap& sobel_trans, const CrossWarpConfig& cfg, LossBreakdown* breakdown);

}  // namespace sobelkey
