#include "sobelkey/gaussian_loss.hpp"

#include <cmath>
#include <stdexcept>

namespace sobelkey {

GaussianKernel GaussianKernel::make(int radius) {
  return make(radius, static_cast<float>(radius) / 2.0f);
}

GaussianKernel GaussianKernel::make(int radius, float sigma) {
  if (radius < 1 || !(sigma > 0.0f)) throw ImageError("gaussian_kernel: radius >= 1 and sigma > 0 required");
  GaussianKernel k;
  k.radius = radius;
  k.sigma = sigma;
  const int side = 2 * radius + 1;
  k.w.resize(static_cast<std::size_t>(side) * side);
  const double s2 = 2.0 * static_cast<double>(sigma) * sigma;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      k.w[static_cast<std::size_t>(dy + radius) * side + (dx + radius)] =
          static_cast<float>(std::exp(-(static_cast<double>(dx) * dx + static_cast<double>(dy) * dy) / s2));
    }
  }
  return k;
}

double GaussianKernel::weight_sum() const {
  double s = 0.0;
  for (float x : w) s += x;
  return s;
}

namespace {

// window correlation with replicate borders, 64-bit accumulation
double window_sum_at(const Image& p, const GaussianKernel& k, int x, int y) {
  const int r = k.radius, side = k.side();
  double acc = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    const float* krow = k.w.data() + static_cast<std::size_t>(dy + r) * side;
    for (int dx = -r; dx <= r; ++dx) {
      acc += static_cast<double>(krow[dx + r]) * p.at_clamped(x + dx, y + dy);
    }
  }
  return acc;
}

}  // namespace

Image gauss_score_map(const Image& p, const GaussianKernel& k, float eps) {
  if (!(eps > 0.0f)) throw ImageError("gauss_score_map: eps must be > 0");
  Image out(p.w, p.h);
  for (int y = 0; y < p.h; ++y) {
    for (int x = 0; x < p.w; ++x) {
      const float ws = static_cast<float>(window_sum_at(p, k, x, y));
      const float pc = p.at(x, y);
      out.at(x, y) = pc * pc / (ws + eps);
    }
  }
  return out;
}

Tensor gauss_score_map(const Tensor& p, const GaussianKernel& k, float eps) {
  if (!(eps > 0.0f)) throw TensorError("gauss_score_map: eps must be > 0");
  Tensor ws = kernel_window_sum(p, k.w, k.radius);
  return div(mul(p, p), add_scalar(ws, eps));
}

std::vector<std::uint8_t> edge_mask(const EdgeMap& sobel_edge, float alpha) {
  if (!(alpha > 0.0f && alpha < 1.0f)) throw ImageError("edge_mask: alpha must be in (0,1)");
  float mx = 0.0f;
  for (float v : sobel_edge.v) mx = v > mx ? v : mx;
  std::vector<std::uint8_t> mask(sobel_edge.size(), 0);
  if (mx <= 0.0f) return mask;  // all-zero edge map keeps the mask empty
  const float thr = alpha * mx;
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = sobel_edge.v[i] > thr ? 1 : 0;
  return mask;
}

std::vector<std::pair<int, int>> CornerPointMap::positions() const {
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (on[static_cast<std::size_t>(y) * w + x]) out.emplace_back(x, y);
    }
  }
  return out;
}

int CornerPointMap::count() const {
  int n = 0;
  for (std::uint8_t b : on) n += b;
  return n;
}

CornerPointMap corner_point_map(const Image& gauss_score, const std::vector<std::uint8_t>& mask, int nms_radius) {
  if (mask.size() != gauss_score.size()) throw ImageError("corner_point_map: mask shape mismatch");
  CornerPointMap cmap;
  cmap.w = gauss_score.w;
  cmap.h = gauss_score.h;
  cmap.on = local_max_mask(gauss_score, nms_radius);
  for (std::size_t i = 0; i < cmap.on.size(); ++i) cmap.on[i] = cmap.on[i] & mask[i];
  return cmap;
}

double gauss_loss(const Image& p, const CornerPointMap& cmap, const GaussianKernel& k, float eps) {
  if (cmap.w != p.w || cmap.h != p.h) throw ImageError("gauss_loss: corner map shape mismatch");
  const auto active = cmap.positions();
  if (active.empty()) return 0.0;
  std::vector<double> glp(active.size()), gs(active.size());
  double gs_sum = 0.0;
  for (std::size_t i = 0; i < active.size(); ++i) {
    const auto [x, y] = active[i];
    const float ws = static_cast<float>(window_sum_at(p, k, x, y));
    const float pc = p.at(x, y);
    glp[i] = 1.0 - static_cast<double>(pc) / (static_cast<double>(ws) + eps);
    gs[i] = static_cast<double>(pc) * pc / (static_cast<double>(ws) + eps);
    gs_sum += gs[i];
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < active.size(); ++i) loss += glp[i] * (gs[i] / (gs_sum + eps));
  return loss;
}

Tensor gauss_loss(const Tensor& p, const std::vector<std::pair<int, int>>& active, const GaussianKernel& k,
                  float eps) {
  if (active.empty()) return Tensor::scalar(0.0f);
  Tensor ws = kernel_window_sum(p, k.w, k.radius);
  Tensor denom = add_scalar(ws, eps);
  // GLP = 1 - p/(window sum + eps) at active positions
  Tensor ratio_act = gather_pixels(div(p, denom), active);
  Tensor glp_act = add_scalar(mul_scalar(ratio_act, -1.0f), 1.0f);
  // Normalizing weights from the Gaussian scores of the active set
  Tensor gs_act = gather_pixels(div(mul(p, p), denom), active);
  Tensor weights = div(gs_act, add_scalar(sum(gs_act), eps));
  return sum(mul(glp_act, weights));
}

Tensor cross_warp_loss(const Tensor& osp, const Tensor& tsp, const Homography& h, const EdgeMap& sobel_orig,
                       const EdgeMap& sobel_trans, const CrossWarpConfig& cfg, LossBreakdown* breakdown) {
  if (osp.shape().size() != 4 || osp.shape() != tsp.shape()) {
    throw TensorError("cross_warp_loss: OSP/TSP must be equal-shape [1,1,H,W]");
  }
  const int height = osp.dim(2), width = osp.dim(3);
  if (sobel_orig.w != width || sobel_orig.h != height || !sobel_orig.same_size(sobel_trans)) {
    throw ImageError("cross_warp_loss: edge map shape mismatch");
  }
  if (cfg.radii.empty() || cfg.radii.size() > 3) throw ImageError("cross_warp_loss: expects 1..3 kernel radii");

  auto to_image = [&](const Tensor& t) {
    Image img(width, height);
    img.v = t.data();
    return img;
  };
  const Image osp_img = to_image(osp);
  const Image tsp_img = to_image(tsp);

  // Corner targets are built without gradient.
  const WarpResult osp_t = warp_map(osp_img, h, height, width);          // transformed frame
  const WarpResult tsp_t = warp_map(tsp_img, h.inverse(), height, width);  // original frame
  const std::vector<std::uint8_t> mask_orig = edge_mask(sobel_orig, cfg.alpha);
  const std::vector<std::uint8_t> mask_trans = edge_mask(sobel_trans, cfg.alpha);

  LossBreakdown bd;
  Tensor total = Tensor::scalar(0.0f);
  for (std::size_t ri = 0; ri < cfg.radii.size(); ++ri) {
    const int r = cfg.radii[ri];
    const GaussianKernel k = GaussianKernel::make(r);
    const int nms_rad = cfg.nms_radius_for(r);

    CornerPointMap c1 = corner_point_map(gauss_score_map(tsp_t.map, k, cfg.eps), mask_orig, nms_rad);
    for (std::size_t i = 0; i < c1.on.size(); ++i) c1.on[i] = c1.on[i] & tsp_t.valid[i];
    CornerPointMap c2 = corner_point_map(gauss_score_map(osp_t.map, k, cfg.eps), mask_trans, nms_rad);
    for (std::size_t i = 0; i < c2.on.size(); ++i) c2.on[i] = c2.on[i] & osp_t.valid[i];

    const auto r1 = c1.positions();
    const auto r2 = c2.positions();
    Tensor gl_osp = gauss_loss(osp, r1, k, cfg.eps);
    Tensor gl_tsp = gauss_loss(tsp, r2, k, cfg.eps);
    bd.gl_osp[ri] = gl_osp.item();
    bd.gl_tsp[ri] = gl_tsp.item();
    bd.r1_count += static_cast<int>(r1.size());
    bd.r2_count += static_cast<int>(r2.size());
    total = add(total, add(gl_osp, gl_tsp));
  }
  bd.total = total.item();
  if (breakdown) *breakdown = bd;
  return total;
}

}  // namespace sobelkey
