#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sobelkey/rng.hpp"

namespace oracles {

using sobelkey::GrayImage;
using sobelkey::Image;
using sobelkey::Tensor;

double rel_err_l2(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::runtime_error("rel_err_l2: size mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max(std::sqrt(na), std::max(std::sqrt(nb), 1e-30));
  return std::sqrt(diff) / denom;
}

double gradient_check(const std::function<Tensor()>& forward, std::vector<Tensor> leaves, double h,
                      int max_coords_per_leaf, std::uint64_t coord_seed) {
  Tensor loss = forward();
  for (Tensor& leaf : leaves) leaf.zero_grad();
  sobelkey::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (Tensor& leaf : leaves) {
    analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
  }

  sobelkey::Rng rng(coord_seed);
  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& data = leaves[li].mutable_data();
    std::vector<std::size_t> coords(data.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords_per_leaf > 0 && coords.size() > static_cast<std::size_t>(max_coords_per_leaf)) {
      rng.shuffle(coords);
      coords.resize(static_cast<std::size_t>(max_coords_per_leaf));
    }
    std::vector<double> fd(coords.size()), ana(coords.size());
    for (std::size_t ci = 0; ci < coords.size(); ++ci) {
      const std::size_t i = coords[ci];
      const float saved = data[i];
      data[i] = static_cast<float>(saved + h);
      const double fp = forward().item();
      data[i] = static_cast<float>(saved - h);
      const double fm = forward().item();
      data[i] = saved;
      fd[ci] = (fp - fm) / (2.0 * h);
      ana[ci] = analytic[li][i];
    }
    worst = std::max(worst, rel_err_l2(ana, fd));
  }
  return worst;
}

double gradient_check_f64(const std::function<Tensor()>& forward, const std::function<double()>& value64,
                          std::vector<Tensor> leaves, double h, int max_coords_per_leaf, std::uint64_t coord_seed) {
  Tensor loss = forward();
  for (Tensor& leaf : leaves) leaf.zero_grad();
  sobelkey::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (Tensor& leaf : leaves) {
    analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
  }

  sobelkey::Rng rng(coord_seed);
  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& data = leaves[li].mutable_data();
    std::vector<std::size_t> coords(data.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords_per_leaf > 0 && coords.size() > static_cast<std::size_t>(max_coords_per_leaf)) {
      rng.shuffle(coords);
      coords.resize(static_cast<std::size_t>(max_coords_per_leaf));
    }
    std::vector<double> fd(coords.size()), ana(coords.size());
    for (std::size_t ci = 0; ci < coords.size(); ++ci) {
      const std::size_t i = coords[ci];
      const float saved = data[i];
      data[i] = static_cast<float>(saved + h);
      const double fp = value64();
      data[i] = static_cast<float>(saved - h);
      const double fm = value64();
      data[i] = saved;
      fd[ci] = (fp - fm) / (2.0 * h);
      ana[ci] = analytic[li][i];
    }
    worst = std::max(worst, rel_err_l2(ana, fd));
  }
  return worst;
}

std::vector<std::pair<int, int>> nms_brute(const Image& map, int radius) {
  std::vector<std::pair<int, int>> out;
  for (int y = 0; y < map.h; ++y) {
    for (int x = 0; x < map.w; ++x) {
      const float c = map.at(x, y);
      if (!(c > 0.0f)) continue;
      bool beaten = false;
      for (int ny = std::max(0, y - radius); ny <= std::min(map.h - 1, y + radius) && !beaten; ++ny) {
        for (int nx = std::max(0, x - radius); nx <= std::min(map.w - 1, x + radius); ++nx) {
          if (nx == x && ny == y) continue;
          const float q = map.at(nx, ny);
          if (q > c || (q == c && (ny < y || (ny == y && nx < x)))) {
            beaten = true;
            break;
          }
        }
      }
      if (!beaten) out.emplace_back(x, y);
    }
  }
  return out;
}

double bilinear_scalar(const Image& src, double x, double y) {
  x = x < 0 ? 0 : (x > src.w - 1 ? src.w - 1 : x);
  y = y < 0 ? 0 : (y > src.h - 1 ? src.h - 1 : y);
  const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, src.w - 1), y1 = std::min(y0 + 1, src.h - 1);
  const double tx = x - x0, ty = y - y0;
  return (src.at(x0, y0) * (1.0 - tx) + src.at(x1, y0) * tx) * (1.0 - ty) +
         (src.at(x0, y1) * (1.0 - tx) + src.at(x1, y1) * tx) * ty;
}

std::vector<std::pair<int, int>> mutual_nn_brute(const std::vector<std::vector<float>>& a,
                                                 const std::vector<std::vector<float>>& b) {
  std::vector<std::pair<int, int>> out;
  auto dot = [](const std::vector<float>& u, const std::vector<float>& v) {
    double acc = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) acc += static_cast<double>(u[k]) * v[k];
    return acc;
  };
  for (std::size_t i = 0; i < a.size(); ++i) {
    int best_j = -1;
    double best = -1e300;
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double s = dot(a[i], b[j]);
      if (s > best) {
        best = s;
        best_j = static_cast<int>(j);
      }
    }
    // is i also the best for best_j?
    int best_i = -1;
    double best2 = -1e300;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double s = dot(a[k], b[static_cast<std::size_t>(best_j)]);
      if (s > best2) {
        best2 = s;
        best_i = static_cast<int>(k);
      }
    }
    if (best_i == static_cast<int>(i)) out.emplace_back(static_cast<int>(i), best_j);
  }
  return out;
}

namespace {

double point_dist(const std::pair<double, double>& a, const std::pair<double, double>& b) {
  const double dx = a.first - b.first, dy = a.second - b.second;
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

int greedy_assignment_brute(const std::vector<std::pair<double, double>>& projected_a,
                            const std::vector<std::pair<double, double>>& b, double tol) {
  std::vector<char> used_a(projected_a.size(), 0), used_b(b.size(), 0);
  int count = 0;
  for (;;) {
    double best = 1e300;
    int bi = -1, bj = -1;
    for (std::size_t i = 0; i < projected_a.size(); ++i) {
      if (used_a[i]) continue;
      for (std::size_t j = 0; j < b.size(); ++j) {
        if (used_b[j]) continue;
        const double d = point_dist(projected_a[i], b[j]);
        if (d <= tol && d < best) {
          best = d;
          bi = static_cast<int>(i);
          bj = static_cast<int>(j);
        }
      }
    }
    if (bi < 0) break;
    used_a[static_cast<std::size_t>(bi)] = used_b[static_cast<std::size_t>(bj)] = 1;
    ++count;
  }
  return count;
}

namespace {

bool try_augment(int i, const std::vector<std::vector<int>>& adj, std::vector<char>& visited,
                 std::vector<int>& match_b) {
  for (int j : adj[static_cast<std::size_t>(i)]) {
    if (visited[static_cast<std::size_t>(j)]) continue;
    visited[static_cast<std::size_t>(j)] = 1;
    if (match_b[static_cast<std::size_t>(j)] < 0 ||
        try_augment(match_b[static_cast<std::size_t>(j)], adj, visited, match_b)) {
      match_b[static_cast<std::size_t>(j)] = i;
      return true;
    }
  }
  return false;
}

}  // namespace

int optimal_assignment(const std::vector<std::pair<double, double>>& projected_a,
                       const std::vector<std::pair<double, double>>& b, double tol) {
  std::vector<std::vector<int>> adj(projected_a.size());
  for (std::size_t i = 0; i < projected_a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (point_dist(projected_a[i], b[j]) <= tol) adj[i].push_back(static_cast<int>(j));
    }
  }
  std::vector<int> match_b(b.size(), -1);
  int count = 0;
  for (std::size_t i = 0; i < projected_a.size(); ++i) {
    std::vector<char> visited(b.size(), 0);
    if (try_augment(static_cast<int>(i), adj, visited, match_b)) ++count;
  }
  return count;
}

// --- straight-line Gaussian objective ------------------------------------------

namespace {

struct Mat3 {
  std::array<double, 9> m;

  void apply(double x, double y, double& ox, double& oy) const {
    const double w = m[6] * x + m[7] * y + m[8];
    ox = (m[0] * x + m[1] * y + m[2]) / w;
    oy = (m[3] * x + m[4] * y + m[5]) / w;
  }
};

// 3x3 inverse mirroring the library's cofactor layout and h33 normalization
Mat3 invert3(const Mat3& a) {
  const auto& m = a.m;
  const double d = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                   m[2] * (m[3] * m[7] - m[4] * m[6]);
  std::array<double, 9> inv;
  inv[0] = (m[4] * m[8] - m[5] * m[7]) / d;
  inv[1] = (m[2] * m[7] - m[1] * m[8]) / d;
  inv[2] = (m[1] * m[5] - m[2] * m[4]) / d;
  inv[3] = (m[5] * m[6] - m[3] * m[8]) / d;
  inv[4] = (m[0] * m[8] - m[2] * m[6]) / d;
  inv[5] = (m[2] * m[3] - m[0] * m[5]) / d;
  inv[6] = (m[3] * m[7] - m[4] * m[6]) / d;
  inv[7] = (m[1] * m[6] - m[0] * m[7]) / d;
  inv[8] = (m[0] * m[4] - m[1] * m[3]) / d;
  Mat3 out{inv};
  for (double& v : out.m) v /= inv[8];
  return out;
}

struct WarpedMap {
  Image map;
  std::vector<std::uint8_t> valid;
};

WarpedMap warp_oracle(const Image& src, const Mat3& h) {
  const Mat3 inv = invert3(h);
  WarpedMap out;
  out.map = Image(src.w, src.h);
  out.valid.assign(src.size(), 0);
  for (int y = 0; y < src.h; ++y) {
    for (int x = 0; x < src.w; ++x) {
      double sx, sy;
      inv.apply(x, y, sx, sy);
      if (sx < 0.0 || sy < 0.0 || sx > src.w - 1.0 || sy > src.h - 1.0) continue;
      const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, src.w - 1), y1 = std::min(y0 + 1, src.h - 1);
      const double tx = sx - x0, ty = sy - y0;
      const double top = src.at(x0, y0) * (1.0 - tx) + src.at(x1, y0) * tx;
      const double bot = src.at(x0, y1) * (1.0 - tx) + src.at(x1, y1) * tx;
      out.map.at(x, y) = static_cast<float>(top * (1.0 - ty) + bot * ty);
      out.valid[static_cast<std::size_t>(y) * src.w + x] = 1;
    }
  }
  return out;
}

int clampi(int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); }

// Eq. 2 score grid as float (the corner-selection values), window sums in
// 64-bit. Center weight is exactly 1 by the kernel construction.
Image gauss_score_oracle(const Image& p, const std::vector<float>& kw, int r, float eps) {
  const int side = 2 * r + 1;
  Image gs(p.w, p.h);
  for (int y = 0; y < p.h; ++y) {
    for (int x = 0; x < p.w; ++x) {
      double acc = 0.0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          acc += static_cast<double>(kw[static_cast<std::size_t>(dy + r) * side + (dx + r)]) *
                 p.at(clampi(x + dx, p.w - 1), clampi(y + dy, p.h - 1));
        }
      }
      const float ws = static_cast<float>(acc);
      const float pc = p.at(x, y);
      gs.at(x, y) = pc * pc / (ws + eps);
    }
  }
  return gs;
}

double window_sum_f64(const Image& p, const std::vector<float>& kw, int r, int x, int y) {
  const int side = 2 * r + 1;
  double acc = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      acc += static_cast<double>(kw[static_cast<std::size_t>(dy + r) * side + (dx + r)]) *
             p.at(clampi(x + dx, p.w - 1), clampi(y + dy, p.h - 1));
    }
  }
  return acc;
}

}  // namespace

CrossWarpOracle cross_warp_oracle(const Image& osp, const Image& tsp, const std::array<double, 9>& h,
                                  const Image& sobel_orig, const Image& sobel_trans, float alpha, float eps,
                                  const std::vector<int>& radii) {
  const Mat3 hm{h};
  const WarpedMap osp_t = warp_oracle(osp, hm);            // transformed frame
  const WarpedMap tsp_t = warp_oracle(tsp, invert3(hm));   // original frame

  auto make_mask = [alpha](const Image& edges) {
    float mx = 0.0f;
    for (float v : edges.v) mx = std::max(mx, v);
    std::vector<std::uint8_t> mask(edges.size(), 0);
    if (mx <= 0.0f) return mask;
    const float thr = alpha * mx;
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = edges.v[i] > thr ? 1 : 0;
    return mask;
  };
  const auto mask_orig = make_mask(sobel_orig);
  const auto mask_trans = make_mask(sobel_trans);

  CrossWarpOracle out;
  for (std::size_t ri = 0; ri < radii.size(); ++ri) {
    const int r = radii[ri];
    const int side = 2 * r + 1;
    std::vector<float> kw(static_cast<std::size_t>(side) * side);
    const double sigma = static_cast<double>(r) / 2.0;
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        kw[static_cast<std::size_t>(dy + r) * side + (dx + r)] = static_cast<float>(
            std::exp(-(static_cast<double>(dx) * dx + static_cast<double>(dy) * dy) / (2.0 * sigma * sigma)));
      }
    }
    const int nms_rad = std::max(1, r / 2);

    // one side: positions from the warped "other" map drive the loss on `own`
    auto side_loss = [&](const Image& own, const WarpedMap& other_warped, const std::vector<std::uint8_t>& mask) {
      const Image gs_other = gauss_score_oracle(other_warped.map, kw, r, eps);
      std::vector<std::pair<int, int>> active;
      for (const auto& [x, y] : nms_brute(gs_other, nms_rad)) {
        const std::size_t idx = static_cast<std::size_t>(y) * gs_other.w + x;
        if (mask[idx] && other_warped.valid[idx]) active.emplace_back(x, y);
      }
      if (active.empty()) return 0.0;
      std::vector<double> glp(active.size()), gsv(active.size());
      double gs_sum = 0.0;
      for (std::size_t i = 0; i < active.size(); ++i) {
        const auto [x, y] = active[i];
        const double ws = window_sum_f64(own, kw, r, x, y);
        const double pc = own.at(x, y);
        glp[i] = 1.0 - pc / (ws + eps);
        gsv[i] = pc * pc / (ws + eps);
        gs_sum += gsv[i];
      }
      double loss = 0.0;
      for (std::size_t i = 0; i < active.size(); ++i) loss += glp[i] * (gsv[i] / (gs_sum + eps));
      return loss;
    };

    out.gl_osp[ri] = side_loss(osp, tsp_t, mask_orig);
    out.gl_tsp[ri] = side_loss(tsp, osp_t, mask_trans);
    out.total += out.gl_osp[ri] + out.gl_tsp[ri];
  }
  return out;
}

// --- 64-bit forward re-evaluations ------------------------------------------

namespace {

std::vector<float> gauss_kernel_weights(int radius, float sigma) {
  const int side = 2 * radius + 1;
  std::vector<float> kw(static_cast<std::size_t>(side) * side);
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      kw[static_cast<std::size_t>(dy + radius) * side + (dx + radius)] = static_cast<float>(std::exp(
          -(static_cast<double>(dx) * dx + static_cast<double>(dy) * dy) / (2.0 * double(sigma) * sigma)));
    }
  }
  return kw;
}

// same-size stride-1 cross-correlation, double arithmetic, zero padding
std::vector<double> conv_same_f64(const std::vector<double>& in, int cin, int h, int w,
                                  const std::vector<float>& weight, int cout, int k,
                                  const std::vector<float>& bias) {
  const int pad = (k - 1) / 2;
  std::vector<double> out(static_cast<std::size_t>(cout) * h * w, 0.0);
  for (int co = 0; co < cout; ++co) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = bias.empty() ? 0.0 : static_cast<double>(bias[static_cast<std::size_t>(co)]);
        for (int ci = 0; ci < cin; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = y + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = x + kx - pad;
              if (ix < 0 || ix >= w) continue;
              acc += static_cast<double>(
                         weight[((static_cast<std::size_t>(co) * cin + ci) * k + ky) * k + kx]) *
                     in[(static_cast<std::size_t>(ci) * h + iy) * w + ix];
            }
          }
        }
        out[(static_cast<std::size_t>(co) * h + y) * w + x] = acc;
      }
    }
  }
  return out;
}

void leaky_f64(std::vector<double>& v, double slope) {
  for (double& x : v) x = x > 0.0 ? x : slope * x;
}

std::vector<double> resize_bilinear_f64(const std::vector<double>& in, int c, int h, int w, int oh, int ow) {
  if (oh == h && ow == w) return in;
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
  const double sx = static_cast<double>(w) / ow, sy = static_cast<double>(h) / oh;
  for (int ch = 0; ch < c; ++ch) {
    const double* src = in.data() + static_cast<std::size_t>(ch) * h * w;
    double* dst = out.data() + static_cast<std::size_t>(ch) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      double fy = (y + 0.5) * sy - 0.5;
      fy = fy < 0 ? 0 : (fy > h - 1 ? h - 1 : fy);
      const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, h - 1);
      const double ty = fy - y0;
      for (int x = 0; x < ow; ++x) {
        double fx = (x + 0.5) * sx - 0.5;
        fx = fx < 0 ? 0 : (fx > w - 1 ? w - 1 : fx);
        const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, w - 1);
        const double tx = fx - x0;
        const double top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
        const double bot = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
        dst[y * ow + x] = top * (1.0 - ty) + bot * ty;
      }
    }
  }
  return out;
}

double window_sum_grid_f64(const std::vector<double>& p, int w, int h, const std::vector<float>& kw, int radius,
                           int x, int y) {
  const int side = 2 * radius + 1;
  double acc = 0.0;
  for (int dy = -radius; dy <= radius; ++dy) {
    const int sy = clampi(y + dy, h - 1);
    for (int dx = -radius; dx <= radius; ++dx) {
      acc += static_cast<double>(kw[static_cast<std::size_t>(dy + radius) * side + (dx + radius)]) *
             p[static_cast<std::size_t>(sy) * w + clampi(x + dx, w - 1)];
    }
  }
  return acc;
}

double gauss_loss_grid_f64(const std::vector<double>& p, int w, int h,
                           const std::vector<std::pair<int, int>>& active, const std::vector<float>& kw, int radius,
                           float eps) {
  if (active.empty()) return 0.0;
  std::vector<double> glp(active.size()), gs(active.size());
  double gs_sum = 0.0;
  for (std::size_t i = 0; i < active.size(); ++i) {
    const auto [x, y] = active[i];
    const double ws = window_sum_grid_f64(p, w, h, kw, radius, x, y);
    const double pc = p[static_cast<std::size_t>(y) * w + x];
    glp[i] = 1.0 - pc / (ws + eps);
    gs[i] = pc * pc / (ws + eps);
    gs_sum += gs[i];
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < active.size(); ++i) loss += glp[i] * (gs[i] / (gs_sum + eps));
  return loss;
}

}  // namespace

double gauss_loss_f64(const Image& p, const std::vector<std::pair<int, int>>& active, int radius, float sigma,
                      float eps) {
  const auto kw = gauss_kernel_weights(radius, sigma);
  std::vector<double> grid(p.v.begin(), p.v.end());
  return gauss_loss_grid_f64(grid, p.w, p.h, active, kw, radius, eps);
}

double gauss_score_sum_f64(const Image& p, const std::vector<std::pair<int, int>>& pixels, int radius, float sigma,
                           float eps) {
  const auto kw = gauss_kernel_weights(radius, sigma);
  std::vector<double> grid(p.v.begin(), p.v.end());
  double total = 0.0;
  for (const auto& [x, y] : pixels) {
    const double ws = window_sum_grid_f64(grid, p.w, p.h, kw, radius, x, y);
    const double pc = grid[static_cast<std::size_t>(y) * p.w + x];
    total += pc * pc / (ws + eps);
  }
  return total;
}

double sobelnet_gauss_loss_f64(const std::array<Image, 3>& level_edges, int out_h, int out_w,
                               const sobelkey::SobelNetParams& params,
                               const std::vector<std::pair<int, int>>& active, int radius, float sigma, float eps) {
  const int c = params.cfg.channels, k = params.cfg.kernel;
  const double slope = params.cfg.leaky_slope;
  std::vector<double> fused;
  for (const Image& edge : level_edges) {
    std::vector<double> x(edge.v.begin(), edge.v.end());
    x = conv_same_f64(x, 1, edge.h, edge.w, params.conv1_w.data(), c, k, params.conv1_b.data());
    leaky_f64(x, slope);
    x = conv_same_f64(x, c, edge.h, edge.w, params.conv2_w.data(), c, k, params.conv2_b.data());
    leaky_f64(x, slope);
    x = conv_same_f64(x, c, edge.h, edge.w, params.conv3_w.data(), c, k, params.conv3_b.data());
    leaky_f64(x, slope);
    x = resize_bilinear_f64(x, c, edge.h, edge.w, out_h, out_w);
    if (fused.empty()) fused.assign(x.size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) fused[i] += x[i];
  }
  std::vector<double> score = conv_same_f64(fused, c, out_h, out_w, params.conv4_w.data(), 1, k,
                                            params.conv4_b.data());
  for (double& v : score) v = v > 0.0 ? v : 0.0;
  double mx = 0.0;
  for (double v : score) mx = std::max(mx, v);
  if (mx > 0.0) {
    for (double& v : score) v /= mx;
  }
  const auto kw = gauss_kernel_weights(radius, sigma);
  return gauss_loss_grid_f64(score, out_w, out_h, active, kw, radius, eps);
}

double desnet_batch_loss_f64(const GrayImage& img, const sobelkey::DesNetParams& params,
                             const std::vector<std::pair<float, float>>& pts1,
                             const std::vector<std::pair<float, float>>& pts2, float m, float gamma) {
  const int k = params.cfg.kernel;
  const double slope = params.cfg.leaky_slope;
  std::vector<double> x(img.v.begin(), img.v.end());
  int cin = 1;
  for (std::size_t layer = 0; layer < params.w.size(); ++layer) {
    const int cout = params.cfg.channels[layer];
    x = conv_same_f64(x, cin, img.h, img.w, params.w[layer].data(), cout, k, params.b[layer].data());
    if (layer + 1 < params.w.size()) leaky_f64(x, slope);
    cin = cout;
  }
  const int d = cin;
  const std::size_t plane = static_cast<std::size_t>(img.h) * img.w;
  // per-pixel unit normalization with the e1 guard
  for (std::size_t p = 0; p < plane; ++p) {
    double norm2 = 0.0;
    for (int ch = 0; ch < d; ++ch) norm2 += x[ch * plane + p] * x[ch * plane + p];
    const double n = std::sqrt(norm2);
    if (n < 1e-12) {
      for (int ch = 0; ch < d; ++ch) x[ch * plane + p] = ch == 0 ? 1.0 : 0.0;
    } else {
      for (int ch = 0; ch < d; ++ch) x[ch * plane + p] /= n;
    }
  }
  auto sample = [&](float px, float py) {
    const int x0 = static_cast<int>(px), y0 = static_cast<int>(py);
    const int x1 = std::min(x0 + 1, img.w - 1), y1 = std::min(y0 + 1, img.h - 1);
    const double tx = px - x0, ty = py - y0;
    std::vector<double> v(static_cast<std::size_t>(d));
    double norm2 = 0.0;
    for (int ch = 0; ch < d; ++ch) {
      const double* p = x.data() + static_cast<std::size_t>(ch) * plane;
      const double top = p[y0 * img.w + x0] * (1.0 - tx) + p[y0 * img.w + x1] * tx;
      const double bot = p[y1 * img.w + x0] * (1.0 - tx) + p[y1 * img.w + x1] * tx;
      v[static_cast<std::size_t>(ch)] = top * (1.0 - ty) + bot * ty;
      norm2 += v[static_cast<std::size_t>(ch)] * v[static_cast<std::size_t>(ch)];
    }
    const double n = std::sqrt(norm2);
    if (n < 1e-12) {
      std::fill(v.begin(), v.end(), 0.0);
      v[0] = 1.0;
    } else {
      for (double& e : v) e /= n;
    }
    return v;
  };
  std::vector<std::vector<double>> d1, d2;
  for (const auto& [px, py] : pts1) d1.push_back(sample(px, py));
  for (const auto& [px, py] : pts2) d2.push_back(sample(px, py));
  const int n = static_cast<int>(d1.size());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double tp = 0.0, tn = 0.0;
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int ch = 0; ch < d; ++ch) s += d1[static_cast<std::size_t>(i)][static_cast<std::size_t>(ch)] *
                                          d2[static_cast<std::size_t>(j)][static_cast<std::size_t>(ch)];
      if (j == i) {
        const double ap = std::max(0.0, 1.0 + m - s);
        tp += std::exp(-gamma * ap * (s - (1.0 - m)));
      } else {
        const double an = std::max(0.0, s + m);
        tn += std::exp(gamma * an * (s - m));
      }
    }
    total += std::log(1.0 + tn * tp);
  }
  return total / n;
}

CornerScene make_corner_scene(int size, double base_angle_deg, double open_angle_deg, double stroke_width,
                              double stroke_len, double mid_lo, double mid_hi) {
  CornerScene scene;
  scene.edge_map = Image(size, size, 0.0f);
  const double cx = size / 2, cy = size / 2;
  scene.corner = {size / 2, size / 2};
  const double deg = 3.14159265358979323846 / 180.0;
  const double a1 = base_angle_deg * deg;
  const double a2 = (base_angle_deg + open_angle_deg) * deg;

  auto draw_ray = [&](double angle) {
    const double dx = std::cos(angle), dy = std::sin(angle);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        // butt end at the vertex: pixels behind the corner get no coverage
        // from this ray, so the stroke terminates exactly at the corner
        const double t_raw = (x - cx) * dx + (y - cy) * dy;
        if (t_raw < 0.0) continue;
        const double t = t_raw > stroke_len ? stroke_len : t_raw;
        const double px = cx + t * dx, py = cy + t * dy;
        const double dist = std::sqrt((x - px) * (x - px) + (y - py) * (y - py));
        const double cov = std::min(1.0, std::max(0.0, stroke_width / 2.0 + 0.5 - dist));
        float& v = scene.edge_map.at(x, y);
        v = std::max(v, static_cast<float>(cov));
      }
    }
    for (double t = mid_lo; t <= mid_hi; t += 1.0) {
      const int px = static_cast<int>(std::lround(cx + t * dx));
      const int py = static_cast<int>(std::lround(cy + t * dy));
      if (px >= 0 && py >= 0 && px < size && py < size) {
        const std::pair<int, int> p{px, py};
        if (scene.mid_stroke.empty() || scene.mid_stroke.back() != p) scene.mid_stroke.push_back(p);
      }
    }
  };
  draw_ray(a1);
  draw_ray(a2);
  return scene;
}

}  // namespace oracles
