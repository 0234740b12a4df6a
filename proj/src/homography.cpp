#include "sobelkey/homography.hpp"

#include <cmath>
#include <stdexcept>

namespace sobelkey {

namespace {

constexpr double kDetEps = 1e-9;

// Gaussian elimination with partial pivoting, A is n x n row-major.
void solve_linear(std::vector<double>& a, std::vector<double>& b, int n) {
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::fabs(a[r * n + col]) > std::fabs(a[piv * n + col])) piv = r;
    }
    if (std::fabs(a[piv * n + col]) < 1e-12) {
      throw ImageError("homography: degenerate correspondence system");
    }
    if (piv != col) {
      for (int c = 0; c < n; ++c) std::swap(a[piv * n + c], a[col * n + c]);
      std::swap(b[piv], b[col]);
    }
    for (int r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / a[col * n + col];
      for (int c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < n; ++c) s -= a[r * n + c] * b[c];
    b[r] = s / a[r * n + r];
  }
}

}  // namespace

double Homography::det() const {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Homography Homography::from_matrix(const std::array<double, 9>& raw) {
  Homography h;
  h.m = raw;
  if (std::fabs(h.m[8]) < 1e-12) throw ImageError("homography: h33 is zero");
  for (double& x : h.m) x /= raw[8];
  if (std::fabs(h.det()) < kDetEps) throw ImageError("homography: matrix is singular");
  return h;
}

Homography Homography::from_corners(const std::array<std::array<double, 2>, 4>& src,
                                    const std::array<std::array<double, 2>, 4>& dst) {
  // unknowns h11..h32, h33 fixed at 1
  std::vector<double> a(64, 0.0), b(8, 0.0);
  for (int i = 0; i < 4; ++i) {
    const double x = src[static_cast<std::size_t>(i)][0], y = src[static_cast<std::size_t>(i)][1];
    const double u = dst[static_cast<std::size_t>(i)][0], v = dst[static_cast<std::size_t>(i)][1];
    double* r0 = &a[static_cast<std::size_t>(2 * i) * 8];
    double* r1 = &a[static_cast<std::size_t>(2 * i + 1) * 8];
    r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -u * x; r0[7] = -u * y;
    r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -v * x; r1[7] = -v * y;
    b[static_cast<std::size_t>(2 * i)] = u;
    b[static_cast<std::size_t>(2 * i + 1)] = v;
  }
  solve_linear(a, b, 8);
  return from_matrix({b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7], 1.0});
}

void Homography::apply(double x, double y, double& ox, double& oy) const {
  const double w = m[6] * x + m[7] * y + m[8];
  ox = (m[0] * x + m[1] * y + m[2]) / w;
  oy = (m[3] * x + m[4] * y + m[5]) / w;
}

Homography Homography::inverse() const {
  const double d = det();
  if (std::fabs(d) < kDetEps) throw ImageError("homography: singular, cannot invert");
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
  return from_matrix(inv);
}

Homography Homography::compose(const Homography& rhs) const {
  std::array<double, 9> out{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += m[static_cast<std::size_t>(r * 3 + k)] * rhs.m[static_cast<std::size_t>(k * 3 + c)];
      out[static_cast<std::size_t>(r * 3 + c)] = s;
    }
  }
  return from_matrix(out);
}

WarpResult warp_map(const Image& src, const Homography& h, int out_h, int out_w) {
  if (src.w <= 0 || src.h <= 0) throw ImageError("warp_map: empty source");
  if (std::fabs(h.det()) < kDetEps) throw ImageError("warp_map: singular homography");
  const Homography inv = h.inverse();
  WarpResult res;
  res.map = Image(out_w, out_h);
  res.valid.assign(static_cast<std::size_t>(out_w) * out_h, 0);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      double sx, sy;
      inv.apply(x, y, sx, sy);
      if (sx < 0.0 || sy < 0.0 || sx > src.w - 1.0 || sy > src.h - 1.0) continue;
      const int x0 = static_cast<int>(sx);
      const int y0 = static_cast<int>(sy);
      const int x1 = x0 + 1 < src.w ? x0 + 1 : src.w - 1;
      const int y1 = y0 + 1 < src.h ? y0 + 1 : src.h - 1;
      const double tx = sx - x0, ty = sy - y0;
      const double top = src.at(x0, y0) * (1.0 - tx) + src.at(x1, y0) * tx;
      const double bot = src.at(x0, y1) * (1.0 - tx) + src.at(x1, y1) * tx;
      res.map.at(x, y) = static_cast<float>(top * (1.0 - ty) + bot * ty);
      res.valid[static_cast<std::size_t>(y) * out_w + x] = 1;
    }
  }
  return res;
}

}  // namespace sobelkey
