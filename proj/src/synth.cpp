#include "sobelkey/synth.hpp"

#include <algorithm>
#include <cmath>

#include "sobelkey/rng.hpp"

namespace sobelkey {

namespace {

struct Vec2 {
  double x, y;
};

// 4x4 subsample coverage of a convex polygon (vertices in consistent order)
double polygon_coverage(const std::vector<Vec2>& poly, int px, int py) {
  int inside = 0;
  for (int sy = 0; sy < 4; ++sy) {
    for (int sx = 0; sx < 4; ++sx) {
      const double x = px - 0.5 + (sx + 0.5) / 4.0;
      const double y = py - 0.5 + (sy + 0.5) / 4.0;
      bool in = true;
      for (std::size_t i = 0; i < poly.size() && in; ++i) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[(i + 1) % poly.size()];
        if ((b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x) < 0.0) in = false;
      }
      if (in) ++inside;
    }
  }
  return inside / 16.0;
}

void blend(GrayImage& img, int x, int y, float color, double coverage) {
  if (x < 0 || y < 0 || x >= img.w || y >= img.h || coverage <= 0.0) return;
  float& v = img.at(x, y);
  v = static_cast<float>(v * (1.0 - coverage) + color * coverage);
}

void draw_polygon(GrayImage& img, Rng& rng) {
  const double cx = rng.uniform(0.1, 0.9) * img.w;
  const double cy = rng.uniform(0.1, 0.9) * img.h;
  const double rad = rng.uniform(0.05, 0.25) * std::min(img.w, img.h);
  const int nv = rng.uniform_int(3, 7);
  std::vector<double> angles(static_cast<std::size_t>(nv));
  for (double& a : angles) a = rng.uniform(0.0, 6.283185307179586);
  std::sort(angles.begin(), angles.end());
  std::vector<Vec2> poly;
  for (double a : angles) {
    const double rr = rad * rng.uniform(0.6, 1.0);
    poly.push_back({cx + rr * std::cos(a), cy + rr * std::sin(a)});
  }
  // contrast against the local background keeps the corners detectable
  const float bg = img.at(static_cast<int>(cx), static_cast<int>(cy));
  const float color = bg > 0.5f ? static_cast<float>(rng.uniform(0.0, bg - 0.4))
                                : static_cast<float>(rng.uniform(bg + 0.4, 1.0));
  double min_x = poly[0].x, max_x = poly[0].x, min_y = poly[0].y, max_y = poly[0].y;
  for (const Vec2& p : poly) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  for (int y = static_cast<int>(min_y) - 1; y <= static_cast<int>(max_y) + 1; ++y) {
    for (int x = static_cast<int>(min_x) - 1; x <= static_cast<int>(max_x) + 1; ++x) {
      blend(img, x, y, color, polygon_coverage(poly, x, y));
    }
  }
}

void draw_checkerboard(GrayImage& img, Rng& rng) {
  const int cell = rng.uniform_int(6, 14);
  const int cells_x = rng.uniform_int(4, std::max(5, img.w / cell));
  const int cells_y = rng.uniform_int(4, std::max(5, img.h / cell));
  const int x0 = rng.uniform_int(0, std::max(0, img.w - cells_x * cell));
  const int y0 = rng.uniform_int(0, std::max(0, img.h - cells_y * cell));
  const float c0 = static_cast<float>(rng.uniform(0.0, 0.35));
  const float c1 = static_cast<float>(rng.uniform(0.65, 1.0));
  for (int cy = 0; cy < cells_y; ++cy) {
    for (int cx = 0; cx < cells_x; ++cx) {
      const float color = ((cx + cy) & 1) ? c1 : c0;
      for (int y = y0 + cy * cell; y < y0 + (cy + 1) * cell; ++y) {
        for (int x = x0 + cx * cell; x < x0 + (cx + 1) * cell; ++x) {
          blend(img, x, y, color, 1.0);
        }
      }
    }
  }
}

void draw_segment(GrayImage& img, Rng& rng) {
  const Vec2 a{rng.uniform(0.0, 1.0) * (img.w - 1), rng.uniform(0.0, 1.0) * (img.h - 1)};
  const Vec2 b{rng.uniform(0.0, 1.0) * (img.w - 1), rng.uniform(0.0, 1.0) * (img.h - 1)};
  const double half = rng.uniform(0.5, 1.5);
  const float bg = img.at(static_cast<int>((a.x + b.x) / 2), static_cast<int>((a.y + b.y) / 2));
  const float color = bg > 0.5f ? static_cast<float>(rng.uniform(0.0, bg - 0.4))
                                : static_cast<float>(rng.uniform(bg + 0.4, 1.0));
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  const int min_x = static_cast<int>(std::floor(std::min(a.x, b.x) - half - 1));
  const int max_x = static_cast<int>(std::ceil(std::max(a.x, b.x) + half + 1));
  const int min_y = static_cast<int>(std::floor(std::min(a.y, b.y) - half - 1));
  const int max_y = static_cast<int>(std::ceil(std::max(a.y, b.y) + half + 1));
  for (int y = min_y; y <= max_y; ++y) {
    for (int x = min_x; x <= max_x; ++x) {
      double t = len2 > 0.0 ? ((x - a.x) * dx + (y - a.y) * dy) / len2 : 0.0;
      t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
      const double px = a.x + t * dx, py = a.y + t * dy;
      const double dist = std::sqrt((x - px) * (x - px) + (y - py) * (y - py));
      blend(img, x, y, color, std::clamp(half + 0.5 - dist, 0.0, 1.0));
    }
  }
}

}  // namespace

GrayImage synth_image(int height, int width, std::uint64_t seed) {
  if (height < 32 || width < 32) throw ImageError("synth_image: size must be >= 32");
  Rng rng(seed);
  GrayImage img(width, height);
  // shaded background
  const double base = rng.uniform(0.25, 0.75);
  const double slope = rng.uniform(0.0, 0.2);
  const double dir = rng.uniform(0.0, 6.283185307179586);
  const double gx = std::cos(dir) * slope / width, gy = std::sin(dir) * slope / height;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      img.at(x, y) = static_cast<float>(std::clamp(base + gx * x + gy * y, 0.0, 1.0));
    }
  }
  const int elements = rng.uniform_int(3, 10);
  int boards = 0;
  for (int e = 0; e < elements; ++e) {
    const int kind = rng.uniform_int(0, 4);
    switch (kind) {
      case 0:
      case 1:
        draw_polygon(img, rng);
        break;
      case 2:
      case 3:
        draw_checkerboard(img, rng);
        ++boards;
        break;
      default:
        draw_segment(img, rng);
        break;
    }
  }
  while (boards < 2) {  // keeps corner density trainable
    draw_checkerboard(img, rng);
    ++boards;
  }
  for (float& v : img.v) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

std::vector<GrayImage> synth_dataset(int n, int height, int width, std::uint64_t seed) {
  if (n < 1) throw ImageError("synth_dataset: n must be >= 1");
  if (height < 64 || width < 64) throw ImageError("synth_dataset: size must be >= 64");
  std::vector<GrayImage> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(synth_image(height, width, mix_seed(seed, static_cast<std::uint64_t>(i))));
  return out;
}

}  // namespace sobelkey
