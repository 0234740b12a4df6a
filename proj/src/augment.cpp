#include "sobelkey/augment.hpp"

#include <cmath>

#include "sobelkey/rng.hpp"

namespace sobelkey {

void AugmentConfig::validate() const {
  if (!(corner_jitter >= 0.0f && corner_jitter <= 0.3f)) {
    throw ImageError("augment: corner_jitter must be in [0, 0.3]");
  }
  if (!(scale_lo > 0.5f && scale_hi < 2.0f && scale_lo <= scale_hi)) {
    throw ImageError("augment: scale_range must lie within (0.5, 2)");
  }
  if (rot_lo_deg > rot_hi_deg) throw ImageError("augment: rotation range inverted");
  if (!(photo.contrast_lo > 0.0f && photo.contrast_lo <= photo.contrast_hi)) {
    throw ImageError("augment: contrast range invalid");
  }
  if (photo.brightness_lo > photo.brightness_hi) throw ImageError("augment: brightness range inverted");
}

GrayImage photometric_jitter(const GrayImage& img, const PhotometricConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const double contrast = rng.uniform(cfg.contrast_lo, cfg.contrast_hi);
  const double brightness = rng.uniform(cfg.brightness_lo, cfg.brightness_hi);
  (void)rng.uniform(-cfg.hue_deg, cfg.hue_deg);  // inert on grayscale
  if (contrast == 1.0 && brightness == 0.0) return img;
  GrayImage out(img.w, img.h);
  for (std::size_t i = 0; i < img.size(); ++i) {
    double v = (static_cast<double>(img.v[i]) - 0.5) * contrast + 0.5 + brightness;
    out.v[i] = static_cast<float>(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
  }
  return out;
}

namespace {

bool convex_quad(const std::array<std::array<double, 2>, 4>& q) {
  for (int i = 0; i < 4; ++i) {
    const auto& a = q[static_cast<std::size_t>(i)];
    const auto& b = q[static_cast<std::size_t>((i + 1) % 4)];
    const auto& c = q[static_cast<std::size_t>((i + 2) % 4)];
    const double cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
    if (cross <= 0.0) return false;  // corner order is clockwise in image coords
  }
  return true;
}

Homography about_center(double w, double h, double cos_t, double sin_t, double scale) {
  const double cx = (w - 1.0) / 2.0, cy = (h - 1.0) / 2.0;
  // T(c) * scale*R * T(-c), composed symbolically
  return Homography::from_matrix({scale * cos_t, -scale * sin_t, cx - scale * (cos_t * cx - sin_t * cy),
                                  scale * sin_t, scale * cos_t, cy - scale * (sin_t * cx + cos_t * cy),
                                  0.0, 0.0, 1.0});
}

}  // namespace

Homography random_homography(int w, int h, const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (w < 2 || h < 2) throw ImageError("random_homography: image too small");
  Rng rng(seed);

  const std::array<std::array<double, 2>, 4> corners = {{{0.0, 0.0},
                                                         {static_cast<double>(w - 1), 0.0},
                                                         {static_cast<double>(w - 1), static_cast<double>(h - 1)},
                                                         {0.0, static_cast<double>(h - 1)}}};
  Homography p = Homography::identity();
  if (cfg.corner_jitter > 0.0f) {
    const double jx = cfg.corner_jitter * w, jy = cfg.corner_jitter * h;
    bool ok = false;
    for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
      std::array<std::array<double, 2>, 4> moved;
      for (int i = 0; i < 4; ++i) {
        moved[static_cast<std::size_t>(i)][0] = corners[static_cast<std::size_t>(i)][0] + rng.uniform(-jx, jx);
        moved[static_cast<std::size_t>(i)][1] = corners[static_cast<std::size_t>(i)][1] + rng.uniform(-jy, jy);
      }
      if (convex_quad(moved)) {
        p = Homography::from_corners(corners, moved);
        ok = true;
      }
    }
    if (!ok) throw ImageError("random_homography: corner draw stayed degenerate after 10 attempts");
  }

  const double theta = rng.uniform(cfg.rot_lo_deg, cfg.rot_hi_deg) * 3.141592653589793 / 180.0;
  const double scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  Homography r = theta == 0.0 ? Homography::identity() : about_center(w, h, std::cos(theta), std::sin(theta), 1.0);
  Homography s = scale == 1.0 ? Homography::identity() : about_center(w, h, 1.0, 0.0, scale);
  return s.compose(r.compose(p));
}

TrainingPair make_training_pair(const GrayImage& img, const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  TrainingPair pair;
  pair.original = photometric_jitter(img, cfg.photo, mix_seed(seed, 1));
  GrayImage second = photometric_jitter(img, cfg.photo, mix_seed(seed, 2));
  pair.h = random_homography(img.w, img.h, cfg, mix_seed(seed, 3));
  WarpResult warped = warp_map(second, pair.h, img.h, img.w);
  pair.transformed = std::move(warped.map);
  pair.valid = std::move(warped.valid);
  return pair;
}

}  // namespace sobelkey
