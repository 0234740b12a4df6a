#pragma once

#include <cstdint>
#include <vector>

#include "sobelkey/homography.hpp"
#include "sobelkey/image.hpp"

namespace sobelkey {

struct PhotometricConfig {
  float contrast_lo = 0.7f, contrast_hi = 1.3f;
  float brightness_lo = -0.1f, brightness_hi = 0.1f;
  float hue_deg = 15.0f;  // +- range; drawn but inert on grayscale input
};

struct AugmentConfig {
  float corner_jitter = 0.15f;  // fraction of W/H per corner per axis
  float rot_lo_deg = -90.0f, rot_hi_deg = 90.0f;
  float scale_lo = 0.85f, scale_hi = 1.15f;
  PhotometricConfig photo;

  static AugmentConfig detector_defaults() { return {}; }
  static AugmentConfig descriptor_defaults() {
    AugmentConfig c;
    c.rot_lo_deg = 0.0f;  // no rotation for descriptor training
    c.rot_hi_deg = 0.0f;
    return c;
  }
  static AugmentConfig identity() {
    AugmentConfig c;
    c.corner_jitter = 0.0f;
    c.rot_lo_deg = c.rot_hi_deg = 0.0f;
    c.scale_lo = c.scale_hi = 1.0f;
    c.photo = {1.0f, 1.0f, 0.0f, 0.0f, 0.0f};
    return c;
  }
  void validate() const;
};

// Contrast about mid-gray, brightness shift, clamped to [0,1]. The hue draw
// is consumed to keep the seed stream layout fixed.
GrayImage photometric_jitter(const GrayImage& img, const PhotometricConfig& cfg, std::uint64_t seed);

// H = S * R * P: corner-jitter homography, then rotation about the image
// center, then scaling about the center. Non-convex corner draws resample
// (10 attempts).
Homography random_homography(int w, int h, const AugmentConfig& cfg, std::uint64_t seed);

struct TrainingPair {
  GrayImage original;     // photometrically jittered copy
  GrayImage transformed;  // independently jittered copy, warped by h
  std::vector<std::uint8_t> valid;
  Homography h;  // original -> transformed coordinates
};

TrainingPair make_training_pair(const GrayImage& img, const AugmentConfig& cfg, std::uint64_t seed);

}  // namespace sobelkey
