#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sobelkey/image.hpp"
#include "sobelkey/tensor.hpp"

namespace sobelkey {

struct SobelNetConfig {
  int kernel = 5;    // all four conv layers
  int channels = 8;  // per-level stack width
  float leaky_slope = 0.1f;
};

// Weights are shared across the three pyramid levels.
struct SobelNetParams {
  SobelNetConfig cfg;
  Tensor conv1_w, conv1_b;  // 1 -> c
  Tensor conv2_w, conv2_b;  // c -> c
  Tensor conv3_w, conv3_b;  // c -> c
  Tensor conv4_w, conv4_b;  // c -> 1 fusion head

  static SobelNetParams init(const SobelNetConfig& cfg, std::uint64_t seed);
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  std::vector<Tensor> trainable() const;
  void set_requires_grad(bool on);
  // deep copy with fresh leaves (used for per-thread gradient graphs)
  SobelNetParams clone() const;
};

// Full-resolution score map: pyramid -> Sobel -> shared 3-conv stack per
// level -> upscale -> sum -> fusion conv -> ReLU -> divide by max
// ("norm_output"). Differentiable through the conv stack; the Sobel
// front-end is fixed preprocessing. Requires min(h,w) >= 32.
Tensor sobelnet_forward(const GrayImage& img, const SobelNetParams& params);

// no-grad convenience
ScoreMap sobelnet_score(const GrayImage& img, const SobelNetParams& params);

// values < ratio * max set to zero, others kept
ScoreMap threshold_scores(const ScoreMap& map, float ratio);

struct Keypoint {
  float x = 0, y = 0, score = 0;
};

struct KeypointSet {
  int w = 0, h = 0;
  std::vector<Keypoint> pts;  // descending score, ties by (y,x)
};

// Strict-local-max NMS over a (2*radius+1)^2 window, equal values won by the
// smaller (y,x) pixel.
KeypointSet nms(const ScoreMap& map, int radius);

struct DetectConfig {
  float ratio = 0.1f;
  int nms_radius = 7;
  int max_kpts = 5000;
};

KeypointSet detect(const GrayImage& img, const SobelNetParams& params, const DetectConfig& cfg);

// One conv layer's multiplication count: cout * cin * k^2 * out_pixels.
long long conv_multiplications(int cout, int cin, int kernel, long long out_pixels);

// Conv multiplications only (handcrafted filters and resizes excluded),
// using the ideal pyramid areas HW, HW/2, HW/4.
long long count_multiplications(const SobelNetConfig& cfg, int height, int width);

// text format: "# sobelkey kpts v1 W H" then "x y score" with 6 decimals
void save_keypoints(const std::filesystem::path& path, const KeypointSet& kps);
KeypointSet load_keypoints(const std::filesystem::path& path);

}  // namespace sobelkey
