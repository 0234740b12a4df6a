#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sobelkey/homography.hpp"
#include "sobelkey/image.hpp"
#include "sobelkey/tensor.hpp"

namespace sobelkey {

// Full-resolution conv stack on the raw grayscale image; the last entry of
// `channels` is the descriptor dimension. No activation after the last conv;
// per-pixel L2 normalization closes the forward pass.
struct DesNetConfig {
  std::vector<int> channels{16, 16, 32, 32};
  int kernel = 3;
  float leaky_slope = 0.1f;
};

struct DesNetParams {
  DesNetConfig cfg;
  std::vector<Tensor> w, b;

  static DesNetParams init(const DesNetConfig& cfg, std::uint64_t seed);
  std::vector<std::pair<std::string, Tensor>> named_tensors() const;
  std::vector<Tensor> trainable() const;
  void set_requires_grad(bool on);
  DesNetParams clone() const;
  int dim() const { return cfg.channels.back(); }
};

// [1,D,H,W] with every pixel's descriptor at unit L2 norm (zero activations
// fall back to e1). Differentiable.
Tensor desnet_forward(const GrayImage& img, const DesNetParams& params);

// H x W x D row-major descriptor field
struct DescriptorMap {
  int w = 0, h = 0, d = 0;
  std::vector<float> v;

  const float* at(int x, int y) const { return v.data() + (static_cast<std::size_t>(y) * w + x) * d; }
};

DescriptorMap desnet_descriptors(const GrayImage& img, const DesNetParams& params);

// Bilinear per-channel interpolation then re-normalization. Points must lie
// inside [0,W-1] x [0,H-1]; violations raise an error naming the point.
std::vector<std::vector<float>> sample_descriptors(const DescriptorMap& dmap,
                                                   const std::vector<std::pair<float, float>>& pts);

struct CandidateSet {
  std::vector<std::pair<int, int>> pos;  // (x, y)
};

// Uniform sample without replacement from pixels with score > alpha * max,
// greedily keeping points more than min_dist apart (Euclidean), until count
// or pool exhaustion. Deterministic per seed; empty pool gives an empty set.
CandidateSet select_candidates(const ScoreMap& score, float alpha, float min_dist, int count, std::uint64_t seed);

// Circle loss over positive/negative similarity lists:
//   L = log(1 + sum_j e^{g*an_j*(sn_j-m)} * sum_i e^{-g*ap_i*(sp_i-(1-m))})
// with ap = max(0, 1+m-sp), an = max(0, sn+m).
double circle_loss(const std::vector<float>& sim_pos, const std::vector<float>& sim_neg, float m, float gamma);
Tensor circle_loss(const Tensor& sim_pos, const Tensor& sim_neg, float m, float gamma);

// Mean per-candidate circle loss. Positive pair for candidate i couples its
// descriptor in map 1 with the descriptor at its H-mapped position in map 2;
// the other mapped candidates act as negatives. Candidates whose mapped
// position leaves image 2 are dropped; fewer than 2 survivors is an error.
Tensor descriptor_batch_loss(const Tensor& dmap1, const Tensor& dmap2, const CandidateSet& cands,
                             const Homography& h, float m, float gamma);

long long count_multiplications(const DesNetConfig& cfg, int height, int width);

// binary format: magic "SKDC", u32 version=1, u32 count, u32 D, then
// count x (f32 x, f32 y, D x f32), little-endian
void save_descriptors(const std::filesystem::path& path, const std::vector<std::pair<float, float>>& pts,
                      const std::vector<std::vector<float>>& descs);
struct DescriptorFile {
  std::vector<std::pair<float, float>> pts;
  std::vector<std::vector<float>> descs;
};
DescriptorFile load_descriptors(const std::filesystem::path& path);

}  // namespace sobelkey
