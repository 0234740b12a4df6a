#include "sobelkey/detector.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "sobelkey/rng.hpp"

namespace sobelkey {

namespace {

Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
  std::size_t n = 1;
  for (int e : shape) n *= static_cast<std::size_t>(e);
  std::vector<float> data(n);
  const double std_dev = std::sqrt(2.0 / fan_in);
  for (float& v : data) v = static_cast<float>(rng.normal() * std_dev);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

}  // namespace

SobelNetParams SobelNetParams::init(const SobelNetConfig& cfg, std::uint64_t seed) {
  if (cfg.kernel < 1 || cfg.kernel % 2 == 0 || cfg.channels < 1) {
    throw TensorError("sobelnet: kernel must be odd and channels >= 1");
  }
  Rng rng(seed);
  const int k = cfg.kernel, c = cfg.channels;
  SobelNetParams p;
  p.cfg = cfg;
  p.conv1_w = he_normal({c, 1, k, k}, k * k, rng);
  p.conv1_b = Tensor::zeros({c}, true);
  p.conv2_w = he_normal({c, c, k, k}, c * k * k, rng);
  p.conv2_b = Tensor::zeros({c}, true);
  p.conv3_w = he_normal({c, c, k, k}, c * k * k, rng);
  p.conv3_b = Tensor::zeros({c}, true);
  p.conv4_w = he_normal({1, c, k, k}, c * k * k, rng);
  p.conv4_b = Tensor::zeros({1}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> SobelNetParams::named_tensors() const {
  return {{"conv1.w", conv1_w}, {"conv1.b", conv1_b}, {"conv2.w", conv2_w}, {"conv2.b", conv2_b},
          {"conv3.w", conv3_w}, {"conv3.b", conv3_b}, {"conv4.w", conv4_w}, {"conv4.b", conv4_b}};
}

std::vector<Tensor> SobelNetParams::trainable() const {
  return {conv1_w, conv1_b, conv2_w, conv2_b, conv3_w, conv3_b, conv4_w, conv4_b};
}

namespace {

Tensor copy_leaf(const Tensor& t, bool requires_grad) {
  return Tensor::from_data(t.shape(), t.data(), requires_grad);
}

}  // namespace

void SobelNetParams::set_requires_grad(bool on) {
  for (Tensor* t : {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &conv3_w, &conv3_b, &conv4_w, &conv4_b}) {
    *t = copy_leaf(*t, on);
  }
}

SobelNetParams SobelNetParams::clone() const {
  SobelNetParams p;
  p.cfg = cfg;
  p.conv1_w = copy_leaf(conv1_w, conv1_w.requires_grad());
  p.conv1_b = copy_leaf(conv1_b, conv1_b.requires_grad());
  p.conv2_w = copy_leaf(conv2_w, conv2_w.requires_grad());
  p.conv2_b = copy_leaf(conv2_b, conv2_b.requires_grad());
  p.conv3_w = copy_leaf(conv3_w, conv3_w.requires_grad());
  p.conv3_b = copy_leaf(conv3_b, conv3_b.requires_grad());
  p.conv4_w = copy_leaf(conv4_w, conv4_w.requires_grad());
  p.conv4_b = copy_leaf(conv4_b, conv4_b.requires_grad());
  return p;
}

Tensor sobelnet_forward(const GrayImage& img, const SobelNetParams& params) {
  const int pad = (params.cfg.kernel - 1) / 2;
  const float slope = params.cfg.leaky_slope;
  const auto pyramid = build_pyramid(img);

  Tensor fused;
  for (const GrayImage& level : pyramid) {
    const EdgeMap edge = sobel_magnitude(level);
    Tensor x = Tensor::from_data({1, 1, edge.h, edge.w}, edge.v, false);
    x = leaky_activation(conv2d(x, params.conv1_w, params.conv1_b, 1, pad), slope);
    x = leaky_activation(conv2d(x, params.conv2_w, params.conv2_b, 1, pad), slope);
    x = leaky_activation(conv2d(x, params.conv3_w, params.conv3_b, 1, pad), slope);
    x = bilinear_resize(x, img.h, img.w);
    fused = fused.defined() ? add(fused, x) : x;
  }
  Tensor s = conv2d(fused, params.conv4_w, params.conv4_b, 1, pad);
  s = leaky_activation(s, 0.0f);  // ReLU clamp
  Tensor mx = max_reduce(s);
  if (mx.item() > 0.0f) s = div(s, mx);  // norm_output
  return s;
}

ScoreMap sobelnet_score(const GrayImage& img, const SobelNetParams& params) {
  NoGradGuard ng;
  Tensor s = sobelnet_forward(img, params);
  ScoreMap out(img.w, img.h);
  out.v = s.data();
  return out;
}

ScoreMap threshold_scores(const ScoreMap& map, float ratio) {
  if (!(ratio >= 0.0f && ratio < 1.0f)) throw ImageError("threshold_scores: ratio must be in [0,1)");
  float mx = 0.0f;
  for (float v : map.v) mx = v > mx ? v : mx;
  ScoreMap out = map;
  const float thr = ratio * mx;
  for (float& v : out.v) {
    if (v < thr) v = 0.0f;
  }
  return out;
}

KeypointSet nms(const ScoreMap& map, int radius) {
  const auto mask = local_max_mask(map, radius);
  KeypointSet out;
  out.w = map.w;
  out.h = map.h;
  for (int y = 0; y < map.h; ++y) {
    for (int x = 0; x < map.w; ++x) {
      if (mask[static_cast<std::size_t>(y) * map.w + x]) {
        out.pts.push_back({static_cast<float>(x), static_cast<float>(y), map.at(x, y)});
      }
    }
  }
  std::stable_sort(out.pts.begin(), out.pts.end(), [](const Keypoint& a, const Keypoint& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });
  return out;
}

KeypointSet detect(const GrayImage& img, const SobelNetParams& params, const DetectConfig& cfg) {
  if (cfg.max_kpts < 0) throw ImageError("detect: max_kpts must be >= 0");
  const ScoreMap score = sobelnet_score(img, params);
  KeypointSet kps = nms(threshold_scores(score, cfg.ratio), cfg.nms_radius);
  if (static_cast<int>(kps.pts.size()) > cfg.max_kpts) {
    kps.pts.resize(static_cast<std::size_t>(cfg.max_kpts));
  }
  return kps;
}

long long conv_multiplications(int cout, int cin, int kernel, long long out_pixels) {
  return static_cast<long long>(cout) * cin * kernel * kernel * out_pixels;
}

long long count_multiplications(const SobelNetConfig& cfg, int height, int width) {
  if (height < 1 || width < 1) throw ImageError("count_multiplications: bad size");
  const double hw = static_cast<double>(height) * width;
  const double k2 = static_cast<double>(cfg.kernel) * cfg.kernel;
  const double c = cfg.channels;
  // three shared per-level stacks at ideal areas 1, 1/2, 1/4, plus the head
  const double per_px_stack = k2 * (1.0 * c + c * c + c * c);
  const double levels = hw * (1.0 + 0.5 + 0.25);
  const double head = k2 * c * 1.0 * hw;
  return static_cast<long long>(std::llround(per_px_stack * levels + head));
}

void save_keypoints(const std::filesystem::path& path, const KeypointSet& kps) {
  std::ofstream out(path);
  if (!out) throw ImageError("keypoints: cannot write " + path.string());
  out << "# sobelkey kpts v1 " << kps.w << " " << kps.h << "\n";
  char line[96];
  for (const Keypoint& p : kps.pts) {
    std::snprintf(line, sizeof(line), "%.6f %.6f %.6f\n", p.x, p.y, p.score);
    out << line;
  }
  if (!out) throw ImageError("keypoints: write failed for " + path.string());
}

KeypointSet load_keypoints(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ImageError("keypoints: cannot open " + path.string());
  std::string tag1, tag2, tag3;
  KeypointSet kps;
  char hash = 0;
  if (!(in >> hash >> tag1 >> tag2 >> tag3 >> kps.w >> kps.h) || hash != '#' || tag1 != "sobelkey" ||
      tag2 != "kpts" || tag3 != "v1") {
    throw ImageError("keypoints: bad header in " + path.string());
  }
  Keypoint p;
  while (in >> p.x >> p.y >> p.score) {
    if (p.x < 0 || p.y < 0 || p.x >= kps.w || p.y >= kps.h) {
      throw ImageError("keypoints: out-of-bounds point in " + path.string());
    }
    kps.pts.push_back(p);
  }
  return kps;
}

}  // namespace sobelkey
