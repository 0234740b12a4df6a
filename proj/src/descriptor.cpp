#include "sobelkey/descriptor.hpp"

#include <algorithm>
#include <cmath>
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

DesNetParams DesNetParams::init(const DesNetConfig& cfg, std::uint64_t seed) {
  if (cfg.channels.empty() || cfg.kernel < 1 || cfg.kernel % 2 == 0) {
    throw TensorError("desnet: needs at least one layer and an odd kernel");
  }
  Rng rng(seed);
  DesNetParams p;
  p.cfg = cfg;
  int cin = 1;
  for (int cout : cfg.channels) {
    if (cout < 1) throw TensorError("desnet: channel counts must be >= 1");
    p.w.push_back(he_normal({cout, cin, cfg.kernel, cfg.kernel}, cin * cfg.kernel * cfg.kernel, rng));
    p.b.push_back(Tensor::zeros({cout}, true));
    cin = cout;
  }
  return p;
}

std::vector<std::pair<std::string, Tensor>> DesNetParams::named_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    out.emplace_back("conv" + std::to_string(i + 1) + ".w", w[i]);
    out.emplace_back("conv" + std::to_string(i + 1) + ".b", b[i]);
  }
  return out;
}

std::vector<Tensor> DesNetParams::trainable() const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    out.push_back(w[i]);
    out.push_back(b[i]);
  }
  return out;
}

void DesNetParams::set_requires_grad(bool on) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = Tensor::from_data(w[i].shape(), w[i].data(), on);
    b[i] = Tensor::from_data(b[i].shape(), b[i].data(), on);
  }
}

DesNetParams DesNetParams::clone() const {
  DesNetParams p;
  p.cfg = cfg;
  for (std::size_t i = 0; i < w.size(); ++i) {
    p.w.push_back(Tensor::from_data(w[i].shape(), w[i].data(), w[i].requires_grad()));
    p.b.push_back(Tensor::from_data(b[i].shape(), b[i].data(), b[i].requires_grad()));
  }
  return p;
}

Tensor desnet_forward(const GrayImage& img, const DesNetParams& params) {
  if (img.w < 16 || img.h < 16) throw ImageError("desnet_forward: image too small (min 16)");
  const int pad = (params.cfg.kernel - 1) / 2;
  Tensor x = Tensor::from_data({1, 1, img.h, img.w}, img.v, false);
  for (std::size_t i = 0; i < params.w.size(); ++i) {
    x = conv2d(x, params.w[i], params.b[i], 1, pad);
    if (i + 1 < params.w.size()) x = leaky_activation(x, params.cfg.leaky_slope);
  }
  return l2_normalize_channels(x);
}

DescriptorMap desnet_descriptors(const GrayImage& img, const DesNetParams& params) {
  NoGradGuard ng;
  Tensor t = desnet_forward(img, params);
  DescriptorMap dm;
  dm.w = img.w;
  dm.h = img.h;
  dm.d = params.dim();
  dm.v.resize(static_cast<std::size_t>(dm.w) * dm.h * dm.d);
  const auto& td = t.data();
  const std::size_t plane = static_cast<std::size_t>(dm.w) * dm.h;
  for (std::size_t p = 0; p < plane; ++p) {
    for (int c = 0; c < dm.d; ++c) {
      dm.v[p * static_cast<std::size_t>(dm.d) + static_cast<std::size_t>(c)] =
          td[static_cast<std::size_t>(c) * plane + p];
    }
  }
  return dm;
}

std::vector<std::vector<float>> sample_descriptors(const DescriptorMap& dmap,
                                                   const std::vector<std::pair<float, float>>& pts) {
  std::vector<std::vector<float>> out;
  out.reserve(pts.size());
  for (const auto& [px, py] : pts) {
    if (!(px >= 0.0f && py >= 0.0f && px <= dmap.w - 1.0f && py <= dmap.h - 1.0f)) {
      throw ImageError("sample_descriptors: point (" + std::to_string(px) + "," + std::to_string(py) +
                       ") out of bounds");
    }
    const int x0 = static_cast<int>(px), y0 = static_cast<int>(py);
    const int x1 = x0 + 1 < dmap.w ? x0 + 1 : dmap.w - 1;
    const int y1 = y0 + 1 < dmap.h ? y0 + 1 : dmap.h - 1;
    const double tx = px - x0, ty = py - y0;
    std::vector<float> v(static_cast<std::size_t>(dmap.d));
    const float* p00 = dmap.at(x0, y0);
    const float* p10 = dmap.at(x1, y0);
    const float* p01 = dmap.at(x0, y1);
    const float* p11 = dmap.at(x1, y1);
    double norm2 = 0.0;
    for (int c = 0; c < dmap.d; ++c) {
      const double top = p00[c] * (1.0 - tx) + p10[c] * tx;
      const double bot = p01[c] * (1.0 - tx) + p11[c] * tx;
      const double val = top * (1.0 - ty) + bot * ty;
      v[static_cast<std::size_t>(c)] = static_cast<float>(val);
      norm2 += val * val;
    }
    const double n = std::sqrt(norm2);
    if (n < 1e-12) {
      std::fill(v.begin(), v.end(), 0.0f);
      v[0] = 1.0f;
    } else {
      for (float& x : v) x = static_cast<float>(x / n);
    }
    out.push_back(std::move(v));
  }
  return out;
}

CandidateSet select_candidates(const ScoreMap& score, float alpha, float min_dist, int count, std::uint64_t seed) {
  if (!(alpha >= 0.0f && alpha < 1.0f)) throw ImageError("select_candidates: alpha must be in [0,1)");
  if (count < 0 || min_dist < 0.0f) throw ImageError("select_candidates: bad count or min_dist");
  float mx = 0.0f;
  for (float v : score.v) mx = v > mx ? v : mx;
  std::vector<int> pool;
  if (mx > 0.0f) {
    const float thr = alpha * mx;
    for (int i = 0; i < static_cast<int>(score.size()); ++i) {
      if (score.v[static_cast<std::size_t>(i)] > thr) pool.push_back(i);
    }
  }
  Rng rng(seed);
  rng.shuffle(pool);
  CandidateSet out;
  const double min_d2 = static_cast<double>(min_dist) * min_dist;
  for (int idx : pool) {
    if (static_cast<int>(out.pos.size()) >= count) break;
    const int x = idx % score.w, y = idx / score.w;
    bool ok = true;
    for (const auto& [ax, ay] : out.pos) {
      const double dx = ax - x, dy = ay - y;
      if (dx * dx + dy * dy <= min_d2) {
        ok = false;
        break;
      }
    }
    if (ok) out.pos.emplace_back(x, y);
  }
  return out;
}

namespace {

void check_similarities(const char* who, const std::vector<float>& s) {
  for (float v : s) {
    if (!(v >= -1.001f && v <= 1.001f)) {
      throw TensorError(std::string(who) + ": similarity " + std::to_string(v) + " outside [-1,1]");
    }
  }
}

}  // namespace

double circle_loss(const std::vector<float>& sim_pos, const std::vector<float>& sim_neg, float m, float gamma) {
  if (sim_pos.empty() || sim_neg.empty()) throw TensorError("circle_loss: needs >=1 positive and >=1 negative");
  check_similarities("circle_loss", sim_pos);
  check_similarities("circle_loss", sim_neg);
  const double dp = 1.0 - m, dn = m;
  double tp = 0.0, tn = 0.0;
  for (float sp : sim_pos) {
    const double ap = std::max(0.0, 1.0 + m - sp);
    tp += std::exp(-gamma * ap * (sp - dp));
  }
  for (float sn : sim_neg) {
    const double an = std::max(0.0, static_cast<double>(sn) + m);
    tn += std::exp(gamma * an * (sn - dn));
  }
  return std::log(1.0 + tn * tp);
}

Tensor circle_loss(const Tensor& sim_pos, const Tensor& sim_neg, float m, float gamma) {
  if (sim_pos.numel() == 0 || sim_neg.numel() == 0) {
    throw TensorError("circle_loss: needs >=1 positive and >=1 negative");
  }
  check_similarities("circle_loss", sim_pos.data());
  check_similarities("circle_loss", sim_neg.data());
  // ap = relu(1+m-sp), an = relu(sn+m)
  Tensor ap = leaky_activation(add_scalar(mul_scalar(sim_pos, -1.0f), 1.0f + m), 0.0f);
  Tensor an = leaky_activation(add_scalar(sim_neg, m), 0.0f);
  Tensor tp = sum(exp(mul_scalar(mul(ap, add_scalar(sim_pos, -(1.0f - m))), -gamma)));
  Tensor tn = sum(exp(mul_scalar(mul(an, add_scalar(sim_neg, -m)), gamma)));
  return log(add_scalar(mul(tn, tp), 1.0f));
}

Tensor descriptor_batch_loss(const Tensor& dmap1, const Tensor& dmap2, const CandidateSet& cands,
                             const Homography& h, float m, float gamma) {
  if (dmap1.shape().size() != 4 || dmap2.shape().size() != 4 || dmap1.dim(1) != dmap2.dim(1)) {
    throw TensorError("descriptor_batch_loss: descriptor maps must be [1,D,H,W] with equal D");
  }
  const int w2 = dmap2.dim(3), h2 = dmap2.dim(2);
  const int w1 = dmap1.dim(3), h1 = dmap1.dim(2);
  std::vector<std::pair<float, float>> pts1, pts2;
  for (const auto& [cx, cy] : cands.pos) {
    if (cx < 0 || cy < 0 || cx >= w1 || cy >= h1) {
      throw TensorError("descriptor_batch_loss: candidate (" + std::to_string(cx) + "," + std::to_string(cy) +
                        ") outside image 1");
    }
    double mx, my;
    h.apply(cx, cy, mx, my);
    if (mx < 0.0 || my < 0.0 || mx > w2 - 1.0 || my > h2 - 1.0) continue;  // dropped
    pts1.emplace_back(static_cast<float>(cx), static_cast<float>(cy));
    pts2.emplace_back(static_cast<float>(mx), static_cast<float>(my));
  }
  const int n = static_cast<int>(pts1.size());
  if (n < 2) throw TensorError("descriptor_batch_loss: fewer than 2 candidates survive the mapping");

  Tensor d1 = l2_normalize_rows(gather_rows_bilinear(dmap1, pts1));
  Tensor d2 = l2_normalize_rows(gather_rows_bilinear(dmap2, pts2));
  Tensor sim = matmul_nt(d1, d2);  // [n,n]

  Tensor total;
  for (int i = 0; i < n; ++i) {
    Tensor sp = gather_flat(sim, {i * n + i});
    std::vector<int> neg;
    neg.reserve(static_cast<std::size_t>(n - 1));
    for (int j = 0; j < n; ++j) {
      if (j != i) neg.push_back(i * n + j);
    }
    Tensor li = circle_loss(sp, gather_flat(sim, neg), m, gamma);
    total = total.defined() ? add(total, li) : li;
  }
  return mul_scalar(total, 1.0f / static_cast<float>(n));
}

long long count_multiplications(const DesNetConfig& cfg, int height, int width) {
  if (height < 1 || width < 1) throw ImageError("count_multiplications: bad size");
  const double hw = static_cast<double>(height) * width;
  const double k2 = static_cast<double>(cfg.kernel) * cfg.kernel;
  double per_px = 0.0;
  int cin = 1;
  for (int cout : cfg.channels) {
    per_px += k2 * cin * cout;
    cin = cout;
  }
  return static_cast<long long>(std::llround(per_px * hw));
}

void save_descriptors(const std::filesystem::path& path, const std::vector<std::pair<float, float>>& pts,
                      const std::vector<std::vector<float>>& descs) {
  if (pts.size() != descs.size()) throw ImageError("descriptors: point/descriptor count mismatch");
  const std::uint32_t count = static_cast<std::uint32_t>(pts.size());
  const std::uint32_t d = count ? static_cast<std::uint32_t>(descs[0].size()) : 0;
  for (const auto& v : descs) {
    if (v.size() != d) throw ImageError("descriptors: ragged descriptor dimensions");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("descriptors: cannot write " + path.string());
  const std::uint32_t version = 1;
  out.write("SKDC", 4);
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&count), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  for (std::uint32_t i = 0; i < count; ++i) {
    const float x = pts[i].first, y = pts[i].second;
    out.write(reinterpret_cast<const char*>(&x), 4);
    out.write(reinterpret_cast<const char*>(&y), 4);
    out.write(reinterpret_cast<const char*>(descs[i].data()), static_cast<std::streamsize>(4u * d));
  }
  if (!out) throw ImageError("descriptors: write failed for " + path.string());
}

DescriptorFile load_descriptors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("descriptors: cannot open " + path.string());
  char magic[4] = {};
  std::uint32_t version = 0, count = 0, d = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  if (!in || std::string(magic, 4) != "SKDC") throw ImageError("descriptors: bad magic in " + path.string());
  if (version != 1) throw ImageError("descriptors: unsupported version in " + path.string());
  DescriptorFile f;
  f.pts.resize(count);
  f.descs.assign(count, std::vector<float>(d));
  for (std::uint32_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(&f.pts[i].first), 4);
    in.read(reinterpret_cast<char*>(&f.pts[i].second), 4);
    in.read(reinterpret_cast<char*>(f.descs[i].data()), static_cast<std::streamsize>(4u * d));
  }
  if (!in) throw ImageError("descriptors: truncated file " + path.string());
  return f;
}

}  // namespace sobelkey
