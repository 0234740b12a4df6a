#include "sobelkey/image.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace sobelkey {

namespace {

void check_nonempty(const Image& img, const char* who) {
  if (img.w <= 0 || img.h <= 0 || img.v.size() != img.size()) {
    throw ImageError(std::string(who) + ": empty or inconsistent image");
  }
}

}  // namespace

EdgeMap sobel_magnitude(const GrayImage& img) {
  check_nonempty(img, "sobel_magnitude");
  EdgeMap out(img.w, img.h);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const float p00 = img.at_clamped(x - 1, y - 1), p10 = img.at_clamped(x, y - 1),
                  p20 = img.at_clamped(x + 1, y - 1);
      const float p01 = img.at_clamped(x - 1, y), p21 = img.at_clamped(x + 1, y);
      const float p02 = img.at_clamped(x - 1, y + 1), p12 = img.at_clamped(x, y + 1),
                  p22 = img.at_clamped(x + 1, y + 1);
      const double gx = (p20 + 2.0 * p21 + p22) - (p00 + 2.0 * p01 + p02);
      const double gy = (p02 + 2.0 * p12 + p22) - (p00 + 2.0 * p10 + p20);
      out.at(x, y) = static_cast<float>(std::sqrt(gx * gx + gy * gy));
    }
  }
  return out;
}

GrayImage gaussian_blur(const GrayImage& img, float sigma) {
  check_nonempty(img, "gaussian_blur");
  if (!(sigma > 0.0f)) throw ImageError("gaussian_blur: sigma must be > 0");
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double ksum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * (double(i) * i) / (double(sigma) * sigma));
    ksum += k[static_cast<std::size_t>(i + r)];
  }
  for (double& w : k) w /= ksum;

  GrayImage tmp(img.w, img.h);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * img.at_clamped(x + i, y);
      tmp.at(x, y) = static_cast<float>(acc);
    }
  }
  GrayImage out(img.w, img.h);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * tmp.at_clamped(x, y + i);
      out.at(x, y) = static_cast<float>(acc);
    }
  }
  return out;
}

Image resize_bilinear(const Image& src, int out_h, int out_w) {
  check_nonempty(src, "resize_bilinear");
  if (out_h < 1 || out_w < 1) throw ImageError("resize_bilinear: target extent must be >= 1");
  if (out_h == src.h && out_w == src.w) return src;
  Image out(out_w, out_h);
  const double sx = static_cast<double>(src.w) / out_w;
  const double sy = static_cast<double>(src.h) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    if (fy < 0) fy = 0;
    if (fy > src.h - 1) fy = src.h - 1;
    const int y0 = static_cast<int>(fy);
    const int y1 = y0 + 1 < src.h ? y0 + 1 : src.h - 1;
    const double ty = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      if (fx < 0) fx = 0;
      if (fx > src.w - 1) fx = src.w - 1;
      const int x0 = static_cast<int>(fx);
      const int x1 = x0 + 1 < src.w ? x0 + 1 : src.w - 1;
      const double tx = fx - x0;
      const double top = src.at(x0, y0) * (1.0 - tx) + src.at(x1, y0) * tx;
      const double bot = src.at(x0, y1) * (1.0 - tx) + src.at(x1, y1) * tx;
      out.at(x, y) = static_cast<float>(top * (1.0 - ty) + bot * ty);
    }
  }
  return out;
}

std::array<GrayImage, 3> build_pyramid(const GrayImage& img) {
  check_nonempty(img, "build_pyramid");
  if (std::min(img.w, img.h) < 32) throw ImageError("build_pyramid: min(h,w) must be >= 32");
  const double kSqrt2 = 1.4142135623730951;
  std::array<GrayImage, 3> levels;
  levels[0] = img;
  const double factors[2] = {kSqrt2, 2.0};
  for (int i = 0; i < 2; ++i) {
    const double f = factors[i];
    GrayImage blurred = gaussian_blur(img, static_cast<float>(0.8 * f));
    const int nw = static_cast<int>(std::lround(img.w / f));
    const int nh = static_cast<int>(std::lround(img.h / f));
    levels[static_cast<std::size_t>(i + 1)] = resize_bilinear(blurred, nh, nw);
  }
  return levels;
}

std::vector<std::uint8_t> local_max_mask(const Image& map, int radius) {
  check_nonempty(map, "local_max_mask");
  if (radius < 1) throw ImageError("local_max_mask: radius must be >= 1");
  std::vector<std::uint8_t> mask(map.size(), 0);
  for (int y = 0; y < map.h; ++y) {
    for (int x = 0; x < map.w; ++x) {
      const float c = map.at(x, y);
      if (!(c > 0.0f)) continue;
      bool win = true;
      for (int dy = -radius; dy <= radius && win; ++dy) {
        const int ny = y + dy;
        if (ny < 0 || ny >= map.h) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int nx = x + dx;
          if (nx < 0 || nx >= map.w) continue;
          const float q = map.at(nx, ny);
          if (q > c || (q == c && (ny < y || (ny == y && nx < x)))) {
            win = false;
            break;
          }
        }
      }
      if (win) mask[static_cast<std::size_t>(y) * map.w + x] = 1;
    }
  }
  return mask;
}

GrayImage gray_from_rgb(const Image& r, const Image& g, const Image& b) {
  check_nonempty(r, "gray_from_rgb");
  if (!r.same_size(g) || !r.same_size(b)) throw ImageError("gray_from_rgb: channel sizes differ");
  GrayImage out(r.w, r.h);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.v[i] = 0.299f * r.v[i] + 0.587f * g.v[i] + 0.114f * b.v[i];
  }
  return out;
}

namespace {

int read_pgm_token(std::istream& in) {
  // skips whitespace and '#' comment lines
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int value = 0;
  if (!(in >> value)) throw ImageError("pgm: malformed header");
  return value;
}

}  // namespace

GrayImage load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("pgm: cannot open " + path.string());
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '5') throw ImageError("pgm: not a P5 file: " + path.string());
  const int w = read_pgm_token(in);
  const int h = read_pgm_token(in);
  const int maxval = read_pgm_token(in);
  in.get();  // single whitespace before raster
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw ImageError("pgm: bad dimensions or maxval in " + path.string());
  }
  GrayImage img(w, h);
  const std::size_t n = img.size();
  if (maxval < 256) {
    std::vector<std::uint8_t> buf(n);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n))) {
      throw ImageError("pgm: truncated raster in " + path.string());
    }
    for (std::size_t i = 0; i < n; ++i) img.v[i] = buf[i] / static_cast<float>(maxval);
  } else {
    std::vector<std::uint8_t> buf(n * 2);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 2))) {
      throw ImageError("pgm: truncated raster in " + path.string());
    }
    for (std::size_t i = 0; i < n; ++i) {
      const int hi = buf[2 * i], lo = buf[2 * i + 1];  // big-endian per spec
      img.v[i] = (hi * 256 + lo) / static_cast<float>(maxval);
    }
  }
  return img;
}

void save_pgm(const std::filesystem::path& path, const GrayImage& img) {
  check_nonempty(img, "save_pgm");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("pgm: cannot write " + path.string());
  out << "P5\n" << img.w << " " << img.h << "\n255\n";
  std::vector<std::uint8_t> buf(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    float x = img.v[i];
    x = x < 0.0f ? 0.0f : (x > 1.0f ? 1.0f : x);
    buf[i] = static_cast<std::uint8_t>(std::lround(x * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ImageError("pgm: write failed for " + path.string());
}

}  // namespace sobelkey
