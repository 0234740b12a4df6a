#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace sobelkey {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Row-major float grid. GrayImage keeps values in [0,1]; EdgeMap and ScoreMap
// reuse the same storage with their own invariants (nonnegative, max-normalized).
struct Image {
  int w = 0;
  int h = 0;
  std::vector<float> v;

  Image() = default;
  Image(int width, int height, float fill = 0.0f)
      : w(width), h(height), v(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {}

  float& at(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
  float at(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
  // replicate border
  float at_clamped(int x, int y) const {
    x = x < 0 ? 0 : (x >= w ? w - 1 : x);
    y = y < 0 ? 0 : (y >= h ? h - 1 : y);
    return at(x, y);
  }
  std::size_t size() const { return v.size(); }
  bool same_size(const Image& o) const { return w == o.w && h == o.h; }
};

using GrayImage = Image;
using EdgeMap = Image;
using ScoreMap = Image;

// Per-pixel sqrt(gx^2 + gy^2) with the 3x3 Sobel pair, replicate borders.
EdgeMap sobel_magnitude(const GrayImage& img);

// Separable Gaussian, kernel radius ceil(3*sigma), replicate borders.
GrayImage gaussian_blur(const GrayImage& img, float sigma);

// Scales 1, 1/sqrt(2), 1/2. Level 0 is the input itself; the two downscales
// blur the original (sigma = 0.8 * factor) before resampling. Sizes round to
// nearest. Requires min(h,w) >= 32.
std::array<GrayImage, 3> build_pyramid(const GrayImage& img);

// Plain bilinear resample of a grid (align_corners = false). Shared by the
// pyramid; the differentiable twin lives in the tensor engine.
Image resize_bilinear(const Image& src, int out_h, int out_w);

// Strict local maxima of a grid: pixel survives iff value > 0 and beats every
// window neighbour (greater, or equal with smaller (y,x)).
std::vector<std::uint8_t> local_max_mask(const Image& map, int radius);

// Luma-weighted grayscale conversion (0.299/0.587/0.114).
GrayImage gray_from_rgb(const Image& r, const Image& g, const Image& b);

// PGM (P5), 8-bit and 16-bit maxval. Writes 8-bit.
GrayImage load_pgm(const std::filesystem::path& path);
void save_pgm(const std::filesystem::path& path, const GrayImage& img);

}  // namespace sobelkey
