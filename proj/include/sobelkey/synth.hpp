#pragma once

#include <cstdint>
#include <vector>

#include "sobelkey/image.hpp"

namespace sobelkey {

// Anti-aliased composition of 3..10 filled convex polygons, checkerboard
// patches and line segments over a shaded background. Deterministic per seed.
GrayImage synth_image(int height, int width, std::uint64_t seed);

std::vector<GrayImage> synth_dataset(int n, int height, int width, std::uint64_t seed);

}  // namespace sobelkey
