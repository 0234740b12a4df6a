#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "sobelkey/detector.hpp"
#include "sobelkey/rng.hpp"
#include "sobelkey/synth.hpp"

using namespace sobelkey;

namespace {

GrayImage checkerboard(int w, int h, int cell) {
  GrayImage img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) img.at(x, y) = ((x / cell + y / cell) & 1) ? 1.0f : 0.0f;
  }
  return img;
}

}  // namespace

TEST_CASE("sobelnet_forward zero propagation with zero biases") {
  const SobelNetParams params = SobelNetParams::init(SobelNetConfig{}, 1);
  GrayImage flat(48, 40, 0.7f);
  const ScoreMap s = sobelnet_score(flat, params);
  for (float v : s.v) CHECK(v == 0.0f);
}

TEST_CASE("sobelnet_forward output shape equals input shape") {
  const SobelNetParams params = SobelNetParams::init(SobelNetConfig{}, 2);
  Rng rng(5);
  for (int c = 0; c < 10; ++c) {
    const int w = rng.uniform_int(32, 96);
    const int h = rng.uniform_int(32, 96);
    const GrayImage img = synth_image(h, w, 300 + static_cast<std::uint64_t>(c));
    const ScoreMap s = sobelnet_score(img, params);
    CHECK(s.w == w);
    CHECK(s.h == h);
  }
  GrayImage small(31, 40, 0.5f);
  CHECK_THROWS_AS(sobelnet_score(small, params), ImageError);
}

TEST_CASE("sobelnet_forward is deterministic and max-normalized") {
  const SobelNetParams params = SobelNetParams::init(SobelNetConfig{}, 3);
  const GrayImage img = checkerboard(64, 64, 8);
  const ScoreMap a = sobelnet_score(img, params);
  const ScoreMap b = sobelnet_score(img, params);
  CHECK(a.v == b.v);  // bitwise

  float mx = 0.0f;
  for (float v : a.v) {
    CHECK(v >= 0.0f);
    mx = std::max(mx, v);
  }
  CHECK(mx == 1.0f);  // norm_output
}

TEST_CASE("threshold_scores definition") {
  ScoreMap m(3, 1);
  m.v = {0.1f, 0.5f, 1.0f};
  const ScoreMap t = threshold_scores(m, 0.3f);
  CHECK(t.v[0] == 0.0f);
  CHECK(t.v[1] == 0.5f);
  CHECK(t.v[2] == 1.0f);

  const ScoreMap unchanged = threshold_scores(m, 0.0f);
  CHECK(unchanged.v == m.v);

  ScoreMap zero(4, 4, 0.0f);
  const ScoreMap tz = threshold_scores(zero, 0.7f);
  for (float v : tz.v) CHECK(v == 0.0f);

  CHECK_THROWS_AS(threshold_scores(m, 1.0f), ImageError);
}

TEST_CASE("nms single pixel and tie semantics") {
  ScoreMap m(16, 16, 0.0f);
  m.at(6, 9) = 0.5f;
  const KeypointSet single = nms(m, 3);
  REQUIRE(single.pts.size() == 1);
  CHECK(single.pts[0].x == 6.0f);
  CHECK(single.pts[0].y == 9.0f);

  // two equal maxima 3 px apart: with radius 2 they are outside each other's
  // window (both survive, spacing > radius holds); with radius 3 the
  // lexicographically smaller one wins the tie
  ScoreMap ties(16, 16, 0.0f);
  ties.at(4, 8) = 0.7f;
  ties.at(7, 8) = 0.7f;
  const KeypointSet both = nms(ties, 2);
  CHECK(both.pts.size() == 2);
  const KeypointSet one = nms(ties, 3);
  REQUIRE(one.pts.size() == 1);
  CHECK(one.pts[0].x == 4.0f);
  CHECK(one.pts[0].y == 8.0f);
}

TEST_CASE("nms equals the brute-force oracle on random maps") {
  Rng rng(909);
  for (int c = 0; c < 100; ++c) {
    ScoreMap map(32, 32);
    for (float& v : map.v) v = rng.uniform() < 0.3 ? 0.0f : static_cast<float>(rng.uniform());
    const int radius = std::vector<int>{1, 2, 7}[static_cast<std::size_t>(c % 3)];
    const KeypointSet got = nms(map, radius);
    const auto expected = oracles::nms_brute(map, radius);
    REQUIRE(got.pts.size() == expected.size());
    std::set<std::pair<int, int>> got_set;
    for (const Keypoint& p : got.pts) got_set.emplace(static_cast<int>(p.x), static_cast<int>(p.y));
    for (const auto& e : expected) CHECK(got_set.count(e) == 1);
    // sorted by descending score
    for (std::size_t i = 1; i < got.pts.size(); ++i) CHECK(got.pts[i - 1].score >= got.pts[i].score);
  }
}

TEST_CASE("detect caps, spacing, and local-max cross-check") {
  const SobelNetParams params = SobelNetParams::init(SobelNetConfig{}, 17);
  const GrayImage img = synth_image(480, 640, 123);

  CHECK(detect(img, params, {0.1f, 7, 0}).pts.empty());

  const DetectConfig dc{0.1f, 7, 5000};
  const KeypointSet kps = detect(img, params, dc);
  CHECK(static_cast<int>(kps.pts.size()) <= 5000);
  CHECK(!kps.pts.empty());

  // every reported point is a strict local max of the thresholded map
  const ScoreMap thr = threshold_scores(sobelnet_score(img, params), dc.ratio);
  const auto mask = local_max_mask(thr, dc.nms_radius);
  for (const Keypoint& p : kps.pts) {
    CHECK(mask[static_cast<std::size_t>(p.y) * thr.w + static_cast<std::size_t>(p.x)] == 1);
  }

  // pairwise Chebyshev spacing > radius
  auto check_spacing = [](const KeypointSet& set, int radius) {
    for (std::size_t i = 0; i < set.pts.size(); ++i) {
      for (std::size_t j = i + 1; j < set.pts.size(); ++j) {
        const int dx = static_cast<int>(std::abs(set.pts[i].x - set.pts[j].x));
        const int dy = static_cast<int>(std::abs(set.pts[i].y - set.pts[j].y));
        CHECK(std::max(dx, dy) > radius);
      }
    }
  };
  const KeypointSet wide = detect(img, params, {0.1f, 15, 5000});
  const KeypointSet tight = detect(img, params, {0.1f, 3, 5000});
  CHECK(wide.pts.size() <= tight.pts.size());
  check_spacing(wide, 15);
}

TEST_CASE("count_multiplications matches the published accounting") {
  CHECK(conv_multiplications(1, 1, 3, 100) == 900);

  CHECK(count_multiplications(SobelNetConfig{}, 480, 640) == 1889280000LL);

  // halving both extents quarters the count
  const long long full = count_multiplications(SobelNetConfig{}, 480, 640);
  const long long quarter = count_multiplications(SobelNetConfig{}, 240, 320);
  CHECK(full == 4 * quarter);

  // k = 3 is far below the published figure (the design rejects it)
  SobelNetConfig k3;
  k3.kernel = 3;
  CHECK(count_multiplications(k3, 480, 640) < 800000000LL);
}

TEST_CASE("keypoint file round trip and header validation") {
  const auto dir = std::filesystem::temp_directory_path() / "sobelkey_test_kpts";
  std::filesystem::create_directories(dir);
  KeypointSet kps;
  kps.w = 320;
  kps.h = 240;
  kps.pts = {{12.0f, 34.0f, 0.875f}, {100.5f, 7.25f, 0.5f}, {0.0f, 0.0f, 0.125f}};
  save_keypoints(dir / "a.kpts", kps);
  const KeypointSet back = load_keypoints(dir / "a.kpts");
  CHECK(back.w == kps.w);
  CHECK(back.h == kps.h);
  REQUIRE(back.pts.size() == kps.pts.size());
  for (std::size_t i = 0; i < kps.pts.size(); ++i) {
    CHECK(back.pts[i].x == doctest::Approx(kps.pts[i].x).epsilon(1e-6));
    CHECK(back.pts[i].y == doctest::Approx(kps.pts[i].y).epsilon(1e-6));
    CHECK(back.pts[i].score == doctest::Approx(kps.pts[i].score).epsilon(1e-6));
  }

  std::ofstream bad(dir / "bad.kpts");
  bad << "# wrong header v9 1 1\n";
  bad.close();
  CHECK_THROWS_AS(load_keypoints(dir / "bad.kpts"), ImageError);
}

TEST_CASE("params clone and checkpoint-facing named tensors") {
  const SobelNetParams params = SobelNetParams::init(SobelNetConfig{}, 77);
  const auto named = params.named_tensors();
  CHECK(named.size() == 8);
  const SobelNetParams copy = params.clone();
  const auto named2 = copy.named_tensors();
  for (std::size_t i = 0; i < named.size(); ++i) {
    CHECK(named[i].first == named2[i].first);
    CHECK(named[i].second.data() == named2[i].second.data());
    CHECK(named[i].second.node() != named2[i].second.node());  // fresh leaves
  }
}
