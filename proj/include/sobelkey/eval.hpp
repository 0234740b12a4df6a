#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "sobelkey/augment.hpp"
#include "sobelkey/descriptor.hpp"
#include "sobelkey/detector.hpp"
#include "sobelkey/homography.hpp"
#include "sobelkey/image.hpp"

namespace sobelkey {

struct EvalPair {
  GrayImage a, b;
  Homography h;      // a -> b coordinates
  std::string mode;  // "viewpoint" | "illumination"
  std::string name_a, name_b;  // source filenames when directory-loaded
};

// Keeps A-points whose h-image falls inside B and B-points whose h^-1-image
// falls inside A. `kept_a`/`kept_b` receive original indices when non-null.
std::pair<KeypointSet, KeypointSet> shared_view_filter(const KeypointSet& kps_a, const KeypointSet& kps_b,
                                                       const Homography& h, std::vector<int>* kept_a = nullptr,
                                                       std::vector<int>* kept_b = nullptr);

// Reprojection distance between an A-point and a B-point: mean of the gaps
// measured in both frames. The symmetric form keeps repeatability invariant
// under (A,B,H) <-> (B,A,H^-1).
double reprojection_distance(const Keypoint& a, const Keypoint& b, const Homography& h, const Homography& h_inv);

// Possible matches = greedy one-to-one assignment over ascending reprojection
// distance (<= tol). Rep = 100 * possible / min(|A'|, |B'|), 0 on empty sets.
double repeatability(const KeypointSet& kps_a, const KeypointSet& kps_b, const Homography& h, double tol_px = 5.0,
                     int* possible_out = nullptr);

struct Match {
  int i = 0, j = 0;
  float similarity = 0.0f;
};

// (i,j) matched iff each is the other's most-similar descriptor; exact ties
// resolve to the lower index.
std::vector<Match> mutual_nn_match(const std::vector<std::vector<float>>& desc_a,
                                   const std::vector<std::vector<float>>& desc_b);

// correct = matches with reprojection <= tol. M.S. = 100*correct/min sets,
// MMA = 100*correct/possible (0 when possible is 0).
std::pair<double, double> matching_score_and_mma(const std::vector<Match>& matches, const KeypointSet& kps_a,
                                                 const KeypointSet& kps_b, const Homography& h, double tol_px,
                                                 int possible);

// Synthetic stand-in pairs: viewpoint mode warps with augmentation-module
// homographies, illumination mode jitters photometrically under identity H.
std::vector<EvalPair> synth_benchmark(int n_pairs, std::uint64_t seed, int height, int width,
                                      const std::string& mode = "viewpoint",
                                      const AugmentConfig& aug = AugmentConfig::detector_defaults());

struct EvalConfig {
  float ratio = 0.1f;
  int nms_radius = 15;  // HPatches-protocol default
  int max_kpts = 5000;
  double tol_px = 5.0;
  bool with_descriptors = true;
};

struct PairResult {
  std::string mode;
  double rep = 0, ms = 0, mma = 0, kpts = 0;
  int n_shared_a = 0, n_shared_b = 0, possible = 0, correct = 0, matches = 0;
};

struct EvalReport {
  std::vector<PairResult> rows;
  double rep = 0, ms = 0, mma = 0, kpts = 0;  // means over rows
  std::string config_echo;
};

EvalReport evaluate(const SobelNetParams& det, const DesNetParams* desc, const std::vector<EvalPair>& pairs,
                    const EvalConfig& cfg);

// Pair evaluation from precomputed features (third-party scoring path).
PairResult evaluate_features(const KeypointSet& kps_a, const KeypointSet& kps_b,
                             const std::vector<std::vector<float>>& desc_a,
                             const std::vector<std::vector<float>>& desc_b, const Homography& h,
                             const EvalConfig& cfg);

void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
void write_report_table(std::ostream& os, const EvalReport& report);

// Directory protocol: pairs.txt lines "imgA.pgm imgB.pgm h11 h12 ... h33".
std::vector<EvalPair> load_pairs_dir(const std::filesystem::path& dir);

}  // namespace sobelkey
