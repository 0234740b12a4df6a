#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sobelkey/augment.hpp"
#include "sobelkey/checkpoint.hpp"
#include "sobelkey/descriptor.hpp"
#include "sobelkey/detector.hpp"
#include "sobelkey/gaussian_loss.hpp"
#include "sobelkey/tensor.hpp"

namespace sobelkey {

// Raised on non-finite losses/gradients; the CLI maps it to exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  enum Stage { kDetector, kDescriptor };
  Stage stage = kDetector;

  TrainConfig() { opt.lr = -1.0f; }  // resolve() fills the stage default

  std::string dataset = "synthetic";  // "synthetic" or an image directory
  int synth_n = 256;
  int synth_h = 128, synth_w = 128;

  int steps = 2000;
  int batch = 4;
  OptimizerConfig opt;  // lr defaults resolved per stage in resolve()
  std::uint64_t seed = 1;
  bool deterministic = false;

  AugmentConfig augment;     // resolve() picks stage defaults unless customized
  bool augment_set = false;  // set when the user overrides augment

  std::string log_path;  // CSV; empty disables
  std::string out_path;  // checkpoint; empty disables
  std::string resume_path;

  // Conv biases stay frozen at their init during detector training: the bare
  // Eq. 10 objective has a degenerate optimum at empty score maps, and the
  // bias is its fastest escape channel (support shrinks until the final ReLU
  // kills the map). Freezing keeps the score field rich; norm_output is
  // invariant to the lost degrees of freedom.
  bool train_detector_biases = false;

  // descriptor stage
  int candidates = 40;
  float cand_min_dist = 7.0f;
  float cand_alpha = 0.1f;
  bool random_points = false;  // ablation: ignore the score map when sampling
  float circle_m = 0.1f;
  float circle_gamma = 1.0f;

  SobelNetConfig sobelnet;
  DesNetConfig desnet;

  void resolve();  // applies stage defaults, validates
  std::uint64_t hash() const;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossBreakdown> detector_log;  // per step (detector stage)
  std::vector<double> losses;               // per step mean loss
  int skipped_samples = 0;                  // descriptor items without candidates
};

TrainResult train_detector(const TrainConfig& cfg);
TrainResult train_descriptor(const TrainConfig& cfg, const Checkpoint& detector_ckpt);

// checkpoint <-> params adapters (optimizer state rides along as opt.m/opt.v
// records when present)
Checkpoint make_detector_checkpoint(const SobelNetParams& params, std::uint64_t step, std::uint64_t config_hash,
                                    const Optimizer* opt);
Checkpoint make_descriptor_checkpoint(const DesNetParams& params, std::uint64_t step, std::uint64_t config_hash,
                                      const Optimizer* opt);
SobelNetParams detector_from_checkpoint(const Checkpoint& ckpt);
DesNetParams descriptor_from_checkpoint(const Checkpoint& ckpt);

std::vector<GrayImage> load_training_images(const TrainConfig& cfg);

}  // namespace sobelkey
