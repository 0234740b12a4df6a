#include "sobelkey/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "sobelkey/parallel.hpp"
#include "sobelkey/rng.hpp"
#include "sobelkey/synth.hpp"

namespace sobelkey {

namespace {

constexpr std::uint64_t kDataSeedTag = 0xDA7A;
constexpr std::uint64_t kInitSeedTag = 0x1217;

double now_ms() {
  using namespace std::chrono;
  return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

void TrainConfig::resolve() {
  if (steps < 1) throw ImageError("train: steps must be >= 1");
  if (batch < 1) throw ImageError("train: batch must be >= 1");
  if (opt.lr < 0.0f) opt.lr = stage == kDetector ? 1e-3f : 3e-4f;
  if (!augment_set) {
    augment = stage == kDetector ? AugmentConfig::detector_defaults() : AugmentConfig::descriptor_defaults();
  }
  augment.validate();
}

std::uint64_t TrainConfig::hash() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "stage=%d steps=%d batch=%d lr=%g seed=%llu data=%s n=%d hw=%dx%d", stage, steps,
                batch, static_cast<double>(opt.lr), static_cast<unsigned long long>(seed), dataset.c_str(), synth_n,
                synth_h, synth_w);
  return fnv1a64(buf);
}

std::vector<GrayImage> load_training_images(const TrainConfig& cfg) {
  if (cfg.dataset == "synthetic") {
    if (std::min(cfg.synth_h, cfg.synth_w) < 64) throw ImageError("train: synthetic size must be >= 64");
    return synth_dataset(cfg.synth_n, cfg.synth_h, cfg.synth_w, mix_seed(cfg.seed, kDataSeedTag));
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(cfg.dataset)) {
    if (entry.path().extension() == ".pgm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ImageError("train: no .pgm images found in " + cfg.dataset);
  std::vector<GrayImage> images;
  images.reserve(files.size());
  for (const auto& f : files) images.push_back(load_pgm(f));
  return images;
}

// --- checkpoint adapters -----------------------------------------------------

namespace {

void append_optimizer_state(Checkpoint& ckpt, const std::vector<std::pair<std::string, Tensor>>& named,
                            const Optimizer* opt) {
  if (!opt || opt->state_m().empty()) return;
  const auto& m = opt->state_m();
  const auto& v = opt->state_v();
  for (std::size_t i = 0; i < named.size(); ++i) {
    ckpt.tensors.emplace_back("opt.m." + named[i].first,
                              Tensor::from_data(named[i].second.shape(), m[i], false));
    ckpt.tensors.emplace_back("opt.v." + named[i].first,
                              Tensor::from_data(named[i].second.shape(), v[i], false));
  }
}

// Restores Adam moments when every opt.m/opt.v record is present.
void restore_optimizer_state(Optimizer& opt, const Checkpoint& ckpt,
                             const std::vector<std::pair<std::string, Tensor>>& named) {
  std::vector<std::vector<float>> m, v;
  for (const auto& [name, t] : named) {
    const Tensor* tm = ckpt.find("opt.m." + name);
    const Tensor* tv = ckpt.find("opt.v." + name);
    if (!tm || !tv || tm->numel() != t.numel() || tv->numel() != t.numel()) return;
    m.push_back(tm->data());
    v.push_back(tv->data());
  }
  opt.restore(ckpt.step, std::move(m), std::move(v));
}

Tensor require_tensor(const Checkpoint& ckpt, const std::string& name, bool requires_grad) {
  const Tensor* t = ckpt.find(name);
  if (!t) throw CheckpointError(CheckpointErrorCode::kTruncated, "checkpoint: missing tensor " + name);
  return Tensor::from_data(t->shape(), t->data(), requires_grad);
}

}  // namespace

Checkpoint make_detector_checkpoint(const SobelNetParams& params, std::uint64_t step, std::uint64_t config_hash,
                                    const Optimizer* opt) {
  Checkpoint ckpt;
  ckpt.network_id = "sobelnet";
  ckpt.step = step;
  ckpt.config_hash = config_hash;
  ckpt.tensors = params.named_tensors();
  append_optimizer_state(ckpt, params.named_tensors(), opt);
  return ckpt;
}

Checkpoint make_descriptor_checkpoint(const DesNetParams& params, std::uint64_t step, std::uint64_t config_hash,
                                      const Optimizer* opt) {
  Checkpoint ckpt;
  ckpt.network_id = "desnet";
  ckpt.step = step;
  ckpt.config_hash = config_hash;
  ckpt.tensors = params.named_tensors();
  append_optimizer_state(ckpt, params.named_tensors(), opt);
  return ckpt;
}

SobelNetParams detector_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.network_id != "sobelnet") {
    throw CheckpointError(CheckpointErrorCode::kBadNetworkId,
                          "checkpoint: expected network id 'sobelnet', found '" + ckpt.network_id + "'");
  }
  SobelNetParams p;
  p.conv1_w = require_tensor(ckpt, "conv1.w", true);
  p.conv1_b = require_tensor(ckpt, "conv1.b", true);
  p.conv2_w = require_tensor(ckpt, "conv2.w", true);
  p.conv2_b = require_tensor(ckpt, "conv2.b", true);
  p.conv3_w = require_tensor(ckpt, "conv3.w", true);
  p.conv3_b = require_tensor(ckpt, "conv3.b", true);
  p.conv4_w = require_tensor(ckpt, "conv4.w", true);
  p.conv4_b = require_tensor(ckpt, "conv4.b", true);
  p.cfg.channels = p.conv1_w.dim(0);
  p.cfg.kernel = p.conv1_w.dim(2);
  return p;
}

DesNetParams descriptor_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.network_id != "desnet") {
    throw CheckpointError(CheckpointErrorCode::kBadNetworkId,
                          "checkpoint: expected network id 'desnet', found '" + ckpt.network_id + "'");
  }
  DesNetParams p;
  p.cfg.channels.clear();
  for (int i = 1;; ++i) {
    const Tensor* w = ckpt.find("conv" + std::to_string(i) + ".w");
    if (!w) break;
    p.w.push_back(require_tensor(ckpt, "conv" + std::to_string(i) + ".w", true));
    p.b.push_back(require_tensor(ckpt, "conv" + std::to_string(i) + ".b", true));
    p.cfg.channels.push_back(p.w.back().dim(0));
    p.cfg.kernel = p.w.back().dim(2);
  }
  if (p.w.empty()) throw CheckpointError(CheckpointErrorCode::kTruncated, "checkpoint: no desnet layers found");
  return p;
}

// --- detector training ---------------------------------------------------------

namespace {

struct DetectorItem {
  std::vector<std::vector<float>> grads;
  LossBreakdown breakdown;
  double loss = 0.0;
  bool finite = true;
};

void run_for(int n, bool deterministic, const std::function<void(int)>& fn) {
  if (deterministic) {
    for (int i = 0; i < n; ++i) fn(i);
  } else {
    parallel_for(n, fn);
  }
}

std::string dump_breakdown(const LossBreakdown& bd) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "total=%g gl_osp={%g,%g,%g} gl_tsp={%g,%g,%g} r1=%d r2=%d", bd.total, bd.gl_osp[0],
                bd.gl_osp[1], bd.gl_osp[2], bd.gl_tsp[0], bd.gl_tsp[1], bd.gl_tsp[2], bd.r1_count, bd.r2_count);
  return buf;
}

}  // namespace

TrainResult train_detector(const TrainConfig& cfg_in) {
  TrainConfig cfg = cfg_in;
  cfg.stage = TrainConfig::kDetector;
  cfg.resolve();
  const std::vector<GrayImage> images = load_training_images(cfg);

  SobelNetParams params;
  Optimizer opt(cfg.opt);
  std::uint64_t start_step = 0;
  // trainable subset: weights only unless bias training is enabled
  auto select = [&cfg](const std::vector<Tensor>& all) {
    if (cfg.train_detector_biases) return all;
    std::vector<Tensor> weights;
    for (std::size_t i = 0; i < all.size(); i += 2) weights.push_back(all[i]);
    return weights;
  };
  auto select_named = [&cfg](std::vector<std::pair<std::string, Tensor>> all) {
    if (cfg.train_detector_biases) return all;
    std::vector<std::pair<std::string, Tensor>> weights;
    for (std::size_t i = 0; i < all.size(); i += 2) weights.push_back(all[i]);
    return weights;
  };
  if (!cfg.resume_path.empty()) {
    const Checkpoint resumed = load_checkpoint(cfg.resume_path, "sobelnet");
    params = detector_from_checkpoint(resumed);
    restore_optimizer_state(opt, resumed, select_named(params.named_tensors()));
    start_step = resumed.step;
  } else {
    params = SobelNetParams::init(cfg.sobelnet, mix_seed(cfg.seed, kInitSeedTag));
  }
  std::vector<Tensor> trainable = select(params.trainable());

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path);
    if (!log) throw ImageError("train: cannot write log " + cfg.log_path);
    log << "step,total,gl_osp_4,gl_tsp_4,gl_osp_6,gl_tsp_6,gl_osp_8,gl_tsp_8,r1,r2,wall_ms\n";
  }

  const CrossWarpConfig cw;
  TrainResult result;
  std::vector<DetectorItem> items(static_cast<std::size_t>(cfg.batch));
  for (std::uint64_t step = start_step; step < static_cast<std::uint64_t>(cfg.steps); ++step) {
    const double t0 = now_ms();
    run_for(cfg.batch, cfg.deterministic, [&](int item) {
      DetectorItem& out = items[static_cast<std::size_t>(item)];
      out = DetectorItem{};
      Rng rng(mix_seed(cfg.seed, step, static_cast<std::uint64_t>(item)));
      const GrayImage& img = images[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(images.size()) - 1))];
      const TrainingPair pair = make_training_pair(img, cfg.augment, rng.next());
      const EdgeMap sobel_orig = sobel_magnitude(pair.original);
      const EdgeMap sobel_trans = sobel_magnitude(pair.transformed);

      SobelNetParams local = params.clone();
      const Tensor osp = sobelnet_forward(pair.original, local);
      const Tensor tsp = sobelnet_forward(pair.transformed, local);
      const Tensor loss = cross_warp_loss(osp, tsp, pair.h, sobel_orig, sobel_trans, cw, &out.breakdown);
      out.loss = loss.item();
      if (!std::isfinite(out.loss)) {
        out.finite = false;
        return;
      }
      backward(mul_scalar(loss, 1.0f / static_cast<float>(cfg.batch)));
      for (const Tensor& t : select(local.trainable())) out.grads.push_back(t.grad());
    });

    LossBreakdown agg;
    for (int i = 0; i < cfg.batch; ++i) {
      const DetectorItem& it = items[static_cast<std::size_t>(i)];
      if (!it.finite) {
        throw NumericError("train-detector: non-finite loss at step " + std::to_string(step) + " (" +
                           dump_breakdown(it.breakdown) + ")");
      }
      agg.total += it.breakdown.total / cfg.batch;
      for (int r = 0; r < 3; ++r) {
        agg.gl_osp[static_cast<std::size_t>(r)] += it.breakdown.gl_osp[static_cast<std::size_t>(r)] / cfg.batch;
        agg.gl_tsp[static_cast<std::size_t>(r)] += it.breakdown.gl_tsp[static_cast<std::size_t>(r)] / cfg.batch;
      }
      agg.r1_count += it.breakdown.r1_count;
      agg.r2_count += it.breakdown.r2_count;
    }

    for (Tensor& t : trainable) t.zero_grad();
    for (int i = 0; i < cfg.batch; ++i) {
      const auto& grads = items[static_cast<std::size_t>(i)].grads;
      for (std::size_t j = 0; j < trainable.size(); ++j) {
        auto& dst = trainable[j].mutable_grad();
        const auto& src = grads[j];
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
    opt.step(trainable);

    result.detector_log.push_back(agg);
    result.losses.push_back(agg.total);
    if (log.is_open()) {
      char row[320];
      std::snprintf(row, sizeof(row), "%llu,%.8f,%.8f,%.8f,%.8f,%.8f,%.8f,%.8f,%d,%d,%.3f\n",
                    static_cast<unsigned long long>(step), agg.total, agg.gl_osp[0], agg.gl_tsp[0], agg.gl_osp[1],
                    agg.gl_tsp[1], agg.gl_osp[2], agg.gl_tsp[2], agg.r1_count, agg.r2_count, now_ms() - t0);
      log << row;
    }
  }

  result.checkpoint = make_detector_checkpoint(params, static_cast<std::uint64_t>(cfg.steps), cfg.hash(), nullptr);
  {
    Checkpoint& ckpt = result.checkpoint;
    append_optimizer_state(ckpt, select_named(params.named_tensors()), &opt);
  }
  if (!cfg.out_path.empty()) save_checkpoint(cfg.out_path, result.checkpoint);
  return result;
}

// --- descriptor training --------------------------------------------------------

namespace {

CandidateSet random_spaced_candidates(int w, int h, float min_dist, int count, std::uint64_t seed) {
  std::vector<int> pool(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<int>(i);
  Rng rng(seed);
  rng.shuffle(pool);
  CandidateSet out;
  const double min_d2 = static_cast<double>(min_dist) * min_dist;
  for (int idx : pool) {
    if (static_cast<int>(out.pos.size()) >= count) break;
    const int x = idx % w, y = idx / w;
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

int count_mapped_survivors(const CandidateSet& cands, const Homography& h, int w, int h_px) {
  int n = 0;
  for (const auto& [cx, cy] : cands.pos) {
    double mx, my;
    h.apply(cx, cy, mx, my);
    if (mx >= 0.0 && my >= 0.0 && mx <= w - 1.0 && my <= h_px - 1.0) ++n;
  }
  return n;
}

struct DescriptorItem {
  std::vector<std::vector<float>> grads;
  double loss = 0.0;
  int candidates = 0;
  bool skipped = false;
  bool finite = true;
};

}  // namespace

TrainResult train_descriptor(const TrainConfig& cfg_in, const Checkpoint& detector_ckpt) {
  TrainConfig cfg = cfg_in;
  cfg.stage = TrainConfig::kDescriptor;
  cfg.resolve();
  const std::vector<GrayImage> images = load_training_images(cfg);

  SobelNetParams det = detector_from_checkpoint(detector_ckpt);
  det.set_requires_grad(false);

  DesNetParams params;
  Optimizer opt(cfg.opt);
  std::uint64_t start_step = 0;
  if (!cfg.resume_path.empty()) {
    const Checkpoint resumed = load_checkpoint(cfg.resume_path, "desnet");
    params = descriptor_from_checkpoint(resumed);
    restore_optimizer_state(opt, resumed, params.named_tensors());
    start_step = resumed.step;
  } else {
    params = DesNetParams::init(cfg.desnet, mix_seed(cfg.seed, kInitSeedTag + 1));
  }
  std::vector<Tensor> trainable = params.trainable();

  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path);
    if (!log) throw ImageError("train: cannot write log " + cfg.log_path);
    log << "step,loss,candidates,skipped_items,wall_ms\n";
  }

  TrainResult result;
  int total_items = 0;
  std::vector<DescriptorItem> items(static_cast<std::size_t>(cfg.batch));
  for (std::uint64_t step = start_step; step < static_cast<std::uint64_t>(cfg.steps); ++step) {
    const double t0 = now_ms();
    run_for(cfg.batch, cfg.deterministic, [&](int item) {
      DescriptorItem& out = items[static_cast<std::size_t>(item)];
      out = DescriptorItem{};
      Rng rng(mix_seed(cfg.seed, step, static_cast<std::uint64_t>(item)));
      const GrayImage& img = images[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(images.size()) - 1))];
      const TrainingPair pair = make_training_pair(img, cfg.augment, rng.next());

      CandidateSet cands;
      if (cfg.random_points) {
        cands = random_spaced_candidates(img.w, img.h, cfg.cand_min_dist, cfg.candidates, rng.next());
      } else {
        const ScoreMap score = sobelnet_score(pair.original, det);
        cands = select_candidates(score, cfg.cand_alpha, cfg.cand_min_dist, cfg.candidates, rng.next());
      }
      out.candidates = static_cast<int>(cands.pos.size());
      if (out.candidates < 2 || count_mapped_survivors(cands, pair.h, img.w, img.h) < 2) {
        out.skipped = true;
        return;
      }

      DesNetParams local = params.clone();
      const Tensor d1 = desnet_forward(pair.original, local);
      const Tensor d2 = desnet_forward(pair.transformed, local);
      const Tensor loss = descriptor_batch_loss(d1, d2, cands, pair.h, cfg.circle_m, cfg.circle_gamma);
      out.loss = loss.item();
      if (!std::isfinite(out.loss)) {
        out.finite = false;
        return;
      }
      backward(loss);
      for (const Tensor& t : local.trainable()) out.grads.push_back(t.grad());
    });

    int succeeded = 0, skipped = 0, cand_total = 0;
    double loss_sum = 0.0;
    for (int i = 0; i < cfg.batch; ++i) {
      const DescriptorItem& it = items[static_cast<std::size_t>(i)];
      if (!it.finite) {
        throw NumericError("train-descriptor: non-finite loss at step " + std::to_string(step) + " item " +
                           std::to_string(i) + " (loss=" + std::to_string(it.loss) + ")");
      }
      if (it.skipped) {
        ++skipped;
        continue;
      }
      ++succeeded;
      loss_sum += it.loss;
      cand_total += it.candidates;
    }
    total_items += cfg.batch;
    result.skipped_samples += skipped;

    const double step_loss = succeeded ? loss_sum / succeeded : 0.0;
    if (succeeded > 0) {
      for (Tensor& t : trainable) t.zero_grad();
      for (int i = 0; i < cfg.batch; ++i) {
        const DescriptorItem& it = items[static_cast<std::size_t>(i)];
        if (it.skipped) continue;
        for (std::size_t j = 0; j < trainable.size(); ++j) {
          auto& dst = trainable[j].mutable_grad();
          const auto& src = it.grads[j];
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k] / succeeded;
        }
      }
      opt.step(trainable);
    }

    result.losses.push_back(step_loss);
    if (log.is_open()) {
      char row[160];
      std::snprintf(row, sizeof(row), "%llu,%.8f,%d,%d,%.3f\n", static_cast<unsigned long long>(step), step_loss,
                    cand_total, skipped, now_ms() - t0);
      log << row;
    }
  }

  if (total_items > 0 && result.skipped_samples * 10 > total_items) {
    std::cerr << "train-descriptor: warning: " << result.skipped_samples << "/" << total_items
              << " samples had no usable candidates (degenerate data)\n";
  }

  result.checkpoint =
      make_descriptor_checkpoint(params, static_cast<std::uint64_t>(cfg.steps), cfg.hash(), &opt);
  if (!cfg.out_path.empty()) save_checkpoint(cfg.out_path, result.checkpoint);
  return result;
}

}  // namespace sobelkey
