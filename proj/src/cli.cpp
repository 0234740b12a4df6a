#include "sobelkey/cli.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <sstream>

#include "sobelkey/config.hpp"
#include "sobelkey/eval.hpp"
#include "sobelkey/parallel.hpp"
#include "sobelkey/rng.hpp"
#include "sobelkey/synth.hpp"
#include "sobelkey/trainer.hpp"

namespace sobelkey {

namespace {

struct CliState {
  // global
  int threads = 0;
  bool deterministic = false;

  // shared training options
  std::string config_path;
  std::string data = "synthetic";
  int steps = 2000;
  int batch = 4;
  double lr = -1.0;
  std::string optimizer = "adam";
  std::uint64_t seed = 1;
  int synth_n = 256;
  std::string size = "128x128";
  std::string out_path;
  std::string log_path;
  std::string resume_path;
  std::string det_ckpt;
  bool random_points = false;

  // detect / describe / match
  std::string image_path;
  std::string ckpt_path;
  std::string kpts_path;
  std::string desc_a, desc_b;
  double ratio = 0.1;
  int nms_radius = 7;
  int max_kpts = 5000;

  // eval
  std::string pairs = "synth";
  int n_pairs = 20;
  std::string mode = "viewpoint";
  std::string desc_ckpt;
  double tol = 5.0;
  int eval_nms_radius = 15;
  std::string eval_size = "128x128";

  // flops
  std::string net = "sobelnet";
  std::string flops_size = "640x480";

  // synth-data
  int gen_n = 16;
  std::string gen_dir;
};

struct Bundle {
  CliState state;
  CLI::App app{"sobelkey: SobelNet keypoint detector + DesNet descriptor toolkit", "sobelkey"};
};

std::pair<int, int> parse_size(const std::string& s) {
  int w = 0, h = 0;
  if (std::sscanf(s.c_str(), "%dx%d", &w, &h) != 2 || w < 1 || h < 1) {
    throw ImageError("bad --size '" + s + "', expected WxH like 640x480");
  }
  return {w, h};
}

void build_app(Bundle& b) {
  CliState& s = b.state;
  CLI::App& app = b.app;
  app.require_subcommand(0, 1);
  app.fallthrough();  // global flags may follow the subcommand
  app.add_option("--threads", s.threads, "Worker thread count (default: hardware cores)");
  app.add_flag("--deterministic", s.deterministic, "Single-threaded bit-reproducible mode");

  auto add_train_common = [&](CLI::App* t) {
    t->add_option("--config", s.config_path, "key=value config file")->check(CLI::ExistingFile);
    t->add_option("--data", s.data, "'synthetic' or a directory of .pgm images");
    t->add_option("--steps", s.steps, "Optimizer steps");
    t->add_option("--batch", s.batch, "Training pairs per step");
    t->add_option("--lr", s.lr, "Learning rate (default 1e-3 detector, 3e-4 descriptor)");
    t->add_option("--optimizer", s.optimizer, "adam | sgd")->check(CLI::IsMember({"adam", "sgd"}));
    t->add_option("--seed", s.seed, "Base RNG seed");
    t->add_option("--synth-n", s.synth_n, "Synthetic dataset size");
    t->add_option("--size", s.size, "Synthetic image size WxH");
    t->add_option("-o,--out", s.out_path, "Output checkpoint path");
    t->add_option("--log", s.log_path, "CSV training log path");
    t->add_option("--resume", s.resume_path, "Resume from checkpoint")->check(CLI::ExistingFile);
  };

  CLI::App* td = app.add_subcommand("train-detector", "Train SobelNet with the multi-scale cross-warp Gaussian loss");
  add_train_common(td);

  CLI::App* ts = app.add_subcommand("train-descriptor", "Train DesNet with circle loss on keypoint candidates");
  add_train_common(ts);
  ts->add_option("--det", s.det_ckpt, "Frozen detector checkpoint")->required()->check(CLI::ExistingFile);
  ts->add_flag("--random-points", s.random_points, "Ablation: sample training points ignoring the score map");

  CLI::App* de = app.add_subcommand("detect", "Detect keypoints in a PGM image");
  de->add_option("image", s.image_path, "Input image (PGM P5)")->required()->check(CLI::ExistingFile);
  de->add_option("--ckpt", s.ckpt_path, "SobelNet checkpoint")->required()->check(CLI::ExistingFile);
  de->add_option("-o,--out", s.out_path, "Output keypoint file")->required();
  de->add_option("--ratio", s.ratio, "Score threshold as a ratio of the map maximum");
  de->add_option("--nms-radius", s.nms_radius, "NMS window radius in pixels");
  de->add_option("--max-kpts", s.max_kpts, "Keypoint cap");

  CLI::App* ds = app.add_subcommand("describe", "Compute descriptors at keypoints");
  ds->add_option("image", s.image_path, "Input image (PGM P5)")->required()->check(CLI::ExistingFile);
  ds->add_option("--kpts", s.kpts_path, "Keypoint file from 'detect'")->required()->check(CLI::ExistingFile);
  ds->add_option("--ckpt", s.ckpt_path, "DesNet checkpoint")->required()->check(CLI::ExistingFile);
  ds->add_option("-o,--out", s.out_path, "Output descriptor file")->required();

  CLI::App* ma = app.add_subcommand("match", "Mutual nearest-neighbour matching of two descriptor files");
  ma->add_option("desc_a", s.desc_a, "First descriptor file")->required()->check(CLI::ExistingFile);
  ma->add_option("desc_b", s.desc_b, "Second descriptor file")->required()->check(CLI::ExistingFile);
  ma->add_option("-o,--out", s.out_path, "Output match file")->required();

  CLI::App* ev = app.add_subcommand("eval", "Homography-benchmark metrics (Rep, M.S., MMA)");
  ev->add_option("--pairs", s.pairs, "'synth' or a directory with pairs.txt");
  ev->add_option("--n", s.n_pairs, "Synthetic pair count");
  ev->add_option("--mode", s.mode, "viewpoint | illumination | both")
      ->check(CLI::IsMember({"viewpoint", "illumination", "both"}));
  ev->add_option("--size", s.eval_size, "Synthetic image size WxH");
  ev->add_option("--seed", s.seed, "Benchmark seed");
  ev->add_option("--det", s.det_ckpt, "SobelNet checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--desc", s.desc_ckpt, "DesNet checkpoint (omit for detector-only metrics)")
      ->check(CLI::ExistingFile);
  ev->add_option("--ratio", s.ratio, "Score threshold ratio");
  ev->add_option("--nms-radius", s.eval_nms_radius, "NMS window radius");
  ev->add_option("--max-kpts", s.max_kpts, "Keypoint cap");
  ev->add_option("--tol", s.tol, "Correctness threshold in pixels");
  ev->add_option("-o,--out", s.out_path, "Report CSV path");

  CLI::App* fl = app.add_subcommand("flops", "Print the conv multiplication count of a network");
  fl->add_option("--net", s.net, "sobelnet | desnet")->check(CLI::IsMember({"sobelnet", "desnet"}));
  fl->add_option("--size", s.flops_size, "Image size WxH");

  CLI::App* sy = app.add_subcommand("synth-data", "Generate the synthetic shapes dataset as PGM files");
  sy->add_option("-n", s.gen_n, "Image count")->required();
  sy->add_option("-o,--out", s.gen_dir, "Output directory")->required();
  sy->add_option("--size", s.size, "Image size WxH");
  sy->add_option("--seed", s.seed, "Dataset seed");
}

// --- training config assembly -------------------------------------------------

TrainConfig assemble_train_config(const CliState& s, CLI::App* sub, TrainConfig::Stage stage) {
  TrainConfig cfg;
  cfg.stage = stage;

  if (!s.config_path.empty()) {
    KvConfig kv = KvConfig::load(s.config_path);
    cfg.dataset = kv.get_string("data", cfg.dataset);
    cfg.steps = kv.get_int("steps", cfg.steps);
    cfg.batch = kv.get_int("batch", cfg.batch);
    cfg.opt.lr = static_cast<float>(kv.get_double("lr", cfg.opt.lr));
    cfg.seed = kv.get_u64("seed", cfg.seed);
    cfg.synth_n = kv.get_int("synth_n", cfg.synth_n);
    cfg.synth_w = kv.get_int("synth_w", cfg.synth_w);
    cfg.synth_h = kv.get_int("synth_h", cfg.synth_h);
    cfg.deterministic = kv.get_bool("deterministic", cfg.deterministic);
    if (kv.get_string("optimizer", "adam") == "sgd") cfg.opt.type = OptimizerConfig::kSgd;

    AugmentConfig aug =
        stage == TrainConfig::kDetector ? AugmentConfig::detector_defaults() : AugmentConfig::descriptor_defaults();
    bool touched = false;
    auto aug_f = [&](const char* key, float& field) {
      if (kv.has(key)) {
        field = static_cast<float>(kv.get_double(key, field));
        touched = true;
      }
    };
    aug_f("corner_jitter", aug.corner_jitter);
    aug_f("rot_lo_deg", aug.rot_lo_deg);
    aug_f("rot_hi_deg", aug.rot_hi_deg);
    aug_f("scale_lo", aug.scale_lo);
    aug_f("scale_hi", aug.scale_hi);
    aug_f("contrast_lo", aug.photo.contrast_lo);
    aug_f("contrast_hi", aug.photo.contrast_hi);
    aug_f("brightness_lo", aug.photo.brightness_lo);
    aug_f("brightness_hi", aug.photo.brightness_hi);
    aug_f("hue_deg", aug.photo.hue_deg);
    if (touched) {
      cfg.augment = aug;
      cfg.augment_set = true;
    }

    cfg.train_detector_biases = kv.get_bool("train_biases", cfg.train_detector_biases);
    cfg.candidates = kv.get_int("candidates", cfg.candidates);
    cfg.cand_min_dist = static_cast<float>(kv.get_double("cand_min_dist", cfg.cand_min_dist));
    cfg.cand_alpha = static_cast<float>(kv.get_double("cand_alpha", cfg.cand_alpha));
    cfg.random_points = kv.get_bool("random_points", cfg.random_points);
    cfg.circle_m = static_cast<float>(kv.get_double("circle_m", cfg.circle_m));
    cfg.circle_gamma = static_cast<float>(kv.get_double("circle_gamma", cfg.circle_gamma));
    cfg.sobelnet.kernel = kv.get_int("sobel_kernel", cfg.sobelnet.kernel);
    cfg.sobelnet.channels = kv.get_int("sobel_channels", cfg.sobelnet.channels);
    const std::string ch = kv.get_string("desnet_channels", "");
    if (!ch.empty()) {
      cfg.desnet.channels.clear();
      std::istringstream ss(ch);
      std::string tok;
      while (std::getline(ss, tok, ',')) cfg.desnet.channels.push_back(std::stoi(tok));
    }
    kv.finish();
  }

  // explicit flags override the config file
  auto given = [&](const char* name) { return sub->count(name) > 0; };
  if (given("--data")) cfg.dataset = s.data;
  if (given("--steps")) cfg.steps = s.steps;
  if (given("--batch")) cfg.batch = s.batch;
  if (given("--lr")) cfg.opt.lr = static_cast<float>(s.lr);
  if (given("--optimizer")) cfg.opt.type = s.optimizer == "sgd" ? OptimizerConfig::kSgd : OptimizerConfig::kAdam;
  if (given("--seed")) cfg.seed = s.seed;
  if (given("--synth-n")) cfg.synth_n = s.synth_n;
  if (given("--size")) {
    auto [w, h] = parse_size(s.size);
    cfg.synth_w = w;
    cfg.synth_h = h;
  }
  cfg.out_path = s.out_path;
  cfg.log_path = s.log_path;
  cfg.resume_path = s.resume_path;
  cfg.random_points = cfg.random_points || s.random_points;
  cfg.deterministic = cfg.deterministic || s.deterministic;
  cfg.resolve();
  return cfg;
}

void echo_train_config(const TrainConfig& cfg, const char* sub) {
  std::fprintf(stderr,
               "# resolved-config cmd=%s data=%s steps=%d batch=%d lr=%g optimizer=%s seed=%llu synth=%dx%dx%d "
               "deterministic=%d out=%s log=%s resume=%s random_points=%d\n",
               sub, cfg.dataset.c_str(), cfg.steps, cfg.batch, static_cast<double>(cfg.opt.lr),
               cfg.opt.type == OptimizerConfig::kSgd ? "sgd" : "adam", static_cast<unsigned long long>(cfg.seed),
               cfg.synth_n, cfg.synth_w, cfg.synth_h, cfg.deterministic ? 1 : 0, cfg.out_path.c_str(),
               cfg.log_path.c_str(), cfg.resume_path.c_str(), cfg.random_points ? 1 : 0);
}

// --- subcommand bodies ----------------------------------------------------------

int run_detect(const CliState& s) {
  std::fprintf(stderr, "# resolved-config cmd=detect image=%s ckpt=%s out=%s ratio=%g nms_radius=%d max_kpts=%d\n",
               s.image_path.c_str(), s.ckpt_path.c_str(), s.out_path.c_str(), s.ratio, s.nms_radius, s.max_kpts);
  const GrayImage img = load_pgm(s.image_path);
  const SobelNetParams det = detector_from_checkpoint(load_checkpoint(s.ckpt_path, "sobelnet"));
  const DetectConfig dc{static_cast<float>(s.ratio), s.nms_radius, s.max_kpts};
  const KeypointSet kps = detect(img, det, dc);
  save_keypoints(s.out_path, kps);
  std::printf("%zu keypoints -> %s\n", kps.pts.size(), s.out_path.c_str());
  return 0;
}

int run_describe(const CliState& s) {
  std::fprintf(stderr, "# resolved-config cmd=describe image=%s kpts=%s ckpt=%s out=%s\n", s.image_path.c_str(),
               s.kpts_path.c_str(), s.ckpt_path.c_str(), s.out_path.c_str());
  const GrayImage img = load_pgm(s.image_path);
  const KeypointSet kps = load_keypoints(s.kpts_path);
  if (kps.w != img.w || kps.h != img.h) {
    throw ImageError("describe: keypoint file geometry does not match the image");
  }
  const DesNetParams desc = descriptor_from_checkpoint(load_checkpoint(s.ckpt_path, "desnet"));
  const DescriptorMap dmap = desnet_descriptors(img, desc);
  std::vector<std::pair<float, float>> pts;
  pts.reserve(kps.pts.size());
  for (const Keypoint& k : kps.pts) pts.emplace_back(k.x, k.y);
  save_descriptors(s.out_path, pts, sample_descriptors(dmap, pts));
  std::printf("%zu descriptors -> %s\n", pts.size(), s.out_path.c_str());
  return 0;
}

int run_match(const CliState& s) {
  std::fprintf(stderr, "# resolved-config cmd=match a=%s b=%s out=%s\n", s.desc_a.c_str(), s.desc_b.c_str(),
               s.out_path.c_str());
  const DescriptorFile fa = load_descriptors(s.desc_a);
  const DescriptorFile fb = load_descriptors(s.desc_b);
  const std::vector<Match> matches = mutual_nn_match(fa.descs, fb.descs);
  std::ofstream out(s.out_path);
  if (!out) throw ImageError("match: cannot write " + s.out_path);
  out << "# sobelkey matches v1 " << fa.descs.size() << " " << fb.descs.size() << "\n";
  char row[64];
  for (const Match& m : matches) {
    std::snprintf(row, sizeof(row), "%d %d %.6f\n", m.i, m.j, m.similarity);
    out << row;
  }
  std::printf("%zu matches -> %s\n", matches.size(), s.out_path.c_str());
  return 0;
}

int run_eval(const CliState& s) {
  EvalConfig ec;
  ec.ratio = static_cast<float>(s.ratio);
  ec.nms_radius = s.eval_nms_radius;
  ec.max_kpts = s.max_kpts;
  ec.tol_px = s.tol;
  ec.with_descriptors = !s.desc_ckpt.empty();
  std::fprintf(stderr,
               "# resolved-config cmd=eval pairs=%s n=%d mode=%s seed=%llu det=%s desc=%s ratio=%g nms_radius=%d "
               "max_kpts=%d tol=%g\n",
               s.pairs.c_str(), s.n_pairs, s.mode.c_str(), static_cast<unsigned long long>(s.seed),
               s.det_ckpt.c_str(), s.desc_ckpt.c_str(), s.ratio, ec.nms_radius, ec.max_kpts, ec.tol_px);

  const SobelNetParams det = detector_from_checkpoint(load_checkpoint(s.det_ckpt, "sobelnet"));
  DesNetParams desc;
  if (ec.with_descriptors) desc = descriptor_from_checkpoint(load_checkpoint(s.desc_ckpt, "desnet"));

  EvalReport report;
  if (s.pairs == "synth") {
    auto [w, h] = parse_size(s.eval_size);
    std::vector<EvalPair> pairs;
    if (s.mode == "both") {
      pairs = synth_benchmark(s.n_pairs, s.seed, h, w, "viewpoint");
      auto illum = synth_benchmark(s.n_pairs, mix_seed(s.seed, 2), h, w, "illumination");
      pairs.insert(pairs.end(), std::make_move_iterator(illum.begin()), std::make_move_iterator(illum.end()));
    } else {
      pairs = synth_benchmark(s.n_pairs, s.seed, h, w, s.mode);
    }
    report = evaluate(det, ec.with_descriptors ? &desc : nullptr, pairs, ec);
  } else {
    const std::filesystem::path dir(s.pairs);
    const std::vector<EvalPair> pairs = load_pairs_dir(dir);
    // sidecar features (<image>.kpts / <image>.desc) take precedence per pair
    bool any_files = false;
    std::vector<PairResult> rows(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const EvalPair& p = pairs[i];
      const auto ka_path = dir / (p.name_a + ".kpts");
      const auto kb_path = dir / (p.name_b + ".kpts");
      if (std::filesystem::exists(ka_path) && std::filesystem::exists(kb_path)) {
        any_files = true;
        const KeypointSet ka = load_keypoints(ka_path);
        const KeypointSet kb = load_keypoints(kb_path);
        std::vector<std::vector<float>> da, db;
        const auto da_path = dir / (p.name_a + ".desc");
        const auto db_path = dir / (p.name_b + ".desc");
        EvalConfig local = ec;
        if (ec.with_descriptors || (std::filesystem::exists(da_path) && std::filesystem::exists(db_path))) {
          if (std::filesystem::exists(da_path) && std::filesystem::exists(db_path)) {
            DescriptorFile fa = load_descriptors(da_path);
            DescriptorFile fb = load_descriptors(db_path);
            if (fa.descs.size() != ka.pts.size() || fb.descs.size() != kb.pts.size()) {
              throw ImageError("eval: descriptor/keypoint counts differ for pair " + p.name_a + " " + p.name_b);
            }
            da = std::move(fa.descs);
            db = std::move(fb.descs);
            local.with_descriptors = true;
          } else {
            local.with_descriptors = false;
          }
        }
        rows[i] = evaluate_features(ka, kb, da, db, p.h, local);
        rows[i].mode = p.mode;
      } else {
        const std::vector<EvalPair> one{p};
        rows[i] = evaluate(det, ec.with_descriptors ? &desc : nullptr, one, ec).rows[0];
      }
    }
    report.rows = std::move(rows);
    for (const PairResult& r : report.rows) {
      report.rep += r.rep;
      report.ms += r.ms;
      report.mma += r.mma;
      report.kpts += r.kpts;
    }
    const double n = static_cast<double>(report.rows.size());
    report.rep /= n;
    report.ms /= n;
    report.mma /= n;
    report.kpts /= n;
    char echo[160];
    std::snprintf(echo, sizeof(echo), "ratio=%g nms_radius=%d max_kpts=%d tol_px=%g descriptors=%d files=%d",
                  static_cast<double>(ec.ratio), ec.nms_radius, ec.max_kpts, ec.tol_px, ec.with_descriptors ? 1 : 0,
                  any_files ? 1 : 0);
    report.config_echo = echo;
  }

  write_report_table(std::cout, report);
  if (!s.out_path.empty()) {
    write_report_csv(s.out_path, report);
    std::printf("report -> %s\n", s.out_path.c_str());
  }
  return 0;
}

int run_flops(const CliState& s) {
  auto [w, h] = parse_size(s.flops_size);
  std::fprintf(stderr, "# resolved-config cmd=flops net=%s size=%dx%d\n", s.net.c_str(), w, h);
  long long count = 0;
  if (s.net == "sobelnet") {
    count = count_multiplications(SobelNetConfig{}, h, w);
  } else {
    count = count_multiplications(DesNetConfig{}, h, w);
  }
  std::printf("%lld\n", count);
  return 0;
}

int run_synth_data(const CliState& s) {
  auto [w, h] = parse_size(s.size);
  std::fprintf(stderr, "# resolved-config cmd=synth-data n=%d out=%s size=%dx%d seed=%llu\n", s.gen_n,
               s.gen_dir.c_str(), w, h, static_cast<unsigned long long>(s.seed));
  std::filesystem::create_directories(s.gen_dir);
  const std::vector<GrayImage> images = synth_dataset(s.gen_n, h, w, s.seed);
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%05zu.pgm", i);
    save_pgm(std::filesystem::path(s.gen_dir) / name, images[i]);
  }
  std::printf("%zu images -> %s\n", images.size(), s.gen_dir.c_str());
  return 0;
}

}  // namespace

std::shared_ptr<CLI::App> make_cli_app() {
  auto bundle = std::make_shared<Bundle>();
  build_app(*bundle);
  return std::shared_ptr<CLI::App>(bundle, &bundle->app);
}

int cli_run(int argc, const char* const* argv) {
  Bundle bundle;
  build_app(bundle);
  CliState& s = bundle.state;
  CLI::App& app = bundle.app;

  try {
    app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  if (s.deterministic) {
    set_thread_count(1);
  } else if (s.threads > 0) {
    set_thread_count(s.threads);
  }

  try {
    if (app.got_subcommand("train-detector")) {
      TrainConfig cfg = assemble_train_config(s, app.get_subcommand("train-detector"), TrainConfig::kDetector);
      echo_train_config(cfg, "train-detector");
      TrainResult res = train_detector(cfg);
      std::printf("trained %d steps, final loss %.6f%s%s\n", cfg.steps, res.losses.empty() ? 0.0 : res.losses.back(),
                  cfg.out_path.empty() ? "" : ", checkpoint -> ", cfg.out_path.c_str());
      return 0;
    }
    if (app.got_subcommand("train-descriptor")) {
      TrainConfig cfg = assemble_train_config(s, app.get_subcommand("train-descriptor"), TrainConfig::kDescriptor);
      echo_train_config(cfg, "train-descriptor");
      const Checkpoint det = load_checkpoint(s.det_ckpt, "sobelnet");
      TrainResult res = train_descriptor(cfg, det);
      std::printf("trained %d steps, final loss %.6f%s%s\n", cfg.steps, res.losses.empty() ? 0.0 : res.losses.back(),
                  cfg.out_path.empty() ? "" : ", checkpoint -> ", cfg.out_path.c_str());
      return 0;
    }
    if (app.got_subcommand("detect")) return run_detect(s);
    if (app.got_subcommand("describe")) return run_describe(s);
    if (app.got_subcommand("match")) return run_match(s);
    if (app.got_subcommand("eval")) return run_eval(s);
    if (app.got_subcommand("flops")) return run_flops(s);
    if (app.got_subcommand("synth-data")) return run_synth_data(s);
    std::cerr << app.help();
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace sobelkey
