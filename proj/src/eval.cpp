#include "sobelkey/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "sobelkey/parallel.hpp"
#include "sobelkey/rng.hpp"
#include "sobelkey/synth.hpp"

namespace sobelkey {

namespace {

bool inside(double x, double y, int w, int h) { return x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0; }

double quantize6(double v) { return std::llround(v * 1e6) / 1e6; }

}  // namespace

std::pair<KeypointSet, KeypointSet> shared_view_filter(const KeypointSet& kps_a, const KeypointSet& kps_b,
                                                       const Homography& h, std::vector<int>* kept_a,
                                                       std::vector<int>* kept_b) {
  const Homography hinv = h.inverse();
  KeypointSet fa, fb;
  fa.w = kps_a.w;
  fa.h = kps_a.h;
  fb.w = kps_b.w;
  fb.h = kps_b.h;
  for (std::size_t i = 0; i < kps_a.pts.size(); ++i) {
    double x, y;
    h.apply(kps_a.pts[i].x, kps_a.pts[i].y, x, y);
    if (inside(x, y, kps_b.w, kps_b.h)) {
      fa.pts.push_back(kps_a.pts[i]);
      if (kept_a) kept_a->push_back(static_cast<int>(i));
    }
  }
  for (std::size_t i = 0; i < kps_b.pts.size(); ++i) {
    double x, y;
    hinv.apply(kps_b.pts[i].x, kps_b.pts[i].y, x, y);
    if (inside(x, y, kps_a.w, kps_a.h)) {
      fb.pts.push_back(kps_b.pts[i]);
      if (kept_b) kept_b->push_back(static_cast<int>(i));
    }
  }
  return {fa, fb};
}

double reprojection_distance(const Keypoint& a, const Keypoint& b, const Homography& h, const Homography& h_inv) {
  double fx, fy, bx, by;
  h.apply(a.x, a.y, fx, fy);
  h_inv.apply(b.x, b.y, bx, by);
  const double d_fwd = std::sqrt((fx - b.x) * (fx - b.x) + (fy - b.y) * (fy - b.y));
  const double d_bwd = std::sqrt((bx - a.x) * (bx - a.x) + (by - a.y) * (by - a.y));
  return 0.5 * (d_fwd + d_bwd);
}

namespace {

struct CandPair {
  double dist;
  int i, j;
};

// greedy one-to-one assignment over ascending distance
int possible_matches(const KeypointSet& kps_a, const KeypointSet& kps_b, const Homography& h, double tol_px) {
  const Homography h_inv = h.inverse();
  std::vector<CandPair> cands;
  for (std::size_t i = 0; i < kps_a.pts.size(); ++i) {
    for (std::size_t j = 0; j < kps_b.pts.size(); ++j) {
      const double d = reprojection_distance(kps_a.pts[i], kps_b.pts[j], h, h_inv);
      if (d <= tol_px) cands.push_back({d, static_cast<int>(i), static_cast<int>(j)});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const CandPair& a, const CandPair& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  std::vector<char> used_a(kps_a.pts.size(), 0), used_b(kps_b.pts.size(), 0);
  int count = 0;
  for (const CandPair& c : cands) {
    if (used_a[static_cast<std::size_t>(c.i)] || used_b[static_cast<std::size_t>(c.j)]) continue;
    used_a[static_cast<std::size_t>(c.i)] = used_b[static_cast<std::size_t>(c.j)] = 1;
    ++count;
  }
  return count;
}

}  // namespace

double repeatability(const KeypointSet& kps_a, const KeypointSet& kps_b, const Homography& h, double tol_px,
                     int* possible_out) {
  if (kps_a.pts.empty() || kps_b.pts.empty()) {
    if (possible_out) *possible_out = 0;
    return 0.0;
  }
  const int possible = possible_matches(kps_a, kps_b, h, tol_px);
  if (possible_out) *possible_out = possible;
  const int denom = static_cast<int>(std::min(kps_a.pts.size(), kps_b.pts.size()));
  return 100.0 * possible / denom;
}

std::vector<Match> mutual_nn_match(const std::vector<std::vector<float>>& desc_a,
                                   const std::vector<std::vector<float>>& desc_b) {
  std::vector<Match> out;
  if (desc_a.empty() || desc_b.empty()) return out;
  const std::size_t na = desc_a.size(), nb = desc_b.size();
  const std::size_t d = desc_a[0].size();
  std::vector<double> sim(na * nb);
  for (std::size_t i = 0; i < na; ++i) {
    if (desc_a[i].size() != d) throw ImageError("mutual_nn_match: ragged descriptor dims");
    for (std::size_t j = 0; j < nb; ++j) {
      if (desc_b[j].size() != d) throw ImageError("mutual_nn_match: ragged descriptor dims");
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += static_cast<double>(desc_a[i][k]) * desc_b[j][k];
      sim[i * nb + j] = acc;
    }
  }
  std::vector<int> best_b(na, 0);
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 1; j < nb; ++j) {
      if (sim[i * nb + j] > sim[i * nb + static_cast<std::size_t>(best_b[i])]) best_b[i] = static_cast<int>(j);
    }
  }
  std::vector<int> best_a(nb, 0);
  for (std::size_t j = 0; j < nb; ++j) {
    for (std::size_t i = 1; i < na; ++i) {
      if (sim[i * nb + j] > sim[static_cast<std::size_t>(best_a[j]) * nb + j]) best_a[j] = static_cast<int>(i);
    }
  }
  for (std::size_t i = 0; i < na; ++i) {
    const int j = best_b[i];
    if (best_a[static_cast<std::size_t>(j)] == static_cast<int>(i)) {
      out.push_back({static_cast<int>(i), j, static_cast<float>(sim[i * nb + static_cast<std::size_t>(j)])});
    }
  }
  return out;
}

std::pair<double, double> matching_score_and_mma(const std::vector<Match>& matches, const KeypointSet& kps_a,
                                                 const KeypointSet& kps_b, const Homography& h, double tol_px,
                                                 int possible) {
  if (kps_a.pts.empty() || kps_b.pts.empty()) return {0.0, 0.0};
  const Homography h_inv = h.inverse();
  int correct = 0;
  for (const Match& m : matches) {
    if (reprojection_distance(kps_a.pts[static_cast<std::size_t>(m.i)], kps_b.pts[static_cast<std::size_t>(m.j)], h,
                              h_inv) <= tol_px) {
      ++correct;
    }
  }
  const int denom = static_cast<int>(std::min(kps_a.pts.size(), kps_b.pts.size()));
  const double ms = 100.0 * correct / denom;
  const double mma = possible > 0 ? 100.0 * correct / possible : 0.0;
  return {ms, mma};
}

std::vector<EvalPair> synth_benchmark(int n_pairs, std::uint64_t seed, int height, int width, const std::string& mode,
                                      const AugmentConfig& aug) {
  if (n_pairs < 1) throw ImageError("synth_benchmark: n_pairs must be >= 1");
  if (mode != "viewpoint" && mode != "illumination") throw ImageError("synth_benchmark: unknown mode " + mode);
  std::vector<EvalPair> pairs;
  pairs.reserve(static_cast<std::size_t>(n_pairs));
  for (int i = 0; i < n_pairs; ++i) {
    const GrayImage img = synth_image(height, width, mix_seed(seed, static_cast<std::uint64_t>(i), 0));
    EvalPair p;
    p.mode = mode;
    if (mode == "viewpoint") {
      TrainingPair tp = make_training_pair(img, aug, mix_seed(seed, static_cast<std::uint64_t>(i), 1));
      p.a = std::move(tp.original);
      p.b = std::move(tp.transformed);
      p.h = tp.h;
    } else {
      p.a = photometric_jitter(img, aug.photo, mix_seed(seed, static_cast<std::uint64_t>(i), 2));
      p.b = photometric_jitter(img, aug.photo, mix_seed(seed, static_cast<std::uint64_t>(i), 3));
      p.h = Homography::identity();
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

PairResult evaluate_features(const KeypointSet& kps_a, const KeypointSet& kps_b,
                             const std::vector<std::vector<float>>& desc_a,
                             const std::vector<std::vector<float>>& desc_b, const Homography& h,
                             const EvalConfig& cfg) {
  PairResult r;
  std::vector<int> kept_a, kept_b;
  auto [fa, fb] = shared_view_filter(kps_a, kps_b, h, &kept_a, &kept_b);
  r.n_shared_a = static_cast<int>(fa.pts.size());
  r.n_shared_b = static_cast<int>(fb.pts.size());
  r.kpts = quantize6((r.n_shared_a + r.n_shared_b) / 2.0);
  r.rep = quantize6(repeatability(fa, fb, h, cfg.tol_px, &r.possible));
  if (cfg.with_descriptors && !desc_a.empty() && !desc_b.empty() && !fa.pts.empty() && !fb.pts.empty()) {
    std::vector<std::vector<float>> da, db;
    da.reserve(kept_a.size());
    db.reserve(kept_b.size());
    for (int i : kept_a) da.push_back(desc_a[static_cast<std::size_t>(i)]);
    for (int i : kept_b) db.push_back(desc_b[static_cast<std::size_t>(i)]);
    const std::vector<Match> matches = mutual_nn_match(da, db);
    r.matches = static_cast<int>(matches.size());
    auto [ms, mma] = matching_score_and_mma(matches, fa, fb, h, cfg.tol_px, r.possible);
    const Homography h_inv = h.inverse();
    int correct = 0;
    for (const Match& m : matches) {
      if (reprojection_distance(fa.pts[static_cast<std::size_t>(m.i)], fb.pts[static_cast<std::size_t>(m.j)], h,
                                h_inv) <= cfg.tol_px) {
        ++correct;
      }
    }
    r.correct = correct;
    r.ms = quantize6(ms);
    r.mma = quantize6(mma);
  }
  return r;
}

EvalReport evaluate(const SobelNetParams& det, const DesNetParams* desc, const std::vector<EvalPair>& pairs,
                    const EvalConfig& cfg) {
  if (pairs.empty()) throw ImageError("evaluate: empty pair list");
  EvalReport report;
  report.rows.resize(pairs.size());
  {
    char echo[160];
    std::snprintf(echo, sizeof(echo), "ratio=%g nms_radius=%d max_kpts=%d tol_px=%g descriptors=%d",
                  static_cast<double>(cfg.ratio), cfg.nms_radius, cfg.max_kpts, cfg.tol_px,
                  desc && cfg.with_descriptors ? 1 : 0);
    report.config_echo = echo;
  }
  const DetectConfig dc{cfg.ratio, cfg.nms_radius, cfg.max_kpts};
  parallel_for(static_cast<int>(pairs.size()), [&](int pi) {
    const EvalPair& p = pairs[static_cast<std::size_t>(pi)];
    const KeypointSet ka = detect(p.a, det, dc);
    const KeypointSet kb = detect(p.b, det, dc);
    std::vector<std::vector<float>> da, db;
    EvalConfig local = cfg;
    if (desc && cfg.with_descriptors) {
      // descriptors sampled at the detected points; the shared-view subset is
      // carved out inside evaluate_features
      const DescriptorMap ma = desnet_descriptors(p.a, *desc);
      const DescriptorMap mb = desnet_descriptors(p.b, *desc);
      std::vector<std::pair<float, float>> pa, pb;
      for (const Keypoint& k : ka.pts) pa.emplace_back(k.x, k.y);
      for (const Keypoint& k : kb.pts) pb.emplace_back(k.x, k.y);
      da = sample_descriptors(ma, pa);
      db = sample_descriptors(mb, pb);
    } else {
      local.with_descriptors = false;
    }
    PairResult r = evaluate_features(ka, kb, da, db, p.h, local);
    r.mode = p.mode;
    report.rows[static_cast<std::size_t>(pi)] = r;
  });

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
  return report;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw ImageError("report: cannot write " + path.string());
  out << "# sobelkey eval report v1\n";
  out << "# " << report.config_echo << "\n";
  out << "# matcher=mutual-nn assignment=greedy-ascending-distance\n";
  out << "pair,mode,rep,ms,mma,kpts,shared_a,shared_b,possible,correct,matches\n";
  char row[256];
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const PairResult& r = report.rows[i];
    std::snprintf(row, sizeof(row), "%zu,%s,%.6f,%.6f,%.6f,%.6f,%d,%d,%d,%d,%d\n", i, r.mode.c_str(), r.rep, r.ms,
                  r.mma, r.kpts, r.n_shared_a, r.n_shared_b, r.possible, r.correct, r.matches);
    out << row;
  }
  std::snprintf(row, sizeof(row), "mean,all,%.6f,%.6f,%.6f,%.6f,,,,,\n", report.rep, report.ms, report.mma,
                report.kpts);
  out << row;
  if (!out) throw ImageError("report: write failed for " + path.string());
}

void write_report_table(std::ostream& os, const EvalReport& report) {
  struct Bucket {
    double rep = 0, ms = 0, mma = 0, kpts = 0;
    int n = 0;
  };
  Bucket view, illum, all;
  for (const PairResult& r : report.rows) {
    Bucket& b = r.mode == "illumination" ? illum : view;
    for (Bucket* t : {&b, &all}) {
      t->rep += r.rep;
      t->ms += r.ms;
      t->mma += r.mma;
      t->kpts += r.kpts;
      ++t->n;
    }
  }
  auto line = [&](const char* name, const Bucket& b) {
    if (b.n == 0) return;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-14s %8.2f %8.2f %8.2f %8.1f %6d\n", name, b.rep / b.n, b.ms / b.n, b.mma / b.n,
                  b.kpts / b.n, b.n);
    os << buf;
  };
  os << "                    Rep      M.S      MMA     Kpts  pairs\n";
  line("viewpoint", view);
  line("illumination", illum);
  line("overall", all);
}

std::vector<EvalPair> load_pairs_dir(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "pairs.txt");
  if (!manifest) throw ImageError("eval: cannot open " + (dir / "pairs.txt").string());
  std::vector<EvalPair> pairs;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string img_a, img_b;
    std::array<double, 9> m;
    if (!(ss >> img_a >> img_b >> m[0] >> m[1] >> m[2] >> m[3] >> m[4] >> m[5] >> m[6] >> m[7] >> m[8])) {
      throw ImageError("eval: malformed pairs.txt line: " + line);
    }
    EvalPair p;
    p.a = load_pgm(dir / img_a);
    p.b = load_pgm(dir / img_b);
    p.h = Homography::from_matrix(m);
    p.mode = "viewpoint";
    p.name_a = img_a;
    p.name_b = img_b;
    pairs.push_back(std::move(p));
  }
  if (pairs.empty()) throw ImageError("eval: no pairs in " + (dir / "pairs.txt").string());
  return pairs;
}

}  // namespace sobelkey
