// Acceptance suite: one pass/fail line per criterion. Exit code is the
// number of failed criteria. Criteria can be selected by number on the
// command line (default: all).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "flame/checkpoint.hpp"
#include "flame/data.hpp"
#include "flame/gradsuite.hpp"
#include "flame/trainer.hpp"

using namespace flame;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double elapsed_s(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// --------------------------------------------------------------------------
// 1. Gradient suite
// --------------------------------------------------------------------------
Outcome criterion_gradients() {
  Outcome out;
  const auto t0 = Clock::now();
  const auto items = run_gradient_suite(1234);
  for (const auto& item : items) {
    out.require(item.passed(), item.name + " rel error " + std::to_string(item.max_rel_error));
  }
  const double secs = elapsed_s(t0);
  out.require(secs < 120.0, "runtime " + std::to_string(secs) + "s >= 120s");
  char buf[96];
  std::snprintf(buf, sizeof(buf), " (%zu checks, %.1fs)", items.size(), secs);
  out.detail += buf;
  return out;
}

// --------------------------------------------------------------------------
// 2. Loss identities
// --------------------------------------------------------------------------
Outcome criterion_loss_identities() {
  Outcome out;
  Rng rng(20260107);
  const double lim = 89.0 * kDegToRad;
  for (int i = 0; i < 1000; ++i) {
    const GazeAngles ap{rng.uniform(-lim, lim), rng.uniform(-kPi + 1e-9, kPi)};
    const GazeAngles at{rng.uniform(-lim, lim), rng.uniform(-kPi + 1e-9, kPi)};
    const Vec3 gp = angles_to_vector(ap);
    const Vec3 gt = angles_to_vector(at);

    const double err_rad = angular_error_deg(gp, gt) * kDegToRad;
    out.require(std::abs(vector_loss(gp, gt) - 2.0 * (1.0 - std::cos(err_rad))) < 1e-9,
                "loss identity violated at sample " + std::to_string(i));

    const double k = rng.uniform(0.1, 9.9);
    out.require(std::abs(angular_error_deg(k * gp, gt) - angular_error_deg(gp, gt)) <= 1e-12,
                "scale invariance violated at sample " + std::to_string(i));

    const GazeAngles back = vector_to_angles(gp);
    out.require(std::abs(back.pitch - ap.pitch) < 1e-9 && std::abs(back.yaw - ap.yaw) < 1e-9,
                "round trip violated at sample " + std::to_string(i));
    if (!out.pass) break;
  }
  return out;
}

// --------------------------------------------------------------------------
// 3. Gaussian heatmap checks
// --------------------------------------------------------------------------
Outcome criterion_heatmap() {
  Outcome out;

  std::vector<std::array<double, 2>> pts(28, {7.5, 11.5});
  auto hm = gaussian_heatmap<double>(LandmarkSet(pts), 24, 24);
  out.require(std::abs(hm(0, 11, 7, 0) - kHeatmapPeak) < 1e-9, "peak differs from 1/(2pi)");

  Rng rng(33);
  std::vector<std::array<double, 2>> rand_pts(28);
  for (auto& p : rand_pts) {
    // 1/64 grid keeps integer translation exact in floating point.
    p = {std::round(rng.uniform(6.0, 18.0) * 64.0) / 64.0,
         std::round(rng.uniform(6.0, 18.0) * 64.0) / 64.0};
  }
  LandmarkSet lm(rand_pts);
  auto base = gaussian_heatmap<double>(lm, 32, 32);
  auto shifted = gaussian_heatmap<double>(lm.translated(4, 6), 32, 32);
  for (int c = 0; c < 28 && out.pass; ++c) {
    for (Index y = 0; y < 24 && out.pass; ++y) {
      for (Index x = 0; x < 24; ++x) {
        if (shifted(0, y + 6, x + 4, c) != base(0, y, x, c)) {
          out.require(false, "translation equivariance not exact");
          break;
        }
      }
    }
  }

  for (int rep = 0; rep < 10; ++rep) {
    std::vector<std::array<double, 2>> p2(28);
    for (auto& p : p2) p = {rng.uniform(-6.0, 38.0), rng.uniform(-6.0, 38.0)};
    auto h = gaussian_heatmap<double>(LandmarkSet(p2), 32, 32);
    out.require(h.mat().minCoeff() >= 0.0 && h.mat().maxCoeff() <= kHeatmapPeak + 1e-15,
                "value range violated");
  }
  return out;
}

// --------------------------------------------------------------------------
// 4. MMTM identity and dimension rule
// --------------------------------------------------------------------------
Outcome criterion_mmtm() {
  Outcome out;
  Rng init(4);
  Mmtm<double> big("m", 256, 256, init);
  out.require(big.z_dim() == 128, "dim(Z) != 128 for 256+256");

  Mmtm<double> mmtm("m", 8, 8, init);
  mmtm.zero_excitation();
  Rng rng(5);
  Tensor4<double> r(2, 4, 4, 8), h(2, 4, 4, 8);
  for (Index i = 0; i < r.mat().size(); ++i) r.mat()(i) = rng.uniform(-2.0, 2.0);
  for (Index i = 0; i < h.mat().size(); ++i) h.mat()(i) = rng.uniform(-2.0, 2.0);
  auto [r2, h2] = mmtm.forward(r, h);
  out.require(r2.mat() == r.mat() && h2.mat() == h.mat(),
              "zero-excitation identity not bit-exact");

  Mmtm<double> live("m2", 8, 8, init);
  auto [r4, h4] = live.forward(r, h);
  for (Index i = 0; i < r.mat().size(); ++i) {
    if (r.mat()(i) != 0.0) {
      const double gain = r4.mat()(i) / r.mat()(i);
      if (!(gain > 0.0 && gain < 2.0)) {
        out.require(false, "gain outside (0, 2)");
        break;
      }
    }
  }
  return out;
}

// --------------------------------------------------------------------------
// 5. Shape suite
// --------------------------------------------------------------------------
Outcome criterion_shapes() {
  Outcome out;
  const auto t0 = Clock::now();
  Rng rng(6);

  {  // stage shapes at 120 px, paper scale, via the real layers
    Rng init(7);
    Conv2d<float> stem("s", 3, 64, 3, 1, 1, init);
    BatchNorm2d<float> stem_bn("sb", 64);
    Relu<float> relu;
    MaxPool2x2<float> pool0, pool1;
    ResidualBlock<float> m1a("a", 64, 64, init), m1b("b", 64, 64, init);

    Tensor4<float> x(1, 120, 120, 3);
    for (Index i = 0; i < x.mat().size(); ++i) x.mat()(i) = (float)rng.uniform();
    auto y = pool0.forward(relu.forward(stem_bn.forward(stem.forward(x), Mode::kEval)));
    y = pool1.forward(m1b.forward(m1a.forward(y, Mode::kEval), Mode::kEval));
    out.require(y.height() == 30 && y.width() == 30 && y.channels() == 64,
                "module-1 output is not 30x30x64");

    Backbone<float> bb("bb", 3, {64, 128, 256}, init);
    auto s2 = bb.forward_to_stage2(x, Mode::kEval);
    out.require(s2.height() == 15 && s2.width() == 15 && s2.channels() == 128,
                "module-2 output is not 15x15x128");
    auto s3 = bb.forward_stage3(s2, Mode::kEval);
    out.require(s3.height() == 7 && s3.width() == 7 && s3.channels() == 256,
                "module-3 output is not 7x7x256");
  }

  {
    FlameNet<float> net(ModelSpec::make(Variant::kFlame, 120), 8);
    out.require(net.head_input_width() == 12546, "head input width != 12546");
  }

  for (int res : {120, 60, 30}) {
    for (Variant v : {Variant::kFlame, Variant::kFAo, Variant::kFAf, Variant::kFB,
                      Variant::kDenseFusion}) {
      ModelSpec spec = ModelSpec::make(v, res);
      FlameNet<float> net(spec, 9);
      Batch<float> b;
      b.rgb = Tensor4<float>(4, res, res, 3);
      b.hm = Tensor4<float>(4, res, res, 28);
      for (Index i = 0; i < b.rgb.mat().size(); ++i) b.rgb.mat()(i) = (float)rng.uniform();
      for (Index i = 0; i < b.hm.mat().size(); ++i) {
        b.hm.mat()(i) = (float)rng.uniform(0.0, kHeatmapPeak);
      }
      b.pose = MatX<float>::Zero(4, 2);
      b.coords = MatX<float>::Constant(4, 56, 10.0f);
      const auto y = net.forward(b, Mode::kEval);
      out.require(y.rows() == 4 && y.cols() == 2 && y.allFinite(),
                  std::string(variant_name(v)) + " at " + std::to_string(res) +
                      "px: bad output");
    }
  }

  const double secs = elapsed_s(t0);
  out.require(secs < 60.0, "runtime " + std::to_string(secs) + "s >= 60s");
  char buf[64];
  std::snprintf(buf, sizeof(buf), " (%.1fs)", secs);
  out.detail += buf;
  return out;
}

// --------------------------------------------------------------------------
// 6. Learning-rate schedule
// --------------------------------------------------------------------------
Outcome criterion_schedule() {
  Outcome out;
  TrainConfig cfg;
  for (int e = 0; e < 200; ++e) {
    int k = 0;
    if (e > 85) ++k;
    if (e > 120) ++k;
    if (e > 175) ++k;
    const double want = 1e-4 * std::pow(0.5, k);
    if (std::abs(lr_at_epoch(cfg, e) - want) > 1e-18) {
      out.require(false, "lr mismatch at epoch " + std::to_string(e));
      break;
    }
  }
  return out;
}

// --------------------------------------------------------------------------
// 7. Synthetic overfit + least-squares oracle
// --------------------------------------------------------------------------
Outcome criterion_overfit() {
  Outcome out;
  const auto t0 = Clock::now();

  SynthConfig sc;
  sc.n = 64;
  sc.seed = 7;
  sc.noise = 0.0;
  auto records = synth_generate(sc);

  {  // independent pupil-offset oracle on the same 64 records
    MatX<double> f(64, 3), t(64, 2);
    for (int i = 0; i < 64; ++i) {
      Eigen::Vector2d pupil = Eigen::Vector2d::Zero();
      for (int p = LandmarkSet::kPupilBegin; p < 28; ++p) {
        pupil += records[i].left.point(p);
      }
      pupil /= 8.0;
      const Eigen::Vector2d off = pupil - eye_center(records[i].left);
      f.row(i) << off.x(), off.y(), 1.0;
      t.row(i) << records[i].gaze.pitch, records[i].gaze.yaw;
    }
    const MatX<double> w = (f.transpose() * f).ldlt().solve(f.transpose() * t);
    const MatX<double> pred = f * w;
    double total = 0;
    for (int i = 0; i < 64; ++i) {
      total += angular_error_deg(angles_to_vector({pred(i, 0), pred(i, 1)}),
                                 angles_to_vector({t(i, 0), t(i, 1)}));
    }
    const double oracle_mean = total / 64.0;
    out.require(oracle_mean < 0.5,
                "least-squares oracle " + std::to_string(oracle_mean) + " deg >= 0.5");
  }

  DataSplit split;
  split.train = records;

  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.batch_size = 8;
  cfg.seed = 11;
  cfg.variant = Variant::kFlame;
  cfg.resolution = 120;
  cfg.preset = Preset::kTiny;
  cfg.precision = Precision::kF32;

  double final_err = std::numeric_limits<double>::infinity();
  int epochs_used = cfg.epochs;
  EpochCallback<float> probe = [&](int epoch, FlameNet<float>& net) {
    if ((epoch + 1) % 25 != 0) return false;
    const auto rep = evaluate(net, split.train, EvalEyePolicy::kBoth, cfg.batch_size,
                              cfg.seed);
    if (rep.mean_deg < 2.0) {
      final_err = rep.mean_deg;
      epochs_used = epoch + 1;
      return true;
    }
    return false;
  };
  auto outcome = train<float>(cfg, split, "", true, probe);
  if (!std::isfinite(final_err)) {
    final_err = evaluate(*outcome.net, split.train, EvalEyePolicy::kBoth, cfg.batch_size,
                         cfg.seed)
                    .mean_deg;
  }

  const double secs = elapsed_s(t0);
  out.require(final_err < 2.0,
              "train mean angular error " + std::to_string(final_err) + " deg >= 2");
  out.require(secs < 900.0, "runtime " + std::to_string(secs) + "s >= 900s");
  char buf[96];
  std::snprintf(buf, sizeof(buf), " (%.2f deg after %d epochs, %.0fs)", final_err,
                epochs_used, secs);
  out.detail += buf;
  return out;
}

// --------------------------------------------------------------------------
// 8. Ablation harness determinism and report shape
// --------------------------------------------------------------------------
Outcome criterion_ablation() {
  Outcome out;

  SynthConfig sc;
  sc.n = 256;
  sc.seed = 99;
  sc.records_per_subject = 16;  // 16 subjects
  auto records = synth_generate(sc);
  SplitSpec split_spec;
  split_spec.seed = 99;
  const DataSplit split = split_cross_subject(records, split_spec);

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 42;
  cfg.resolution = 120;
  cfg.preset = Preset::kTiny;
  cfg.precision = Precision::kF32;

  const std::vector<Variant> variants = {Variant::kFB, Variant::kFAf, Variant::kFAo,
                                         Variant::kFlame};
  const auto rows1 = ablate<float>(cfg, split, variants);
  const std::string report1 = format_harness_report("variant", rows1);
  const auto rows2 = ablate<float>(cfg, split, variants);
  const std::string report2 = format_harness_report("variant", rows2);

  out.require(rows1.size() == 4, "expected 4 variant rows");
  for (const auto& row : rows1) {
    out.require(row.ok, row.label + " failed: " + row.error);
    out.require(std::isfinite(row.report.mean_deg) && std::isfinite(row.report.std_deg),
                row.label + " has non-finite stats");
  }
  out.require(report1 == report2, "reports differ across identically seeded runs");
  for (const char* needle :
       {"paper_columbiagaze_mean_deg", "paper_eyediap_mean_deg", "4.64", "5.06", "5.88",
        "5.93", "F_B", "F_AF", "F_AO", "FLAME"}) {
    out.require(report1.find(needle) != std::string::npos,
                std::string("annotation '") + needle + "' missing from report");
  }
  return out;
}

// --------------------------------------------------------------------------
// 9. Determinism and persistence
// --------------------------------------------------------------------------
Outcome criterion_determinism() {
  Outcome out;

  SynthConfig sc;
  sc.n = 16;
  sc.seed = 5;
  auto records = synth_generate(sc);
  DataSplit split;
  split.train = records;

  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.seed = 123;
  cfg.resolution = 30;
  cfg.preset = Preset::kTiny;
  cfg.precision = Precision::kF32;

  auto a = train<float>(cfg, split, "", true);
  auto b = train<float>(cfg, split, "", true);
  ParamRefs<float> pa, pb;
  a.net->collect_params(pa);
  b.net->collect_params(pb);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->value != pb[i]->value) {
      out.require(false, "parameters differ at " + pa[i]->name);
      break;
    }
  }

  const std::string dir = (fs::temp_directory_path() / "flame_acceptance").string();
  fs::remove_all(dir);
  fs::create_directories(dir);

  {  // checkpoint round trip
    const auto mem = evaluate(*a.net, records, EvalEyePolicy::kBoth, 8, 0);
    const std::string ck = dir + "/ck.bin";
    save_checkpoint(ck, *a.net, 2, cfg.seed, &a.opt_state);
    auto loaded = load_checkpoint<float>(ck);
    const auto reloaded = evaluate(*loaded.net, records, EvalEyePolicy::kBoth, 8, 0);
    out.require(mem.mean_deg == reloaded.mean_deg && mem.std_deg == reloaded.std_deg,
                "checkpoint evaluation differs from in-memory");
    const std::string ck2 = dir + "/ck2.bin";
    save_checkpoint(ck2, *loaded.net, loaded.epoch, loaded.seed, &loaded.opt);
    out.require(slurp(ck) == slurp(ck2), "save -> load -> save not byte-identical");
  }

  {  // synthetic export -> load round trip
    const std::string droot = dir + "/ds";
    export_dataset(records, droot);
    auto loaded = load_records(droot);
    out.require(loaded.size() == records.size(), "round trip lost records");
    for (std::size_t i = 0; i < loaded.size(); ++i) {
      const bool same = loaded[i].image_id == records[i].image_id &&
                        loaded[i].subject_id == records[i].subject_id &&
                        loaded[i].head_pose.pitch == records[i].head_pose.pitch &&
                        loaded[i].head_pose.yaw == records[i].head_pose.yaw &&
                        loaded[i].gaze.pitch == records[i].gaze.pitch &&
                        loaded[i].gaze.yaw == records[i].gaze.yaw &&
                        loaded[i].left.points == records[i].left.points &&
                        loaded[i].right.points == records[i].right.points &&
                        loaded[i].image->data == records[i].image->data;
      if (!same) {
        out.require(false, "record " + records[i].image_id + " not field-exact");
        break;
      }
    }
  }
  fs::remove_all(dir);
  return out;
}

// --------------------------------------------------------------------------
// 10. Angular-gradient instability property
// --------------------------------------------------------------------------
Outcome criterion_grad_magnitude() {
  Outcome out;
  double prev = -1.0;
  for (int i = 0; i <= 99; ++i) {
    const double x = i / 100.0;
    const double v = angular_grad_magnitude(x);
    if (!(v > prev)) {
      out.require(false, "not monotone at x = " + std::to_string(x));
      break;
    }
    prev = v;
  }
  out.require(angular_grad_magnitude(0.9999) > 70.0, "value at 0.9999 not > 70");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int number;
    const char* title;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {1, "gradient suite (< 1e-4 relative, 64-bit, < 2 min)", criterion_gradients},
      {2, "loss identities over 1000 seeded vector pairs", criterion_loss_identities},
      {3, "Gaussian heatmap peak, equivariance and range", criterion_heatmap},
      {4, "MMTM identity, gain range and dim(Z) rule", criterion_mmtm},
      {5, "shape suite across variants and resolutions (< 1 min)", criterion_shapes},
      {6, "learning-rate schedule, epochs 0..199", criterion_schedule},
      {7, "synthetic overfit < 2 deg and pupil-offset oracle < 0.5 deg", criterion_overfit},
      {8, "ablation harness: Table-2 report, byte-identical reruns", criterion_ablation},
      {9, "determinism, checkpoint and dataset persistence", criterion_determinism},
      {10, "angular gradient magnitude monotone, > 70 at 0.9999", criterion_grad_magnitude},
  };

  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.number)) continue;
    const Outcome out = c.run();
    std::printf("[%s] criterion %d: %s%s%s%s\n", out.pass ? "PASS" : "FAIL", c.number,
                c.title, out.detail.empty() ? "" : " --", out.detail.empty() ? "" : " ",
                out.detail.c_str());
    std::fflush(stdout);
    if (!out.pass) ++failures;
  }
  return failures;
}
