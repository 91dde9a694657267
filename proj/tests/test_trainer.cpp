#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <flame/trainer.hpp>

#include <filesystem>
#include <fstream>

using namespace flame;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config(int epochs, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 8;
  cfg.seed = seed;
  cfg.variant = Variant::kFlame;
  cfg.resolution = 30;
  cfg.preset = Preset::kTiny;
  cfg.precision = Precision::kF64;
  return cfg;
}

DataSplit synth_split(int n, std::uint64_t seed, int val_from = -1) {
  SynthConfig sc;
  sc.n = n;
  sc.seed = seed;
  sc.records_per_subject = 2;
  auto records = synth_generate(sc);
  DataSplit split;
  for (int i = 0; i < n; ++i) {
    if (val_from >= 0 && i >= val_from) {
      split.val.push_back(records[i]);
    } else {
      split.train.push_back(records[i]);
    }
  }
  return split;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("lr schedule") {
  TrainConfig cfg;
  cfg.lr = 1e-4;

  CHECK(lr_at_epoch(cfg, 0) == doctest::Approx(1e-4));
  CHECK(lr_at_epoch(cfg, 100) == doctest::Approx(5e-5));
  CHECK(lr_at_epoch(cfg, 190) == doctest::Approx(1.25e-5));

  // Exhaustive over the paper's 200 epochs: steps after 85, 120 and 175.
  for (int e = 0; e < 200; ++e) {
    int k = 0;
    if (e > 85) ++k;
    if (e > 120) ++k;
    if (e > 175) ++k;
    CHECK(lr_at_epoch(cfg, e) == doctest::Approx(1e-4 * std::pow(0.5, k)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(lr_at_epoch(cfg, -1), std::invalid_argument);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  TrainConfig bad = cfg;
  bad.lr_milestones = {85, 85};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.lr_factor = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("one epoch on 8 samples is exactly one optimizer step") {
  auto split = synth_split(8, 5);
  auto outcome = train<double>(tiny_config(1, 5), split, "", true);
  CHECK(outcome.opt_state.step == 1);
  CHECK(outcome.history.size() == 1);
  CHECK(std::isfinite(outcome.history[0].train_loss));
}

TEST_CASE("fixed seed training is bit-identical") {
  auto split = synth_split(8, 9);
  auto a = train<double>(tiny_config(3, 123), split, "", true);
  auto b = train<double>(tiny_config(3, 123), split, "", true);

  ParamRefs<double> pa, pb;
  a.net->collect_params(pa);
  b.net->collect_params(pb);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->value == pb[i]->value);
  }
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
  }

  // A different seed diverges.
  auto c = train<double>(tiny_config(3, 124), split, "", true);
  ParamRefs<double> pc;
  c.net->collect_params(pc);
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->value != pc[i]->value) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("evaluate: oracle and constant-prediction bounds") {
  SynthConfig sc;
  sc.n = 4;
  sc.seed = 3;
  auto records = synth_generate(sc);
  ModelSpec spec = ModelSpec::make(Variant::kFlame, 30, Preset::kTiny);
  FlameNet<double> net(spec, 7);

  SUBCASE("labels equal to the model's own predictions give ~zero error") {
    auto first = evaluate(net, records, EvalEyePolicy::kLeft, 4, 0);
    REQUIRE(first.items.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      records[i].gaze.pitch = first.items[i].pred_pitch;
      records[i].gaze.yaw = first.items[i].pred_yaw;
    }
    auto again = evaluate(net, records, EvalEyePolicy::kLeft, 4, 0);
    CHECK(again.mean_deg < 1e-6);
    CHECK(again.std_deg < 1e-6);
  }

  SUBCASE("constant prediction on symmetric labels keeps mean >= theta") {
    // Two records sharing pixels and landmarks but with labels at +/-theta:
    // identical inputs force an identical (constant) prediction.
    const double theta = 10.0 * kDegToRad;
    std::vector<Record> pair = {records[0], records[0]};
    pair[1].image_id = "copy";
    pair[0].gaze = {theta, 0.0};
    pair[1].gaze = {-theta, 0.0};
    auto rep = evaluate(net, pair, EvalEyePolicy::kLeft, 2, 0);
    CHECK(rep.mean_deg >= 10.0 - 1e-9);
  }

  SUBCASE("mean and std recompute from the per-sample list") {
    auto rep = evaluate(net, records, EvalEyePolicy::kBoth, 4, 0);
    REQUIRE(!rep.per_sample_deg.empty());
    double mean = 0;
    for (double v : rep.per_sample_deg) mean += v;
    mean /= rep.per_sample_deg.size();
    double var = 0;
    for (double v : rep.per_sample_deg) var += (v - mean) * (v - mean);
    CHECK(std::abs(rep.mean_deg - mean) < 1e-9);
    CHECK(std::abs(rep.std_deg - std::sqrt(var / rep.per_sample_deg.size())) < 1e-9);
    // Both eyes of every record evaluated.
    CHECK(rep.items.size() == 2 * records.size());
  }
}

TEST_CASE("checkpoint round trip preserves evaluation exactly") {
  const std::string dir = (fs::temp_directory_path() / "flame_test_ckpt").string();
  fs::remove_all(dir);
  fs::create_directories(dir);

  auto split = synth_split(8, 21);
  auto outcome = train<double>(tiny_config(2, 77), split, "", true);

  SynthConfig sc;
  sc.n = 6;
  sc.seed = 22;
  auto eval_records = synth_generate(sc);
  auto in_memory = evaluate(*outcome.net, eval_records, EvalEyePolicy::kBoth, 4, 0);

  const std::string path = dir + "/ck.bin";
  save_checkpoint(path, *outcome.net, 1, 77, &outcome.opt_state);

  auto loaded = load_checkpoint<double>(path);
  CHECK(loaded.epoch == 1);
  CHECK(loaded.seed == 77);
  CHECK(loaded.has_opt);
  CHECK(loaded.opt.step == outcome.opt_state.step);

  auto reloaded = evaluate(*loaded.net, eval_records, EvalEyePolicy::kBoth, 4, 0);
  CHECK(reloaded.mean_deg == in_memory.mean_deg);
  CHECK(reloaded.std_deg == in_memory.std_deg);
  REQUIRE(reloaded.items.size() == in_memory.items.size());
  for (std::size_t i = 0; i < reloaded.items.size(); ++i) {
    CHECK(reloaded.items[i].pred_pitch == in_memory.items[i].pred_pitch);
    CHECK(reloaded.items[i].pred_yaw == in_memory.items[i].pred_yaw);
  }

  // save -> load -> save reproduces identical bytes.
  const std::string path2 = dir + "/ck2.bin";
  save_checkpoint(path2, *loaded.net, loaded.epoch, loaded.seed, &loaded.opt);
  CHECK(slurp(path) == slurp(path2));

  // Precision mismatch is rejected.
  CHECK(checkpoint_scalar_size(path) == 8);
  CHECK_THROWS_AS(load_checkpoint<float>(path), std::runtime_error);

  fs::remove_all(dir);
}

TEST_CASE("training writes history and checkpoints") {
  const std::string dir = (fs::temp_directory_path() / "flame_test_train_out").string();
  fs::remove_all(dir);

  auto split = synth_split(8, 33, /*val_from=*/6);
  auto outcome = train<double>(tiny_config(2, 5), split, dir, true);
  CHECK(fs::exists(dir + "/history.tsv"));
  CHECK(fs::exists(dir + "/checkpoint_best.bin"));
  CHECK(fs::exists(dir + "/checkpoint_final.bin"));
  CHECK(outcome.best_epoch >= 0);

  const std::string hist = slurp(dir + "/history.tsv");
  CHECK(hist.starts_with("epoch\tlr\ttrain_loss\tval_mean_deg\tval_std_deg\twall_seconds\n"));
  CHECK(std::count(hist.begin(), hist.end(), '\n') == 3);  // header + 2 epochs

  fs::remove_all(dir);
}

TEST_CASE("ablate produces a deterministic table over all variants") {
  SynthConfig sc;
  sc.n = 24;
  sc.seed = 99;
  sc.records_per_subject = 2;  // 12 subjects
  auto records = synth_generate(sc);
  SplitSpec split_spec;
  split_spec.seed = 99;
  auto split = split_cross_subject(records, split_spec);
  REQUIRE(!split.test.empty());

  TrainConfig cfg = tiny_config(1, 42);
  cfg.batch_size = 4;
  const std::vector<Variant> variants = {Variant::kFB, Variant::kFAf, Variant::kFAo,
                                         Variant::kFlame};

  auto rows = ablate<double>(cfg, split, variants);
  REQUIRE(rows.size() == 4);
  for (const auto& row : rows) {
    CHECK(row.ok);
    CHECK(std::isfinite(row.report.mean_deg));
  }
  const std::string report = format_harness_report("variant", rows);
  CHECK(report.find("F_B\t") != std::string::npos);
  CHECK(report.find("4.64") != std::string::npos);  // FLAME paper annotation
  CHECK(report.find("5.93") != std::string::npos);  // F_B paper annotation
  CHECK(report.find("paper_columbiagaze_mean_deg") != std::string::npos);

  auto rows2 = ablate<double>(cfg, split, variants);
  CHECK(format_harness_report("variant", rows2) == report);
}

TEST_CASE("predictions file") {
  SynthConfig sc;
  sc.n = 3;
  sc.seed = 17;
  auto records = synth_generate(sc);
  FlameNet<double> net(ModelSpec::make(Variant::kFB, 30, Preset::kTiny), 1);
  auto rep = evaluate(net, records, EvalEyePolicy::kBoth, 4, 0);

  const std::string path =
      (fs::temp_directory_path() / "flame_test_predictions.tsv").string();
  write_predictions(path, rep);
  const std::string body = slurp(path);
  CHECK(std::count(body.begin(), body.end(), '\n') == 7);  // header + 6 rows
  CHECK(body.find("\tleft\t") != std::string::npos);
  CHECK(body.find("\tright\t") != std::string::npos);
  fs::remove(path);
}
