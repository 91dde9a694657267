// flame: gaze estimation from eye patches and landmark heatmaps.
//
// Commands: synth, train, eval, ablate, resolution, gradcheck, plot.
// Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime
// failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "flame/checkpoint.hpp"
#include "flame/data.hpp"
#include "flame/gradsuite.hpp"
#include "flame/plot.hpp"
#include "flame/trainer.hpp"

namespace fs = std::filesystem;
using namespace flame;

namespace {

struct RunConfig {
  TrainConfig train;
  SplitSpec split;
  std::string dataset_root;
  std::string out_dir = "out";
  bool seed_given = false;
  bool split_seed_given = false;
};

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& v, char sep) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

// One code path for config-file keys and CLI overrides.
void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  try {
    if (key == "dataset_root") {
      cfg.dataset_root = value;
    } else if (key == "out_dir") {
      cfg.out_dir = value;
    } else if (key == "variant") {
      cfg.train.variant = variant_from_string(value);
    } else if (key == "preset") {
      if (value == "paper") {
        cfg.train.preset = Preset::kPaper;
      } else if (value == "tiny") {
        cfg.train.preset = Preset::kTiny;
      } else {
        throw std::invalid_argument("expected paper or tiny");
      }
    } else if (key == "resolution") {
      cfg.train.resolution = std::stoi(value);
    } else if (key == "epochs") {
      cfg.train.epochs = std::stoi(value);
    } else if (key == "batch_size") {
      cfg.train.batch_size = std::stoi(value);
    } else if (key == "lr") {
      cfg.train.lr = std::stod(value);
    } else if (key == "lr_milestones") {
      cfg.train.lr_milestones = parse_int_list(value, ',');
    } else if (key == "lr_factor") {
      cfg.train.lr_factor = std::stod(value);
    } else if (key == "adam_beta1") {
      cfg.train.adam_beta1 = std::stod(value);
    } else if (key == "adam_beta2") {
      cfg.train.adam_beta2 = std::stod(value);
    } else if (key == "adam_eps") {
      cfg.train.adam_eps = std::stod(value);
    } else if (key == "seed") {
      cfg.train.seed = std::stoull(value);
      cfg.seed_given = true;
    } else if (key == "split_seed") {
      cfg.split.seed = std::stoull(value);
      cfg.split_seed_given = true;
    } else if (key == "split_ratios") {
      const auto parts = parse_int_list(value, ':');
      if (parts.size() != 3) throw std::invalid_argument("expected a:b:c");
      cfg.split.ratios = {double(parts[0]), double(parts[1]), double(parts[2])};
    } else if (key == "eval_eye") {
      cfg.train.eval_eye = eval_eye_from_string(value);
    } else if (key == "loss") {
      if (value == "vector") {
        cfg.train.loss = LossKind::kVector;
      } else if (value == "angular") {
        cfg.train.loss = LossKind::kAngular;
      } else {
        throw std::invalid_argument("expected vector or angular");
      }
    } else if (key == "precision") {
      if (value == "f32") {
        cfg.train.precision = Precision::kF32;
      } else if (value == "f64") {
        cfg.train.precision = Precision::kF64;
      } else {
        throw std::invalid_argument("expected f32 or f64");
      }
    } else if (key == "heatmap_scale") {
      cfg.train.heatmap_scale = std::stod(value);
    } else if (key == "dropout") {
      cfg.train.dropout = std::stod(value);
    } else if (key == "bn_eps") {
      cfg.train.bn_eps = std::stod(value);
    } else if (key == "bn_momentum") {
      cfg.train.bn_momentum = std::stod(value);
    } else if (key == "mmtm_z_activation") {
      if (value != "relu") {
        throw std::invalid_argument("only relu is implemented");
      }
    } else if (key == "deterministic") {
      cfg.train.deterministic = parse_bool(value, key);
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    if (msg.rfind("config:", 0) == 0) throw;
    throw std::invalid_argument("config: key '" + key + "': " + msg);
  }
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config: cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: " + path + ":" + std::to_string(lineno) +
                                  ": expected key=value");
    }
    apply_key(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

// FLAME_SEED is the fallback when neither the config file nor a flag set one.
void apply_env_seed(RunConfig& cfg) {
  if (cfg.seed_given) return;
  if (const char* env = std::getenv("FLAME_SEED")) {
    cfg.train.seed = std::stoull(env);
    cfg.seed_given = true;
  }
}

// Collected key=value overrides from CLI flags, applied after the config file.
struct Overrides {
  std::vector<std::pair<std::string, std::string>> kv;

  void add(CLI::App* cmd, const std::string& flag, const std::string& key,
           const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [this, key](const std::string& v) { kv.emplace_back(key, v); },
        help + " [config key: " + key + "]");
  }

  void add_common(CLI::App* cmd) {
    add(cmd, "--data", "dataset_root", "dataset root directory");
    add(cmd, "--out", "out_dir", "output directory");
    add(cmd, "--variant", "variant", "FLAME, F_AO, F_AF, F_B or DENSE_FUSION");
    add(cmd, "--preset", "preset", "paper or tiny");
    add(cmd, "--resolution", "resolution", "input resolution: 120, 60 or 30");
    add(cmd, "--epochs", "epochs", "training epochs");
    add(cmd, "--batch-size", "batch_size", "batch size");
    add(cmd, "--lr", "lr", "initial learning rate");
    add(cmd, "--lr-milestones", "lr_milestones", "comma-separated epochs");
    add(cmd, "--lr-factor", "lr_factor", "decay factor per milestone");
    add(cmd, "--adam-beta1", "adam_beta1", "Adam beta1");
    add(cmd, "--adam-beta2", "adam_beta2", "Adam beta2");
    add(cmd, "--adam-eps", "adam_eps", "Adam epsilon");
    add(cmd, "--seed", "seed", "run seed (env fallback: FLAME_SEED)");
    add(cmd, "--split-seed", "split_seed", "cross-subject split seed");
    add(cmd, "--split-ratios", "split_ratios", "train:val:test ratios");
    add(cmd, "--eval-eye", "eval_eye", "both, left, right or random");
    add(cmd, "--loss", "loss", "vector or angular");
    add(cmd, "--precision", "precision", "f32 or f64");
    add(cmd, "--heatmap-scale", "heatmap_scale", "heatmap amplitude scale");
    add(cmd, "--dropout", "dropout", "head dropout probability");
    add(cmd, "--bn-eps", "bn_eps", "batch-norm epsilon");
    add(cmd, "--bn-momentum", "bn_momentum", "batch-norm running-stat momentum");
    add(cmd, "--mmtm-z-activation", "mmtm_z_activation",
        "activation after the MMTM joint layer (relu)");
    add(cmd, "--deterministic", "deterministic", "force fully serial execution");
  }

  void apply(RunConfig& cfg) const {
    for (const auto& [k, v] : kv) apply_key(cfg, k, v);
  }
};

RunConfig resolve_config(const std::string& config_path, const Overrides& overrides) {
  RunConfig cfg;
  if (!config_path.empty()) load_config_file(cfg, config_path);
  overrides.apply(cfg);
  apply_env_seed(cfg);
  if (!cfg.split_seed_given) cfg.split.seed = cfg.train.seed;
  cfg.train.validate();
  return cfg;
}

DataSplit load_and_split(const RunConfig& cfg, bool no_split) {
  if (cfg.dataset_root.empty()) {
    throw std::invalid_argument("no dataset root (set --data or dataset_root)");
  }
  LoadStats stats;
  auto records = load_records(cfg.dataset_root, &stats);
  if (records.empty()) throw std::invalid_argument("dataset is empty: " + cfg.dataset_root);
  if (no_split) {
    DataSplit split;
    split.train = std::move(records);
    return split;
  }
  return split_cross_subject(records, cfg.split);
}

void write_eval_outputs(const std::string& dir, const EvalReport& report) {
  fs::create_directories(dir);
  {
    std::ofstream os(dir + "/report.tsv", std::ios::trunc);
    os << "variant\tmean_deg\tstd_deg\tn_records\tn_flagged\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s\t%.6f\t%.6f\t%zu\t%zu\n", report.variant.c_str(),
                  report.mean_deg, report.std_deg, report.per_sample_deg.size(),
                  report.flagged);
    os << buf;
  }
  {
    std::ofstream os(dir + "/subjects.tsv", std::ios::trunc);
    os << "subject_id\tmean_deg\n";
    char buf[128];
    for (const auto& [subject, mean] : report.per_subject_mean_deg) {
      std::snprintf(buf, sizeof(buf), "%s\t%.6f\n", subject.c_str(), mean);
      os << buf;
    }
  }
  write_predictions(dir + "/predictions.tsv", report);
}

template <typename Scalar>
void run_train_eval(const RunConfig& cfg, const DataSplit& split) {
  auto outcome = train<Scalar>(cfg.train, split, cfg.out_dir, false);
  std::cout << "trained " << variant_name(cfg.train.variant) << " for " << cfg.train.epochs
            << " epochs; history and checkpoints in " << cfg.out_dir << "\n";
  const std::vector<Record>& eval_set = !split.test.empty() ? split.test : split.train;
  const char* tag = !split.test.empty() ? "test" : "train";
  auto report =
      evaluate(*outcome.net, eval_set, cfg.train.eval_eye, cfg.train.batch_size,
               cfg.train.seed);
  write_eval_outputs(cfg.out_dir, report);
  std::cout << tag << " mean angular error " << report.mean_deg << " deg (std "
            << report.std_deg << ")\n";
}

template <typename Scalar>
void run_harness(const RunConfig& cfg, const DataSplit& split, bool resolution_mode,
                 bool with_dense_fusion) {
  fs::create_directories(cfg.out_dir);
  std::vector<HarnessRow> rows;
  std::string label_col, report_name;
  if (resolution_mode) {
    rows = resolution_sweep<Scalar>(cfg.train, split, {120, 60, 30}, cfg.out_dir);
    label_col = "resolution";
    report_name = "resolution_report.tsv";
  } else {
    std::vector<Variant> variants = {Variant::kFB, Variant::kFAf, Variant::kFAo,
                                     Variant::kFlame};
    if (with_dense_fusion) variants.push_back(Variant::kDenseFusion);
    rows = ablate<Scalar>(cfg.train, split, variants, cfg.out_dir);
    label_col = "variant";
    report_name = "ablation_report.tsv";
  }
  const std::string table = format_harness_report(label_col, rows);
  std::ofstream os(cfg.out_dir + "/" + report_name, std::ios::trunc);
  os << table;
  os.close();
  for (const auto& row : rows) {
    if (row.ok) {
      write_eval_outputs(cfg.out_dir + "/" + row.label, row.report);
    }
  }
  std::cout << table;
  std::cout << "report written to " << cfg.out_dir << "/" << report_name << "\n";
}

int run_gradcheck(const std::string& preset, std::uint64_t seed) {
  if (preset != "tiny") {
    throw std::invalid_argument("gradcheck: only --preset tiny is supported");
  }
  const auto items = run_gradient_suite(seed);
  double worst = 0.0;
  bool all_pass = true;
  for (const auto& item : items) {
    std::printf("%-28s max_rel_error %.3e  tol %.0e  %s\n", item.name.c_str(),
                item.max_rel_error, item.tolerance, item.passed() ? "PASS" : "FAIL");
    worst = std::max(worst, item.max_rel_error);
    all_pass = all_pass && item.passed();
  }
  std::printf("gradcheck: max relative error %.3e over %zu checks: %s\n", worst, items.size(),
              all_pass ? "PASS" : "FAIL");
  return all_pass ? 0 : 2;
}

void run_plot(const std::vector<std::string>& prediction_files,
              const std::vector<std::string>& history_files, const std::string& out_dir) {
  if (prediction_files.empty() && history_files.empty()) {
    throw std::invalid_argument("plot: give at least one --predictions or --history file");
  }
  fs::create_directories(out_dir);
  // Disambiguate by the parent directory when the same file name appears
  // more than once (the usual layout is <run>/predictions.tsv).
  auto label_of = [&](const std::string& path) {
    const fs::path p(path);
    std::string stem = p.stem().string();
    int dups = 0;
    for (const auto& other : prediction_files) {
      if (fs::path(other).stem().string() == stem) ++dups;
    }
    if (dups > 1 && p.has_parent_path()) {
      stem = p.parent_path().filename().string() + "_" + stem;
    }
    return stem;
  };
  std::vector<BoxSeries> box;
  for (const auto& path : prediction_files) {
    const auto rows = read_predictions(path);
    const std::string stem = label_of(path);
    plot_prediction_heatmap(rows, out_dir + "/" + stem + "_prediction_heatmap.svg");
    plot_error_histogram(rows, out_dir + "/" + stem + "_error_histogram.svg");
    std::cout << "wrote " << out_dir << "/" << stem << "_prediction_heatmap.svg and "
              << stem << "_error_histogram.svg\n";
    BoxSeries series;
    series.label = stem;
    for (const auto& r : rows) series.errors_deg.push_back(r.error_deg);
    box.push_back(std::move(series));
  }
  if (box.size() > 1) {
    plot_error_boxplot(box, out_dir + "/error_boxplot.svg");
    std::cout << "wrote " << out_dir << "/error_boxplot.svg\n";
  }
  for (const auto& path : history_files) {
    const std::string stem = fs::path(path).stem().string();
    plot_history(read_history(path), out_dir + "/" + stem + "_history.svg");
    std::cout << "wrote " << out_dir << "/" << stem << "_history.svg\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FLAME gaze estimation: two-stream CNN over RGB eye patches and "
               "landmark heatmaps"};
  app.require_subcommand(1);

  // synth ------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "generate a synthetic eye dataset");
  int synth_n = 64;
  std::uint64_t synth_seed = 0;
  double synth_noise = 0.0;
  int synth_rps = 16;
  std::string synth_out;
  bool synth_seed_given = false;
  synth->add_option("--n", synth_n, "number of records");
  synth->add_option("--seed", synth_seed, "generator seed (env fallback: FLAME_SEED)")
      ->each([&](const std::string&) { synth_seed_given = true; });
  synth->add_option("--noise", synth_noise, "pixel/landmark noise level (0 = clean)");
  synth->add_option("--records-per-subject", synth_rps, "records per synthetic subject");
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  synth->callback([&] {
    if (!synth_seed_given) {
      if (const char* env = std::getenv("FLAME_SEED")) synth_seed = std::stoull(env);
    }
    SynthConfig sc;
    sc.n = synth_n;
    sc.seed = synth_seed;
    sc.noise = synth_noise;
    sc.records_per_subject = synth_rps;
    const auto records = synth_generate(sc);
    export_dataset(records, synth_out);
    std::cout << "wrote " << records.size() << " records to " << synth_out << "\n";
  });

  // train ------------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "train one variant and evaluate the test split");
  std::string tr_config;
  bool tr_no_split = false;
  Overrides tr_over;
  tr->add_option("--config", tr_config, "key=value config file");
  tr->add_flag("--no-split", tr_no_split,
               "train on every record (no cross-subject split; overfit experiments)");
  tr_over.add_common(tr);
  tr->callback([&] {
    RunConfig cfg = resolve_config(tr_config, tr_over);
    const DataSplit split = load_and_split(cfg, tr_no_split);
    if (cfg.train.precision == Precision::kF32) {
      run_train_eval<float>(cfg, split);
    } else {
      run_train_eval<double>(cfg, split);
    }
  });

  // eval -------------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_checkpoint, ev_data, ev_out = "out";
  std::string ev_eye = "both";
  int ev_batch = 8;
  std::uint64_t ev_seed = 0;
  ev->add_option("--checkpoint", ev_checkpoint, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "dataset root")->required();
  ev->add_option("--out", ev_out, "output directory");
  ev->add_option("--eval-eye", ev_eye, "both, left, right or random");
  ev->add_option("--batch-size", ev_batch, "evaluation batch size");
  ev->add_option("--seed", ev_seed, "seed for the random eye policy");
  ev->callback([&] {
    const EvalEyePolicy policy = eval_eye_from_string(ev_eye);
    auto records = load_records(ev_data);
    if (records.empty()) throw std::invalid_argument("dataset is empty: " + ev_data);
    EvalReport report;
    if (checkpoint_scalar_size(ev_checkpoint) == 4) {
      auto ck = load_checkpoint<float>(ev_checkpoint);
      report = evaluate(*ck.net, records, policy, ev_batch, ev_seed);
    } else {
      auto ck = load_checkpoint<double>(ev_checkpoint);
      report = evaluate(*ck.net, records, policy, ev_batch, ev_seed);
    }
    write_eval_outputs(ev_out, report);
    std::cout << report.variant << ": mean angular error " << report.mean_deg
              << " deg (std " << report.std_deg << ") over " << report.per_sample_deg.size()
              << " records\n";
  });

  // ablate -----------------------------------------------------------------
  auto* ab = app.add_subcommand(
      "ablate", "train and evaluate F_B, F_AF, F_AO and FLAME with identical seeds");
  std::string ab_config;
  bool ab_dense = false;
  Overrides ab_over;
  ab->add_option("--config", ab_config, "key=value config file");
  ab->add_flag("--with-dense-fusion", ab_dense, "include the Dense-Fusion baseline");
  ab_over.add_common(ab);
  ab->callback([&] {
    RunConfig cfg = resolve_config(ab_config, ab_over);
    const DataSplit split = load_and_split(cfg, false);
    if (cfg.train.precision == Precision::kF32) {
      run_harness<float>(cfg, split, false, ab_dense);
    } else {
      run_harness<double>(cfg, split, false, ab_dense);
    }
  });

  // resolution -------------------------------------------------------------
  auto* rs = app.add_subcommand("resolution",
                                "train and evaluate FLAME at 120, 60 and 30 px input");
  std::string rs_config;
  Overrides rs_over;
  rs->add_option("--config", rs_config, "key=value config file");
  rs_over.add_common(rs);
  rs->callback([&] {
    RunConfig cfg = resolve_config(rs_config, rs_over);
    const DataSplit split = load_and_split(cfg, false);
    if (cfg.train.precision == Precision::kF32) {
      run_harness<float>(cfg, split, true, false);
    } else {
      run_harness<double>(cfg, split, true, false);
    }
  });

  // gradcheck ---------------------------------------------------------------
  auto* gc = app.add_subcommand("gradcheck",
                                "finite-difference verification of every gradient");
  std::string gc_preset = "tiny";
  std::uint64_t gc_seed = 1234;
  gc->add_option("--preset", gc_preset, "model preset (tiny)");
  gc->add_option("--seed", gc_seed, "seed for check coordinates");
  int gradcheck_rc = 0;
  gc->callback([&] { gradcheck_rc = run_gradcheck(gc_preset, gc_seed); });

  // plot --------------------------------------------------------------------
  auto* pl = app.add_subcommand("plot", "render SVG plots from predictions/history files");
  std::vector<std::string> pl_pred, pl_hist;
  std::string pl_out = "plots";
  pl->add_option("--predictions", pl_pred, "predictions.tsv files (1+)");
  pl->add_option("--history", pl_hist, "history.tsv files");
  pl->add_option("--out", pl_out, "output directory");
  pl->callback([&] { run_plot(pl_pred, pl_hist, pl_out); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return gradcheck_rc;
}
