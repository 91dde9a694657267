#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>

#include "flame/checkpoint.hpp"
#include "flame/data.hpp"
#include "flame/model.hpp"
#include "flame/optimizer.hpp"

namespace flame {

enum class EvalEyePolicy { kBoth, kLeft, kRight, kRandom };
enum class LossKind { kVector, kAngular };
enum class Precision { kF32, kF64 };

inline EvalEyePolicy eval_eye_from_string(const std::string& s) {
  if (s == "both") return EvalEyePolicy::kBoth;
  if (s == "left") return EvalEyePolicy::kLeft;
  if (s == "right") return EvalEyePolicy::kRight;
  if (s == "random") return EvalEyePolicy::kRandom;
  throw std::invalid_argument("unknown eval eye policy: " + s +
                              " (expected both, left, right or random)");
}

inline const char* eval_eye_name(EvalEyePolicy p) {
  switch (p) {
    case EvalEyePolicy::kBoth: return "both";
    case EvalEyePolicy::kLeft: return "left";
    case EvalEyePolicy::kRight: return "right";
    case EvalEyePolicy::kRandom: return "random";
  }
  return "?";
}

struct TrainConfig {
  int epochs = 200;
  int batch_size = 8;
  double lr = 1e-4;
  std::vector<int> lr_milestones{85, 120, 175};
  double lr_factor = 0.5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  Variant variant = Variant::kFlame;
  int resolution = 120;
  Preset preset = Preset::kPaper;
  double dropout = 0.2;
  double heatmap_scale = 1.0;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  EvalEyePolicy eval_eye = EvalEyePolicy::kBoth;
  LossKind loss = LossKind::kVector;
  Precision precision = Precision::kF32;
  bool deterministic = true;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 2) {
      throw std::invalid_argument("TrainConfig: batch_size must be >= 2 (batch norm)");
    }
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
    if (!(lr_factor > 0.0 && lr_factor < 1.0)) {
      throw std::invalid_argument("TrainConfig: lr_factor must lie in (0, 1)");
    }
    for (std::size_t i = 1; i < lr_milestones.size(); ++i) {
      if (lr_milestones[i] <= lr_milestones[i - 1]) {
        throw std::invalid_argument("TrainConfig: lr_milestones must be strictly increasing");
      }
    }
    model_spec();  // validates the structural fields
  }

  ModelSpec model_spec() const {
    ModelSpec s = ModelSpec::make(variant, resolution, preset);
    s.dropout = dropout;
    s.heatmap_scale = heatmap_scale;
    s.bn_eps = bn_eps;
    s.bn_momentum = bn_momentum;
    s.validate();
    return s;
  }
};

// Learning rate at a (0-indexed) epoch: the factor applies from the epoch
// after each milestone.
inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw std::invalid_argument("lr_at_epoch: epoch must be >= 0");
  int halvings = 0;
  for (int m : cfg.lr_milestones) {
    if (epoch > m) ++halvings;
  }
  return cfg.lr * std::pow(cfg.lr_factor, halvings);
}

// Deterministic per-(epoch, record) eye pick, decorrelated from shuffling.
inline Eye train_eye_choice(std::uint64_t seed, int epoch, std::size_t record_idx) {
  const std::uint64_t h = splitmix64(seed ^ (0x9e3779b97f4a7c15ull * (epoch + 1)) ^
                                     (0xbf58476d1ce4e5b9ull * (record_idx + 1)));
  return (h & 1) ? Eye::kRight : Eye::kLeft;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalItem {
  std::string image_id, subject_id;
  Eye eye = Eye::kLeft;
  double true_pitch = 0, true_yaw = 0;  // radians
  double pred_pitch = 0, pred_yaw = 0;  // radians
  double error_deg = 0;
  bool flagged = false;
};

struct EvalReport {
  std::string variant;
  double mean_deg = 0.0;
  double std_deg = 0.0;  // population standard deviation
  std::vector<double> per_sample_deg;  // one per record, eye-averaged
  std::vector<std::pair<std::string, double>> per_subject_mean_deg;
  std::vector<EvalItem> items;  // one per evaluated (record, eye)
  std::size_t flagged = 0;
};

template <typename Scalar>
EvalReport evaluate(FlameNet<Scalar>& net, const std::vector<Record>& records,
                    EvalEyePolicy policy, int batch_size, std::uint64_t seed) {
  EvalReport report;
  report.variant = variant_name(net.spec().variant);
  if (records.empty()) return report;

  struct Job {
    std::size_t record;
    Eye eye;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < records.size(); ++i) {
    switch (policy) {
      case EvalEyePolicy::kBoth:
        jobs.push_back({i, Eye::kLeft});
        jobs.push_back({i, Eye::kRight});
        break;
      case EvalEyePolicy::kLeft: jobs.push_back({i, Eye::kLeft}); break;
      case EvalEyePolicy::kRight: jobs.push_back({i, Eye::kRight}); break;
      case EvalEyePolicy::kRandom:
        jobs.push_back({i, train_eye_choice(seed ^ 0xeba1ull, 0, i)});
        break;
    }
  }

  const ModelSpec& spec = net.spec();
  const int bs = std::max(1, batch_size);
  for (std::size_t start = 0; start < jobs.size(); start += bs) {
    const std::size_t end = std::min(jobs.size(), start + bs);
    std::vector<Sample<Scalar>> samples;
    samples.reserve(end - start);
    for (std::size_t k = start; k < end; ++k) {
      samples.push_back(make_sample<Scalar>(records[jobs[k].record], jobs[k].eye,
                                            spec.input_resolution, spec.heatmap_scale));
    }
    const MatX<Scalar> pred = net.forward(make_batch(samples), Mode::kEval);

    for (std::size_t k = start; k < end; ++k) {
      const Record& rec = records[jobs[k].record];
      EvalItem item;
      item.image_id = rec.image_id;
      item.subject_id = rec.subject_id;
      item.eye = jobs[k].eye;
      item.true_pitch = rec.gaze.pitch;
      item.true_yaw = rec.gaze.yaw;
      item.pred_pitch = static_cast<double>(pred(k - start, 0));
      item.pred_yaw = static_cast<double>(pred(k - start, 1));
      try {
        const Vec3 gp = angles_row_to_vector(item.pred_pitch, item.pred_yaw).transpose();
        const Vec3 gt = angles_to_vector(rec.gaze);
        item.error_deg = angular_error_deg(gp, gt);
      } catch (const std::domain_error&) {
        item.flagged = true;
        ++report.flagged;
      }
      report.items.push_back(std::move(item));
    }
  }

  // Per-record errors (eye-averaged) and per-subject means.
  std::map<std::string, std::pair<double, int>> by_subject;
  std::map<std::string, std::pair<double, int>> by_record;
  std::vector<std::string> record_order;
  for (const EvalItem& item : report.items) {
    if (item.flagged) continue;
    auto [it, fresh] = by_record.emplace(item.image_id, std::make_pair(0.0, 0));
    if (fresh) record_order.push_back(item.image_id);
    it->second.first += item.error_deg;
    it->second.second += 1;
  }
  for (const std::string& id : record_order) {
    const auto& [sum, n] = by_record[id];
    report.per_sample_deg.push_back(sum / n);
  }
  for (const EvalItem& item : report.items) {
    if (item.flagged) continue;
    auto& acc = by_subject[item.subject_id];
    acc.first += item.error_deg;
    acc.second += 1;
  }
  for (const auto& [subject, acc] : by_subject) {
    report.per_subject_mean_deg.emplace_back(subject, acc.first / acc.second);
  }

  const auto& e = report.per_sample_deg;
  if (!e.empty()) {
    report.mean_deg = std::accumulate(e.begin(), e.end(), 0.0) / e.size();
    double var = 0.0;
    for (double v : e) var += (v - report.mean_deg) * (v - report.mean_deg);
    report.std_deg = std::sqrt(var / e.size());
  }
  return report;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochStats {
  int epoch = 0;
  double lr = 0, train_loss = 0;
  double val_mean_deg = std::numeric_limits<double>::quiet_NaN();
  double val_std_deg = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0;
};

template <typename Scalar>
struct TrainOutcome {
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_metric = std::numeric_limits<double>::infinity();
  std::unique_ptr<FlameNet<Scalar>> net;
  AdamState<Scalar> opt_state;
};

inline void write_history(const std::string& path, const std::vector<EpochStats>& history) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "epoch\tlr\ttrain_loss\tval_mean_deg\tval_std_deg\twall_seconds\n";
  char buf[256];
  for (const EpochStats& s : history) {
    auto num = [](double v, const char* fmt, char* out, std::size_t n) {
      if (std::isnan(v)) {
        std::snprintf(out, n, "nan");
      } else {
        std::snprintf(out, n, fmt, v);
      }
    };
    char lr[32], loss[32], vm[32], vs[32], ws[32];
    num(s.lr, "%.10g", lr, sizeof(lr));
    num(s.train_loss, "%.10g", loss, sizeof(loss));
    num(s.val_mean_deg, "%.6f", vm, sizeof(vm));
    num(s.val_std_deg, "%.6f", vs, sizeof(vs));
    num(s.wall_seconds, "%.3f", ws, sizeof(ws));
    std::snprintf(buf, sizeof(buf), "%d\t%s\t%s\t%s\t%s\t%s\n", s.epoch, lr, loss, vm, vs, ws);
    os << buf;
  }
}

// Called after each epoch; returning true stops training early.
template <typename Scalar>
using EpochCallback = std::function<bool(int epoch, FlameNet<Scalar>&)>;

// Trains one model per the config on data.train, tracking validation mean
// angular error when a validation split exists (train loss otherwise) for
// best-checkpoint selection. Writes history.tsv, checkpoint_best.bin and
// checkpoint_final.bin into out_dir when given.
template <typename Scalar>
TrainOutcome<Scalar> train(const TrainConfig& cfg, const DataSplit& data,
                           const std::string& out_dir = "", bool quiet = false,
                           const EpochCallback<Scalar>& epoch_callback = {}) {
  cfg.validate();
  if (data.train.empty()) throw std::invalid_argument("train: empty train split");

  TrainOutcome<Scalar> out;
  out.net = std::make_unique<FlameNet<Scalar>>(cfg.model_spec(), cfg.seed);
  ParamRefs<Scalar> params;
  out.net->collect_params(params);
  Adam<Scalar> opt(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

  const bool has_val = !data.val.empty();
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  const std::string best_path = out_dir.empty() ? "" : out_dir + "/checkpoint_best.bin";

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(cfg, epoch);

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(splitmix64(cfg.seed ^ (0xe90c45ull + 0x10001ull * (epoch + 1))));
    shuffle(order, shuffle_rng);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) continue;  // batch norm needs at least two samples

      std::vector<Sample<Scalar>> samples;
      MatX<Scalar> targets(static_cast<Index>(end - start), 3);
      for (std::size_t k = start; k < end; ++k) {
        const Record& rec = data.train[order[k]];
        samples.push_back(make_sample<Scalar>(rec, train_eye_choice(cfg.seed, epoch, order[k]),
                                              cfg.resolution, cfg.heatmap_scale));
        targets.row(static_cast<Index>(k - start)) =
            angles_to_vector(rec.gaze).template cast<Scalar>().transpose();
      }

      const MatX<Scalar> pred = out.net->forward(make_batch(samples), Mode::kTrain);
      MatX<Scalar> g_angles;
      const Scalar loss = cfg.loss == LossKind::kVector
                              ? vector_loss_batch<Scalar>(pred, targets, &g_angles)
                              : angular_loss_batch<Scalar>(pred, targets, &g_angles);
      if (!std::isfinite(static_cast<double>(loss))) {
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", step " + std::to_string(start / cfg.batch_size) +
                                 " (try the vector loss or a lower learning rate)");
      }
      out.net->zero_grad();
      out.net->backward(g_angles, /*want_input_grads=*/false);
      opt.step(lr);

      loss_sum += static_cast<double>(loss) * static_cast<double>(end - start);
      seen += end - start;
    }
    if (seen == 0) {
      throw std::invalid_argument("train: no trainable batch (need >= 2 samples)");
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.train_loss = loss_sum / static_cast<double>(seen);

    double metric = stats.train_loss;
    if (has_val) {
      const EvalReport val =
          evaluate(*out.net, data.val, cfg.eval_eye, cfg.batch_size, cfg.seed);
      stats.val_mean_deg = val.mean_deg;
      stats.val_std_deg = val.std_deg;
      metric = val.mean_deg;
    }
    if (metric < out.best_metric) {
      out.best_metric = metric;
      out.best_epoch = epoch;
      if (!best_path.empty()) {
        save_checkpoint(best_path, *out.net, epoch, cfg.seed, &opt.state());
      }
    }

    stats.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.history.push_back(stats);
    if (!quiet && (epoch % 25 == 0 || epoch + 1 == cfg.epochs)) {
      std::cerr << "epoch " << epoch << " lr " << lr << " train_loss " << stats.train_loss;
      if (has_val) std::cerr << " val_mean_deg " << stats.val_mean_deg;
      std::cerr << "\n";
    }
    if (epoch_callback && epoch_callback(epoch, *out.net)) break;
  }

  out.opt_state = opt.state();
  if (!out_dir.empty()) {
    save_checkpoint(out_dir + "/checkpoint_final.bin", *out.net, cfg.epochs - 1, cfg.seed,
                    &out.opt_state);
    if (out.best_epoch < 0) {
      save_checkpoint(best_path, *out.net, cfg.epochs - 1, cfg.seed, &out.opt_state);
    }
    write_history(out_dir + "/history.tsv", out.history);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablation and resolution harnesses
// ---------------------------------------------------------------------------

struct PaperAnnotation {
  const char* cg_mean;
  const char* cg_std;
  const char* ed_mean;
  const char* ed_std;
};

// Reference values reported for ColumbiaGaze / EYEDIAP, displayed alongside
// desk-scale results for comparison, never asserted.
inline PaperAnnotation paper_annotation(Variant v) {
  switch (v) {
    case Variant::kFB: return {"5.93", "3.20", "5.32", "3.08"};
    case Variant::kFAf: return {"5.88", "3.06", "5.30", "3.03"};
    case Variant::kFAo: return {"5.06", "3.13", "4.80", "3.02"};
    case Variant::kFlame: return {"4.64", "2.86", "4.62", "2.93"};
    case Variant::kDenseFusion: return {"4.83", "-", "4.74", "-"};
  }
  return {"-", "-", "-", "-"};
}

inline PaperAnnotation paper_annotation_resolution(int resolution) {
  switch (resolution) {
    case 120: return {"4.64", "2.86", "4.62", "2.93"};
    case 60: return {"4.79", "3.23", "4.81", "2.99"};
    case 30: return {"5.5", "3.50", "4.77", "3.15"};
  }
  return {"-", "-", "-", "-"};
}

struct HarnessRow {
  std::string label;
  bool ok = false;
  std::string error;
  EvalReport report;
  PaperAnnotation paper{"-", "-", "-", "-"};
};

inline std::string format_harness_report(const std::string& label_column,
                                         const std::vector<HarnessRow>& rows) {
  std::string out = label_column +
                    "\tmean_deg\tstd_deg\tpaper_columbiagaze_mean_deg\t"
                    "paper_columbiagaze_std_deg\tpaper_eyediap_mean_deg\t"
                    "paper_eyediap_std_deg\n";
  char buf[256];
  for (const HarnessRow& r : rows) {
    if (r.ok) {
      std::snprintf(buf, sizeof(buf), "%s\t%.6f\t%.6f\t%s\t%s\t%s\t%s\n", r.label.c_str(),
                    r.report.mean_deg, r.report.std_deg, r.paper.cg_mean, r.paper.cg_std,
                    r.paper.ed_mean, r.paper.ed_std);
    } else {
      std::snprintf(buf, sizeof(buf), "%s\tnan\tnan\t%s\t%s\t%s\t%s\n", r.label.c_str(),
                    r.paper.cg_mean, r.paper.cg_std, r.paper.ed_mean, r.paper.ed_std);
    }
    out += buf;
  }
  return out;
}

// Trains and evaluates each requested variant with identical seed and
// splits. A failing variant is recorded and does not stop the others.
template <typename Scalar>
std::vector<HarnessRow> ablate(const TrainConfig& cfg, const DataSplit& data,
                               const std::vector<Variant>& variants,
                               const std::string& out_dir = "", bool quiet = true) {
  if (data.test.empty()) {
    throw std::invalid_argument("ablate: test split is empty; need valid splits");
  }
  std::vector<HarnessRow> rows;
  for (Variant v : variants) {
    HarnessRow row;
    row.label = variant_name(v);
    row.paper = paper_annotation(v);
    try {
      TrainConfig vcfg = cfg;
      vcfg.variant = v;
      const std::string vdir = out_dir.empty() ? "" : out_dir + "/" + row.label;
      auto outcome = train<Scalar>(vcfg, data, vdir, quiet);
      row.report =
          evaluate(*outcome.net, data.test, vcfg.eval_eye, vcfg.batch_size, vcfg.seed);
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
      std::cerr << "ablate: variant " << row.label << " failed: " << e.what() << "\n";
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename Scalar>
std::vector<HarnessRow> resolution_sweep(const TrainConfig& cfg, const DataSplit& data,
                                         const std::vector<int>& resolutions,
                                         const std::string& out_dir = "",
                                         bool quiet = true) {
  if (data.test.empty()) {
    throw std::invalid_argument("resolution_sweep: test split is empty");
  }
  std::vector<HarnessRow> rows;
  for (int res : resolutions) {
    HarnessRow row;
    row.label = std::to_string(res) + "x" + std::to_string(res);
    row.paper = paper_annotation_resolution(res);
    try {
      TrainConfig rcfg = cfg;
      rcfg.resolution = res;
      const std::string rdir =
          out_dir.empty() ? "" : out_dir + "/res" + std::to_string(res);
      auto outcome = train<Scalar>(rcfg, data, rdir, quiet);
      row.report =
          evaluate(*outcome.net, data.test, rcfg.eval_eye, rcfg.batch_size, rcfg.seed);
      row.ok = true;
    } catch (const std::exception& e) {
      row.error = e.what();
      std::cerr << "resolution_sweep: " << row.label << " failed: " << e.what() << "\n";
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// Per-(record, eye) predictions in the format consumed by the plot command.
inline void write_predictions(const std::string& path, const EvalReport& report) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "image_id\tsubject_id\teye\ttrue_pitch_rad\ttrue_yaw_rad\tpred_pitch_rad\t"
        "pred_yaw_rad\terror_deg\n";
  char buf[320];
  for (const EvalItem& it : report.items) {
    if (it.flagged) continue;
    std::snprintf(buf, sizeof(buf), "%s\t%s\t%s\t%.10g\t%.10g\t%.10g\t%.10g\t%.6f\n",
                  it.image_id.c_str(), it.subject_id.c_str(), eye_name(it.eye),
                  it.true_pitch, it.true_yaw, it.pred_pitch, it.pred_yaw, it.error_deg);
    os << buf;
  }
}

}  // namespace flame
