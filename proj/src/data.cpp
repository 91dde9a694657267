#include "flame/data.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "flame/rng.hpp"

namespace fs = std::filesystem;

namespace flame {

namespace {

constexpr const char* kManifestHeader =
    "image_id\tsubject_id\timage_path\thead_pitch_rad\thead_yaw_rad\tgaze_pitch_rad\t"
    "gaze_yaw_rad";

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(where + ": invalid number '" + s + "'");
  }
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// pad_face_crop
// ---------------------------------------------------------------------------

PadResult pad_face_crop(const ImageU8& in) {
  if (in.empty()) throw std::invalid_argument("pad_face_crop: empty image");

  PadResult out;
  out.scale = 1.0;
  ImageU8 resized = in;
  if (in.width > kCropWidth || in.height > kCropHeight) {
    out.scale = std::min(static_cast<double>(kCropWidth) / in.width,
                         static_cast<double>(kCropHeight) / in.height);
    const int nw = std::min<int>(kCropWidth, static_cast<int>(std::llround(in.width * out.scale)));
    const int nh =
        std::min<int>(kCropHeight, static_cast<int>(std::llround(in.height * out.scale)));
    Tensor4<double> t = bilinear_resize(image_to_tensor<double>(in), nh, nw);
    resized = ImageU8(nw, nh);
    for (int y = 0; y < nh; ++y) {
      for (int x = 0; x < nw; ++x) {
        for (int c = 0; c < 3; ++c) {
          const double v = std::clamp(t(0, y, x, c) * 255.0, 0.0, 255.0);
          resized.at(x, y, c) = static_cast<std::uint8_t>(std::llround(v));
        }
      }
    }
  }

  const int dx = (kCropWidth - resized.width) / 2;
  const int dy = (kCropHeight - resized.height) / 2;
  out.dx = dx;
  out.dy = dy;
  out.image = ImageU8(kCropWidth, kCropHeight);
  for (int y = 0; y < resized.height; ++y) {
    for (int x = 0; x < resized.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        out.image.at(x + dx, y + dy, c) = resized.at(x, y, c);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// split_cross_subject
// ---------------------------------------------------------------------------

DataSplit split_cross_subject(const std::vector<Record>& records, const SplitSpec& spec) {
  if (records.empty()) throw std::invalid_argument("split_cross_subject: no records");

  std::vector<std::string> subjects;  // order of first appearance
  std::map<std::string, std::size_t> count;
  for (const Record& r : records) {
    if (count.emplace(r.subject_id, 0).second) subjects.push_back(r.subject_id);
    ++count[r.subject_id];
  }
  if (subjects.size() < 10) {
    std::cerr << "split_cross_subject: warning: only " << subjects.size()
              << " subjects, the 8:1:1 split will be coarse\n";
  }

  Rng rng(splitmix64(spec.seed ^ 0x5eedu));
  shuffle(subjects, rng);

  const double total = static_cast<double>(records.size());
  const double rsum = spec.ratios[0] + spec.ratios[1] + spec.ratios[2];
  const double t1 = total * spec.ratios[0] / rsum;
  const double t2 = total * (spec.ratios[0] + spec.ratios[1]) / rsum;

  // Cut the shuffled subject sequence where cumulative record counts come
  // closest to the ratio targets.
  std::vector<std::size_t> prefix(subjects.size() + 1, 0);
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    prefix[i + 1] = prefix[i] + count[subjects[i]];
  }
  auto best_cut = [&](std::size_t from, double target) {
    std::size_t best = from;
    double best_d = std::abs(static_cast<double>(prefix[from]) - target);
    for (std::size_t c = from; c <= subjects.size(); ++c) {
      const double d = std::abs(static_cast<double>(prefix[c]) - target);
      if (d < best_d) {
        best = c;
        best_d = d;
      }
    }
    return best;
  };
  const std::size_t cut1 = best_cut(0, t1);
  const std::size_t cut2 = best_cut(cut1, t2);

  std::map<std::string, int> bucket;  // 0 train, 1 val, 2 test
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    bucket[subjects[i]] = i < cut1 ? 0 : (i < cut2 ? 1 : 2);
  }

  DataSplit out;
  for (const Record& r : records) {
    switch (bucket[r.subject_id]) {
      case 0: out.train.push_back(r); break;
      case 1: out.val.push_back(r); break;
      default: out.test.push_back(r); break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

namespace {

struct SubjectStyle {
  double a, b, iris_r, pupil_r;
  double eye_y, left_cx, right_cx;
  std::array<double, 3> skin, sclera, iris, pupil;
};

SubjectStyle subject_style(std::uint64_t seed, int subject_idx) {
  Rng rng(splitmix64(seed ^ (0x5bc0ffeeULL + static_cast<std::uint64_t>(subject_idx))));
  SubjectStyle s;
  s.a = rng.uniform(38.0, 46.0);
  s.b = rng.uniform(24.0, 30.0);
  s.iris_r = rng.uniform(13.5, 16.5);
  s.pupil_r = rng.uniform(5.5, 7.5);
  s.eye_y = rng.uniform(208.0, 224.0);
  s.left_cx = rng.uniform(120.0, 136.0);
  s.right_cx = rng.uniform(248.0, 264.0);
  s.skin = {rng.uniform(168, 192), rng.uniform(138, 162), rng.uniform(118, 142)};
  s.sclera = {rng.uniform(238, 248), rng.uniform(238, 248), rng.uniform(232, 242)};
  s.iris = {rng.uniform(70, 110), rng.uniform(90, 130), rng.uniform(130, 170)};
  s.pupil = {rng.uniform(12, 28), rng.uniform(12, 28), rng.uniform(14, 30)};
  return s;
}

void draw_eye(ImageU8& img, const SubjectStyle& st, double cx, double cy, double icx,
              double icy) {
  const double margin = 4.0;
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - st.a - margin)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + st.a + margin)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - st.b - margin)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + st.b + margin)));
  const double edge = std::min(st.a, st.b);

  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double fx = (px - cx) / st.a, fy = (py - cy) / st.b;
      const double f = std::sqrt(fx * fx + fy * fy);
      const double a_s = std::clamp((1.0 - f) * edge + 0.5, 0.0, 1.0);
      if (a_s <= 0.0) continue;
      const double di = std::hypot(px - icx, py - icy);
      const double a_i = std::clamp(st.iris_r - di + 0.5, 0.0, 1.0) * a_s;
      const double a_p = std::clamp(st.pupil_r - di + 0.5, 0.0, 1.0) * a_s;
      for (int c = 0; c < 3; ++c) {
        double v = img.at(x, y, c);
        v = v * (1.0 - a_s) + st.sclera[c] * a_s;
        v = v * (1.0 - a_i) + st.iris[c] * a_i;
        v = v * (1.0 - a_p) + st.pupil[c] * a_p;
        img.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::llround(v), 0ll, 255ll));
      }
    }
  }
}

// 12 outer-eye points on the sclera ellipse, 8 cornea points on the iris
// outline, 8 pupil points; indices match the layout documented on
// LandmarkSet (corner indices 0/3/6/9 are the outline extremes).
LandmarkSet eye_landmarks(const SubjectStyle& st, double cx, double cy, double icx,
                          double icy) {
  std::vector<std::array<double, 2>> pts;
  pts.reserve(LandmarkSet::kNumPoints);
  for (int k = 0; k < 12; ++k) {
    const double t = 2.0 * kPi * k / 12.0;
    pts.push_back({cx + st.a * std::cos(t), cy + st.b * std::sin(t)});
  }
  for (int k = 0; k < 8; ++k) {
    const double t = 2.0 * kPi * k / 8.0;
    pts.push_back({icx + st.iris_r * std::cos(t), icy + st.iris_r * std::sin(t)});
  }
  for (int k = 0; k < 8; ++k) {
    const double t = 2.0 * kPi * k / 8.0;
    pts.push_back({icx + st.pupil_r * std::cos(t), icy + st.pupil_r * std::sin(t)});
  }
  return LandmarkSet(pts);
}

}  // namespace

std::vector<Record> synth_generate(const SynthConfig& cfg, std::vector<SynthTruth>* truth) {
  if (cfg.n < 1) throw std::invalid_argument("synth_generate: n must be >= 1");
  if (cfg.records_per_subject < 1) {
    throw std::invalid_argument("synth_generate: records_per_subject must be >= 1");
  }
  if (truth) truth->clear();

  std::vector<Record> records;
  records.reserve(cfg.n);
  for (int i = 0; i < cfg.n; ++i) {
    const int subject_idx = i / cfg.records_per_subject;
    const SubjectStyle st = subject_style(cfg.seed, subject_idx);
    Rng rng(splitmix64(cfg.seed ^ (0x9ec0bdULL + 0x10001ULL * static_cast<std::uint64_t>(i))));

    Record rec;
    {
      char id[32];
      std::snprintf(id, sizeof(id), "synth_%05d", i);
      rec.image_id = id;
      char sid[16];
      std::snprintf(sid, sizeof(sid), "s%03d", subject_idx);
      rec.subject_id = sid;
    }
    rec.image_path = "images/" + rec.image_id + ".ppm";

    rec.gaze.pitch = rng.uniform(-20.0 * kDegToRad, 20.0 * kDegToRad);
    rec.gaze.yaw = rng.uniform(-25.0 * kDegToRad, 25.0 * kDegToRad);
    rec.head_pose.pitch = rng.uniform(-15.0 * kDegToRad, 15.0 * kDegToRad);
    rec.head_pose.yaw = rng.uniform(-15.0 * kDegToRad, 15.0 * kDegToRad);
    const double jx = rng.uniform(-5.0, 5.0);
    const double jy = rng.uniform(-5.0, 5.0);

    // Linear, componentwise-monotone gaze-to-offset map shared by all
    // subjects; this is the signal both modalities carry.
    const Eigen::Vector2d offset(kSynthGainX * rec.gaze.yaw, -kSynthGainY * rec.gaze.pitch);
    const Eigen::Vector2d lc(st.left_cx + jx, st.eye_y + jy);
    const Eigen::Vector2d rc(st.right_cx + jx, st.eye_y + jy);

    auto img = std::make_shared<ImageU8>(kCropWidth, kCropHeight);
    for (int y = 0; y < kCropHeight; ++y) {
      for (int x = 0; x < kCropWidth; ++x) {
        for (int c = 0; c < 3; ++c) {
          img->at(x, y, c) = static_cast<std::uint8_t>(st.skin[c]);
        }
      }
    }
    draw_eye(*img, st, lc.x(), lc.y(), lc.x() + offset.x(), lc.y() + offset.y());
    draw_eye(*img, st, rc.x(), rc.y(), rc.x() + offset.x(), rc.y() + offset.y());
    rec.left = eye_landmarks(st, lc.x(), lc.y(), lc.x() + offset.x(), lc.y() + offset.y());
    rec.right = eye_landmarks(st, rc.x(), rc.y(), rc.x() + offset.x(), rc.y() + offset.y());

    if (cfg.noise > 0.0) {
      const double psigma = 10.0 * cfg.noise;
      for (std::size_t k = 0; k < img->data.size(); ++k) {
        const double v = img->data[k] + rng.normal(0.0, psigma);
        img->data[k] = static_cast<std::uint8_t>(std::clamp(std::llround(v), 0ll, 255ll));
      }
      const double lsigma = 1.5 * cfg.noise;
      for (int p = 0; p < LandmarkSet::kNumPoints; ++p) {
        rec.left.points(p, 0) += rng.normal(0.0, lsigma);
        rec.left.points(p, 1) += rng.normal(0.0, lsigma);
        rec.right.points(p, 0) += rng.normal(0.0, lsigma);
        rec.right.points(p, 1) += rng.normal(0.0, lsigma);
      }
    }
    rec.image = img;
    if (truth) truth->push_back({lc, rc, offset});
    records.push_back(std::move(rec));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Dataset I/O
// ---------------------------------------------------------------------------

std::vector<Record> load_records(const std::string& root, LoadStats* stats) {
  const std::string manifest_path = root + "/manifest.tsv";
  std::ifstream mf(manifest_path);
  if (!mf) throw std::runtime_error("load_records: cannot open " + manifest_path);

  LoadStats st;
  std::vector<Record> records;
  std::string line;
  int lineno = 0;
  while (std::getline(mf, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1) {
      if (line != kManifestHeader) {
        throw std::runtime_error("manifest.tsv:1: unexpected header");
      }
      continue;
    }
    const auto fields = split_tabs(line);
    if (fields.size() != 7) {
      throw std::runtime_error("manifest.tsv:" + std::to_string(lineno) +
                               ": expected 7 tab-separated fields, got " +
                               std::to_string(fields.size()));
    }
    const std::string where = "manifest.tsv:" + std::to_string(lineno);

    Record rec;
    rec.image_id = fields[0];
    rec.subject_id = fields[1];
    rec.image_path = fields[2];
    rec.head_pose.pitch = parse_double(fields[3], where);
    rec.head_pose.yaw = parse_double(fields[4], where);
    rec.gaze.pitch = parse_double(fields[5], where);
    rec.gaze.yaw = parse_double(fields[6], where);

    // Landmarks: records without both eyes are excluded, not imputed.
    const std::string lm_path = root + "/landmarks/" + rec.image_id + ".json";
    std::ifstream lf(lm_path);
    if (!lf) {
      ++st.excluded;
      continue;
    }
    nlohmann::json j;
    try {
      lf >> j;
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(lm_path + ": " + e.what());
    }
    if (!j.contains("left") || !j.contains("right")) {
      ++st.excluded;
      continue;
    }
    auto parse_eye = [&](const char* key) {
      std::vector<std::array<double, 2>> pts;
      for (const auto& p : j.at(key)) {
        if (!p.is_array() || p.size() != 2) {
          throw std::runtime_error(lm_path + ": malformed point in '" + key + "'");
        }
        pts.push_back({p[0].get<double>(), p[1].get<double>()});
      }
      try {
        return LandmarkSet(pts);
      } catch (const std::invalid_argument& e) {
        throw std::runtime_error(lm_path + ": " + e.what());
      }
    };
    rec.left = parse_eye("left");
    rec.right = parse_eye("right");

    const std::string img_path = root + "/" + rec.image_path;
    try {
      rec.image = std::make_shared<ImageU8>(read_ppm(img_path));
    } catch (const std::exception& e) {
      throw std::runtime_error("record " + rec.image_id + ": " + e.what());
    }
    records.push_back(std::move(rec));
    ++st.loaded;
  }

  if (st.excluded > 0) {
    std::cerr << "load_records: excluded " << st.excluded
              << " record(s) with missing landmarks, loaded " << st.loaded << "\n";
  }
  if (stats) *stats = st;
  return records;
}

void export_dataset(const std::vector<Record>& records, const std::string& root) {
  fs::create_directories(root);
  fs::create_directories(root + "/images");
  fs::create_directories(root + "/landmarks");

  std::ofstream mf(root + "/manifest.tsv", std::ios::trunc);
  if (!mf) throw std::runtime_error("export_dataset: cannot write manifest in " + root);
  mf << kManifestHeader << "\n";
  for (const Record& rec : records) {
    mf << rec.image_id << '\t' << rec.subject_id << '\t' << rec.image_path << '\t'
       << fmt_double(rec.head_pose.pitch) << '\t' << fmt_double(rec.head_pose.yaw) << '\t'
       << fmt_double(rec.gaze.pitch) << '\t' << fmt_double(rec.gaze.yaw) << '\n';

    nlohmann::json j;
    j["image_id"] = rec.image_id;
    auto dump_eye = [](const LandmarkSet& lm) {
      nlohmann::json arr = nlohmann::json::array();
      for (int p = 0; p < LandmarkSet::kNumPoints; ++p) {
        arr.push_back({lm.points(p, 0), lm.points(p, 1)});
      }
      return arr;
    };
    j["left"] = dump_eye(rec.left);
    j["right"] = dump_eye(rec.right);
    std::ofstream lf(root + "/landmarks/" + rec.image_id + ".json", std::ios::trunc);
    lf << j.dump(2) << "\n";

    if (!rec.image) {
      throw std::runtime_error("export_dataset: record " + rec.image_id + " has no image");
    }
    write_ppm(*rec.image, root + "/" + rec.image_path);
  }
}

}  // namespace flame
