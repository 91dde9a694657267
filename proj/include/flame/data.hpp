#pragma once

#include <memory>
#include <string>
#include <vector>

#include "flame/geometry.hpp"
#include "flame/heatmap.hpp"
#include "flame/image.hpp"
#include "flame/model.hpp"

namespace flame {

// Uniform padded face-crop size (width x height, 4:5).
inline constexpr int kCropWidth = 384;
inline constexpr int kCropHeight = 480;

// Eye-patch size before any resolution downscale.
inline constexpr int kPatchSize = 120;

enum class Eye { kLeft, kRight };

inline const char* eye_name(Eye e) { return e == Eye::kLeft ? "left" : "right"; }

// One dataset entry: a padded face crop with per-eye landmarks, head pose
// and the ground-truth gaze. Records missing either eye's landmarks are
// excluded at load time.
struct Record {
  std::string image_id;
  std::string subject_id;
  std::string image_path;  // relative to the dataset root
  std::shared_ptr<const ImageU8> image;
  LandmarkSet left;
  LandmarkSet right;
  HeadPose head_pose;
  GazeAngles gaze;

  const LandmarkSet& landmarks(Eye e) const { return e == Eye::kLeft ? left : right; }
};

// ---------------------------------------------------------------------------
// Preprocessing geometry
// ---------------------------------------------------------------------------

struct PadResult {
  ImageU8 image;       // kCropWidth x kCropHeight
  double scale = 1.0;  // applied before centering
  double dx = 0.0, dy = 0.0;
};

// Centers the crop on a 384x480 zero canvas. Inputs larger than the target
// are first rescaled (aspect preserved) so the larger dimension fits.
PadResult pad_face_crop(const ImageU8& in);

inline LandmarkSet apply_pad_transform(const LandmarkSet& lm, const PadResult& pad) {
  return lm.scaled(pad.scale).translated(pad.dx, pad.dy);
}

// ---------------------------------------------------------------------------
// Cross-subject splitting
// ---------------------------------------------------------------------------

struct SplitSpec {
  std::array<double, 3> ratios{8.0, 1.0, 1.0};  // train : val : test
  std::uint64_t seed = 0;
};

struct DataSplit {
  std::vector<Record> train, val, test;
};

// Shuffles subjects by seed and cuts the subject sequence where the
// cumulative record count comes closest to the requested ratios; no subject
// ever spans two splits. Warns on stderr below 10 subjects.
DataSplit split_cross_subject(const std::vector<Record>& records, const SplitSpec& spec);

// ---------------------------------------------------------------------------
// Synthetic eye data
// ---------------------------------------------------------------------------

struct SynthConfig {
  int n = 64;
  std::uint64_t seed = 0;
  double noise = 0.0;  // 0 disables pixel and landmark noise
  int records_per_subject = 16;
};

// Per-record ground truth of the renderer, used by oracle tests.
struct SynthTruth {
  Eigen::Vector2d left_center, right_center;
  Eigen::Vector2d pupil_offset;  // identical for both eyes
};

// Renders parametric eyes (elliptical sclera, iris and pupil discs displaced
// by a fixed linear map of the gaze angles) on 384x480 canvases with exact
// landmarks on the analytic outlines. Deterministic in (n, seed).
std::vector<Record> synth_generate(const SynthConfig& cfg,
                                   std::vector<SynthTruth>* truth = nullptr);

// Pixel displacement of the pupil/iris center per radian of gaze.
inline constexpr double kSynthGainX = 40.0;  // yaw
inline constexpr double kSynthGainY = 20.0;  // pitch (negative image-y)

// ---------------------------------------------------------------------------
// Dataset directory layout
// ---------------------------------------------------------------------------
// root/manifest.tsv             image_id, subject_id, image_path,
//                               head_pitch_rad, head_yaw_rad,
//                               gaze_pitch_rad, gaze_yaw_rad
// root/landmarks/<image_id>.json  {"image_id", "left", "right"}: 28 [x, y]
// root/images/<image_id>.ppm    8-bit RGB, 384x480

struct LoadStats {
  std::size_t loaded = 0;
  std::size_t excluded = 0;
};

std::vector<Record> load_records(const std::string& root, LoadStats* stats = nullptr);
void export_dataset(const std::vector<Record>& records, const std::string& root);

// ---------------------------------------------------------------------------
// Sample extraction
// ---------------------------------------------------------------------------

template <typename Scalar>
struct Sample {
  Tensor4<Scalar> rgb;  // 1 x R x R x 3, values in [0, 1]
  Tensor4<Scalar> hm;   // 1 x R x R x 28
  Eigen::Matrix<double, LandmarkSet::kNumPoints, 2> landmarks;  // patch frame
  HeadPose pose;
  GazeAngles label;
  std::string subject_id;
  Eye eye = Eye::kLeft;
};

// Shared crop placement: top-left corner of a size x size patch centered at
// the rounded center (same rule as crop_patch).
inline std::pair<Index, Index> crop_top_left(const Eigen::Vector2d& center, Index size) {
  return {static_cast<Index>(round_half_away(center.x())) - size / 2,
          static_cast<Index>(round_half_away(center.y())) - size / 2};
}

// Cuts the aligned RGB and heatmap patches for one eye. The heatmap is
// evaluated directly in the patch frame (landmarks shifted by the integer
// crop offset), with pixels outside the source canvas zeroed exactly as the
// crop of a full-canvas heatmap would be; optional bilinear downscale to
// the requested resolution.
template <typename Scalar>
Sample<Scalar> make_sample(const Record& rec, Eye eye, int resolution,
                           double heatmap_scale = 1.0) {
  if (resolution != 120 && resolution != 60 && resolution != 30) {
    throw std::invalid_argument("make_sample: resolution must be 120, 60 or 30");
  }
  if (!rec.image) throw std::invalid_argument("make_sample: record has no image");

  const LandmarkSet& lm = rec.landmarks(eye);
  const Eigen::Vector2d center = eye_center(lm);
  const auto [tlx, tly] = crop_top_left(center, kPatchSize);

  Sample<Scalar> out;
  // Same values as crop_patch(image_to_tensor(image), ...) without
  // materializing the full canvas tensor.
  out.rgb = Tensor4<Scalar>(1, kPatchSize, kPatchSize, 3);
  {
    const Index W = rec.image->width, H = rec.image->height;
    for (Index py = 0; py < kPatchSize; ++py) {
      const Index sy = tly + py;
      if (sy < 0 || sy >= H) continue;
      const Index x_lo = std::max<Index>(0, -tlx);
      const Index x_hi = std::min<Index>(kPatchSize, W - tlx);
      for (Index px = x_lo; px < x_hi; ++px) {
        for (Index c = 0; c < 3; ++c) {
          out.rgb(0, py, px, c) =
              static_cast<Scalar>(rec.image->at(static_cast<int>(tlx + px),
                                                static_cast<int>(sy), static_cast<int>(c))) /
              Scalar(255);
        }
      }
    }
  }

  const LandmarkSet patch_lm = lm.translated(-static_cast<double>(tlx),
                                             -static_cast<double>(tly));
  out.hm = gaussian_heatmap<Scalar>(patch_lm, kPatchSize, kPatchSize, heatmap_scale);
  // Zero the band that falls outside the source canvas (crop semantics).
  const Index W = rec.image->width, H = rec.image->height;
  for (Index py = 0; py < kPatchSize; ++py) {
    const Index sy = tly + py;
    for (Index px = 0; px < kPatchSize; ++px) {
      const Index sx = tlx + px;
      if (sy < 0 || sy >= H || sx < 0 || sx >= W) {
        for (Index c = 0; c < LandmarkSet::kNumPoints; ++c) out.hm(0, py, px, c) = Scalar(0);
      }
    }
  }

  out.landmarks = patch_lm.points;
  if (resolution != kPatchSize) {
    out.rgb = bilinear_downscale(out.rgb, resolution);
    out.hm = bilinear_downscale(out.hm, resolution);
    out.landmarks *= static_cast<double>(resolution) / kPatchSize;
  }
  out.pose = rec.head_pose;
  out.label = rec.gaze;
  out.subject_id = rec.subject_id;
  out.eye = eye;
  return out;
}

// Assembles a forward batch from samples (in order).
template <typename Scalar>
Batch<Scalar> make_batch(const std::vector<Sample<Scalar>>& samples) {
  if (samples.empty()) throw std::invalid_argument("make_batch: no samples");
  const Index n = static_cast<Index>(samples.size());
  const Index r = samples[0].rgb.height();

  Batch<Scalar> b;
  b.rgb = Tensor4<Scalar>::uninitialized(n, r, r, 3);
  b.hm = Tensor4<Scalar>::uninitialized(n, r, r, LandmarkSet::kNumPoints);
  b.pose.resize(n, 2);
  b.coords.resize(n, 2 * LandmarkSet::kNumPoints);
  const Index rows = r * r;
  for (Index i = 0; i < n; ++i) {
    const Sample<Scalar>& s = samples[i];
    if (s.rgb.height() != r) throw std::invalid_argument("make_batch: mixed resolutions");
    b.rgb.mat().middleRows(i * rows, rows) = s.rgb.mat();
    b.hm.mat().middleRows(i * rows, rows) = s.hm.mat();
    b.pose(i, 0) = static_cast<Scalar>(s.pose.pitch);
    b.pose(i, 1) = static_cast<Scalar>(s.pose.yaw);
    for (Index p = 0; p < LandmarkSet::kNumPoints; ++p) {
      b.coords(i, 2 * p) = static_cast<Scalar>(s.landmarks(p, 0));
      b.coords(i, 2 * p + 1) = static_cast<Scalar>(s.landmarks(p, 1));
    }
  }
  return b;
}

}  // namespace flame
