#pragma once

#include <string>
#include <vector>

namespace flame {

// Rows of the predictions.tsv format written by the eval/ablate commands.
struct PredictionRow {
  std::string image_id, subject_id, eye;
  double true_pitch = 0, true_yaw = 0;  // radians
  double pred_pitch = 0, pred_yaw = 0;  // radians
  double error_deg = 0;
};

// Rows of the history.tsv format written by training.
struct HistoryRow {
  int epoch = 0;
  double lr = 0, train_loss = 0;
  double val_mean_deg = 0, val_std_deg = 0;
  double wall_seconds = 0;
};

std::vector<PredictionRow> read_predictions(const std::string& path);
std::vector<HistoryRow> read_history(const std::string& path);

// Prediction-versus-truth 2D histograms for yaw (top) and pitch (bottom),
// axes in degrees.
void plot_prediction_heatmap(const std::vector<PredictionRow>& rows,
                             const std::string& out_svg);

// Histograms of yaw, pitch and 3D angular error with 3-degree bins.
void plot_error_histogram(const std::vector<PredictionRow>& rows, const std::string& out_svg);

// One box per labeled error sample (variants, resolutions, ...).
struct BoxSeries {
  std::string label;
  std::vector<double> errors_deg;
};
void plot_error_boxplot(const std::vector<BoxSeries>& series, const std::string& out_svg);

// Train-loss and validation curves over epochs.
void plot_history(const std::vector<HistoryRow>& rows, const std::string& out_svg);

}  // namespace flame
