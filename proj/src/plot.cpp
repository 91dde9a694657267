#include "flame/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "flame/geometry.hpp"

namespace flame {

namespace {

constexpr double kErrorBinDeg = 3.0;

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

double parse_num(const std::string& s, const std::string& where) {
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw std::runtime_error(where + ": invalid number '" + s + "'");
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

// Minimal deterministic SVG writer.
class Svg {
 public:
  Svg(double w, double h) : w_(w), h_(h) {
    body_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
          << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
          << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  }

  void rect(double x, double y, double w, double h, const std::string& fill,
            const std::string& stroke = "none") {
    body_ << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\"" << fmt(w)
          << "\" height=\"" << fmt(h) << "\" fill=\"" << fill << "\" stroke=\"" << stroke
          << "\"/>\n";
  }

  void line(double x1, double y1, double x2, double y2, const std::string& stroke,
            double width = 1.0) {
    body_ << "<line x1=\"" << fmt(x1) << "\" y1=\"" << fmt(y1) << "\" x2=\"" << fmt(x2)
          << "\" y2=\"" << fmt(y2) << "\" stroke=\"" << stroke << "\" stroke-width=\""
          << fmt(width) << "\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
    body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" points=\"";
    for (const auto& [x, y] : pts) body_ << fmt(x) << "," << fmt(y) << " ";
    body_ << "\"/>\n";
  }

  void circle(double x, double y, double r, const std::string& fill) {
    body_ << "<circle cx=\"" << fmt(x) << "\" cy=\"" << fmt(y) << "\" r=\"" << fmt(r)
          << "\" fill=\"" << fill << "\"/>\n";
  }

  void text(double x, double y, const std::string& s, int size = 11,
            const std::string& anchor = "start") {
    body_ << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" font-size=\"" << size
          << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << s
          << "</text>\n";
  }

  void save(const std::string& path) {
    body_ << "</svg>\n";
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("plot: cannot write " + path);
    os << body_.str();
  }

 private:
  double w_, h_;
  std::ostringstream body_;
};

struct AxisBox {
  double x0, y0, x1, y1;     // pixel corners (y grows down)
  double vx0, vx1, vy0, vy1; // value ranges
  double px(double v) const { return x0 + (v - vx0) / (vx1 - vx0) * (x1 - x0); }
  double py(double v) const { return y1 - (v - vy0) / (vy1 - vy0) * (y1 - y0); }
};

void draw_axes(Svg& svg, const AxisBox& ax, const std::string& xlabel,
               const std::string& ylabel, int ticks = 5) {
  svg.line(ax.x0, ax.y1, ax.x1, ax.y1, "black");
  svg.line(ax.x0, ax.y0, ax.x0, ax.y1, "black");
  for (int i = 0; i <= ticks; ++i) {
    const double fx = ax.vx0 + (ax.vx1 - ax.vx0) * i / ticks;
    const double fy = ax.vy0 + (ax.vy1 - ax.vy0) * i / ticks;
    svg.line(ax.px(fx), ax.y1, ax.px(fx), ax.y1 + 4, "black");
    svg.text(ax.px(fx), ax.y1 + 16, fmt(fx), 10, "middle");
    svg.line(ax.x0 - 4, ax.py(fy), ax.x0, ax.py(fy), "black");
    svg.text(ax.x0 - 6, ax.py(fy) + 3, fmt(fy), 10, "end");
  }
  svg.text((ax.x0 + ax.x1) / 2, ax.y1 + 32, xlabel, 11, "middle");
  svg.text(ax.x0 - 40, ax.y0 - 8, ylabel, 11, "start");
}

void quartiles(std::vector<double> v, double& q1, double& med, double& q3) {
  std::sort(v.begin(), v.end());
  auto at = [&](double q) {
    const double pos = q * (v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - lo) * (v[hi] - v[lo]);
  };
  q1 = at(0.25);
  med = at(0.5);
  q3 = at(0.75);
}

}  // namespace

std::vector<PredictionRow> read_predictions(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("plot: cannot open " + path);
  std::vector<PredictionRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1) {
      if (!line.starts_with("image_id\t")) {
        throw std::runtime_error(path + ":1: not a predictions file");
      }
      continue;
    }
    const auto f = split_tabs(line);
    if (f.size() != 8) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 8 fields");
    }
    const std::string where = path + ":" + std::to_string(lineno);
    rows.push_back({f[0], f[1], f[2], parse_num(f[3], where), parse_num(f[4], where),
                    parse_num(f[5], where), parse_num(f[6], where), parse_num(f[7], where)});
  }
  return rows;
}

std::vector<HistoryRow> read_history(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("plot: cannot open " + path);
  std::vector<HistoryRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1) {
      if (!line.starts_with("epoch\t")) {
        throw std::runtime_error(path + ":1: not a history file");
      }
      continue;
    }
    const auto f = split_tabs(line);
    if (f.size() != 6) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 6 fields");
    }
    const std::string where = path + ":" + std::to_string(lineno);
    rows.push_back({static_cast<int>(parse_num(f[0], where)), parse_num(f[1], where),
                    parse_num(f[2], where), parse_num(f[3], where), parse_num(f[4], where),
                    parse_num(f[5], where)});
  }
  return rows;
}

void plot_prediction_heatmap(const std::vector<PredictionRow>& rows,
                             const std::string& out_svg) {
  if (rows.empty()) throw std::invalid_argument("plot: no prediction rows");

  Svg svg(420, 720);
  const int nbins = 24;
  struct Panel {
    const char* title;
    double PredictionRow::*truth;
    double PredictionRow::*pred;
    double top;
  };
  const Panel panels[2] = {{"yaw (deg)", &PredictionRow::true_yaw, &PredictionRow::pred_yaw,
                            30.0},
                           {"pitch (deg)", &PredictionRow::true_pitch,
                            &PredictionRow::pred_pitch, 390.0}};

  for (const Panel& p : panels) {
    double lo = 1e30, hi = -1e30;
    for (const auto& r : rows) {
      lo = std::min({lo, (r.*(p.truth)) * kRadToDeg, (r.*(p.pred)) * kRadToDeg});
      hi = std::max({hi, (r.*(p.truth)) * kRadToDeg, (r.*(p.pred)) * kRadToDeg});
    }
    if (hi <= lo) hi = lo + 1.0;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;

    std::vector<int> counts(nbins * nbins, 0);
    int peak = 1;
    for (const auto& r : rows) {
      const int bx = std::clamp<int>(
          static_cast<int>(((r.*(p.truth)) * kRadToDeg - lo) / (hi - lo) * nbins), 0,
          nbins - 1);
      const int by = std::clamp<int>(
          static_cast<int>(((r.*(p.pred)) * kRadToDeg - lo) / (hi - lo) * nbins), 0,
          nbins - 1);
      peak = std::max(peak, ++counts[by * nbins + bx]);
    }

    AxisBox ax{70, p.top + 20, 380, p.top + 280, lo, hi, lo, hi};
    const double bw = (ax.x1 - ax.x0) / nbins, bh = (ax.y1 - ax.y0) / nbins;
    for (int by = 0; by < nbins; ++by) {
      for (int bx = 0; bx < nbins; ++bx) {
        const int c = counts[by * nbins + bx];
        if (c == 0) continue;
        const int shade = 255 - static_cast<int>(215.0 * c / peak) - 40;
        char color[16];
        std::snprintf(color, sizeof(color), "#%02x%02xff", shade, shade);
        svg.rect(ax.x0 + bx * bw, ax.y1 - (by + 1) * bh, bw, bh, color);
      }
    }
    draw_axes(svg, ax, std::string("true ") + p.title, std::string("predicted ") + p.title);
    // prediction = truth reference line
    svg.line(ax.px(lo), ax.py(lo), ax.px(hi), ax.py(hi), "red");
    svg.text(ax.x0, p.top + 12, std::string("prediction vs truth, ") + p.title, 12);
  }
  svg.save(out_svg);
}

void plot_error_histogram(const std::vector<PredictionRow>& rows, const std::string& out_svg) {
  if (rows.empty()) throw std::invalid_argument("plot: no prediction rows");

  struct Panel {
    const char* title;
    std::vector<double> values;
  };
  Panel panels[3] = {{"yaw error (deg)", {}}, {"pitch error (deg)", {}},
                     {"3D angular error (deg)", {}}};
  for (const auto& r : rows) {
    panels[0].values.push_back(std::abs(r.pred_yaw - r.true_yaw) * kRadToDeg);
    panels[1].values.push_back(std::abs(r.pred_pitch - r.true_pitch) * kRadToDeg);
    panels[2].values.push_back(r.error_deg);
  }

  Svg svg(1020, 320);
  for (int pi = 0; pi < 3; ++pi) {
    const auto& vals = panels[pi].values;
    const double vmax = *std::max_element(vals.begin(), vals.end());
    const int nbins = std::max(1, static_cast<int>(std::ceil((vmax + 1e-9) / kErrorBinDeg)));
    std::vector<int> counts(nbins, 0);
    for (double v : vals) {
      counts[std::min(nbins - 1, static_cast<int>(v / kErrorBinDeg))]++;
    }
    const int peak = *std::max_element(counts.begin(), counts.end());

    AxisBox ax{70.0 + 330.0 * pi, 40, 300.0 + 330.0 * pi, 260, 0,
               nbins * kErrorBinDeg, 0, static_cast<double>(peak)};
    const double bw = (ax.x1 - ax.x0) / nbins;
    for (int b = 0; b < nbins; ++b) {
      if (counts[b] == 0) continue;
      const double h = (ax.y1 - ax.y0) * counts[b] / peak;
      svg.rect(ax.x0 + b * bw, ax.y1 - h, bw - 1, h, "#4878cf");
    }
    draw_axes(svg, ax, panels[pi].title, "count", 4);
    svg.text(ax.x0, 24, panels[pi].title, 12);
  }
  svg.save(out_svg);
}

void plot_error_boxplot(const std::vector<BoxSeries>& series, const std::string& out_svg) {
  if (series.empty()) throw std::invalid_argument("plot: no box series");

  double vmax = 0;
  for (const auto& s : series) {
    if (s.errors_deg.empty()) throw std::invalid_argument("plot: empty error series");
    vmax = std::max(vmax, *std::max_element(s.errors_deg.begin(), s.errors_deg.end()));
  }

  const double width = std::max<double>(320.0, 90.0 * series.size() + 120.0);
  Svg svg(width, 340);
  AxisBox ax{60, 30, width - 30, 280, 0, static_cast<double>(series.size()), 0,
             vmax * 1.05 + 1e-9};
  // y axis only; x positions are categorical
  svg.line(ax.x0, ax.y0, ax.x0, ax.y1, "black");
  svg.line(ax.x0, ax.y1, ax.x1, ax.y1, "black");
  for (int i = 0; i <= 5; ++i) {
    const double fy = ax.vy0 + (ax.vy1 - ax.vy0) * i / 5;
    svg.line(ax.x0 - 4, ax.py(fy), ax.x0, ax.py(fy), "black");
    svg.text(ax.x0 - 6, ax.py(fy) + 3, fmt(fy), 10, "end");
  }
  svg.text(ax.x0 - 40, ax.y0 - 10, "angular error (deg)", 11);

  const double slot = (ax.x1 - ax.x0) / series.size();
  for (std::size_t i = 0; i < series.size(); ++i) {
    double q1, med, q3;
    quartiles(series[i].errors_deg, q1, med, q3);
    const double iqr = q3 - q1;
    double whisk_lo = 1e30, whisk_hi = -1e30;
    for (double v : series[i].errors_deg) {
      if (v >= q1 - 1.5 * iqr) whisk_lo = std::min(whisk_lo, v);
      if (v <= q3 + 1.5 * iqr) whisk_hi = std::max(whisk_hi, v);
    }
    const double cx = ax.x0 + slot * (i + 0.5);
    const double half = std::min(28.0, slot * 0.3);

    svg.line(cx, ax.py(whisk_lo), cx, ax.py(q1), "black");
    svg.line(cx, ax.py(q3), cx, ax.py(whisk_hi), "black");
    svg.line(cx - half * 0.6, ax.py(whisk_lo), cx + half * 0.6, ax.py(whisk_lo), "black");
    svg.line(cx - half * 0.6, ax.py(whisk_hi), cx + half * 0.6, ax.py(whisk_hi), "black");
    svg.rect(cx - half, ax.py(q3), 2 * half, ax.py(q1) - ax.py(q3), "#a8c4e8", "black");
    svg.line(cx - half, ax.py(med), cx + half, ax.py(med), "black", 1.5);
    for (double v : series[i].errors_deg) {
      if (v < q1 - 1.5 * iqr || v > q3 + 1.5 * iqr) svg.circle(cx, ax.py(v), 2, "#333333");
    }
    svg.text(cx, ax.y1 + 16, series[i].label, 11, "middle");
  }
  svg.save(out_svg);
}

void plot_history(const std::vector<HistoryRow>& rows, const std::string& out_svg) {
  if (rows.empty()) throw std::invalid_argument("plot: no history rows");

  Svg svg(520, 560);
  const double emax = std::max(1.0, static_cast<double>(rows.back().epoch));

  double loss_max = 0;
  for (const auto& r : rows) loss_max = std::max(loss_max, r.train_loss);
  AxisBox top{70, 40, 480, 240, 0, emax, 0, loss_max * 1.05 + 1e-12};
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : rows) pts.emplace_back(top.px(r.epoch), top.py(r.train_loss));
  if (pts.size() == 1) {
    svg.circle(pts[0].first, pts[0].second, 3, "#4878cf");
  } else {
    svg.polyline(pts, "#4878cf");
  }
  draw_axes(svg, top, "epoch", "train loss", 4);
  svg.text(top.x0, 24, "training loss", 12);

  bool has_val = false;
  double val_max = 0;
  for (const auto& r : rows) {
    if (!std::isnan(r.val_mean_deg)) {
      has_val = true;
      val_max = std::max(val_max, r.val_mean_deg);
    }
  }
  AxisBox bot{70, 320, 480, 520, 0, emax, 0, std::max(val_max * 1.05, 1e-9)};
  if (has_val) {
    pts.clear();
    for (const auto& r : rows) {
      if (!std::isnan(r.val_mean_deg)) pts.emplace_back(bot.px(r.epoch), bot.py(r.val_mean_deg));
    }
    if (pts.size() == 1) {
      svg.circle(pts[0].first, pts[0].second, 3, "#c05050");
    } else {
      svg.polyline(pts, "#c05050");
    }
  } else {
    svg.text(bot.x0, (bot.y0 + bot.y1) / 2, "no validation split", 12);
  }
  draw_axes(svg, bot, "epoch", "val mean angular error (deg)", 4);
  svg.text(bot.x0, 304, "validation mean angular error", 12);

  svg.save(out_svg);
}

}  // namespace flame
