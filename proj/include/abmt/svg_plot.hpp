#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "abmt/metrics_io.hpp"

namespace abmt {

struct PlotSeries {
  std::string variant;
  std::vector<TrainRow> rows;
};

namespace detail {

inline std::string fmt2(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", x);
  return buf;
}

inline std::string fmt_tick(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", x);
  return buf;
}

}  // namespace detail

// Loads every parseable training-metrics CSV under `dir` (sorted order). The
// variant label comes from a "<variant>_seed<k>.csv" filename or, for files
// named metrics.csv, from the parent directory name.
inline std::vector<PlotSeries> load_metrics_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir)) throw IoError("metrics directory not found: " + dir);
  std::vector<std::string> paths;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv")
      paths.push_back(entry.path().string());
  }
  std::sort(paths.begin(), paths.end());
  std::vector<PlotSeries> out;
  for (const auto& p : paths) {
    std::vector<TrainRow> rows;
    try {
      rows = read_train_csv(p);
    } catch (const IoError&) {
      continue;  // not a training CSV (e.g. eval.csv)
    }
    const fs::path path(p);
    std::string label = path.stem().string();
    if (label == "metrics") label = path.parent_path().filename().string();
    const auto seed_pos = label.rfind("_seed");
    if (seed_pos != std::string::npos) label = label.substr(0, seed_pos);
    out.push_back(PlotSeries{label, std::move(rows)});
  }
  return out;
}

// Three panels (episode return, delivered parts, collisions) versus env
// steps, one mean-over-seeds line per variant. Output depends only on the
// input series, so identical inputs give byte-identical SVG.
inline std::string render_metrics_svg(const std::vector<PlotSeries>& runs) {
  struct Series {
    std::vector<double> x;
    std::vector<double> y[3];
  };
  // Group runs by variant and average aligned rows.
  std::map<std::string, std::vector<const PlotSeries*>> groups;
  for (const auto& r : runs) groups[r.variant].push_back(&r);
  std::map<std::string, Series> mean_series;
  for (const auto& [variant, members] : groups) {
    std::size_t len = members.front()->rows.size();
    for (const auto* m : members) len = std::min(len, m->rows.size());
    Series s;
    for (std::size_t i = 0; i < len; ++i) {
      double x = 0.0, ret = 0.0, del = 0.0, col = 0.0;
      for (const auto* m : members) {
        x += static_cast<double>(m->rows[i].step);
        ret += m->rows[i].mean_return;
        del += m->rows[i].deliveries;
        col += m->rows[i].collisions;
      }
      const double inv = 1.0 / static_cast<double>(members.size());
      s.x.push_back(x * inv);
      s.y[0].push_back(ret * inv);
      s.y[1].push_back(del * inv);
      s.y[2].push_back(col * inv);
    }
    mean_series[variant] = std::move(s);
  }

  const char* titles[3] = {"episode return", "delivered parts", "collisions"};
  const int panel_w = 270, panel_h = 190, margin_l = 45, margin_b = 30,
            margin_t = 40, gap = 25;
  const int width = 3 * (panel_w + gap) + margin_l;
  const int height = panel_h + margin_t + margin_b;

  auto color_of = [](const std::string& v) -> std::string {
    if (v == "ab-mappo") return "#1f77b4";
    if (v == "mappo") return "#d62728";
    // Stable fallback palette for other labels.
    std::size_t h = 0;
    for (char c : v) h = h * 131 + static_cast<unsigned char>(c);
    const char* palette[4] = {"#2ca02c", "#9467bd", "#8c564b", "#e377c2"};
    return palette[h % 4];
  };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         std::to_string(width) + "\" height=\"" + std::to_string(height) +
         "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  // Legend.
  int lx = margin_l;
  for (const auto& [variant, s] : mean_series) {
    (void)s;
    svg += "<rect x=\"" + std::to_string(lx) + "\" y=\"10\" width=\"18\" "
           "height=\"4\" fill=\"" + color_of(variant) + "\"/>\n";
    svg += "<text x=\"" + std::to_string(lx + 24) + "\" y=\"16\">" + variant +
           "</text>\n";
    lx += 24 + 9 * static_cast<int>(variant.size()) + 24;
  }

  for (int panel = 0; panel < 3; ++panel) {
    const int x0 = margin_l + panel * (panel_w + gap);
    const int y0 = margin_t;
    // Ranges over all variants.
    double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
    bool first = true;
    for (const auto& [variant, s] : mean_series) {
      (void)variant;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (first) {
          xmin = xmax = s.x[i];
          ymin = ymax = s.y[panel][i];
          first = false;
        } else {
          xmin = std::min(xmin, s.x[i]);
          xmax = std::max(xmax, s.x[i]);
          ymin = std::min(ymin, s.y[panel][i]);
          ymax = std::max(ymax, s.y[panel][i]);
        }
      }
    }
    if (xmax <= xmin) xmax = xmin + 1.0;
    if (ymax <= ymin) {
      ymax = ymin + 1.0;
      ymin -= 1.0;
    }
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto sx = [&](double x) {
      return x0 + (x - xmin) / (xmax - xmin) * panel_w;
    };
    auto sy = [&](double y) {
      return y0 + panel_h - (y - ymin) / (ymax - ymin) * panel_h;
    };

    svg += "<rect x=\"" + std::to_string(x0) + "\" y=\"" + std::to_string(y0) +
           "\" width=\"" + std::to_string(panel_w) + "\" height=\"" +
           std::to_string(panel_h) + "\" fill=\"none\" stroke=\"#333\"/>\n";
    svg += "<text x=\"" + std::to_string(x0 + panel_w / 2) + "\" y=\"" +
           std::to_string(y0 - 8) + "\" text-anchor=\"middle\">" +
           titles[panel] + "</text>\n";
    svg += "<text x=\"" + std::to_string(x0 - 4) + "\" y=\"" +
           std::to_string(y0 + 10) + "\" text-anchor=\"end\">" +
           detail::fmt_tick(ymax) + "</text>\n";
    svg += "<text x=\"" + std::to_string(x0 - 4) + "\" y=\"" +
           std::to_string(y0 + panel_h) + "\" text-anchor=\"end\">" +
           detail::fmt_tick(ymin) + "</text>\n";
    svg += "<text x=\"" + std::to_string(x0 + panel_w / 2) + "\" y=\"" +
           std::to_string(y0 + panel_h + 22) +
           "\" text-anchor=\"middle\">env steps (max " +
           detail::fmt_tick(xmax) + ")</text>\n";

    for (const auto& [variant, s] : mean_series) {
      if (s.x.empty()) continue;
      std::string pts;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (i) pts += ' ';
        pts += detail::fmt2(sx(s.x[i])) + "," + detail::fmt2(sy(s.y[panel][i]));
      }
      svg += "<polyline fill=\"none\" stroke=\"" + color_of(variant) +
             "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
      if (s.x.size() == 1) {
        svg += "<circle cx=\"" + detail::fmt2(sx(s.x[0])) + "\" cy=\"" +
               detail::fmt2(sy(s.y[panel][0])) + "\" r=\"2.5\" fill=\"" +
               color_of(variant) + "\"/>\n";
      }
    }
  }
  svg += "</svg>\n";
  return svg;
}

inline void write_metrics_plot(const std::string& out_path,
                               const std::vector<PlotSeries>& runs) {
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw IoError("cannot write plot: " + out_path);
  out << render_metrics_svg(runs);
  if (!out) throw IoError("write failed for plot: " + out_path);
}

}  // namespace abmt
