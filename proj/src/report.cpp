#include "driftmon/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace driftmon {

namespace {

using nlohmann::json;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                          "#bcbd22", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

/// Minimal SVG canvas with one linear-or-log x axis and a linear y axis.
class Canvas {
 public:
  Canvas(double width, double height, std::string title)
      : w_(width), h_(height) {
    body_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_
          << "\" height=\"" << h_ << "\" viewBox=\"0 0 " << w_ << " " << h_
          << "\">\n";
    body_ << "<rect width=\"" << w_ << "\" height=\"" << h_
          << "\" fill=\"white\"/>\n";
    text(w_ / 2, 18, title, 14, "middle", "#000");
  }

  void set_axes(double x_min, double x_max, bool log_x, double y_min,
                double y_max, const std::string& x_label,
                const std::string& y_label) {
    x_min_ = x_min;
    x_max_ = x_max;
    log_x_ = log_x;
    y_min_ = y_min;
    y_max_ = y_max;
    line(margin_l_, h_ - margin_b_, w_ - margin_r_, h_ - margin_b_, "#000",
         1.0);
    line(margin_l_, margin_t_, margin_l_, h_ - margin_b_, "#000", 1.0);
    text((margin_l_ + w_ - margin_r_) / 2, h_ - 8, x_label, 12, "middle",
         "#000");
    vtext(14, (margin_t_ + h_ - margin_b_) / 2, y_label);
    if (log_x) {
      for (int k = static_cast<int>(std::ceil(std::log10(x_min)));
           k <= static_cast<int>(std::floor(std::log10(x_max))); ++k) {
        const double xv = std::pow(10.0, k);
        const double px = x_to_px(xv);
        line(px, h_ - margin_b_, px, h_ - margin_b_ + 4, "#000", 1.0);
        text(px, h_ - margin_b_ + 16, "1e" + std::to_string(k), 10, "middle",
             "#000");
        line(px, margin_t_, px, h_ - margin_b_, "#eee", 0.7);
      }
    } else {
      for (int i = 0; i <= 4; ++i) {
        const double xv = x_min + (x_max - x_min) * i / 4.0;
        const double px = x_to_px(xv);
        line(px, h_ - margin_b_, px, h_ - margin_b_ + 4, "#000", 1.0);
        text(px, h_ - margin_b_ + 16, fmt(xv), 10, "middle", "#000");
      }
    }
    for (int i = 0; i <= 4; ++i) {
      const double yv = y_min + (y_max - y_min) * i / 4.0;
      const double py = y_to_px(yv);
      line(margin_l_ - 4, py, margin_l_, py, "#000", 1.0);
      text(margin_l_ - 8, py + 3, fmt(yv), 10, "end", "#000");
      line(margin_l_, py, w_ - margin_r_, py, "#eee", 0.7);
    }
  }

  double x_to_px(double x) const {
    const double t = log_x_ ? (std::log10(x) - std::log10(x_min_)) /
                                  (std::log10(x_max_) - std::log10(x_min_))
                            : (x - x_min_) / (x_max_ - x_min_);
    return margin_l_ + t * (w_ - margin_l_ - margin_r_);
  }
  double y_to_px(double y) const {
    const double t = (y - y_min_) / (y_max_ - y_min_);
    return h_ - margin_b_ - t * (h_ - margin_t_ - margin_b_);
  }

  void line(double x1, double y1, double x2, double y2,
            const std::string& color, double width) {
    body_ << "<line x1=\"" << fmt(x1) << "\" y1=\"" << fmt(y1) << "\" x2=\""
          << fmt(x2) << "\" y2=\"" << fmt(y2) << "\" stroke=\"" << color
          << "\" stroke-width=\"" << width << "\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts,
                const std::string& color, double width,
                bool dashed = false) {
    if (pts.empty()) return;
    body_ << "<polyline fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"" << width << "\"";
    if (dashed) body_ << " stroke-dasharray=\"6,4\"";
    body_ << " points=\"";
    for (const auto& [x, y] : pts)
      body_ << fmt(x_to_px(x)) << ',' << fmt(y_to_px(y)) << ' ';
    body_ << "\"/>\n";
  }

  void band(const std::vector<std::pair<double, double>>& upper,
            const std::vector<std::pair<double, double>>& lower,
            const std::string& color) {
    if (upper.empty()) return;
    body_ << "<polygon fill=\"" << color << "\" fill-opacity=\"0.18\" "
          << "stroke=\"none\" points=\"";
    for (const auto& [x, y] : upper)
      body_ << fmt(x_to_px(x)) << ',' << fmt(y_to_px(y)) << ' ';
    for (auto it = lower.rbegin(); it != lower.rend(); ++it)
      body_ << fmt(x_to_px(it->first)) << ',' << fmt(y_to_px(it->second))
            << ' ';
    body_ << "\"/>\n";
  }

  void point(double x, double y, const std::string& color, double r = 3.0) {
    body_ << "<circle cx=\"" << fmt(x_to_px(x)) << "\" cy=\""
          << fmt(y_to_px(y)) << "\" r=\"" << r << "\" fill=\"" << color
          << "\"/>\n";
  }

  void text(double px, double py, const std::string& s, int size,
            const std::string& anchor, const std::string& color) {
    body_ << "<text x=\"" << fmt(px) << "\" y=\"" << fmt(py)
          << "\" font-size=\"" << size << "\" font-family=\"sans-serif\" "
          << "text-anchor=\"" << anchor << "\" fill=\"" << color << "\">"
          << escape(s) << "</text>\n";
  }

  void vtext(double px, double py, const std::string& s) {
    body_ << "<text x=\"" << fmt(px) << "\" y=\"" << fmt(py)
          << "\" font-size=\"12\" font-family=\"sans-serif\" "
          << "text-anchor=\"middle\" transform=\"rotate(-90 " << fmt(px) << ' '
          << fmt(py) << ")\">" << escape(s) << "</text>\n";
  }

  void legend_entry(int slot, const std::string& label,
                    const std::string& color) {
    const double x = w_ - margin_r_ + 8;
    const double y = margin_t_ + 14 + slot * 16;
    body_ << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y - 8)
          << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
    text(x + 14, y, label, 10, "start", "#000");
  }

  std::string finish() {
    body_ << "</svg>\n";
    return body_.str();
  }

  double margin_legend() const { return margin_r_; }
  void widen_right(double m) { margin_r_ = m; }

 private:
  static std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
      if (c == '<') out += "&lt;";
      else if (c == '>') out += "&gt;";
      else if (c == '&') out += "&amp;";
      else out += c;
    }
    return out;
  }

  double w_, h_;
  double margin_l_ = 56, margin_r_ = 30, margin_t_ = 30, margin_b_ = 44;
  double x_min_ = 0, x_max_ = 1, y_min_ = 0, y_max_ = 1;
  bool log_x_ = false;
  std::ostringstream body_;
};

std::string detection_figure(const json& group) {
  Canvas cv(760, 420,
            "Detection rate vs drift intensity (" +
                group.at("env").get<std::string>() + ", " +
                group.at("profile").get<std::string>() + ", " +
                group.at("capacity").get<std::string>() + ")");
  cv.widen_right(150);
  double x_min = 1e300, x_max = 0;
  for (const auto& curve : group.at("curves"))
    for (const auto& pt : curve.at("points")) {
      const double e = pt.at("epsilon").get<double>();
      x_min = std::min(x_min, e);
      x_max = std::max(x_max, e);
    }
  cv.set_axes(x_min, x_max, true, 0.0, 1.0, "drift intensity (eps)",
              "detection rate");
  int slot = 0;
  for (const auto& curve : group.at("curves")) {
    const std::string color = kPalette[slot % 10];
    std::vector<std::pair<double, double>> mid, lo, hi;
    for (const auto& pt : curve.at("points")) {
      const double e = pt.at("epsilon").get<double>();
      mid.emplace_back(e, pt.at("rate").get<double>());
      lo.emplace_back(e, pt.at("ci_low").get<double>());
      hi.emplace_back(e, pt.at("ci_high").get<double>());
    }
    cv.band(hi, lo, color);
    cv.polyline(mid, color, 1.8);
    for (const auto& [x, y] : mid) cv.point(x, y, color, 2.2);
    cv.legend_entry(slot, curve.at("detector").get<std::string>(), color);
    ++slot;
  }
  return cv.finish();
}

std::string sdt_figure(const json& group) {
  Canvas cv(560, 460,
            "SDT operating points (" + group.at("env").get<std::string>() +
                ", " + group.at("capacity").get<std::string>() + ")");
  cv.set_axes(0.0, 1.0, false, 0.0, 1.0,
              "baseline FPR (rate at eps_baseline)",
              "detection rate at eps_ref");
  // chance diagonal
  cv.polyline({{0.0, 0.0}, {1.0, 1.0}}, "#999", 1.0, true);
  int slot = 0;
  for (const auto& pt : group.at("points")) {
    const std::string color = kPalette[slot % 10];
    const double fpr = pt.at("fpr").get<double>();
    const double det = pt.at("detection_rate").get<double>();
    cv.point(fpr, det, color, 4.0);
    cv.text(cv.x_to_px(fpr) + 6, cv.y_to_px(det) - 4,
            pt.at("detector").get<std::string>(), 9, "start", "#333");
    ++slot;
  }
  return cv.finish();
}

std::string cba_figure(const json& group) {
  Canvas cv(700, 420,
            "Collapse vs alarm timing (" + group.at("env").get<std::string>() +
                ", " + group.at("detector").get<std::string>() + ")");
  cv.widen_right(150);
  double x_min = 1e300, x_max = 0, y_max = 1;
  for (const auto& row : group.at("rows")) {
    const double e = row.at("epsilon").get<double>();
    x_min = std::min(x_min, e);
    x_max = std::max(x_max, e);
    for (const char* key : {"median_collapse_after_onset",
                            "median_fire_after_onset"})
      if (!row.at(key).is_null())
        y_max = std::max(y_max, row.at(key).get<double>());
  }
  cv.set_axes(x_min, x_max, true, 0.0, y_max * 1.1,
              "drift intensity (eps)", "steps after onset");
  std::vector<std::pair<double, double>> collapse, fire;
  for (const auto& row : group.at("rows")) {
    const double e = row.at("epsilon").get<double>();
    if (!row.at("median_collapse_after_onset").is_null())
      collapse.emplace_back(e,
                            row.at("median_collapse_after_onset").get<double>());
    if (!row.at("median_fire_after_onset").is_null())
      fire.emplace_back(e, row.at("median_fire_after_onset").get<double>());
  }
  cv.polyline(collapse, "#d62728", 1.8);
  for (auto& [x, y] : collapse) cv.point(x, y, "#d62728", 3.0);
  cv.polyline(fire, "#1f77b4", 1.8);
  for (auto& [x, y] : fire) cv.point(x, y, "#1f77b4", 3.0);
  cv.legend_entry(0, "time to collapse", "#d62728");
  cv.legend_entry(1, "time to alarm", "#1f77b4");
  return cv.finish();
}

std::string psd_figure(const json& group) {
  Canvas cv(760, 460,
            "PE traces and spectra (" + group.at("env").get<std::string>() +
                ", " + group.at("capacity").get<std::string>() + ")");
  cv.widen_right(150);
  // Upper panel: PE traces (linear-x steps). Rendered in data coordinates of
  // the lower panel canvas via a second Canvas for simplicity: instead build
  // one canvas per panel and stack them in a wrapper SVG.
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"760\" "
         "height=\"880\" viewBox=\"0 0 760 880\">\n";
  {
    Canvas top(760, 430, "PE traces (" + group.at("env").get<std::string>() +
                             ")");
    top.widen_right(150);
    double t_max = 1, y_max = 1e-12;
    for (const auto& tr : group.at("traces")) {
      const auto& ys = tr.at("pe");
      t_max = std::max(t_max, static_cast<double>(ys.size()));
      for (const auto& y : ys)
        y_max = std::max(y_max, std::abs(y.get<double>()));
    }
    top.set_axes(0, t_max, false, 0.0, y_max * 1.05, "step",
                 "prediction error");
    int slot = 0;
    for (const auto& tr : group.at("traces")) {
      const std::string color = kPalette[slot % 10];
      std::vector<std::pair<double, double>> pts;
      const auto& ys = tr.at("pe");
      for (std::size_t i = 0; i < ys.size(); ++i)
        pts.emplace_back(static_cast<double>(i), ys[i].get<double>());
      top.polyline(pts, color, 1.2);
      top.legend_entry(slot, tr.at("label").get<std::string>(), color);
      ++slot;
    }
    const double onset = group.value("onset", 0.0);
    if (onset > 0) {
      std::vector<std::pair<double, double>> marker{{onset, 0.0},
                                                    {onset, y_max * 1.05}};
      top.polyline(marker, "#000", 1.0, true);
    }
    std::string inner = top.finish();
    svg << "<g transform=\"translate(0,0)\">" << inner << "</g>\n";
  }
  {
    Canvas bottom(760, 430, "Post-onset power spectra");
    bottom.widen_right(150);
    double y_lo = 1e300, y_hi = -1e300;
    for (const auto& sp : group.at("spectra"))
      for (const auto& v : sp.at("log10_power")) {
        y_lo = std::min(y_lo, v.get<double>());
        y_hi = std::max(y_hi, v.get<double>());
      }
    bottom.set_axes(0.0, 0.5, false, y_lo - 0.5, y_hi + 0.5,
                    "frequency (cycles/step)", "log10 power");
    int slot = 0;
    for (const auto& sp : group.at("spectra")) {
      const std::string color = kPalette[slot % 10];
      const auto& ys = sp.at("log10_power");
      std::vector<std::pair<double, double>> pts;
      const double n = static_cast<double>(ys.size());
      for (std::size_t i = 0; i < ys.size(); ++i)
        pts.emplace_back(0.5 * static_cast<double>(i + 1) / n,
                         ys[i].get<double>());
      bottom.polyline(pts, color, 1.2);
      bottom.legend_entry(slot, sp.at("label").get<std::string>(), color);
      ++slot;
    }
    std::string inner = bottom.finish();
    svg << "<g transform=\"translate(0,440)\">" << inner << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string slug(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return out;
}

}  // namespace

std::map<std::string, std::string> render_report(
    const json& bundle, std::vector<std::string>* skipped) {
  std::map<std::string, std::string> files;
  auto note = [&](const std::string& msg) {
    if (skipped) skipped->push_back(msg);
  };

  if (bundle.contains("detection_curves") &&
      !bundle.at("detection_curves").empty()) {
    for (const auto& group : bundle.at("detection_curves")) {
      const std::string name = "fig_detection_" +
                               slug(group.at("env").get<std::string>()) + "_" +
                               slug(group.at("profile").get<std::string>()) +
                               "_" +
                               slug(group.at("capacity").get<std::string>()) +
                               ".svg";
      files[name] = detection_figure(group);
    }
  } else {
    note("detection curves: no data in bundle, skipped");
  }

  if (bundle.contains("sdt") && !bundle.at("sdt").empty()) {
    for (const auto& group : bundle.at("sdt")) {
      const std::string name =
          "fig_sdt_" + slug(group.at("env").get<std::string>()) + "_" +
          slug(group.at("capacity").get<std::string>()) + ".svg";
      files[name] = sdt_figure(group);
    }
  } else {
    note("sdt scatter: no data in bundle, skipped");
  }

  if (bundle.contains("cba_timing") && !bundle.at("cba_timing").empty()) {
    for (const auto& group : bundle.at("cba_timing")) {
      const std::string name =
          "fig_cba_" + slug(group.at("env").get<std::string>()) + "_" +
          slug(group.at("detector").get<std::string>()) + ".svg";
      files[name] = cba_figure(group);
    }
  } else {
    note("cba timing: no data in bundle, skipped");
  }

  if (bundle.contains("psd_examples") && !bundle.at("psd_examples").empty()) {
    for (const auto& group : bundle.at("psd_examples")) {
      const std::string name =
          "fig_pe_psd_" + slug(group.at("env").get<std::string>()) + "_" +
          slug(group.at("capacity").get<std::string>()) + ".svg";
      files[name] = psd_figure(group);
    }
  } else {
    note("pe/psd panel: no data in bundle, skipped");
  }
  return files;
}

}  // namespace driftmon
