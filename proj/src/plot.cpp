#include "entlab/plot.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "entlab/io.hpp"

namespace entlab::plot {
namespace {

constexpr double kWidth = 720, kHeight = 420;
constexpr double kLeft = 70, kRight = 170, kTop = 40, kBottom = 60;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double y_min, y_max;
  std::size_t n;
  double px(double i) const {
    const double w = kWidth - kLeft - kRight;
    return n <= 1 ? kLeft + w / 2 : kLeft + w * (i + 0.5) / static_cast<double>(n);
  }
  double py(double y) const {
    const double h = kHeight - kTop - kBottom;
    return kTop + h * (1.0 - (y - y_min) / (y_max - y_min));
  }
};

void header(std::ostringstream& o, const std::string& title) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title)
    << "</text>\n";
}

void axes(std::ostringstream& o, const Frame& f, const std::vector<std::string>& labels, const std::string& xl,
          const std::string& yl) {
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  o << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1 << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = f.y_min + (f.y_max - f.y_min) * t / 5.0;
    const double y = f.py(v);
    o << "<line x1=\"" << x0 - 4 << "\" y1=\"" << y << "\" x2=\"" << x1 << "\" y2=\"" << y
      << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << x0 - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << fmt6(v) << "</text>\n";
  }
  for (std::size_t i = 0; i < labels.size(); ++i)
    o << "<text x=\"" << f.px(static_cast<double>(i)) << "\" y=\"" << y0 + 18 << "\" text-anchor=\"middle\">"
      << esc(labels[i]) << "</text>\n";
  o << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 15 << "\" text-anchor=\"middle\">" << esc(xl)
    << "</text>\n";
  o << "<text transform=\"translate(18," << (y0 + y1) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << esc(yl)
    << "</text>\n";
}

void legend(std::ostringstream& o, const std::vector<Series>& series) {
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double y = kTop + 10 + 20.0 * static_cast<double>(s);
    const double x = kWidth - kRight + 15;
    o << "<rect x=\"" << x << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"12\" fill=\"" << kColors[s % 6]
      << "\"/>\n";
    o << "<text x=\"" << x + 18 << "\" y=\"" << y + 1 << "\">" << esc(series[s].name) << "</text>\n";
  }
}

}  // namespace

std::string render(const LineChart& c) {
  std::ostringstream o;
  header(o, c.title);
  const Frame f{c.y_min, c.y_max > c.y_min ? c.y_max : c.y_min + 1.0, c.x_labels.size()};
  axes(o, f, c.x_labels, c.x_label, c.y_label);
  for (std::size_t s = 0; s < c.series.size(); ++s) {
    const Series& se = c.series[s];
    const char* col = kColors[s % 6];
    std::string path;
    for (std::size_t i = 0; i < se.y.size(); ++i) {
      if (!std::isfinite(se.y[i])) continue;
      path += (path.empty() ? "M" : " L") + fmt6(f.px(static_cast<double>(i))) + "," + fmt6(f.py(se.y[i]));
    }
    if (!path.empty()) o << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
    for (std::size_t i = 0; i < se.y.size(); ++i) {
      if (!std::isfinite(se.y[i])) continue;
      const double x = f.px(static_cast<double>(i));
      if (i < se.err.size() && std::isfinite(se.err[i]) && se.err[i] > 0)
        o << "<line x1=\"" << x << "\" y1=\"" << f.py(se.y[i] - se.err[i]) << "\" x2=\"" << x << "\" y2=\""
          << f.py(se.y[i] + se.err[i]) << "\" stroke=\"" << col << "\"/>\n";
      o << "<circle cx=\"" << x << "\" cy=\"" << f.py(se.y[i]) << "\" r=\"3.5\" fill=\"" << col << "\"><title>"
        << esc(se.name) << " " << esc(c.x_labels[i]) << ": " << fmt6(se.y[i]);
      if (i < se.err.size()) o << " +/- " << fmt6(se.err[i]);
      o << "</title></circle>\n";
    }
  }
  legend(o, c.series);
  o << "</svg>\n";
  return o.str();
}

std::string render(const BarChart& c) {
  std::ostringstream o;
  header(o, c.title);
  double top = 0.0;
  for (const auto& s : c.series)
    for (double v : s.y)
      if (std::isfinite(v)) top = std::max(top, v);
  const Frame f{0.0, top > 0 ? top * 1.1 : 1.0, c.x_labels.size()};
  axes(o, f, c.x_labels, c.x_label, c.y_label);
  const double slot = (kWidth - kLeft - kRight) / static_cast<double>(std::max<std::size_t>(1, c.x_labels.size()));
  const double bw = 0.8 * slot / static_cast<double>(std::max<std::size_t>(1, c.series.size()));
  for (std::size_t s = 0; s < c.series.size(); ++s)
    for (std::size_t i = 0; i < c.series[s].y.size(); ++i) {
      const double v = c.series[s].y[i];
      if (!std::isfinite(v)) continue;
      const double x = f.px(static_cast<double>(i)) - 0.4 * slot + bw * static_cast<double>(s);
      o << "<rect x=\"" << x << "\" y=\"" << f.py(v) << "\" width=\"" << bw << "\" height=\"" << f.py(0) - f.py(v)
        << "\" fill=\"" << kColors[s % 6] << "\"><title>" << esc(c.series[s].name) << " " << esc(c.x_labels[i])
        << ": " << fmt6(v) << "</title></rect>\n";
    }
  legend(o, c.series);
  o << "</svg>\n";
  return o.str();
}

}  // namespace entlab::plot
