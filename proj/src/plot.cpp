#include "mml/plot.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <stdexcept>

namespace mml {

using nlohmann::json;

std::vector<MetricSeries> load_metric_series(const std::vector<std::string>& paths) {
  std::map<std::string, MetricSeries> by_name;
  for (const std::string& path : paths) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open metric log: " + path);
    std::string stem = std::filesystem::path(path).stem().string();
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      json j = json::parse(line);
      double epoch = j.at("epoch").get<double>();
      int model = j.value("model", 0);
      std::string split = j.at("split").get<std::string>();
      auto add = [&](const char* field) {
        if (!j.contains(field)) return;
        std::string name = stem + ".m" + std::to_string(model) + "." + field;
        auto& s = by_name[name];
        s.name = name;
        s.points.emplace_back(epoch, j[field].get<double>());
      };
      if (split == "train") add("loss");
      if (split == "val") {
        add("top1");
        add("top5");
        add("map");
      }
    }
  }
  std::vector<MetricSeries> out;
  for (auto& [name, s] : by_name) {
    std::sort(s.points.begin(), s.points.end());
    out.push_back(std::move(s));
  }
  return out;
}

void write_series_csv(const std::vector<MetricSeries>& series,
                      const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write: " + path);
  f << "series,epoch,value\n";
  for (const MetricSeries& s : series)
    for (auto [x, y] : s.points) f << s.name << "," << x << "," << y << "\n";
}

namespace {

bool is_accuracy_series(const std::string& name) {
  return name.ends_with(".top1") || name.ends_with(".top5") || name.ends_with(".map");
}

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

void write_series_svg(const std::vector<MetricSeries>& series,
                      const std::string& path) {
  if (series.empty()) throw std::invalid_argument("write_series_svg: no series");
  const double W = 960, H = 520;
  const double ml = 60, mr = 60, mt = 30 + 14.0 * ((series.size() + 2) / 3), mb = 40;

  double x_lo = 1e300, x_hi = -1e300, loss_hi = 0.0;
  for (const MetricSeries& s : series)
    for (auto [x, y] : s.points) {
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
      if (!is_accuracy_series(s.name)) loss_hi = std::max(loss_hi, y);
    }
  if (x_hi <= x_lo) x_hi = x_lo + 1;
  if (loss_hi <= 0) loss_hi = 1;
  loss_hi *= 1.05;

  auto px = [&](double x) { return ml + (x - x_lo) / (x_hi - x_lo) * (W - ml - mr); };
  auto py_loss = [&](double y) { return H - mb - y / loss_hi * (H - mt - mb); };
  auto py_acc = [&](double y) { return H - mb - y * (H - mt - mb); };

  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write: " + path);
  f << "<svg xmlns='http://www.w3.org/2000/svg' viewBox='0 0 " << W << " " << H
    << "' font-family='sans-serif' font-size='11'>\n";
  f << "<rect width='" << W << "' height='" << H << "' fill='white'/>\n";
  // axes
  f << "<line x1='" << ml << "' y1='" << H - mb << "' x2='" << W - mr << "' y2='"
    << H - mb << "' stroke='black'/>\n";
  f << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << H - mb
    << "' stroke='black'/>\n";
  f << "<line x1='" << W - mr << "' y1='" << mt << "' x2='" << W - mr << "' y2='"
    << H - mb << "' stroke='black'/>\n";
  for (int i = 0; i <= 5; ++i) {
    double fx = x_lo + (x_hi - x_lo) * i / 5.0;
    f << "<text x='" << px(fx) << "' y='" << H - mb + 16
      << "' text-anchor='middle'>" << static_cast<int>(std::lround(fx)) << "</text>\n";
    double yl = loss_hi * i / 5.0;
    f << "<text x='" << ml - 6 << "' y='" << py_loss(yl) + 4
      << "' text-anchor='end'>" << std::round(yl * 100) / 100 << "</text>\n";
    f << "<text x='" << W - mr + 6 << "' y='" << py_acc(i / 5.0) + 4
      << "' text-anchor='start'>" << i / 5.0 << "</text>\n";
  }
  f << "<text x='" << (W / 2) << "' y='" << H - 8 << "' text-anchor='middle'>epoch</text>\n";
  f << "<text x='14' y='" << (H / 2) << "' transform='rotate(-90 14 " << (H / 2)
    << ")' text-anchor='middle'>loss</text>\n";
  f << "<text x='" << W - 14 << "' y='" << (H / 2) << "' transform='rotate(90 "
    << W - 14 << " " << (H / 2) << ")' text-anchor='middle'>accuracy / mAP</text>\n";

  size_t ci = 0;
  double lx = ml, ly = 16;
  for (const MetricSeries& s : series) {
    const char* color = kPalette[ci % (sizeof(kPalette) / sizeof(kPalette[0]))];
    bool acc = is_accuracy_series(s.name);
    f << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5'"
      << (acc ? "" : " stroke-dasharray='none'") << " points='";
    for (auto [x, y] : s.points)
      f << px(x) << "," << (acc ? py_acc(y) : py_loss(y)) << " ";
    f << "'/>\n";
    f << "<line x1='" << lx << "' y1='" << ly - 4 << "' x2='" << lx + 18
      << "' y2='" << ly - 4 << "' stroke='" << color << "' stroke-width='3'/>\n";
    f << "<text x='" << lx + 22 << "' y='" << ly << "'>" << s.name << "</text>\n";
    lx += 300;
    if (lx > W - mr - 280) {
      lx = ml;
      ly += 14;
    }
    ++ci;
  }
  f << "</svg>\n";
}

}  // namespace mml
