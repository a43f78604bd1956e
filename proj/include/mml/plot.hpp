#pragma once

#include <string>
#include <utility>
#include <vector>

namespace mml {

struct MetricSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (epoch, value)
};

// Reads metric JSONL logs: train loss plus every validation metric, one
// series per (file, model, field).
std::vector<MetricSeries> load_metric_series(const std::vector<std::string>& paths);

// Long-format CSV: series,epoch,value.
void write_series_csv(const std::vector<MetricSeries>& series,
                      const std::string& path);

// Static SVG line chart with a shared x axis; loss series use the left y
// axis, accuracy-like series (values in [0,1]) the right one.
void write_series_svg(const std::vector<MetricSeries>& series,
                      const std::string& path);

}  // namespace mml
