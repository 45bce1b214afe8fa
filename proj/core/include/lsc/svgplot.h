#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lsc/io.h"

namespace lsc::svg {

/// Minimal deterministic SVG line plot: axes, ticks, legend, one polyline
/// with markers per series.
class LinePlot {
 public:
  LinePlot(std::string title, std::string xlabel, std::string ylabel);
  void add_series(std::string name, std::vector<std::pair<double, double>> points);
  std::string render() const;

 private:
  std::string title_, xlabel_, ylabel_;
  struct Series {
    std::string name;
    std::vector<std::pair<double, double>> pts;
  };
  std::vector<Series> series_;
};

/// Stacked percentage bars (bitstream composition).
class StackedBars {
 public:
  StackedBars(std::string title, std::vector<std::string> part_names, std::vector<std::string> bar_names,
              std::vector<std::vector<double>> stacks);
  std::string render() const;

 private:
  std::string title_;
  std::vector<std::string> part_names_, bar_names_;
  std::vector<std::vector<double>> stacks_;
};

}  // namespace lsc::svg
