#pragma once

#include <string>
#include <vector>

namespace ustd {

/// Fan chart for one node: observed history, then the forecast horizon with a
/// shaded min/max sample envelope, the median line, and the ground truth.
/// `history` may be empty; `samples` holds one horizon-length row per draw.
void write_fan_chart(const std::string& path, const std::vector<double>& history,
                     const std::vector<std::vector<double>>& samples,
                     const std::vector<double>& median, const std::vector<double>& truth,
                     const std::string& title);

/// Simple multi-series line chart (one polyline per named series, shared x
/// indices 1..len) with a legend; used for per-horizon and loss curves.
void write_line_chart(const std::string& path, const std::vector<std::string>& names,
                      const std::vector<std::vector<double>>& series,
                      const std::string& title, const std::string& x_label,
                      const std::string& y_label);

}  // namespace ustd
