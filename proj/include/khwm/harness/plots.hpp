#pragma once

#include <string>

namespace khwm::harness {

// Reads a metrics file and writes, under out_dir:
//   plot_<metric>.svg  one polyline per seed plus a seed-mean polyline
//   metrics.csv        one row per record, mirroring plotted data
// An empty metrics file still yields an empty plot with axes and a
// header-only CSV.
void emit_plots(const std::string& metrics_path, const std::string& out_dir);

}  // namespace khwm::harness
