#include "khwm/harness/plots.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <vector>

#include <json.hpp>

#include "khwm/core/errors.hpp"
#include "khwm/harness/metrics.hpp"

namespace khwm::harness {

namespace fs = std::filesystem;

namespace {

constexpr int kW = 640, kH = 400, kPad = 48;

// Shortest round-trip double formatting (same as the JSON dump).
std::string num(double v) { return nlohmann::json(v).dump(); }

struct Series {
    std::vector<std::pair<long, double>> points;  // step -> value, append order
};

std::string polyline(const std::vector<std::pair<long, double>>& pts, long s0, long s1, double v0,
                     double v1, const std::string& stroke, double width) {
    std::string svg = "  <polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"" +
                      num(width) + "\" points=\"";
    const double sx = s1 > s0 ? static_cast<double>(kW - 2 * kPad) / static_cast<double>(s1 - s0) : 0.0;
    const double sy = v1 > v0 ? static_cast<double>(kH - 2 * kPad) / (v1 - v0) : 0.0;
    for (const auto& [step, value] : pts) {
        const double x = kPad + static_cast<double>(step - s0) * sx;
        const double y = kH - kPad - (value - v0) * sy;
        svg += num(x) + "," + num(y) + " ";
    }
    svg += "\"/>\n";
    return svg;
}

void write_svg(const fs::path& path, const std::string& title,
               const std::map<std::uint64_t, Series>& by_seed) {
    long s0 = 0, s1 = 1;
    double v0 = 0.0, v1 = 1.0;
    bool any = false;
    for (const auto& [seed, series] : by_seed)
        for (const auto& [step, value] : series.points) {
            if (!any) {
                s0 = s1 = step;
                v0 = v1 = value;
                any = true;
            }
            s0 = std::min(s0, step);
            s1 = std::max(s1, step);
            v0 = std::min(v0, value);
            v1 = std::max(v1, value);
        }
    if (s0 == s1) s1 = s0 + 1;
    if (v0 == v1) v1 = v0 + 1.0;

    std::ofstream os(path);
    if (!os) throw IoError("cannot write plot: " + path.string());
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
       << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n";
    os << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "  <line x1=\"" << kPad << "\" y1=\"" << kH - kPad << "\" x2=\"" << kW - kPad
       << "\" y2=\"" << kH - kPad << "\" stroke=\"black\"/>\n";
    os << "  <line x1=\"" << kPad << "\" y1=\"" << kPad << "\" x2=\"" << kPad << "\" y2=\""
       << kH - kPad << "\" stroke=\"black\"/>\n";
    os << "  <text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\">" << title
       << "</text>\n";
    os << "  <text x=\"" << kPad << "\" y=\"" << kH - kPad + 16 << "\">" << s0 << "</text>\n";
    os << "  <text x=\"" << kW - kPad << "\" y=\"" << kH - kPad + 16
       << "\" text-anchor=\"end\">" << s1 << "</text>\n";
    os << "  <text x=\"" << kPad - 4 << "\" y=\"" << kH - kPad << "\" text-anchor=\"end\">"
       << num(v0) << "</text>\n";
    os << "  <text x=\"" << kPad - 4 << "\" y=\"" << kPad << "\" text-anchor=\"end\">" << num(v1)
       << "</text>\n";

    static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    int color = 0;
    for (const auto& [seed, series] : by_seed)
        os << polyline(series.points, s0, s1, v0, v1, kColors[color++ % 8], 1.2);

    // Seed mean over the union of steps (seeds that logged that step).
    if (!by_seed.empty()) {
        std::map<long, std::pair<double, int>> acc;
        for (const auto& [seed, series] : by_seed)
            for (const auto& [step, value] : series.points) {
                acc[step].first += value;
                acc[step].second += 1;
            }
        std::vector<std::pair<long, double>> mean;
        for (const auto& [step, sv] : acc) mean.push_back({step, sv.first / sv.second});
        os << polyline(mean, s0, s1, v0, v1, "#000000", 2.4);
    }
    os << "</svg>\n";
}

std::string sanitize(const std::string& name) {
    std::string out;
    for (char c : name) out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return out;
}

}  // namespace

void emit_plots(const std::string& metrics_path, const std::string& out_dir) {
    const std::vector<MetricsRecord> records = read_metrics(metrics_path);
    fs::create_directories(out_dir);

    // CSV mirror: one row per record; metric columns are the sorted union.
    std::set<std::string> metric_names;
    for (const auto& r : records)
        for (const auto& [k, v] : r.metrics) metric_names.insert(k);
    {
        std::ofstream csv(fs::path(out_dir) / "metrics.csv");
        if (!csv) throw IoError("cannot write metrics.csv under " + out_dir);
        csv << "phase,step,seed,wall_clock";
        for (const auto& m : metric_names) csv << "," << m;
        csv << "\n";
        for (const auto& r : records) {
            csv << r.phase << "," << r.step << "," << r.seed << "," << num(r.wall_clock);
            for (const auto& m : metric_names) {
                auto it = r.metrics.find(m);
                csv << "," << (it == r.metrics.end() ? "" : num(it->second));
            }
            csv << "\n";
        }
    }

    if (records.empty()) {
        write_svg(fs::path(out_dir) / "plot_empty.svg", "no metrics", {});
        return;
    }
    // One SVG per (phase, metric); curves are per-seed plus the mean.
    std::map<std::pair<std::string, std::string>, std::map<std::uint64_t, Series>> plots;
    for (const auto& r : records)
        for (const auto& [k, v] : r.metrics)
            plots[{r.phase, k}][r.seed].points.push_back({r.step, v});
    for (const auto& [key, by_seed] : plots) {
        const std::string name = sanitize(key.first) + "_" + sanitize(key.second);
        write_svg(fs::path(out_dir) / ("plot_" + name + ".svg"), key.first + " / " + key.second,
                  by_seed);
    }
}

}  // namespace khwm::harness
