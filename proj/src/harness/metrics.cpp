#include "khwm/harness/metrics.hpp"

#include <fstream>

#include <json.hpp>

#include "khwm/core/errors.hpp"

namespace khwm::harness {

MetricsWriter::MetricsWriter(std::string path) : path_(std::move(path)) {}

void MetricsWriter::append(const MetricsRecord& record) {
    const auto key = std::make_pair(record.phase, record.seed);
    auto it = last_step_.find(key);
    if (it != last_step_.end() && record.step <= it->second)
        throw ContractError("metrics: step must be monotone within (phase, seed)");
    last_step_[key] = record.step;

    nlohmann::json j{{"phase", record.phase},
                     {"step", record.step},
                     {"seed", record.seed},
                     {"wall_clock", record.wall_clock},
                     {"metrics", record.metrics}};
    std::ofstream os(path_, std::ios::app);
    if (!os) throw IoError("cannot append to metrics file: " + path_);
    os << j.dump() << "\n";
}

std::vector<MetricsRecord> read_metrics(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open metrics file: " + path);
    std::vector<MetricsRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            MetricsRecord r;
            j.at("phase").get_to(r.phase);
            j.at("step").get_to(r.step);
            j.at("seed").get_to(r.seed);
            j.at("wall_clock").get_to(r.wall_clock);
            j.at("metrics").get_to(r.metrics);
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("metrics file " + path + " line " + std::to_string(line_no) + ": " +
                             e.what());
        }
    }
    return out;
}

}  // namespace khwm::harness
