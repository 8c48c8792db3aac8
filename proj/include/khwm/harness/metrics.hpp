#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace khwm::harness {

// One JSON-lines metrics record.
struct MetricsRecord {
    std::string phase;
    long step = 0;
    std::uint64_t seed = 0;
    double wall_clock = 0.0;  // seconds since the phase started
    std::map<std::string, double> metrics;
};

// Single writer per metrics file; records append one line each and steps must
// be monotone within a (phase, seed) stream.
class MetricsWriter {
public:
    explicit MetricsWriter(std::string path);
    void append(const MetricsRecord& record);
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::map<std::pair<std::string, std::uint64_t>, long> last_step_;
};

// Parses a metrics file; malformed lines raise a line-numbered parse error.
std::vector<MetricsRecord> read_metrics(const std::string& path);

}  // namespace khwm::harness
