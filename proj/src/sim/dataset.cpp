#include "khwm/sim/demo.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "khwm/core/errors.hpp"
#include "khwm/traj/keyframes.hpp"

namespace khwm::sim {

namespace fs = std::filesystem;

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("demo file: truncated header");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("demo file: truncated double");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void write_state(std::ostream& os, const SimState& s) {
    write_f64(os, s.gripper.x());
    write_f64(os, s.gripper.y());
    os.put(s.gripper_closed ? 1 : 0);
    write_u32(os, static_cast<std::uint32_t>(s.items.size()));
    for (const auto& it : s.items) {
        write_f64(os, it.x());
        write_f64(os, it.y());
    }
    write_f64(os, s.lid_angle);
    write_u32(os, static_cast<std::uint32_t>(s.grasped_item + 1));
    os.put(s.holding_lid ? 1 : 0);
    write_u32(os, static_cast<std::uint32_t>(s.step_count));
}

SimState read_state(std::istream& is) {
    SimState s;
    s.gripper.x() = read_f64(is);
    s.gripper.y() = read_f64(is);
    s.gripper_closed = is.get() != 0;
    const std::uint32_t n_items = read_u32(is);
    for (std::uint32_t i = 0; i < n_items; ++i) {
        Vector2d p;
        p.x() = read_f64(is);
        p.y() = read_f64(is);
        s.items.push_back(p);
    }
    s.lid_angle = read_f64(is);
    s.grasped_item = static_cast<int>(read_u32(is)) - 1;
    s.holding_lid = is.get() != 0;
    s.step_count = static_cast<int>(read_u32(is));
    return s;
}

}  // namespace

void write_demo_file(const std::string& path, const Demonstration& demo) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open demo file for writing: " + path);
    os.write("KHWMDEM1", 8);
    write_u32(os, static_cast<std::uint32_t>(demo.length));
    write_u32(os, kViewCount);
    write_u32(os, kImageSize);
    write_u32(os, kImageSize);
    write_u32(os, 3);
    write_u32(os, static_cast<std::uint32_t>(demo.seed));
    write_u32(os, static_cast<std::uint32_t>(demo.seed >> 32));
    for (int t = 0; t < demo.length; ++t)
        for (int v = 0; v < kViewCount; ++v) {
            const auto& img = demo.frames[static_cast<size_t>(t)][static_cast<size_t>(v)];
            os.write(reinterpret_cast<const char*>(img.data()),
                     static_cast<std::streamsize>(img.size()));
        }
    for (int t = 0; t < demo.length; ++t) {
        const Action& a = demo.actions[static_cast<size_t>(t)];
        write_f64(os, a.dx);
        write_f64(os, a.dy);
        write_f64(os, a.grip);
    }
    os.write(reinterpret_cast<const char*>(demo.grips.data()),
             static_cast<std::streamsize>(demo.grips.size()));
    for (double v : demo.velocities) write_f64(os, v);
    for (double r : demo.rewards) write_f64(os, r);
    for (const auto& s : demo.states) write_state(os, s);
    if (!os) throw IoError("demo file write failed: " + path);
}

Demonstration read_demo_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open demo file: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "KHWMDEM1", 8) != 0)
        throw IoError("not a demo file (bad magic): " + path);
    Demonstration demo;
    demo.length = static_cast<int>(read_u32(is));
    const std::uint32_t views = read_u32(is);
    const std::uint32_t h = read_u32(is);
    const std::uint32_t w = read_u32(is);
    const std::uint32_t c = read_u32(is);
    if (views != kViewCount || h != kImageSize || w != kImageSize || c != 3)
        throw IoError("demo file has unexpected tensor shape: " + path);
    const std::uint64_t seed_lo = read_u32(is);
    const std::uint64_t seed_hi = read_u32(is);
    demo.seed = seed_lo | (seed_hi << 32);
    const size_t frame_bytes = static_cast<size_t>(h * w * c);
    demo.frames.resize(static_cast<size_t>(demo.length));
    for (int t = 0; t < demo.length; ++t)
        for (std::uint32_t v = 0; v < views; ++v) {
            ImageU8 img(frame_bytes);
            is.read(reinterpret_cast<char*>(img.data()), static_cast<std::streamsize>(frame_bytes));
            if (!is) throw IoError("demo file: truncated frames: " + path);
            demo.frames[static_cast<size_t>(t)][v] = std::move(img);
        }
    for (int t = 0; t < demo.length; ++t) {
        Action a;
        a.dx = read_f64(is);
        a.dy = read_f64(is);
        a.grip = read_f64(is);
        demo.actions.push_back(a);
    }
    demo.grips.resize(static_cast<size_t>(demo.length));
    is.read(reinterpret_cast<char*>(demo.grips.data()), demo.length);
    for (int t = 0; t < demo.length; ++t) demo.velocities.push_back(read_f64(is));
    for (int t = 0; t < demo.length; ++t) demo.rewards.push_back(read_f64(is));
    for (int t = 0; t < demo.length; ++t) demo.states.push_back(read_state(is));
    if (!is) throw IoError("demo file: truncated: " + path);
    return demo;
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
    j = nlohmann::json{{"task", m.task},
                       {"image_size", m.image_size},
                       {"views", m.views},
                       {"count", m.count},
                       {"base_seed", m.base_seed},
                       {"reward_attached", m.reward_attached},
                       {"reward_program_hash", m.reward_program_hash}};
    j["demos"] = nlohmann::json::array();
    for (const auto& d : m.demos)
        j["demos"].push_back(nlohmann::json{
            {"file", d.file}, {"seed", d.seed}, {"length", d.length}, {"keyframes", d.keyframes}});
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
    m = DatasetManifest{};
    j.at("task").get_to(m.task);
    j.at("image_size").get_to(m.image_size);
    j.at("views").get_to(m.views);
    j.at("count").get_to(m.count);
    j.at("base_seed").get_to(m.base_seed);
    j.at("reward_attached").get_to(m.reward_attached);
    j.at("reward_program_hash").get_to(m.reward_program_hash);
    for (const auto& dj : j.at("demos")) {
        ManifestDemo d;
        dj.at("file").get_to(d.file);
        dj.at("seed").get_to(d.seed);
        dj.at("length").get_to(d.length);
        dj.at("keyframes").get_to(d.keyframes);
        m.demos.push_back(std::move(d));
    }
}

void save_dataset(const std::string& dir, const std::string& task_id,
                  const std::vector<Demonstration>& demos, std::uint64_t base_seed) {
    const fs::path task_dir = fs::path(dir) / task_id;
    fs::create_directories(task_dir);
    DatasetManifest m;
    m.task = task_id;
    m.count = static_cast<int>(demos.size());
    m.base_seed = base_seed;
    for (int v = 0; v < kViewCount; ++v) m.views.push_back(view_name(static_cast<View>(v)));
    for (size_t k = 0; k < demos.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof(name), "demo_%04zu.bin", k);
        write_demo_file((task_dir / name).string(), demos[k]);
        ManifestDemo entry;
        entry.file = name;
        entry.seed = demos[k].seed;
        entry.length = demos[k].length;
        entry.keyframes = traj::discover_keyframes(demos[k].velocities, demos[k].grips);
        m.demos.push_back(std::move(entry));
    }
    save_manifest(dir, task_id, m);
}

DatasetManifest load_manifest(const std::string& dir, const std::string& task_id) {
    const fs::path path = fs::path(dir) / task_id / "manifest.json";
    std::ifstream is(path);
    if (!is) throw IoError("missing dataset manifest: " + path.string());
    nlohmann::json j;
    is >> j;
    return j.get<DatasetManifest>();
}

void save_manifest(const std::string& dir, const std::string& task_id,
                   const DatasetManifest& manifest) {
    const fs::path task_dir = fs::path(dir) / task_id;
    fs::create_directories(task_dir);
    std::ofstream os(task_dir / "manifest.json");
    if (!os) throw IoError("cannot write manifest under " + task_dir.string());
    os << nlohmann::json(manifest).dump(2) << "\n";
}

Demonstration load_demo(const std::string& dir, const std::string& task_id,
                        const ManifestDemo& entry) {
    return read_demo_file((fs::path(dir) / task_id / entry.file).string());
}

std::vector<Demonstration> load_dataset(const std::string& dir, const std::string& task_id,
                                        DatasetManifest* manifest_out) {
    DatasetManifest m = load_manifest(dir, task_id);
    std::vector<Demonstration> demos;
    demos.reserve(m.demos.size());
    for (const auto& entry : m.demos) demos.push_back(load_demo(dir, task_id, entry));
    if (manifest_out) *manifest_out = std::move(m);
    return demos;
}

}  // namespace khwm::sim
