#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "khwm/core/rng.hpp"
#include "khwm/traj/keyframes.hpp"
#include "khwm/traj/replay.hpp"

using namespace khwm;
using namespace khwm::traj;

namespace {

// Independent brute-force oracle: mark every eligible index, then collapse
// runs (index 0 is always a mark), then force both endpoints.
std::vector<int> keyframe_oracle(const std::vector<double>& vel,
                                 const std::vector<std::uint8_t>& grip, double eps) {
    const int n = static_cast<int>(vel.size());
    std::vector<bool> mark(static_cast<size_t>(n), false);
    mark[0] = true;
    for (int t = 1; t < n; ++t)
        mark[static_cast<size_t>(t)] =
            vel[static_cast<size_t>(t)] < eps && grip[static_cast<size_t>(t)] == grip[static_cast<size_t>(t - 1)];
    std::vector<int> keys;
    for (int t = 0; t < n - 1; ++t)
        if (mark[static_cast<size_t>(t)] && (t == 0 || !mark[static_cast<size_t>(t - 1)]))
            keys.push_back(t);
    if (keys.empty() || keys.front() != 0) keys.insert(keys.begin(), 0);
    if (keys.back() != n - 1) keys.push_back(n - 1);
    return keys;
}

}  // namespace

TEST_CASE("keyframes: constant velocity gives endpoints only") {
    std::vector<double> vel(30, 0.05);
    std::vector<std::uint8_t> grip(30, 1);
    CHECK(discover_keyframes(vel, grip, 0.01) == std::vector<int>{0, 29});
}

TEST_CASE("keyframes: zero velocity everywhere collapses to endpoints") {
    std::vector<double> vel(20, 0.0);
    std::vector<std::uint8_t> grip(20, 0);
    CHECK(discover_keyframes(vel, grip, 1e-3) == std::vector<int>{0, 19});
}

TEST_CASE("keyframes: five dwells give five interior keyframes at dwell starts") {
    // 5 waypoints, each: 6 moving steps, 3 dwell steps, 1 grip-change step.
    std::vector<double> vel{0.0};
    std::vector<std::uint8_t> grip{0};
    std::vector<int> expected;
    std::uint8_t g = 0;
    for (int w = 0; w < 5; ++w) {
        for (int i = 0; i < 6; ++i) {
            vel.push_back(0.05);
            grip.push_back(g);
        }
        expected.push_back(static_cast<int>(vel.size()));
        for (int i = 0; i < 3; ++i) {
            vel.push_back(0.0);
            grip.push_back(g);
        }
        g = static_cast<std::uint8_t>(1 - g);
        vel.push_back(0.0);  // grip flip step: zero velocity but changed state
        grip.push_back(g);
    }
    vel.push_back(0.05);
    grip.push_back(g);

    auto keys = discover_keyframes(vel, grip, 1e-3);
    REQUIRE(keys.size() == 7);  // 0, five dwell starts, end
    for (int w = 0; w < 5; ++w) CHECK(keys[static_cast<size_t>(w + 1)] == expected[static_cast<size_t>(w)]);
    CHECK(keys == keyframe_oracle(vel, grip, 1e-3));
}

TEST_CASE("keyframes: matches the brute-force oracle on random sequences") {
    Rng rng(1234);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(120));
        std::vector<double> vel;
        std::vector<std::uint8_t> grip;
        std::uint8_t g = static_cast<std::uint8_t>(rng.below(2));
        for (int t = 0; t < n; ++t) {
            vel.push_back(rng.uniform() < 0.4 ? rng.uniform() * 5e-4 : rng.uniform() * 0.05);
            if (rng.uniform() < 0.15) g = static_cast<std::uint8_t>(1 - g);
            grip.push_back(g);
        }
        CHECK(discover_keyframes(vel, grip, 1e-3) == keyframe_oracle(vel, grip, 1e-3));
    }
}

TEST_CASE("keyframes: degenerate inputs are rejected") {
    std::vector<double> vel{0.0};
    std::vector<std::uint8_t> grip{1};
    CHECK_THROWS_AS(discover_keyframes(vel, grip, 1e-3), ContractError);
    std::vector<double> vel2{0.0, 0.0};
    CHECK_THROWS_AS(discover_keyframes(vel2, std::vector<std::uint8_t>{1, 1}, 0.0), ContractError);
}

TEST_CASE("key horizons: inclusive slicing arithmetic") {
    std::vector<int> keys{0, 10, 25};
    auto hs = extract_key_horizons(keys);
    REQUIRE(hs.size() == 2);
    CHECK(hs[0].length() == 11);
    CHECK(hs[1].length() == 16);
    CHECK(hs[0].end == hs[1].start);  // shared boundary frame
}

TEST_CASE("key horizons: m keyframes yield m-1 horizons; concatenation covers the demo") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 10 + static_cast<int>(rng.below(100));
        std::vector<int> keys{0};
        for (int t = 1; t < n - 1; ++t)
            if (rng.uniform() < 0.2) keys.push_back(t);
        keys.push_back(n - 1);
        auto hs = extract_key_horizons(keys);
        CHECK(hs.size() == keys.size() - 1);
        // Dropping each shared boundary reconstructs [0, n-1] exactly.
        std::vector<int> frames;
        for (size_t i = 0; i < hs.size(); ++i)
            for (int t = hs[i].start + (i == 0 ? 0 : 1); t <= hs[i].end; ++t) frames.push_back(t);
        REQUIRE(frames.size() == static_cast<size_t>(n));
        for (int t = 0; t < n; ++t) CHECK(frames[static_cast<size_t>(t)] == t);
    }
    CHECK_THROWS_AS(extract_key_horizons(std::vector<int>{0, 5, 5, 9}), ContractError);
}

TEST_CASE("fixed windows cover the demo with the requested length") {
    auto ws = fixed_windows(50, 16);
    CHECK(ws.front().start == 0);
    CHECK(ws.back().end == 49);
    for (const auto& w : ws) CHECK(w.length() == 16);
    auto small = fixed_windows(10, 16);
    REQUIRE(small.size() == 1);
    CHECK(small[0].length() == 10);
}

TEST_CASE("replay: seeds expert transitions and never evicts them") {
    // 50 demos x 60 steps -> 3000 expert transitions.
    std::vector<std::vector<Transition>> demos;
    for (int d = 0; d < 50; ++d) {
        std::vector<Transition> ep(60);
        for (auto& t : ep) t.repr = VecX::Constant(4, static_cast<double>(d));
        demos.push_back(std::move(ep));
    }
    ReplayBuffer buf = build_replay(std::move(demos), 3200);
    CHECK(buf.expert_size() == 3000);

    Rng rng(5);
    for (int i = 0; i < 200; ++i) CHECK(buf.sample(rng, true).expert);

    // Fill past capacity with online singletons; expert items must survive.
    for (int i = 0; i < 210; ++i) {
        std::vector<Transition> ep(1);
        ep[0].reward = static_cast<double>(i);
        buf.add_episode(std::move(ep), false);
    }
    CHECK(buf.expert_size() == 3000);
    CHECK(buf.online_size() == 200);  // oldest online evicted first
    CHECK(buf.size() <= buf.capacity());
    Rng rng2(6);
    const Transition& t = buf.sample(rng2, false);
    CHECK(!t.expert);
    CHECK(t.reward >= 10.0);  // the first ten online items were evicted

    // An online episode that cannot fit without touching expert data is refused.
    CHECK_THROWS_AS(buf.add_episode(std::vector<Transition>(300), false), ContractError);
}

TEST_CASE("replay: capacity below expert transition count is rejected") {
    std::vector<std::vector<Transition>> demos{std::vector<Transition>(10)};
    CHECK_THROWS_AS(build_replay(std::move(demos), 5), ContractError);
}

TEST_CASE("replay: sequence sampling stays within one episode, deterministic") {
    ReplayBuffer buf(1000);
    for (int e = 0; e < 4; ++e) {
        std::vector<Transition> ep(static_cast<size_t>(10 + 5 * e));
        for (size_t t = 0; t < ep.size(); ++t)
            ep[t].repr = VecX::Constant(2, static_cast<double>(e) * 100.0 + static_cast<double>(t));
        buf.add_episode(std::move(ep), true);
    }
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
        auto seq = buf.sample_sequence(rng, 8, true);
        REQUIRE(seq.size() == 8);
        for (size_t t = 1; t < seq.size(); ++t)
            CHECK(seq[t].repr(0) == seq[t - 1].repr(0) + 1.0);  // contiguous in-episode
    }
    Rng ra(33), rb(33);
    auto s1 = buf.sample_sequence(ra, 8, true);
    auto s2 = buf.sample_sequence(rb, 8, true);
    CHECK(s1[0].repr(0) == s2[0].repr(0));
}
