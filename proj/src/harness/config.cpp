#include "khwm/harness/config.hpp"

#include <fstream>

#include "khwm/core/errors.hpp"
#include "khwm/sim/sim.hpp"

namespace khwm::harness {

void ExperimentConfig::validate() const {
    sim::World::task(task);  // throws for unknown ids
    if (backend != "template" && backend != "llm")
        throw ConfigError("backend must be 'template' or 'llm'");
    if (demo_count < 1) throw ConfigError("demo_count must be >= 1");
    if (seeds.empty()) throw ConfigError("seeds must be non-empty");
    if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
    if (mae_steps < 1 || agent_updates < 0) throw ConfigError("phase budgets must be positive");
    if (seq_len < 2) throw ConfigError("seq_len must be >= 2");
    if (no_key_window < 2) throw ConfigError("no_key_window must be >= 2");
    hyper.validate();
}

namespace {

void to_json(nlohmann::json& j, const ArchConfig& a) {
    j = nlohmann::json{{"enc_dim", a.enc_dim},       {"enc_depth", a.enc_depth},
                       {"enc_heads", a.enc_heads},   {"dec_dim", a.dec_dim},
                       {"dec_depth", a.dec_depth},   {"dec_heads", a.dec_heads},
                       {"mlp_ratio", a.mlp_ratio},   {"deter_dim", a.deter_dim},
                       {"stoch_dim", a.stoch_dim},   {"hidden", a.hidden},
                       {"action_embed", a.action_embed}};
}

void from_json(const nlohmann::json& j, ArchConfig& a) {
    a = ArchConfig{};
    for (auto& [key, target] :
         std::initializer_list<std::pair<const char*, int*>>{{"enc_dim", &a.enc_dim},
                                                             {"enc_depth", &a.enc_depth},
                                                             {"enc_heads", &a.enc_heads},
                                                             {"dec_dim", &a.dec_dim},
                                                             {"dec_depth", &a.dec_depth},
                                                             {"dec_heads", &a.dec_heads},
                                                             {"mlp_ratio", &a.mlp_ratio},
                                                             {"deter_dim", &a.deter_dim},
                                                             {"stoch_dim", &a.stoch_dim},
                                                             {"hidden", &a.hidden},
                                                             {"action_embed", &a.action_embed}})
        if (j.contains(key)) j.at(key).get_to(*target);
}

}  // namespace

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    nlohmann::json arch;
    to_json(arch, c.arch);
    j = nlohmann::json{{"task", c.task},
                       {"demo_count", c.demo_count},
                       {"backend", c.backend},
                       {"hyper", c.hyper},
                       {"arch", arch},
                       {"no_llm", c.no_llm},
                       {"no_key", c.no_key},
                       {"no_key_window", c.no_key_window},
                       {"seeds", c.seeds},
                       {"eval_episodes", c.eval_episodes},
                       {"mae_steps", c.mae_steps},
                       {"mae_batch", c.mae_batch},
                       {"agent_updates", c.agent_updates},
                       {"seq_batch", c.seq_batch},
                       {"seq_len", c.seq_len},
                       {"imagine_batch", c.imagine_batch},
                       {"bc_batch", c.bc_batch},
                       {"collect_every", c.collect_every},
                       {"replay_capacity", c.replay_capacity},
                       {"parallel_workers", c.parallel_workers},
                       {"out_dir", c.out_dir}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    c = ExperimentConfig{};
    j.at("task").get_to(c.task);
    if (j.contains("demo_count")) j.at("demo_count").get_to(c.demo_count);
    if (j.contains("backend")) j.at("backend").get_to(c.backend);
    if (j.contains("hyper")) j.at("hyper").get_to(c.hyper);
    if (j.contains("arch")) from_json(j.at("arch"), c.arch);
    if (j.contains("no_llm")) j.at("no_llm").get_to(c.no_llm);
    if (j.contains("no_key")) j.at("no_key").get_to(c.no_key);
    if (j.contains("no_key_window")) j.at("no_key_window").get_to(c.no_key_window);
    if (j.contains("seeds")) j.at("seeds").get_to(c.seeds);
    if (j.contains("eval_episodes")) j.at("eval_episodes").get_to(c.eval_episodes);
    if (j.contains("mae_steps")) j.at("mae_steps").get_to(c.mae_steps);
    if (j.contains("mae_batch")) j.at("mae_batch").get_to(c.mae_batch);
    if (j.contains("agent_updates")) j.at("agent_updates").get_to(c.agent_updates);
    if (j.contains("seq_batch")) j.at("seq_batch").get_to(c.seq_batch);
    if (j.contains("seq_len")) j.at("seq_len").get_to(c.seq_len);
    if (j.contains("imagine_batch")) j.at("imagine_batch").get_to(c.imagine_batch);
    if (j.contains("bc_batch")) j.at("bc_batch").get_to(c.bc_batch);
    if (j.contains("collect_every")) j.at("collect_every").get_to(c.collect_every);
    if (j.contains("replay_capacity")) j.at("replay_capacity").get_to(c.replay_capacity);
    if (j.contains("parallel_workers")) j.at("parallel_workers").get_to(c.parallel_workers);
    if (j.contains("out_dir")) j.at("out_dir").get_to(c.out_dir);
    c.validate();
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    try {
        return j.get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write config: " + path);
    os << nlohmann::json(cfg).dump(2) << "\n";
}

std::vector<std::string> config_diff(const ExperimentConfig& a, const ExperimentConfig& b) {
    const nlohmann::json ja = a, jb = b;
    std::vector<std::string> keys;
    for (auto it = ja.begin(); it != ja.end(); ++it)
        if (jb.at(it.key()) != it.value()) keys.push_back(it.key());
    return keys;
}

ExperimentConfig ablation_variant(const ExperimentConfig& base, const std::string& which) {
    ExperimentConfig v = base;
    if (which == "no_llm")
        v.no_llm = true;
    else if (which == "no_key")
        v.no_key = true;
    else
        throw ConfigError("unknown ablation: " + which);
    return v;
}

}  // namespace khwm::harness
