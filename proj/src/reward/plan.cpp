#include "khwm/reward/plan.hpp"

#include <cctype>
#include <sstream>

#include "khwm/core/errors.hpp"
#include "khwm/reward/llm.hpp"

namespace khwm::reward {

void to_json(nlohmann::json& j, const StagePlan& p) {
    j = nlohmann::json{{"task", p.task}, {"stages", nlohmann::json::array()}};
    for (const auto& s : p.stages)
        j["stages"].push_back(nlohmann::json{{"name", s.name},
                                             {"motion", s.motion},
                                             {"targets", s.targets},
                                             {"predicate", s.predicate}});
}

void from_json(const nlohmann::json& j, StagePlan& p) {
    p = StagePlan{};
    j.at("task").get_to(p.task);
    for (const auto& sj : j.at("stages")) {
        PlanStage s;
        sj.at("name").get_to(s.name);
        sj.at("motion").get_to(s.motion);
        sj.at("targets").get_to(s.targets);
        sj.at("predicate").get_to(s.predicate);
        p.stages.push_back(std::move(s));
    }
}

std::string normalize_task_id(const std::string& description) {
    // Lowercase, split on non-alphanumerics, drop articles, join with '-'.
    std::vector<std::string> words;
    std::string cur;
    for (char ch : description) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);
    std::string id;
    for (const auto& w : words) {
        if (w == "the" || w == "a" || w == "an") continue;
        if (!id.empty()) id.push_back('-');
        id += w;
    }
    return id;
}

StagePlan canonical_plan(const std::string& task_id) {
    StagePlan plan;
    plan.task = task_id;
    auto place_stage = [](int item) {
        const std::string tag = "item" + std::to_string(item);
        PlanStage s;
        s.name = "place-" + tag;
        s.motion = "Move towards " + tag + ", grasp it, carry it to the table zone, and release it. "
                   "Confirm " + tag + " is in the zone.";
        s.targets = {tag, "zone"};
        s.predicate = tag + "_in_zone";
        return s;
    };
    if (task_id == "place-item") {
        plan.stages.push_back(place_stage(1));
        return plan;
    }
    if (task_id == "take-items-out-of-box") {
        PlanStage open;
        open.name = "open-lid";
        open.motion = "Move towards the box lid handle and adjust the lid joint to 90 degrees. "
                      "Confirm the box is open.";
        open.targets = {"lid_handle", "lid"};
        open.predicate = "lid_open";
        plan.stages.push_back(std::move(open));
        plan.stages.push_back(place_stage(1));
        plan.stages.push_back(place_stage(2));
        return plan;
    }
    throw ConfigError("no canonical plan for task id: " + task_id);
}

std::string plan_prompt(const std::string& task_id) {
    const StagePlan canon = canonical_plan(task_id);
    std::ostringstream os;
    os << "Describe the manipulation task \"" << task_id
       << "\" as an ordered multi-stage motion plan.\n";
    os << "Known stage names for this task:";
    for (const auto& s : canon.stages) os << " " << s.name;
    os << "\nRemember to:\n";
    os << "- Answer with one numbered line per stage, formatted exactly as"
          " \"N. stage-name: motion description\".\n";
    os << "- Keep the stages in execution order.\n";
    os << "- Provide only the motion description for the task; exclude any other information.\n";
    return os.str();
}

StagePlan parse_plan_response(const std::string& task_id, const std::string& text) {
    const StagePlan canon = canonical_plan(task_id);
    StagePlan plan;
    plan.task = task_id;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        // Trim and skip blanks.
        size_t b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        size_t e = line.find_last_not_of(" \t\r");
        std::string body = line.substr(b, e - b + 1);
        // "N. name: motion"
        size_t dot = body.find('.');
        if (dot == std::string::npos || dot == 0 ||
            body.find_first_not_of("0123456789", 0) != dot)
            throw ParseError("plan response line " + std::to_string(line_no) +
                             " is not numbered; raw text:\n" + text);
        size_t colon = body.find(':', dot + 1);
        if (colon == std::string::npos)
            throw ParseError("plan response line " + std::to_string(line_no) +
                             " lacks 'name: motion'; raw text:\n" + text);
        std::string name = body.substr(dot + 1, colon - dot - 1);
        name.erase(0, name.find_first_not_of(" \t"));
        name.erase(name.find_last_not_of(" \t") + 1);
        std::string motion = body.substr(colon + 1);
        motion.erase(0, motion.find_first_not_of(" \t"));

        const PlanStage* match = nullptr;
        for (const auto& s : canon.stages)
            if (s.name == name) match = &s;
        if (!match)
            throw ParseError("plan response names unknown stage '" + name + "'; raw text:\n" + text);
        PlanStage s = *match;  // targets + predicate come from the registry
        s.motion = motion;
        plan.stages.push_back(std::move(s));
    }
    if (plan.stages.empty()) throw ParseError("plan response contained no stages; raw text:\n" + text);
    for (size_t i = 0; i < plan.stages.size(); ++i)
        if (plan.stages[i].name != canon.stages[i].name)
            throw ParseError("plan stages out of order or incomplete; raw text:\n" + text);
    if (plan.stages.size() != canon.stages.size())
        throw ParseError("plan response is missing stages; raw text:\n" + text);
    return plan;
}

StagePlan describe_plan(const std::string& task_description, Backend backend, LlmClient* llm) {
    if (task_description.empty()) throw ContractError("describe_plan: empty task description");
    const std::string task_id = normalize_task_id(task_description);
    if (backend == Backend::templated) return canonical_plan(task_id);
    if (!llm) throw ContractError("describe_plan: llm backend selected but no client configured");
    const std::string system =
        "You are a multi-stage plan descriptor for a tabletop robot. You translate task "
        "descriptions into ordered motion plans.";
    const std::string response = llm->complete(system, plan_prompt(task_id));
    return parse_plan_response(task_id, response);
}

}  // namespace khwm::reward
