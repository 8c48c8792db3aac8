#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "khwm/reward/state_view.hpp"

namespace khwm::reward {

class LlmClient;

enum class Backend { templated, llm };

// One sub-task phase of a multi-stage plan.
struct PlanStage {
    std::string name;
    std::string motion;                 // language description of the motion
    std::vector<std::string> targets;   // entities/joints the stage works on
    std::string predicate;              // completion predicate in the schema
};

struct StagePlan {
    std::string task;
    std::vector<PlanStage> stages;

    bool operator==(const StagePlan&) const = default;
};

inline bool operator==(const PlanStage& a, const PlanStage& b) {
    return a.name == b.name && a.motion == b.motion && a.targets == b.targets &&
           a.predicate == b.predicate;
}

void to_json(nlohmann::json& j, const StagePlan& p);
void from_json(const nlohmann::json& j, StagePlan& p);

// Normalizes free text ("take the items out of the box") to a shipped task id.
std::string normalize_task_id(const std::string& description);

// Canonical plan for a shipped task id; the template backend's ground truth
// and the registry the LLM parser resolves stage names against.
StagePlan canonical_plan(const std::string& task_id);

// Stage 1: task description -> multi-stage plan. The template backend pattern
// matches shipped ids; the llm backend sends the plan prompt and parses the
// numbered response.
StagePlan describe_plan(const std::string& task_description, Backend backend,
                        LlmClient* llm = nullptr);

// The Stage-1 prompt text (kept public so fixtures can be recorded).
std::string plan_prompt(const std::string& task_id);

// Parses a numbered "1. stage-name: motion" response against the task's
// canonical stage registry.
StagePlan parse_plan_response(const std::string& task_id, const std::string& text);

}  // namespace khwm::reward
