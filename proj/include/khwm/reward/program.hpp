#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "khwm/reward/plan.hpp"
#include "khwm/reward/state_view.hpp"

namespace khwm::reward {

// Closed term algebra for dense rewards. LLM output is parsed into these
// kinds; arbitrary code is rejected.
//
//   approach(entity, scale)            scale * exp(-dist(gripper, entity))
//   joint_target(joint, target, scale) scale * exp(-|angle - target|)
//   progress(entity, goal, scale)      scale * (1 - exp(-dist(entity, goal)))
//   grasp_bonus(entity, value)         value while the entity is grasped
//   stage_bonus(value)                 value every step the stage predicate holds
//
// Gating: a stage's stepwise terms are active only while its predicate is
// false and all prior stage predicates are true; the stage bonus is paid
// every step its predicate holds (prior stages complete). Within an active
// stage, approach runs while the entity is ungrasped and grasp_bonus/progress
// while it is grasped, mirroring the generated-code branch structure.
enum class TermKind { approach, joint_target, progress, grasp_bonus, stage_bonus };

const char* term_kind_name(TermKind k);

struct Term {
    TermKind kind = TermKind::stage_bonus;
    std::string entity;  // entity name, or joint name for joint_target
    std::string goal;    // progress goal entity
    double target = 0.0; // joint_target angle
    double scale = 0.0;  // scale, or bonus value

    bool operator==(const Term&) const = default;
};

struct StageProgram {
    std::string name;
    std::string predicate;
    std::vector<Term> terms;

    bool operator==(const StageProgram&) const = default;
};

struct RewardProgram {
    std::string task;
    std::vector<StageProgram> stages;

    bool operator==(const RewardProgram&) const = default;
};

void to_json(nlohmann::json& j, const RewardProgram& p);
void from_json(const nlohmann::json& j, RewardProgram& p);
std::string program_hash(const RewardProgram& p);

// The four Stage-2 prompt parts; all must be present before an LLM call.
struct PromptBundle {
    std::string interface_description;
    std::string example_code;
    std::string rules;
    std::string task_description;

    void require_complete() const;
    std::string user_message() const;
};

PromptBundle build_reward_prompt(const StagePlan& plan, const QuerySchema& schema);

// Stage 2: plan -> dense reward program. Template backend emits the canonical
// per-stage terms; llm backend requests code-shaped output and parses it.
RewardProgram generate_reward_program(const StagePlan& plan, const QuerySchema& schema,
                                      Backend backend, LlmClient* llm = nullptr);

// Parses the constrained reward DSL (see TermKind above). Unrecognized
// constructs are rejected with line-numbered diagnostics.
RewardProgram parse_program_response(const std::string& task_id, const std::string& text);

// Success-indicator-only program (the sparse-reward ablation).
RewardProgram success_only_program(const std::string& task_id);

struct Violation {
    std::string rule;    // "monotone-approach" | "bonus-dominance" | "resolution" | "structure"
    std::string where;   // stage/term label
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
};

nlohmann::json report_json(const ValidationReport& r);

// Rule checks: (a) every approach-style term strictly decreases with distance
// (scale > 0), (b) each stage has exactly one stage bonus whose value exceeds
// the stage's maximum stepwise contribution, (c) every reference resolves in
// the schema.
ValidationReport validate_program(const RewardProgram& program, const QuerySchema& schema);

struct TermValue {
    int stage = 0;
    std::string label;
    double value = 0.0;
};

struct RewardBreakdown {
    double total = 0.0;
    std::vector<TermValue> terms;
};

// Pure function of the state view; total is the sum of active terms.
RewardBreakdown evaluate_reward(const RewardProgram& program, const StateView& view);

}  // namespace khwm::reward
