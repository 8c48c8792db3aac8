#include "khwm/reward/program.hpp"

#include <cmath>
#include <sstream>

#include "khwm/core/errors.hpp"
#include "khwm/core/rng.hpp"
#include "khwm/reward/llm.hpp"

namespace khwm::reward {

const char* term_kind_name(TermKind k) {
    switch (k) {
        case TermKind::approach: return "approach";
        case TermKind::joint_target: return "joint_target";
        case TermKind::progress: return "progress";
        case TermKind::grasp_bonus: return "grasp_bonus";
        case TermKind::stage_bonus: return "stage_bonus";
    }
    return "?";
}

namespace {

TermKind term_kind_from_name(const std::string& n) {
    if (n == "approach") return TermKind::approach;
    if (n == "joint_target") return TermKind::joint_target;
    if (n == "progress") return TermKind::progress;
    if (n == "grasp_bonus") return TermKind::grasp_bonus;
    if (n == "stage_bonus") return TermKind::stage_bonus;
    throw ParseError("unknown term kind: " + n);
}

nlohmann::json term_json(const Term& t) {
    nlohmann::json j{{"kind", term_kind_name(t.kind)}};
    switch (t.kind) {
        case TermKind::approach:
            j["entity"] = t.entity;
            j["scale"] = t.scale;
            break;
        case TermKind::joint_target:
            j["joint"] = t.entity;
            j["target"] = t.target;
            j["scale"] = t.scale;
            break;
        case TermKind::progress:
            j["entity"] = t.entity;
            j["goal"] = t.goal;
            j["scale"] = t.scale;
            break;
        case TermKind::grasp_bonus:
            j["entity"] = t.entity;
            j["value"] = t.scale;
            break;
        case TermKind::stage_bonus:
            j["value"] = t.scale;
            break;
    }
    return j;
}

Term term_from_json(const nlohmann::json& j) {
    Term t;
    t.kind = term_kind_from_name(j.at("kind").get<std::string>());
    switch (t.kind) {
        case TermKind::approach:
            j.at("entity").get_to(t.entity);
            j.at("scale").get_to(t.scale);
            break;
        case TermKind::joint_target:
            j.at("joint").get_to(t.entity);
            j.at("target").get_to(t.target);
            j.at("scale").get_to(t.scale);
            break;
        case TermKind::progress:
            j.at("entity").get_to(t.entity);
            j.at("goal").get_to(t.goal);
            j.at("scale").get_to(t.scale);
            break;
        case TermKind::grasp_bonus:
            j.at("entity").get_to(t.entity);
            j.at("value").get_to(t.scale);
            break;
        case TermKind::stage_bonus:
            j.at("value").get_to(t.scale);
            break;
    }
    return t;
}

}  // namespace

void to_json(nlohmann::json& j, const RewardProgram& p) {
    j = nlohmann::json{{"task", p.task}, {"stages", nlohmann::json::array()}};
    for (const auto& s : p.stages) {
        nlohmann::json sj{{"name", s.name}, {"predicate", s.predicate},
                          {"terms", nlohmann::json::array()}};
        for (const auto& t : s.terms) sj["terms"].push_back(term_json(t));
        j["stages"].push_back(std::move(sj));
    }
}

void from_json(const nlohmann::json& j, RewardProgram& p) {
    p = RewardProgram{};
    j.at("task").get_to(p.task);
    for (const auto& sj : j.at("stages")) {
        StageProgram s;
        sj.at("name").get_to(s.name);
        sj.at("predicate").get_to(s.predicate);
        for (const auto& tj : sj.at("terms")) s.terms.push_back(term_from_json(tj));
        p.stages.push_back(std::move(s));
    }
}

std::string program_hash(const RewardProgram& p) {
    const std::string dump = nlohmann::json(p).dump();
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(dump)));
    return std::string(out);
}

void PromptBundle::require_complete() const {
    if (interface_description.empty() || example_code.empty() || rules.empty() ||
        task_description.empty())
        throw ContractError("PromptBundle: all four prompt parts must be present");
}

std::string PromptBundle::user_message() const {
    std::ostringstream os;
    os << interface_description << "\n\nExample answer code:\n" << example_code
       << "\nRemember:\n" << rules << "\nTask description:\n" << task_description << "\n";
    return os.str();
}

PromptBundle build_reward_prompt(const StagePlan& plan, const QuerySchema& schema) {
    PromptBundle b;
    {
        std::ostringstream os;
        os << "We have a multi-stage manipulation task \"" << plan.task
           << "\" that we would like you to translate into dense reward code.\n";
        os << "The environment interface exposes:\n";
        os << "- entities:";
        for (const auto& e : schema.entities) os << " " << e;
        os << "\n- joints:";
        for (const auto& e : schema.joints) os << " " << e;
        os << "\n- predicates:";
        for (const auto& e : schema.predicates) os << " " << e;
        os << "\nStages, in order:\n";
        int i = 0;
        for (const auto& s : plan.stages)
            os << ++i << ". " << s.name << " (complete when " << s.predicate << "): " << s.motion
               << "\n";
        b.interface_description = os.str();
    }
    b.example_code =
        "```\n"
        "stage open-lid when lid_open:\n"
        "  joint_target(lid, pi/2, 2.0)\n"
        "  stage_bonus(5.0)\n"
        "```\n";
    b.rules =
        "- Always format code in blocks.\n"
        "- Emit one `stage <name> when <predicate>:` block per stage, in order.\n"
        "- Use only these term forms: approach(entity, scale), joint_target(joint, target, "
        "scale), progress(entity, goal, scale), grasp_bonus(entity, value), stage_bonus(value).\n"
        "- The closer the jaws are to the target object, the greater the reward.\n"
        "- Give a large reward value when completing a stage: every stage needs exactly one "
        "stage_bonus larger than the stage's best stepwise total.\n";
    {
        std::ostringstream os;
        for (const auto& s : plan.stages) os << "'" << s.motion << "' ";
        b.task_description = os.str();
    }
    b.require_complete();
    return b;
}

RewardProgram success_only_program(const std::string& task_id) {
    RewardProgram p;
    p.task = task_id;
    StageProgram s;
    s.name = "succeed";
    s.predicate = "success";
    s.terms.push_back(Term{TermKind::stage_bonus, "", "", 0.0, 1.0});
    p.stages.push_back(std::move(s));
    return p;
}

namespace {

RewardProgram template_program(const StagePlan& plan) {
    RewardProgram p;
    p.task = plan.task;
    for (const auto& ps : plan.stages) {
        StageProgram s;
        s.name = ps.name;
        s.predicate = ps.predicate;
        if (ps.predicate == "lid_open") {
            s.terms.push_back(Term{TermKind::joint_target, "lid", "", M_PI / 2.0, 2.0});
            s.terms.push_back(Term{TermKind::stage_bonus, "", "", 0.0, 5.0});
        } else if (ps.predicate.size() > 8 &&
                   ps.predicate.substr(ps.predicate.size() - 8) == "_in_zone") {
            const std::string item = ps.predicate.substr(0, ps.predicate.size() - 8);
            s.terms.push_back(Term{TermKind::approach, item, "", 0.0, 1.0});
            s.terms.push_back(Term{TermKind::grasp_bonus, item, "", 0.0, 1.0});
            s.terms.push_back(Term{TermKind::progress, item, "zone", 0.0, 1.0});
            s.terms.push_back(Term{TermKind::stage_bonus, "", "", 0.0, 4.0});
        } else {
            throw SchemaError("template backend has no reward pattern for predicate '" +
                              ps.predicate + "'");
        }
        p.stages.push_back(std::move(s));
    }
    return p;
}

double parse_number(const std::string& raw, int line_no) {
    std::string s = raw;
    s.erase(0, s.find_first_not_of(" \t"));
    s.erase(s.find_last_not_of(" \t") + 1);
    if (s == "pi") return M_PI;
    if (s == "pi/2") return M_PI / 2.0;
    try {
        size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError("reward code line " + std::to_string(line_no) +
                         ": cannot parse number '" + raw + "'");
    }
}

std::vector<std::string> split_args(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    for (auto& a : out) {
        a.erase(0, a.find_first_not_of(" \t"));
        a.erase(a.find_last_not_of(" \t") + 1);
    }
    return out;
}

}  // namespace

RewardProgram parse_program_response(const std::string& task_id, const std::string& text) {
    RewardProgram p;
    p.task = task_id;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    StageProgram* open = nullptr;
    while (std::getline(is, line)) {
        ++line_no;
        size_t b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos) continue;
        size_t e = line.find_last_not_of(" \t\r");
        std::string body = line.substr(b, e - b + 1);
        if (body.rfind("```", 0) == 0 || body[0] == '#') continue;  // fences and comments

        if (body.rfind("stage ", 0) == 0) {
            const size_t when = body.find(" when ");
            const size_t colon = body.rfind(':');
            if (when == std::string::npos || colon == std::string::npos || colon < when)
                throw ParseError("reward code line " + std::to_string(line_no) +
                                 ": malformed stage header '" + body + "'");
            StageProgram s;
            s.name = body.substr(6, when - 6);
            s.predicate = body.substr(when + 6, colon - when - 6);
            p.stages.push_back(std::move(s));
            open = &p.stages.back();
            continue;
        }

        const size_t paren = body.find('(');
        const size_t close = body.rfind(')');
        if (paren == std::string::npos || close == std::string::npos || close < paren)
            throw ParseError("reward code line " + std::to_string(line_no) +
                             ": unrecognized construct '" + body + "' (only the closed term"
                             " algebra is accepted)");
        if (!open)
            throw ParseError("reward code line " + std::to_string(line_no) +
                             ": term before any stage header");
        const std::string fn = body.substr(0, paren);
        const auto args = split_args(body.substr(paren + 1, close - paren - 1));
        Term t;
        if (fn == "approach" && args.size() == 2) {
            t = Term{TermKind::approach, args[0], "", 0.0, parse_number(args[1], line_no)};
        } else if (fn == "joint_target" && args.size() == 3) {
            t = Term{TermKind::joint_target, args[0], "", parse_number(args[1], line_no),
                     parse_number(args[2], line_no)};
        } else if (fn == "progress" && args.size() == 3) {
            t = Term{TermKind::progress, args[0], args[1], 0.0, parse_number(args[2], line_no)};
        } else if (fn == "grasp_bonus" && args.size() == 2) {
            t = Term{TermKind::grasp_bonus, args[0], "", 0.0, parse_number(args[1], line_no)};
        } else if (fn == "stage_bonus" && args.size() == 1) {
            t = Term{TermKind::stage_bonus, "", "", 0.0, parse_number(args[0], line_no)};
        } else {
            throw ParseError("reward code line " + std::to_string(line_no) +
                             ": unrecognized construct '" + body + "' (only the closed term"
                             " algebra is accepted)");
        }
        open->terms.push_back(t);
    }
    if (p.stages.empty())
        throw ParseError("reward code contained no stages; raw text:\n" + text);
    return p;
}

RewardProgram generate_reward_program(const StagePlan& plan, const QuerySchema& schema,
                                      Backend backend, LlmClient* llm) {
    for (const auto& s : plan.stages) {
        if (!schema.has_predicate(s.predicate))
            throw SchemaError("plan stage '" + s.name + "' references predicate '" + s.predicate +
                              "' absent from the task schema");
        for (const auto& t : s.targets)
            if (!schema.has_entity(t) && !schema.has_joint(t))
                throw SchemaError("plan stage '" + s.name + "' references entity '" + t +
                                  "' absent from the task schema");
    }
    RewardProgram program;
    if (backend == Backend::templated) {
        program = template_program(plan);
    } else {
        if (!llm)
            throw ContractError("generate_reward_program: llm backend selected but no client");
        const PromptBundle bundle = build_reward_prompt(plan, schema);
        const std::string system =
            "You are a dense reward generator for a tabletop robot. You translate motion plans "
            "into reward code using a fixed term algebra.";
        const std::string response = llm->complete(system, bundle.user_message());
        program = parse_program_response(plan.task, response);
    }
    const ValidationReport report = validate_program(program, schema);
    if (!report.ok()) {
        std::ostringstream os;
        os << "generated reward program failed validation:";
        for (const auto& v : report.violations)
            os << "\n  [" << v.rule << "] " << v.where << ": " << v.message;
        throw SchemaError(os.str());
    }
    return program;
}

namespace {

// Largest achievable stepwise total for one stage: the ungrasped and grasped
// branches are mutually exclusive, joint terms apply to both.
double stage_stepwise_sup(const StageProgram& s) {
    double joint = 0.0, ungrasped = 0.0, grasped = 0.0;
    for (const auto& t : s.terms) {
        switch (t.kind) {
            case TermKind::joint_target: joint += t.scale; break;
            case TermKind::approach: ungrasped += t.scale; break;
            case TermKind::progress: grasped += t.scale; break;
            case TermKind::grasp_bonus: grasped += t.scale; break;
            case TermKind::stage_bonus: break;
        }
    }
    return joint + std::max(ungrasped, grasped);
}

}  // namespace

ValidationReport validate_program(const RewardProgram& program, const QuerySchema& schema) {
    ValidationReport r;
    auto flag = [&r](const std::string& rule, const std::string& where, const std::string& msg) {
        r.violations.push_back({rule, where, msg});
    };
    if (program.stages.empty()) flag("structure", program.task, "program has no stages");
    for (const auto& s : program.stages) {
        if (!schema.has_predicate(s.predicate))
            flag("resolution", s.name, "stage predicate '" + s.predicate + "' does not resolve");
        int bonuses = 0;
        for (const auto& t : s.terms) {
            const std::string where = s.name + "/" + term_kind_name(t.kind);
            switch (t.kind) {
                case TermKind::approach:
                    if (!schema.has_entity(t.entity))
                        flag("resolution", where, "entity '" + t.entity + "' does not resolve");
                    if (t.scale <= 0.0)
                        flag("monotone-approach", where,
                             "approach term must strictly decrease with distance (scale > 0)");
                    break;
                case TermKind::joint_target:
                    if (!schema.has_joint(t.entity))
                        flag("resolution", where, "joint '" + t.entity + "' does not resolve");
                    if (t.scale <= 0.0)
                        flag("monotone-approach", where,
                             "joint term must strictly decrease with angle error (scale > 0)");
                    break;
                case TermKind::progress:
                    if (!schema.has_entity(t.entity))
                        flag("resolution", where, "entity '" + t.entity + "' does not resolve");
                    if (!schema.has_entity(t.goal))
                        flag("resolution", where, "goal '" + t.goal + "' does not resolve");
                    if (t.scale <= 0.0) flag("structure", where, "scale must be > 0");
                    break;
                case TermKind::grasp_bonus:
                    if (!schema.has_entity(t.entity))
                        flag("resolution", where, "entity '" + t.entity + "' does not resolve");
                    if (t.scale <= 0.0) flag("structure", where, "value must be > 0");
                    break;
                case TermKind::stage_bonus:
                    ++bonuses;
                    break;
            }
        }
        if (bonuses != 1) {
            flag("structure", s.name, "stage must carry exactly one stage_bonus (found " +
                                          std::to_string(bonuses) + ")");
        } else {
            double bonus = 0.0;
            for (const auto& t : s.terms)
                if (t.kind == TermKind::stage_bonus) bonus = t.scale;
            const double sup = stage_stepwise_sup(s);
            if (!(bonus > sup))
                flag("bonus-dominance", s.name,
                     "stage bonus " + std::to_string(bonus) +
                         " must exceed the maximum stepwise contribution " + std::to_string(sup));
        }
    }
    return r;
}

nlohmann::json report_json(const ValidationReport& r) {
    nlohmann::json j{{"ok", r.ok()}, {"violations", nlohmann::json::array()}};
    for (const auto& v : r.violations)
        j["violations"].push_back(
            nlohmann::json{{"rule", v.rule}, {"where", v.where}, {"message", v.message}});
    return j;
}

RewardBreakdown evaluate_reward(const RewardProgram& program, const StateView& view) {
    RewardBreakdown out;
    const QuerySchema& schema = view.schema();
    bool prior_ok = true;
    for (size_t k = 0; k < program.stages.size(); ++k) {
        const StageProgram& s = program.stages[k];
        if (!prior_ok) break;  // stage gating: later stages contribute nothing
        const bool done = view.predicate(s.predicate);
        for (const auto& t : s.terms) {
            double v = 0.0;
            bool active = false;
            switch (t.kind) {
                case TermKind::approach: {
                    const std::string grasped_pred = "grasped_" + t.entity;
                    const bool grasped =
                        schema.has_predicate(grasped_pred) && view.predicate(grasped_pred);
                    active = !done && !grasped;
                    if (active) {
                        const double d = (view.position("gripper") - view.position(t.entity)).norm();
                        v = t.scale * std::exp(-d);
                    }
                    break;
                }
                case TermKind::joint_target:
                    active = !done;
                    if (active) v = t.scale * std::exp(-std::abs(view.joint(t.entity) - t.target));
                    break;
                case TermKind::progress: {
                    const std::string grasped_pred = "grasped_" + t.entity;
                    const bool grasped =
                        schema.has_predicate(grasped_pred) && view.predicate(grasped_pred);
                    active = !done && grasped;
                    if (active) {
                        const double d = (view.position(t.entity) - view.position(t.goal)).norm();
                        v = t.scale * (1.0 - std::exp(-d));
                    }
                    break;
                }
                case TermKind::grasp_bonus: {
                    const std::string grasped_pred = "grasped_" + t.entity;
                    active = !done && schema.has_predicate(grasped_pred) &&
                             view.predicate(grasped_pred);
                    if (active) v = t.scale;
                    break;
                }
                case TermKind::stage_bonus:
                    active = done;
                    if (active) v = t.scale;
                    break;
            }
            if (active) {
                out.total += v;
                out.terms.push_back(
                    {static_cast<int>(k), s.name + "/" + term_kind_name(t.kind), v});
            }
        }
        prior_ok = prior_ok && done;
    }
    return out;
}

}  // namespace khwm::reward
