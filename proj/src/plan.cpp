#include "c2f/plan.hpp"

#include "c2f/errors.hpp"

namespace c2f::planning {

void Plan::validate() const {
    if (subtasks.empty()) throw InvalidArgument("plan has no sub-tasks");
    for (const auto& s : subtasks) {
        if (s.empty()) throw InvalidArgument("plan contains an empty sub-task");
    }
}

std::size_t Plan::step_count() const {
    std::size_t n = 0;
    for (const auto& s : subtasks) n += s.size();
    return n;
}

std::vector<std::string> Plan::steps() const {
    std::vector<std::string> out;
    out.reserve(step_count());
    for (const auto& s : subtasks) out.insert(out.end(), s.begin(), s.end());
    return out;
}

std::size_t Plan::subtask_of_step(std::size_t k) const {
    for (std::size_t m = 0; m < subtasks.size(); ++m) {
        if (k < subtasks[m].size()) return m;
        k -= subtasks[m].size();
    }
    throw IndexError("step index beyond the end of the plan");
}

std::optional<Plan::Location> Plan::locate(const std::string& instruction) const {
    std::size_t flat = 0;
    for (std::size_t m = 0; m < subtasks.size(); ++m) {
        for (std::size_t i = 0; i < subtasks[m].size(); ++i, ++flat) {
            if (subtasks[m][i] == instruction) return Location{m, i, flat};
        }
    }
    return std::nullopt;
}

Plan Plan::flattened() const { return Plan{task, {steps()}}; }

nlohmann::json to_json(const Plan& plan) {
    return {{"task", plan.task}, {"subtasks", plan.subtasks}};
}

Plan plan_from_json(const nlohmann::json& j) {
    Plan p;
    try {
        p.task = j.at("task").get<std::string>();
        p.subtasks = j.at("subtasks").get<std::vector<SubTask>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed plan: ") + e.what());
    }
    p.validate();
    return p;
}

Plan compose(const std::string& task, const std::vector<Plan>& parts) {
    Plan out{task, {}};
    for (const auto& p : parts) out.subtasks.insert(out.subtasks.end(), p.subtasks.begin(), p.subtasks.end());
    out.validate();
    return out;
}

}  // namespace c2f::planning
