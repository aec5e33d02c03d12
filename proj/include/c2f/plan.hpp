#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace c2f::planning {

/// Memory cue used before the first step has been taken.
inline constexpr const char* kInitialStateSentinel = "the robot is currently at the initial state";

using SubTask = std::vector<std::string>;

/// Task description plus its step instructions, partitioned into sub-tasks.
struct Plan {
    std::string task;
    std::vector<SubTask> subtasks;

    /// Throws InvalidArgument when the plan has no sub-tasks or any empty sub-task.
    void validate() const;

    std::size_t step_count() const;
    /// Concatenation of every sub-task.
    std::vector<std::string> steps() const;
    /// Sub-task index containing flat step `k`.
    std::size_t subtask_of_step(std::size_t k) const;

    struct Location {
        std::size_t subtask;
        std::size_t step;  ///< index within the sub-task
        std::size_t flat;
    };
    /// First occurrence of `instruction`, if any.
    std::optional<Location> locate(const std::string& instruction) const;

    /// Plan with a single sub-task holding every step.
    Plan flattened() const;

    friend bool operator==(const Plan&, const Plan&) = default;
};

nlohmann::json to_json(const Plan& plan);
Plan plan_from_json(const nlohmann::json& j);

/// Sub-tasks of `parts` concatenated in order under a new task description.
Plan compose(const std::string& task, const std::vector<Plan>& parts);

}  // namespace c2f::planning
