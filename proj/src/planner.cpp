#include "c2f/planner.hpp"

#include <algorithm>
#include <istream>
#include <sstream>

#include "c2f/errors.hpp"
#include "c2f/tasks.hpp"

namespace c2f::planner {

using geometry::kAllViews;
using geometry::world_to_pixel;

ViewSet view_frame(const WorkspaceBounds& bounds, int resolution) {
    ViewSet views;
    for (std::size_t k = 0; k < 3; ++k) {
        views[k].id = kAllViews[k];
        views[k].resolution = resolution;
        views[k].bounds = bounds;
    }
    return views;
}

KeypointEstimate make_keypoint(const Vec3& world, const ViewSet& views) {
    KeypointEstimate kp;
    kp.world = world;
    for (std::size_t k = 0; k < 3; ++k) {
        const auto px = world_to_pixel(views[k].id, views[k].bounds, views[k].resolution, world);
        if (!px) throw OutOfBoundsError("keypoint outside the view bounds");
        kp.pixels[k] = *px;
    }
    return kp;
}

std::optional<Vec3> fuse_pixels(const ViewSet& views, const std::array<Pixel, 3>& pixels) {
    Vec3 sum = Vec3::Zero();
    int hits = 0;
    for (std::size_t k = 0; k < 3; ++k) {
        if (views[k].occupied.empty()) continue;
        if (const auto w = geometry::pixel_to_world(views[k], pixels[k].u, pixels[k].v)) {
            sum += *w;
            ++hits;
        }
    }
    if (hits == 0) return std::nullopt;
    return sum / hits;
}

void validate_response(const Round2Response& r, const Round2Query& q, int tolerance) {
    const Vec3& w = r.keypoint.world;
    if (!w.allFinite()) throw ProtocolViolation("keypoint is not finite");
    for (std::size_t k = 0; k < 3; ++k) {
        const auto& view = q.views[k];
        const auto px = world_to_pixel(view.id, view.bounds, view.resolution, w);
        if (!px) throw ProtocolViolation("keypoint lies outside the workspace");
        const Pixel& stated = r.keypoint.pixels[k];
        if (std::abs(px->u - stated.u) > tolerance || std::abs(px->v - stated.v) > tolerance) {
            std::ostringstream os;
            os << "keypoint pixel (" << stated.u << ", " << stated.v << ") in the "
               << geometry::to_string(view.id) << " view disagrees with its world point, which projects to ("
               << px->u << ", " << px->v << ")";
            throw ProtocolViolation(os.str());
        }
        for (const auto& obj : r.objects) {
            const auto& p = obj.pixels[k];
            if (p && (p->u < 0 || p->v < 0 || p->u >= view.resolution || p->v >= view.resolution)) {
                throw ProtocolViolation("object '" + obj.name + "' pixel is off the view grid");
            }
        }
    }
}

// ---- session ------------------------------------------------------------------

PlannerSession::PlannerSession(std::string task)
    : task_(std::move(task)), previous_(planning::kInitialStateSentinel) {
    if (task_.empty()) throw InvalidArgument("task description is empty");
}

const SubTask& PlannerSession::round1(Planner& planner) {
    if (done_) return subtask_;
    const Round1Query q{task_, previous_};
    Round1Response r = planner.round1(q);
    if (r.subtask.empty()) {
        done_ = true;
    } else if (!subtask_.empty() && !finished_subtask_ && r.subtask != subtask_) {
        anomalies_.push_back("planner switched sub-task before finishing it");
    }
    subtask_ = std::move(r.subtask);
    transcript_.push_back({1, subtask_index_, to_wire(q), to_wire(Round1Response{subtask_})});
    return subtask_;
}

std::size_t PlannerSession::expected_step() const {
    const auto it = std::find(subtask_.begin(), subtask_.end(), previous_);
    if (it == subtask_.end()) return 0;
    return static_cast<std::size_t>(it - subtask_.begin()) + 1;
}

Round2Response PlannerSession::round2(Planner& planner, const ViewSet& views) {
    if (done_ || subtask_.empty()) throw ContractError("round2 needs a current sub-task");
    Round2Query q{views, subtask_, previous_};
    Round2Response r = planner.round2(q);
    if (std::find(subtask_.begin(), subtask_.end(), r.instruction) == subtask_.end()) {
        throw ProtocolViolation("instruction '" + r.instruction + "' is not in the current sub-task");
    }
    validate_response(r, q);

    const bool previous_in_subtask = std::find(subtask_.begin(), subtask_.end(), previous_) != subtask_.end();
    if (!previous_in_subtask && !finished_subtask_) {
        anomalies_.push_back("previous step is not in the current sub-task; restarting it");
    }
    const std::size_t expected = expected_step();
    if (expected >= subtask_.size() || subtask_[expected] != r.instruction) {
        anomalies_.push_back("instruction '" + r.instruction + "' is not the expected successor");
    }
    WireOptions record;  // hashes views without storing them
    transcript_.push_back({2, subtask_index_, to_wire(q, record), to_wire(r)});
    return r;
}

void PlannerSession::advance(const Round2Response& response) {
    previous_ = response.instruction;
    finished_subtask_ = !subtask_.empty() && response.instruction == subtask_.back();
    if (finished_subtask_) ++subtask_index_;
}

void write_transcript(std::ostream& out, const std::vector<TranscriptEntry>& transcript) {
    for (const auto& e : transcript) {
        nlohmann::ordered_json j;
        j["round"] = e.round;
        j["subtask_index"] = e.subtask_index;
        j["query"] = e.query;
        j["response"] = e.response;
        out << j.dump() << "\n";
    }
}

std::vector<TranscriptEntry> read_transcript(std::istream& in) {
    std::vector<TranscriptEntry> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::ordered_json::parse(line);
            out.push_back({j.at("round").get<int>(), j.at("subtask_index").get<std::size_t>(), j.at("query"),
                           j.at("response")});
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("bad transcript line: ") + e.what(), line);
        }
    }
    return out;
}

// ---- scripted planners ------------------------------------------------------------

namespace {

std::vector<ObjectPixels> scene_object_pixels(const bench::Scene* scene, const ViewSet& views) {
    std::vector<ObjectPixels> out;
    if (!scene) return out;
    for (const auto& pose : bench::object_poses(*scene)) {
        ObjectPixels op;
        op.name = pose.name;
        bool any = false;
        for (std::size_t k = 0; k < 3; ++k) {
            op.pixels[k] = world_to_pixel(views[k].id, views[k].bounds, views[k].resolution, pose.position);
            any = any || op.pixels[k].has_value();
        }
        if (any) out.push_back(std::move(op));
    }
    return out;
}

Vec3 clamp_to(const Vec3& p, const WorkspaceBounds& b) { return p.cwiseMax(b.min).cwiseMin(b.max); }

}  // namespace

OraclePlanner::OraclePlanner(const bench::GeneratedEpisode& episode, const bench::Scene* live_scene)
    : episode_(episode), scene_(live_scene), plan_(episode.plan), flat_(episode.plan.steps()) {
    if (episode.keyframe_actions.size() != flat_.size()) {
        throw AlignmentError("keyframe actions do not match the plan", flat_.size(), episode.keyframe_actions.size());
    }
}

std::size_t OraclePlanner::next_flat(const std::string& previous) const {
    if (previous == planning::kInitialStateSentinel) return 0;
    const std::size_t from = cursor_ > 0 ? cursor_ - 1 : 0;
    for (std::size_t i = from; i < flat_.size(); ++i) {
        if (flat_[i] == previous) return i + 1;
    }
    for (std::size_t i = 0; i < std::min(from, flat_.size()); ++i) {
        if (flat_[i] == previous) return i + 1;
    }
    throw UnknownProgressError("previous step '" + previous + "' is not part of the plan");
}

Round1Response OraclePlanner::round1(const Round1Query& query) {
    const std::size_t next = next_flat(query.previous);
    cursor_ = next;
    if (next >= flat_.size()) return {};
    return {plan_.subtasks[plan_.subtask_of_step(next)]};
}

Vec3 OraclePlanner::keypoint_for(std::size_t flat, const WorkspaceBounds&) {
    return episode_.keyframe_actions[flat].position;
}

std::vector<ObjectPixels> OraclePlanner::object_pixels(const ViewSet& views) const {
    return scene_object_pixels(scene_, views);
}

Round2Response OraclePlanner::round2(const Round2Query& query) {
    const std::size_t next = next_flat(query.previous);
    if (next >= flat_.size()) throw UnknownProgressError("round2 requested after the final step");
    cursor_ = next;
    Round2Response r;
    r.objects = object_pixels(query.views);
    r.instruction = flat_[next];
    r.keypoint = make_keypoint(keypoint_for(next, query.views[0].bounds), query.views);
    return r;
}

NoisyOraclePlanner::NoisyOraclePlanner(const bench::GeneratedEpisode& episode, const bench::Scene* live_scene,
                                       double sigma, std::uint64_t seed)
    : OraclePlanner(episode, live_scene), sigma_(sigma), rng_(seed) {
    if (!(sigma >= 0.0)) throw InvalidArgument("noise sigma must be nonnegative");
}

Vec3 NoisyOraclePlanner::keypoint_for(std::size_t flat, const WorkspaceBounds& bounds) {
    const Vec3 noise(rng_.normal(), rng_.normal(), rng_.normal());
    return clamp_to(episode_.keyframe_actions[flat].position + sigma_ * noise, bounds);
}

MonolithicPlanner::MonolithicPlanner(const bench::GeneratedEpisode& episode, const bench::Scene* live_scene,
                                     double sigma, std::uint64_t seed)
    : episode_(episode), scene_(live_scene), sigma_(sigma), rng_(seed) {
    if (!(sigma >= 0.0)) throw InvalidArgument("noise sigma must be nonnegative");
}

Round1Response MonolithicPlanner::round1(const Round1Query&) {
    if (executed_ >= episode_.plan.step_count()) return {};
    return {episode_.plan.steps()};
}

Round2Response MonolithicPlanner::round2(const Round2Query& query) {
    const auto& plan = episode_.plan;
    if (executed_ >= plan.step_count()) throw UnknownProgressError("round2 requested after the final step");
    const std::size_t phase = [&] {
        std::size_t f = executed_;
        for (const auto& st : plan.subtasks) {
            if (f < st.size()) return f;
            f -= st.size();
        }
        return f;
    }();
    std::vector<std::size_t> candidates;
    for (std::size_t j = 0; j < plan.subtasks.size(); ++j) {
        if (plan.subtasks[j].size() > phase) candidates.push_back(j);
    }
    const std::size_t pick = candidates[rng_.below(candidates.size())];
    std::size_t flat = phase;
    for (std::size_t j = 0; j < pick; ++j) flat += plan.subtasks[j].size();
    ++executed_;

    const Vec3 noise(rng_.normal(), rng_.normal(), rng_.normal());
    Round2Response r;
    r.objects = scene_object_pixels(scene_, query.views);
    r.instruction = plan.subtasks[pick][phase];
    r.keypoint = make_keypoint(clamp_to(episode_.keyframe_actions[flat].position + sigma_ * noise, query.views[0].bounds),
                               query.views);
    return r;
}

}  // namespace c2f::planner
