#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2f/geometry.hpp"
#include "c2f/plan.hpp"
#include "c2f/rng.hpp"

namespace c2f::bench {
struct Scene;
struct GeneratedEpisode;
}  // namespace c2f::bench

namespace c2f::planner {

using geometry::Pixel;
using geometry::ViewSet;
using geometry::WorkspaceBounds;
using planning::SubTask;

/// Text only: the task and the previous step instruction.
struct Round1Query {
    std::string task;
    std::string previous;
};

/// Empty sub-task signals completion.
struct Round1Response {
    SubTask subtask;
};

struct Round2Query {
    ViewSet views;
    SubTask subtask;
    std::string previous;
};

struct ObjectPixels {
    std::string name;
    std::array<std::optional<Pixel>, 3> pixels;  ///< front, left, top; none when off-view
};

struct KeypointEstimate {
    std::array<Pixel, 3> pixels{};
    Vec3 world = Vec3::Zero();
};

/// Fields in reasoning order: objects, then the instruction, then the keypoint.
struct Round2Response {
    std::vector<ObjectPixels> objects;
    std::string instruction;
    KeypointEstimate keypoint;
};

class Planner {
public:
    virtual ~Planner() = default;
    virtual Round1Response round1(const Round1Query& query) = 0;
    virtual Round2Response round2(const Round2Query& query) = 0;
    /// False when round2 ignores image content, letting callers skip rendering.
    virtual bool needs_views() const { return true; }
};

/// Views with bounds and resolution but no pixel data.
ViewSet view_frame(const WorkspaceBounds& bounds, int resolution);

inline constexpr int kKeypointPixelTolerance = 1;

/// Keypoint world point must lie in the views' bounds and project within `tolerance` pixels
/// (Chebyshev) of its stated pixel in every view; object pixels must lie on the grid.
/// Throws ProtocolViolation otherwise.
void validate_response(const Round2Response& response, const Round2Query& query,
                       int tolerance = kKeypointPixelTolerance);

/// Keypoint estimate for `world` in the frame of `views`. Throws OutOfBoundsError outside.
KeypointEstimate make_keypoint(const Vec3& world, const ViewSet& views);

/// Mean of the occupied pixel_to_world lookups; none when no pixel hits a point. Views without
/// pixel data count as unoccupied. Throws IndexError for pixels off the grid.
std::optional<Vec3> fuse_pixels(const ViewSet& views, const std::array<Pixel, 3>& pixels);

struct TranscriptEntry {
    int round = 1;
    std::size_t subtask_index = 0;
    nlohmann::ordered_json query;
    nlohmann::ordered_json response;
};

/// Protocol state for one episode. Not thread-safe; one session per episode.
class PlannerSession {
public:
    explicit PlannerSession(std::string task);

    const std::string& task() const { return task_; }
    /// Last accepted instruction, or the initial-state sentinel.
    const std::string& previous() const { return previous_; }
    /// Zero-based index of the current sub-task.
    std::size_t subtask_index() const { return subtask_index_; }
    const SubTask& subtask() const { return subtask_; }
    bool done() const { return done_; }
    const std::vector<TranscriptEntry>& transcript() const { return transcript_; }
    const std::vector<std::string>& anomalies() const { return anomalies_; }

    /// Asks for the sub-task holding the next step. Empty response marks the session done.
    const SubTask& round1(Planner& planner);

    /// Requires a nonempty current sub-task. Throws ProtocolViolation when the instruction
    /// is outside the current sub-task or the keypoint is inconsistent with the views.
    Round2Response round2(Planner& planner, const ViewSet& views);

    /// Accepts a validated round-2 response.
    void advance(const Round2Response& response);

    /// Step the session expects next: successor of previous() within the current sub-task,
    /// or its first step when previous() is not in it.
    std::size_t expected_step() const;

private:
    std::string task_;
    std::string previous_;
    SubTask subtask_;
    std::size_t subtask_index_ = 0;
    bool finished_subtask_ = true;  ///< no step yet, or the last step closed a sub-task
    bool done_ = false;
    std::vector<TranscriptEntry> transcript_;
    std::vector<std::string> anomalies_;
};

/// Writes one JSON object per transcript entry.
void write_transcript(std::ostream& out, const std::vector<TranscriptEntry>& transcript);
std::vector<TranscriptEntry> read_transcript(std::istream& in);

// ---- scripted planners ---------------------------------------------------------

/// Ground-truth planner reading the episode's plan and keyframe actions. Object positions come
/// from the live scene it is attached to.
class OraclePlanner : public Planner {
public:
    OraclePlanner(const bench::GeneratedEpisode& episode, const bench::Scene* live_scene);

    Round1Response round1(const Round1Query& query) override;
    Round2Response round2(const Round2Query& query) override;
    bool needs_views() const override { return false; }

protected:
    /// Flat plan index of the step after `previous`. Throws UnknownProgressError.
    std::size_t next_flat(const std::string& previous) const;
    virtual Vec3 keypoint_for(std::size_t flat, const WorkspaceBounds& bounds);
    std::vector<ObjectPixels> object_pixels(const ViewSet& views) const;

    const bench::GeneratedEpisode& episode_;
    const bench::Scene* scene_;
    planning::Plan plan_;
    std::vector<std::string> flat_;
    std::size_t cursor_ = 0;  ///< disambiguates repeated instructions
};

/// Oracle with isotropic Gaussian keypoint noise, clamped to the bounds.
class NoisyOraclePlanner : public OraclePlanner {
public:
    NoisyOraclePlanner(const bench::GeneratedEpisode& episode, const bench::Scene* live_scene,
                       double sigma, std::uint64_t seed);

protected:
    Vec3 keypoint_for(std::size_t flat, const WorkspaceBounds& bounds) override;

private:
    double sigma_;
    Rng rng_;
};

/// Ablation: no sub-task plans and no previous-step memory. Round 1 returns the whole plan as
/// one list. Round 2 sees how many steps were executed and the step's position within its
/// sub-task, but not which sub-task, and picks uniformly among those long enough.
class MonolithicPlanner : public Planner {
public:
    MonolithicPlanner(const bench::GeneratedEpisode& episode, const bench::Scene* live_scene,
                      double sigma, std::uint64_t seed);

    Round1Response round1(const Round1Query& query) override;
    Round2Response round2(const Round2Query& query) override;
    bool needs_views() const override { return false; }

private:
    const bench::GeneratedEpisode& episode_;
    const bench::Scene* scene_;
    double sigma_;
    Rng rng_;
    std::size_t executed_ = 0;  ///< round-2 calls so far
};

// ---- wire format ----------------------------------------------------------------

inline constexpr int kWireVersion = 1;

/// How round-2 views travel: a content-addressed stem under a shared root, or inline PNGs.
enum class ViewTransport { path, inline_png };

struct WireOptions {
    ViewTransport transport = ViewTransport::path;
    std::filesystem::path root;  ///< views/<hash> stems are relative to this
};

nlohmann::ordered_json to_wire(const Round1Query& q);
nlohmann::ordered_json to_wire(const Round1Response& r);
nlohmann::ordered_json to_wire(const Round2Query& q, const WireOptions& options);
nlohmann::ordered_json to_wire(const Round2Response& r);

/// Parsers throw ParseError carrying the raw text on malformed or version-mismatched input.
Round1Query round1_query_from_wire(const std::string& text);
Round1Response round1_response_from_wire(const std::string& text);
/// Inline-PNG views carry RGB only; their depth/xyz channels stay empty.
Round2Query round2_query_from_wire(const std::string& text, const std::filesystem::path& root);
Round2Response round2_response_from_wire(const std::string& text);

/// Planner behind a text transport, e.g. a subprocess or HTTP client. Every exchange is
/// serialized through the wire format.
class WirePlanner : public Planner {
public:
    using Transport = std::function<std::string(const std::string& request)>;

    WirePlanner(Transport transport, WireOptions options);

    Round1Response round1(const Round1Query& query) override;
    Round2Response round2(const Round2Query& query) override;

private:
    Transport transport_;
    WireOptions options_;
};

}  // namespace c2f::planner
