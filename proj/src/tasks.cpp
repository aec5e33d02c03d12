#include "c2f/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "c2f/rng.hpp"
#include "c2f/serialization.hpp"

namespace c2f::bench {

using nlohmann::json;
using planning::Plan;
using planning::SubTask;

std::string_view to_string(Level level) {
    switch (level) {
        case Level::train: return "train";
        case Level::L1: return "L1";
        case Level::L2: return "L2";
        case Level::L3: return "L3";
        case Level::L4: return "L4";
    }
    return "unknown";
}

Level level_from_string(std::string_view s) {
    for (Level l : {Level::train, Level::L1, Level::L2, Level::L3, Level::L4}) {
        if (to_string(l) == s) return l;
    }
    throw InvalidArgument("unknown level: " + std::string(s));
}

const TaskSpec& Suite::task(std::string_view id) const {
    for (const auto& t : tasks) {
        if (t.id == id) return t;
    }
    throw InvalidArgument("suite has no task '" + std::string(id) + "'");
}

json to_json(const Suite& suite) {
    json tasks = json::array();
    for (const auto& t : suite.tasks) {
        json vars = json::array();
        for (const auto& v : t.variations) vars.push_back({{"id", v.id}, {"params", v.params}});
        tasks.push_back({{"id", t.id}, {"family", t.family}, {"level", std::string(to_string(t.level))}, {"variations", vars}});
    }
    return {{"format", "c2f.suite"}, {"version", kSuiteFormatVersion}, {"name", suite.name}, {"tasks", tasks}};
}

Suite suite_from_json(const json& j) {
    Suite s;
    try {
        if (j.at("format") != "c2f.suite") throw DataError("not a task suite");
        if (j.at("version").get<int>() != kSuiteFormatVersion) throw DataError("unsupported suite version");
        s.name = j.value("name", "");
        for (const auto& tj : j.at("tasks")) {
            TaskSpec t;
            t.id = tj.at("id").get<std::string>();
            t.family = tj.at("family").get<std::string>();
            t.level = level_from_string(tj.at("level").get<std::string>());
            for (const auto& vj : tj.at("variations")) {
                t.variations.push_back({vj.at("id").get<std::string>(), vj.at("params").get<Params>()});
            }
            const auto& fams = base_families();
            const auto& comp = composed_families();
            if (std::find(fams.begin(), fams.end(), t.family) == fams.end() &&
                std::find(comp.begin(), comp.end(), t.family) == comp.end()) {
                throw DataError("unknown task family '" + t.family + "'");
            }
            if (t.variations.empty()) throw DataError("task '" + t.id + "' has no variations");
            s.tasks.push_back(std::move(t));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed suite: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw DataError(std::string("malformed suite: ") + e.what());
    }
    return s;
}

Suite load_suite(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw DataError("suite file not found: " + path.string());
    return suite_from_json(io::read_json(path));
}

const std::vector<std::string>& base_families() {
    static const std::vector<std::string> f{"pick_and_lift", "put_in_cup", "stack",
                                            "open_drawer",   "close_drawer", "put_in_drawer"};
    return f;
}

const std::vector<std::string>& composed_families() {
    static const std::vector<std::string> f{"open_then_put_in_drawer", "stack_cups", "stack_three",
                                            "two_in_cups"};
    return f;
}

namespace {

Variation var(std::string id, Params p) { return {std::move(id), std::move(p)}; }

std::vector<TaskSpec> train_tasks(Level level) {
    const std::string sfx = "@" + std::string(to_string(level));
    std::vector<TaskSpec> t;
    t.push_back({"pick_and_lift" + sfx, "pick_and_lift", level,
                 {var("red", {{"color", "red"}, {"shape", "cube"}}),
                  var("green", {{"color", "green"}, {"shape", "cube"}}),
                  var("blue", {{"color", "blue"}, {"shape", "cube"}})}});
    t.push_back({"put_in_cup" + sfx, "put_in_cup", level,
                 {var("red", {{"color", "red"}, {"shape", "cube"}, {"cup", "white"}}),
                  var("green", {{"color", "green"}, {"shape", "cube"}, {"cup", "white"}}),
                  var("blue", {{"color", "blue"}, {"shape", "cube"}, {"cup", "white"}})}});
    t.push_back({"stack" + sfx, "stack", level,
                 {var("red-on-green", {{"color", "red"}, {"shape", "cube"}, {"base", "green"}, {"base_shape", "cube"}}),
                  var("blue-on-red", {{"color", "blue"}, {"shape", "cube"}, {"base", "red"}, {"base_shape", "cube"}})}});
    t.push_back({"open_drawer" + sfx, "open_drawer", level,
                 {var("top", {{"slot", "top"}, {"variant", "A"}}),
                  var("middle", {{"slot", "middle"}, {"variant", "A"}}),
                  var("bottom", {{"slot", "bottom"}, {"variant", "A"}})}});
    t.push_back({"close_drawer" + sfx, "close_drawer", level,
                 {var("top", {{"slot", "top"}, {"variant", "A"}}),
                  var("bottom", {{"slot", "bottom"}, {"variant", "A"}})}});
    t.push_back({"put_in_drawer" + sfx, "put_in_drawer", level,
                 {var("top", {{"color", "red"}, {"shape", "cube"}, {"slot", "top"}, {"variant", "A"}}),
                  var("middle", {{"color", "green"}, {"shape", "cube"}, {"slot", "middle"}, {"variant", "A"}}),
                  var("bottom", {{"color", "blue"}, {"shape", "cube"}, {"slot", "bottom"}, {"variant", "A"}})}});
    return t;
}

}  // namespace

Suite synthetic_suite() {
    Suite s;
    s.name = "synthetic";
    for (auto& t : train_tasks(Level::train)) s.tasks.push_back(std::move(t));
    for (auto& t : train_tasks(Level::L1)) s.tasks.push_back(std::move(t));

    s.tasks.push_back({"pick_and_lift@L2", "pick_and_lift", Level::L2,
                       {var("yellow-star", {{"color", "yellow"}, {"shape", "star"}}),
                        var("magenta-cylinder", {{"color", "magenta"}, {"shape", "cylinder"}}),
                        var("orange-moon", {{"color", "orange"}, {"shape", "moon"}})}});
    s.tasks.push_back({"put_in_cup@L2", "put_in_cup", Level::L2,
                       {var("yellow-cylinder", {{"color", "yellow"}, {"shape", "cylinder"}, {"cup", "white"}}),
                        var("orange-star", {{"color", "orange"}, {"shape", "star"}, {"cup", "white"}}),
                        var("magenta-moon", {{"color", "magenta"}, {"shape", "moon"}, {"cup", "white"}})}});
    s.tasks.push_back({"stack@L2", "stack", Level::L2,
                       {var("yellow-star-on-orange-cylinder",
                            {{"color", "yellow"}, {"shape", "star"}, {"base", "orange"}, {"base_shape", "cylinder"}})}});

    s.tasks.push_back({"open_drawer@L3", "open_drawer", Level::L3,
                       {var("top-B", {{"slot", "top"}, {"variant", "B"}}),
                        var("middle-C", {{"slot", "middle"}, {"variant", "C"}})}});
    s.tasks.push_back({"close_drawer@L3", "close_drawer", Level::L3,
                       {var("bottom-B", {{"slot", "bottom"}, {"variant", "B"}}),
                        var("top-C", {{"slot", "top"}, {"variant", "C"}})}});
    s.tasks.push_back({"put_in_drawer@L3", "put_in_drawer", Level::L3,
                       {var("middle-B", {{"color", "red"}, {"shape", "cube"}, {"slot", "middle"}, {"variant", "B"}}),
                        var("bottom-C", {{"color", "green"}, {"shape", "cube"}, {"slot", "bottom"}, {"variant", "C"}})}});

    s.tasks.push_back({"open_then_put_in_drawer@L4", "open_then_put_in_drawer", Level::L4,
                       {var("red-top", {{"color", "red"}, {"shape", "cube"}, {"slot", "top"}, {"variant", "A"}}),
                        var("blue-middle", {{"color", "blue"}, {"shape", "cube"}, {"slot", "middle"}, {"variant", "A"}})}});
    s.tasks.push_back({"stack_cups@L4", "stack_cups", Level::L4,
                       {var("blue-yellow-on-red", {{"first", "blue"}, {"second", "yellow"}, {"base", "red"}}),
                        var("green-white-on-blue", {{"first", "green"}, {"second", "white"}, {"base", "blue"}})}});
    s.tasks.push_back({"stack_three@L4", "stack_three", Level::L4,
                       {var("red-green-blue", {{"base", "red"}, {"middle", "green"}, {"top", "blue"}}),
                        var("blue-red-green", {{"base", "blue"}, {"middle", "red"}, {"top", "green"}})}});
    s.tasks.push_back({"two_in_cups@L4", "two_in_cups", Level::L4,
                       {var("red-green", {{"first", "red"}, {"first_cup", "white"}, {"second", "green"}, {"second_cup", "purple"}}),
                        var("blue-red", {{"first", "blue"}, {"first_cup", "purple"}, {"second", "red"}, {"second_cup", "white"}})}});
    return s;
}

Suite bundled_suite() {
    Suite s;
    s.name = "bundled";
    for (auto& t : train_tasks(Level::train)) {
        if (t.family == "pick_and_lift" || t.family == "put_in_cup" || t.family == "open_drawer" ||
            t.family == "put_in_drawer") {
            s.tasks.push_back(std::move(t));
        }
    }
    return s;
}

std::set<std::string> parameter_values(const Suite& suite, Level level, const std::string& key) {
    std::set<std::string> out;
    for (const auto& t : suite.tasks) {
        if (t.level != level) continue;
        for (const auto& v : t.variations) {
            const auto it = v.params.find(key);
            if (it != v.params.end()) out.insert(it->second);
        }
    }
    return out;
}

namespace {

const std::string& param(const Params& p, const std::string& key) {
    const auto it = p.find(key);
    if (it == p.end()) throw InvalidArgument("variation is missing parameter '" + key + "'");
    return it->second;
}

std::string param_or(const Params& p, const std::string& key, const std::string& fallback) {
    const auto it = p.find(key);
    return it == p.end() ? fallback : it->second;
}

std::string noun(const std::string& color, const std::string& shape) {
    return shape == "cube" ? color + " block" : color + " " + shape;
}

}  // namespace

std::string describe(const std::string& family, const Params& p) {
    if (family == "pick_and_lift") return "pick up the " + noun(param(p, "color"), param(p, "shape")) + " and lift it";
    if (family == "put_in_cup") {
        return "put the " + noun(param(p, "color"), param(p, "shape")) + " in the " + param(p, "cup") + " cup";
    }
    if (family == "stack") {
        return "stack the " + noun(param(p, "color"), param(p, "shape")) + " on the " +
               noun(param(p, "base"), param_or(p, "base_shape", "cube"));
    }
    if (family == "open_drawer") return "open the " + param(p, "slot") + " drawer";
    if (family == "close_drawer") return "close the " + param(p, "slot") + " drawer";
    if (family == "put_in_drawer") {
        return "put the " + noun(param(p, "color"), param(p, "shape")) + " in the " + param(p, "slot") + " drawer";
    }
    if (family == "open_then_put_in_drawer") {
        return "open the " + param(p, "slot") + " drawer and put the " + noun(param(p, "color"), param(p, "shape")) +
               " in it";
    }
    if (family == "stack_cups") {
        return "stack the " + param(p, "first") + " and " + param(p, "second") + " cup on the " + param(p, "base") + " cup";
    }
    if (family == "stack_three") {
        return "stack the " + param(p, "middle") + " block on the " + param(p, "base") + " block and then the " +
               param(p, "top") + " block on top";
    }
    if (family == "two_in_cups") {
        return "put the " + param(p, "first") + " block in the " + param(p, "first_cup") + " cup and the " +
               param(p, "second") + " block in the " + param(p, "second_cup") + " cup";
    }
    throw InvalidArgument("unknown task family '" + family + "'");
}

// ---- success predicates -------------------------------------------------------

bool goal_satisfied(const Goal& g, const Scene& scene) {
    const auto idx = scene.find(g.object);
    if (!idx) return false;
    const Object& o = scene.objects[*idx];
    const bool held = scene.held_object && *scene.held_object == *idx;
    const double tol = scene.params.place_tolerance;
    switch (g.kind) {
        case Goal::Kind::lifted:
            return held && o.position.z() >= g.reference_z + 0.15;
        case Goal::Kind::in_cup: {
            const Object& cup = scene.object(g.target);
            const double dxy = (o.position - cup.position).head<2>().norm();
            const double bottom = o.position.z() - o.half_extents.z();
            return !held && dxy <= tol && bottom < cup.position.z() + cup.half_extents.z();
        }
        case Goal::Kind::on_top: {
            const Object& base = scene.object(g.target);
            const double dxy = (o.position - base.position).head<2>().norm();
            const double gap = (o.position.z() - o.half_extents.z()) - (base.position.z() + base.half_extents.z());
            return !held && dxy <= tol && std::abs(gap) <= 0.005;
        }
        case Goal::Kind::drawer_open:
            return o.open_fraction >= 0.8;
        case Goal::Kind::drawer_closed:
            return o.open_fraction <= 0.1;
        case Goal::Kind::in_drawer: {
            const Object& d = scene.object(g.target);
            if (held || d.open_fraction <= 0.0) return false;
            const auto interior = d.drawer_interior();
            const Vec3& p = o.position;
            return p.x() >= interior.min.x() && p.x() <= interior.max.x() && p.y() >= interior.min.y() &&
                   p.y() <= interior.max.y() && p.z() >= interior.min.z() && p.z() <= interior.max.z();
        }
    }
    return false;
}

bool success(const std::vector<Goal>& goals, const Scene& scene) {
    return std::all_of(goals.begin(), goals.end(), [&](const Goal& g) { return goal_satisfied(g, scene); });
}

std::vector<data::ObjectPose> object_poses(const Scene& scene) {
    std::vector<data::ObjectPose> out;
    out.reserve(scene.objects.size());
    for (const auto& o : scene.objects) out.push_back({o.name, o.is_drawer() ? o.handle_point() : o.position});
    return out;
}

std::uint64_t placement_seed(Level level, std::uint64_t seed) {
    // Train and L1 share tasks; only the placement stream differs.
    return derive_seed({hash_string("placement"), hash_string(to_string(level)), seed});
}

// ---- generation ---------------------------------------------------------------

namespace {

Vec3 shape_half_extents(Shape s) {
    switch (s) {
        case Shape::cube: return Vec3(0.02, 0.02, 0.02);
        case Shape::cylinder: return Vec3(0.02, 0.02, 0.025);
        case Shape::star: return Vec3(0.025, 0.025, 0.015);
        case Shape::moon: return Vec3(0.025, 0.015, 0.015);
        case Shape::cup: return Vec3(0.035, 0.035, 0.04);
        case Shape::drawer: break;
    }
    throw InvalidArgument("drawers have variant geometry");
}

enum class KeyKind { align, grasp, lift, carry, release, handle_align, handle_grasp, pull, push };

struct KeySpec {
    KeyKind kind;
    std::string object;  ///< object acted on (held object for carry)
    std::string target;  ///< destination for carry
    std::string text;
};

struct Blueprint {
    std::vector<std::vector<KeySpec>> subtasks;
    std::vector<Goal> goals;
};

const Eigen::Quaterniond kTopDown(0.0, 1.0, 0.0, 0.0);
const Eigen::Quaterniond kFacingDrawer(Eigen::AngleAxisd(-M_PI / 2.0, Vec3::UnitX()));

class Builder {
public:
    Builder(Scene& scene, Rng& rng) : scene_(scene), rng_(rng) {}

    std::string add_rigid(const std::string& color, Shape shape, const std::string& name_hint = "") {
        Object o;
        o.shape = shape;
        o.color = color;
        o.half_extents = shape_half_extents(shape);
        o.name = name_hint.empty() ? color + "_" + std::string(to_string(shape)) : name_hint;
        place(o);
        scene_.objects.push_back(o);
        return o.name;
    }

    std::string add_drawer(const std::string& variant, const std::string& slot, double open_fraction) {
        Object d;
        d.shape = Shape::drawer;
        d.color = "wood";
        d.drawer = drawer_geometry(variant);
        d.half_extents = d.drawer.body_half_extents;
        d.slot = slot;
        d.open_fraction = open_fraction;
        d.name = "cabinet";
        d.position = Vec3(rng_.uniform(-0.1, 0.1), 0.25, d.half_extents.z());
        scene_.objects.push_back(d);
        return d.name;
    }

private:
    // Footprint reserved for each existing object, including a drawer's travel and approach.
    static std::pair<Eigen::Vector2d, Eigen::Vector2d> footprint(const Object& o) {
        Eigen::Vector2d lo = (o.position - o.half_extents).head<2>();
        Eigen::Vector2d hi = (o.position + o.half_extents).head<2>();
        if (o.is_drawer()) lo.y() -= o.drawer.travel + 0.12;
        return {lo, hi};
    }

    void place(Object& o) {
        constexpr int kTries = 500;
        constexpr double kMargin = 0.04;
        for (int i = 0; i < kTries; ++i) {
            const Vec3 p(rng_.uniform(-0.28, 0.28), rng_.uniform(-0.32, 0.2), o.half_extents.z());
            bool ok = true;
            for (const auto& other : scene_.objects) {
                const auto [lo, hi] = footprint(other);
                if (p.x() + o.half_extents.x() + kMargin > lo.x() && p.x() - o.half_extents.x() - kMargin < hi.x() &&
                    p.y() + o.half_extents.y() + kMargin > lo.y() && p.y() - o.half_extents.y() - kMargin < hi.y()) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                o.position = p;
                return;
            }
        }
        throw GenerationError("could not place '" + o.name + "' without overlap");
    }

    Scene& scene_;
    Rng& rng_;
};

std::vector<KeySpec> pick_steps(const std::string& obj, const std::string& label) {
    return {{KeyKind::align, obj, "", "The robot arm moves above the " + label},
            {KeyKind::grasp, obj, "", "The robot arm lowers and grasps the " + label},
            {KeyKind::lift, obj, "", "The robot arm lifts the " + label + " up"}};
}

std::vector<KeySpec> pick_place_steps(const std::string& obj, const std::string& label, const std::string& target,
                                      const std::string& carry_text, const std::string& release_text) {
    auto s = pick_steps(obj, label);
    s.push_back({KeyKind::carry, obj, target, carry_text});
    s.push_back({KeyKind::release, obj, target, release_text});
    return s;
}

std::vector<KeySpec> open_steps(const std::string& drawer, const std::string& slot) {
    return {{KeyKind::handle_align, drawer, "", "The robot arm lowers itself to align with the handle of the " + slot + " drawer"},
            {KeyKind::handle_grasp, drawer, "", "The robot arm grasps the " + slot + " drawer's handle firmly"},
            {KeyKind::pull, drawer, "", "The robot pulls the handle back, smoothly opening the " + slot + " drawer"}};
}

std::vector<KeySpec> close_steps(const std::string& drawer, const std::string& slot) {
    return {{KeyKind::handle_align, drawer, "", "The robot arm moves in front of the handle of the " + slot + " drawer"},
            {KeyKind::handle_grasp, drawer, "", "The robot arm grasps the handle of the " + slot + " drawer"},
            {KeyKind::push, drawer, "", "The robot arm pushes the " + slot + " drawer closed"}};
}

std::vector<KeySpec> drawer_put_steps(const std::string& obj, const std::string& label, const std::string& drawer,
                                      const std::string& slot) {
    return pick_place_steps(obj, label, drawer, "The robot arm carries the " + label + " above the open " + slot + " drawer",
                            "The robot arm drops the " + label + " into the " + slot + " drawer");
}

std::vector<KeySpec> cup_steps(const std::string& obj, const std::string& label, const std::string& cup,
                               const std::string& cup_label) {
    return pick_place_steps(obj, label, cup, "The robot arm carries the " + label + " above the " + cup_label,
                            "The robot arm releases the " + label + " into the " + cup_label);
}

std::vector<KeySpec> stack_steps(const std::string& obj, const std::string& label, const std::string& base,
                                 const std::string& base_label) {
    return pick_place_steps(obj, label, base, "The robot arm carries the " + label + " above the " + base_label,
                            "The robot arm releases the " + label + " onto the " + base_label);
}

Blueprint build(const std::string& family, const Params& p, Builder& b, Scene& scene) {
    Blueprint bp;
    auto distractor = [&] { b.add_rigid("cyan", Shape::cube, "distractor"); };
    if (family == "pick_and_lift") {
        const std::string label = noun(param(p, "color"), param(p, "shape"));
        const auto obj = b.add_rigid(param(p, "color"), shape_from_string(param(p, "shape")));
        distractor();
        bp.subtasks = {pick_steps(obj, label)};
        bp.goals = {{Goal::Kind::lifted, obj, "", scene.object(obj).position.z()}};
    } else if (family == "put_in_cup") {
        const std::string label = noun(param(p, "color"), param(p, "shape"));
        const auto cup = b.add_rigid(param(p, "cup"), Shape::cup);
        const auto obj = b.add_rigid(param(p, "color"), shape_from_string(param(p, "shape")));
        distractor();
        bp.subtasks = {cup_steps(obj, label, cup, param(p, "cup") + " cup")};
        bp.goals = {{Goal::Kind::in_cup, obj, cup, 0.0}};
    } else if (family == "stack") {
        const std::string label = noun(param(p, "color"), param(p, "shape"));
        const std::string base_label = noun(param(p, "base"), param_or(p, "base_shape", "cube"));
        const auto base = b.add_rigid(param(p, "base"), shape_from_string(param_or(p, "base_shape", "cube")));
        const auto obj = b.add_rigid(param(p, "color"), shape_from_string(param(p, "shape")));
        distractor();
        bp.subtasks = {stack_steps(obj, label, base, base_label)};
        bp.goals = {{Goal::Kind::on_top, obj, base, 0.0}};
    } else if (family == "open_drawer") {
        const auto d = b.add_drawer(param(p, "variant"), param(p, "slot"), 0.0);
        bp.subtasks = {open_steps(d, param(p, "slot"))};
        bp.goals = {{Goal::Kind::drawer_open, d, "", 0.0}};
    } else if (family == "close_drawer") {
        const auto d = b.add_drawer(param(p, "variant"), param(p, "slot"), 1.0);
        bp.subtasks = {close_steps(d, param(p, "slot"))};
        bp.goals = {{Goal::Kind::drawer_closed, d, "", 0.0}};
    } else if (family == "put_in_drawer") {
        const std::string label = noun(param(p, "color"), param(p, "shape"));
        const auto d = b.add_drawer(param(p, "variant"), param(p, "slot"), 1.0);
        const auto obj = b.add_rigid(param(p, "color"), shape_from_string(param(p, "shape")));
        bp.subtasks = {drawer_put_steps(obj, label, d, param(p, "slot"))};
        bp.goals = {{Goal::Kind::in_drawer, obj, d, 0.0}};
    } else if (family == "open_then_put_in_drawer") {
        const std::string label = noun(param(p, "color"), param(p, "shape"));
        const auto d = b.add_drawer(param(p, "variant"), param(p, "slot"), 0.0);
        const auto obj = b.add_rigid(param(p, "color"), shape_from_string(param(p, "shape")));
        bp.subtasks = {open_steps(d, param(p, "slot")), drawer_put_steps(obj, label, d, param(p, "slot"))};
        bp.goals = {{Goal::Kind::drawer_open, d, "", 0.0}, {Goal::Kind::in_drawer, obj, d, 0.0}};
    } else if (family == "stack_cups") {
        const auto base = b.add_rigid(param(p, "base"), Shape::cup);
        const auto first = b.add_rigid(param(p, "first"), Shape::cup);
        const auto second = b.add_rigid(param(p, "second"), Shape::cup);
        const std::string base_label = param(p, "base") + " cup";
        const std::string first_label = param(p, "first") + " cup";
        bp.subtasks = {stack_steps(first, first_label, base, base_label),
                       stack_steps(second, param(p, "second") + " cup", first, first_label)};
        bp.goals = {{Goal::Kind::on_top, first, base, 0.0}, {Goal::Kind::on_top, second, first, 0.0}};
    } else if (family == "stack_three") {
        const auto base = b.add_rigid(param(p, "base"), Shape::cube);
        const auto mid = b.add_rigid(param(p, "middle"), Shape::cube);
        const auto top = b.add_rigid(param(p, "top"), Shape::cube);
        const std::string mid_label = noun(param(p, "middle"), "cube");
        bp.subtasks = {stack_steps(mid, mid_label, base, noun(param(p, "base"), "cube")),
                       stack_steps(top, noun(param(p, "top"), "cube"), mid, mid_label)};
        bp.goals = {{Goal::Kind::on_top, mid, base, 0.0}, {Goal::Kind::on_top, top, mid, 0.0}};
    } else if (family == "two_in_cups") {
        const auto cup1 = b.add_rigid(param(p, "first_cup"), Shape::cup);
        const auto cup2 = b.add_rigid(param(p, "second_cup"), Shape::cup);
        const auto obj1 = b.add_rigid(param(p, "first"), Shape::cube);
        const auto obj2 = b.add_rigid(param(p, "second"), Shape::cube);
        bp.subtasks = {cup_steps(obj1, noun(param(p, "first"), "cube"), cup1, param(p, "first_cup") + " cup"),
                       cup_steps(obj2, noun(param(p, "second"), "cube"), cup2, param(p, "second_cup") + " cup")};
        bp.goals = {{Goal::Kind::in_cup, obj1, cup1, 0.0}, {Goal::Kind::in_cup, obj2, cup2, 0.0}};
    } else {
        throw InvalidArgument("unknown task family '" + family + "'");
    }
    return bp;
}

// Highest top surface under (x, y), ignoring the held object.
double stack_top(const Scene& scene, const Vec3& at, std::optional<std::size_t> ignore) {
    double top = kTableHeight;
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
        if (ignore && *ignore == i) continue;
        const Object& o = scene.objects[i];
        if (o.is_drawer()) continue;
        const Vec3 lo = o.position - o.half_extents;
        const Vec3 hi = o.position + o.half_extents;
        if (at.x() >= lo.x() && at.x() <= hi.x() && at.y() >= lo.y() && at.y() <= hi.y()) top = std::max(top, hi.z());
    }
    return top;
}

Action resolve(const KeySpec& k, const Scene& s) {
    Action a;
    a.orientation = kTopDown;
    switch (k.kind) {
        case KeyKind::align:
            a.position = s.object(k.object).position + Vec3(0, 0, 0.10);
            a.gripper = GripperState::open;
            break;
        case KeyKind::grasp:
            a.position = s.object(k.object).position;
            a.gripper = GripperState::closed;
            break;
        case KeyKind::lift:
            a.position = s.gripper_position + Vec3(0, 0, 0.18);
            a.gripper = GripperState::closed;
            break;
        case KeyKind::carry: {
            const Object& held = s.object(k.object);
            const Object& dst = s.object(k.target);
            Vec3 xy;
            double floor = 0.0;
            if (dst.is_drawer()) {
                const auto interior = dst.drawer_interior();
                xy = interior.center();
                floor = std::max(interior.max.z(), stack_top(s, xy, s.find(k.object)));
            } else {
                xy = dst.position;
                floor = stack_top(s, xy, s.find(k.object));
            }
            a.position = Vec3(xy.x(), xy.y(), floor + held.half_extents.z() + 0.03);
            a.gripper = GripperState::closed;
            break;
        }
        case KeyKind::release:
            a.position = s.gripper_position;
            a.gripper = GripperState::open;
            break;
        case KeyKind::handle_align:
            a.position = s.object(k.object).handle_point() + Vec3(0, -0.06, 0);
            a.orientation = kFacingDrawer;
            a.gripper = GripperState::open;
            break;
        case KeyKind::handle_grasp:
            a.position = s.object(k.object).handle_point();
            a.orientation = kFacingDrawer;
            a.gripper = GripperState::closed;
            break;
        case KeyKind::pull: {
            const Object& d = s.object(k.object);
            a.position = d.handle_point() - Vec3(0, d.drawer.travel * (1.0 - d.open_fraction), 0);
            a.orientation = kFacingDrawer;
            a.gripper = GripperState::closed;
            break;
        }
        case KeyKind::push: {
            const Object& d = s.object(k.object);
            a.position = d.handle_point() + Vec3(0, d.drawer.travel * d.open_fraction, 0);
            a.orientation = kFacingDrawer;
            a.gripper = GripperState::closed;
            break;
        }
    }
    return a;
}

data::Observation observe(const Scene& s, int t, const GenerateOptions& opt) {
    data::Observation o;
    o.timestep = t;
    o.gripper = s.gripper;
    o.objects = object_poses(s);
    if (opt.render) o.images = render_all(s, opt.render_options);
    return o;
}

}  // namespace

GeneratedEpisode generate_scene(const TaskSpec& task, const Variation& variation, std::uint64_t seed,
                                const GenerateOptions& options) {
    GeneratedEpisode ep;
    ep.task_id = task.id;
    ep.variation_id = variation.id;
    Scene& scene = ep.scene;
    scene.bounds = default_workspace();
    scene.seed = seed;
    install_default_cameras(scene, options.image_size, options.image_size);
    Rng rng(derive_seed({placement_seed(task.level, seed), hash_string(task.family), hash_string(variation.id)}));
    Builder builder(scene, rng);
    const Blueprint bp = build(task.family, variation.params, builder, scene);
    ep.goals = bp.goals;

    ep.plan.task = describe(task.family, variation.params);
    for (const auto& st : bp.subtasks) {
        SubTask texts;
        for (const auto& k : st) texts.push_back(k.text);
        ep.plan.subtasks.push_back(std::move(texts));
    }
    ep.plan.validate();

    data::Trajectory& tr = ep.trajectory;
    tr.task = ep.plan.task;
    tr.bounds = scene.bounds;
    tr.camera_names = scene.camera_names;
    tr.cameras = scene.cameras;

    Scene sim = scene;
    auto step = [&](const Action& a) {
        tr.observations.push_back(observe(sim, static_cast<int>(tr.actions.size()), options));
        tr.actions.push_back(a);
        apply_action(sim, a);
    };
    for (const auto& st : bp.subtasks) {
        for (const auto& k : st) {
            const Action target = resolve(k, sim);
            Vec3 from = sim.gripper_position;
            const Eigen::Quaterniond q0 = sim.gripper_orientation;
            if (sim.held_handle && target.gripper == GripperState::open) {
                // Lift straight off the handle before heading elsewhere.
                Action up;
                up.position = from + Vec3(0, 0, kExpertStepLength);
                up.orientation = q0;
                up.gripper = sim.gripper;
                step(up);
                from = up.position;
            }
            const double dist = (target.position - from).norm();
            const int n = dist > 1e-9 ? static_cast<int>(std::ceil(dist / kExpertStepLength)) : 0;
            for (int i = 1; i <= n; ++i) {
                const double f = static_cast<double>(i) / n;
                Action a;
                a.position = i == n ? target.position : Vec3(from + f * (target.position - from));
                a.orientation = q0.slerp(f, target.orientation).normalized();
                a.gripper = sim.gripper;
                step(a);
            }
            ep.event_steps.push_back(static_cast<int>(tr.actions.size()));
            ep.keyframe_actions.push_back(target);
            step(target);
        }
    }
    tr.keyframes = ep.event_steps;
    tr.validate();
    for (const auto& g : ep.goals) {
        if (!goal_satisfied(g, sim)) {
            const Vec3 p = sim.object(g.object).position;
            std::ostringstream msg;
            msg << "scripted expert failed on " << task.id << "/" << variation.id << " seed " << seed << ": '"
                << g.object << "' ends at (" << p.x() << ", " << p.y() << ", " << p.z() << ")";
            throw GenerationError(msg.str());
        }
    }
    return ep;
}

}  // namespace c2f::bench
